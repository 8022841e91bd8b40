// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oodcert/oodcert.hpp"

namespace {

using namespace oodcert;
namespace fs = std::filesystem;

struct ModelFlags {
    std::string arch = "mlp";
    std::vector<std::size_t> widths;
    std::string activation = "silu";
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double weight_decay = 0;
    double ema = 0.999;
    std::string schedule = "cosine";
    std::string precision = "f64";
    std::string loss = "l1";
    std::uint64_t seed = 0;

    void add(CLI::App* app)
    {
        app->add_option("--arch", arch, "mlp or conv")->check(CLI::IsMember({"mlp", "conv"}));
        app->add_option("--widths", widths, "hidden widths (mlp) or channels per level (conv)")->delimiter(',');
        app->add_option("--activation", activation);
        app->add_option("--epochs", epochs);
        app->add_option("--batch-size", batch_size);
        app->add_option("--lr", lr);
        app->add_option("--weight-decay", weight_decay);
        app->add_option("--ema", ema);
        app->add_option("--lr-schedule", schedule);
        app->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));
        app->add_option("--loss", loss)->check(CLI::IsMember({"l1", "l2"}));
        app->add_option("--seed", seed);
    }

    ModelSpec spec() const
    {
        ModelSpec s;
        s.arch = arch;
        s.widths = widths.empty() ? std::vector<std::size_t>{128, 128} : widths;
        s.activation = activation;
        return s;
    }

    TrainConfig train() const
    {
        TrainConfig t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.adam.lr = lr;
        t.adam.weight_decay = weight_decay;
        t.ema_decay = ema;
        t.lr_schedule = schedule;
        t.precision = precision;
        t.loss = loss;
        t.seed = seed;
        return t;
    }
};

struct SolverFlags {
    std::string method = "rk38";
    std::size_t steps = 64;
    std::string divergence = "hutchinson";
    std::size_t probes = 32;
    double fd_eps = 1e-3;

    void add(CLI::App* app)
    {
        app->add_option("--solver", method, "rk38 or rk45-fixed");
        app->add_option("--steps", steps, "ODE steps");
        app->add_option("--divergence", divergence, "hutchinson or exact-dense");
        app->add_option("--probes", probes, "Hutchinson probes");
        app->add_option("--fd-eps", fd_eps, "finite-difference step scale");
    }

    SolverConfig config() const
    {
        SolverConfig s;
        s.method = ode::parse_method(method);
        s.steps = steps;
        s.divergence = parse_divergence(divergence);
        s.probes = probes;
        s.fd_epsilon = fd_eps;
        s.validate();
        return s;
    }
};

void print_methods()
{
    std::printf("%-8s %5s %5s %5s  %s\n", "method", "alpha", "beta", "gamma", "kind");
    for (const auto& m : method_presets()) {
        const char* kind = m.tag == "JLBC" ? "joint log-likelihood (larger = ID)"
                           : m.tag == "OODC" ? "trained classifier P(ID) (larger = ID)"
                                             : "score trajectory (larger = OOD)";
        std::printf("%-8s %5g %5g %5g  %s\n", m.tag.c_str(), m.alpha, m.beta, m.gamma, kind);
    }
}

std::string method_of(const std::vector<CertificateRecord>& records, const std::string& requested)
{
    if (!requested.empty()) return find_method(requested).tag;
    if (records.empty()) throw ConfigError("no records");
    std::string m = records.front().method;
    for (const auto& r : records)
        if (r.method != m) throw ConfigError("records hold several methods; pass --method");
    return m;
}

int run(int argc, char** argv)
{
    CLI::App app{"Task-aware out-of-distribution certificates from joint diffusion likelihoods"};
    app.require_subcommand(1);

    // methods
    auto* methods_cmd = app.add_subcommand("methods", "List certificate methods and their toggles");

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a dataset");
    std::string kind, dist = "train", out, toy_fn = "linear";
    std::size_t n = 1000, n_plus = 200, dim = 2;
    std::uint64_t seed = 0;
    double nu = 0.1;
    bool full = false, desk = false;
    gen->add_option("kind", kind, "wave | toy-bimodal | toy-sine | gaussian")
        ->required()
        ->check(CLI::IsMember({"wave", "toy-bimodal", "toy-sine", "gaussian"}));
    gen->add_option("--dist", dist, "wave distribution: train or test");
    gen->add_option("--n", n, "sample count");
    gen->add_option("--seed", seed);
    gen->add_flag("--desk", desk, "32x32 grid with scaled mode ranges (default)");
    gen->add_flag("--full", full, "128x128 grid with the full mode ranges");
    gen->add_option("--nu", nu, "toy-bimodal: minority mode fraction");
    gen->add_option("--n-plus", n_plus, "toy-bimodal: majority mode count");
    gen->add_option("--function", toy_fn, "toy-bimodal: linear | quadratic | cubic | sine");
    gen->add_option("--dim", dim, "gaussian: dimension");
    gen->add_option("--out", out, "output dataset file")->required();

    // train
    auto* train = app.add_subcommand("train", "Train a regressor, denoiser or OODC classifier");
    std::string what, data_path, reg_path, boundary_path;
    ModelFlags mf;
    double sigma_min = 0.01, sigma_max = 20, sigma_data = 1;
    train->add_option("what", what, "regressor | denoiser | oodc")
        ->required()
        ->check(CLI::IsMember({"regressor", "denoiser", "oodc"}));
    train->add_option("--data", data_path, "dataset file")->required();
    train->add_option("--out", out, "checkpoint file")->required();
    train->add_option("--sigma-min", sigma_min);
    train->add_option("--sigma-max", sigma_max);
    train->add_option("--sigma-data", sigma_data);
    train->add_option("--regressor", reg_path, "oodc: regressor checkpoint");
    train->add_option("--boundary", boundary_path, "oodc: boundary whose error threshold defines the labels");
    mf.add(train);

    // certify
    auto* certify = app.add_subcommand("certify", "Compute certificates for every sample of a dataset");
    std::string den_path, method_list = "jlbc", tag, oodc_path;
    double p = 2;
    SolverFlags sf;
    certify->add_option("--regressor", reg_path)->required();
    certify->add_option("--denoiser", den_path);
    certify->add_option("--oodc", oodc_path, "classifier checkpoint for the OODC method");
    certify->add_option("--data", data_path)->required();
    certify->add_option("--method", method_list, "comma-separated method tags");
    certify->add_option("--p", p, "norm exponent of the trajectory family");
    certify->add_option("--seed", seed);
    certify->add_option("--tag", tag, "dataset tag written to each record");
    certify->add_option("--out", out, "records file (.json or .csv)")->required();
    sf.add(certify);

    // boundary
    auto* boundary = app.add_subcommand("boundary", "Decision boundary from decision-sample records");
    std::string records_path, method;
    double alpha = 1.5, beta = 5;
    boundary->add_option("--records", records_path)->required();
    boundary->add_option("--method", method);
    boundary->add_option("--alpha", alpha);
    boundary->add_option("--beta", beta, "error percentile complement in percent");
    boundary->add_option("--out", out)->required();

    // classify
    auto* classify_cmd = app.add_subcommand("classify", "Label records ID/OOD and ID/CD/OOD");
    classify_cmd->add_option("--records", records_path)->required();
    classify_cmd->add_option("--boundary", boundary_path)->required();
    classify_cmd->add_option("--method", method);
    classify_cmd->add_option("--out", out)->required();

    // metrics
    auto* metrics_cmd = app.add_subcommand("metrics", "Quadrant metrics of labeled records");
    metrics_cmd->add_option("--records", records_path)->required();
    metrics_cmd->add_option("--boundary", boundary_path)->required();
    metrics_cmd->add_option("--method", method);
    metrics_cmd->add_option("--out", out);

    // fit-error
    auto* fit_cmd = app.add_subcommand("fit-error", "Exponential error-versus-certificate fit");
    double percentile = 75;
    std::vector<double> query;
    fit_cmd->add_option("--records", records_path)->required();
    fit_cmd->add_option("--method", method);
    fit_cmd->add_option("--percentile", percentile, "band percentile");
    fit_cmd->add_option("--predict", query, "certificates to evaluate the fit at")->delimiter(',');
    fit_cmd->add_option("--out", out);

    // report
    auto* report = app.add_subcommand("report", "Run the full experiment pipeline");
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::size_t> workers;
    report->add_option("--config", config_path, "TOML experiment configuration");
    report->add_option("--set", overrides, "key=value override (repeatable)");
    report->add_option("--out-dir", out, "output directory (overrides output_dir)");
    report->add_option("--workers", workers, "worker threads (default OODCERT_WORKERS or all cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (*methods_cmd) {
        print_methods();
        return 0;
    }

    if (*gen) {
        if (desk && full) throw ConfigError("--desk and --full are exclusive");
        Dataset d;
        if (kind == "wave") {
            d = gen_wave_dataset(DistSpec::wave(dist, !full, n, seed));
        } else if (kind == "toy-bimodal") {
            DistSpec s;
            s.tag = "toy-bimodal";
            s.nu = nu;
            s.n_plus = n_plus;
            s.toy_function = toy_fn;
            s.seed = seed;
            d = gen_toy_bimodal(s);
        } else if (kind == "toy-sine") {
            d = gen_toy_piecewise_sine(n, seed);
        } else {
            d = GaussianOracle::standard(dim).dataset(n, seed);
        }
        d.save(out);
        std::cout << "wrote " << d.size() << " samples to " << out << "\n";
        return 0;
    }

    if (*train) {
        Dataset d = Dataset::load(data_path);
        Checkpoint ck;
        if (what == "regressor") {
            ck = train_regressor(mf.spec(), d, mf.train());
        } else if (what == "denoiser") {
            ck = train_denoiser(mf.spec(), d.joint_all(), mf.train(), NoiseSchedule{sigma_min, sigma_max},
                                Preconditioning{sigma_data}, d.tag);
            ck.meta["normalization"] = d.norm;
        } else {
            if (reg_path.empty() || boundary_path.empty()) throw ConfigError("oodc needs --regressor and --boundary");
            Model reg(Checkpoint::load(reg_path));
            auto b = json::parse(io::read_text(boundary_path)).get<DecisionBoundary>();
            std::vector<Tensor<double>> preds;
            std::vector<int> labels;
            for (std::size_t i = 0; i < d.size(); ++i) {
                preds.push_back(reg.predict(d.input(i)));
                labels.push_back(prediction_error(preds.back(), d.output(i)).first > b.error_threshold ? 1 : 0);
            }
            ck = oodc_train(d.inputs, stack<double>(preds), labels, mf.spec(), mf.train(), reg.normalization());
        }
        ck.save(out);
        std::cout << "final loss " << ck.meta.at("loss_curve").back().get<double>() << ", wrote " << out << "\n";
        return 0;
    }

    if (*certify) {
        Dataset d = Dataset::load(data_path);
        Model reg(Checkpoint::load(reg_path));
        auto methods = parse_methods(method_list, p);
        std::vector<CertificateMethod> diffusion_methods;
        bool want_oodc = false;
        for (const auto& m : methods) {
            if (m.tag == "OODC")
                want_oodc = true;
            else
                diffusion_methods.push_back(m);
        }
        std::string dtag = tag.empty() ? d.tag : tag;
        std::vector<CertificateRecord> records;
        if (!diffusion_methods.empty()) {
            if (den_path.empty()) throw ConfigError("--denoiser is required for diffusion certificates");
            NetworkDenoiser den(Checkpoint::load(den_path));
            records = certify_dataset(reg, den, d, diffusion_methods, sf.config(), seed, 0, dtag, worker_count());
        }
        if (want_oodc) {
            if (oodc_path.empty()) throw ConfigError("--oodc is required for the OODC method");
            Checkpoint clf = Checkpoint::load(oodc_path);
            for (std::size_t i = 0; i < d.size(); ++i) records.push_back(certify_oodc(clf, reg, d.input(i), i, d.output(i), dtag));
        }
        save_records(out, records);
        std::cout << "wrote " << records.size() << " records to " << out << "\n";
        return 0;
    }

    if (*boundary) {
        auto records = load_records(records_path);
        std::string m = method_of(records, method);
        auto b = make_boundary(select_method(records, m), alpha, beta, find_method(m).sign());
        io::write_atomic(out, json(b).dump(2) + "\n");
        std::cout << json(b).dump(2) << "\n";
        return 0;
    }

    if (*classify_cmd) {
        auto records = load_records(records_path);
        std::string m = method_of(records, method);
        auto sel = select_method(records, m);
        label_records(sel, json::parse(io::read_text(boundary_path)).get<DecisionBoundary>());
        save_records(out, sel);
        std::cout << "labeled " << sel.size() << " records\n";
        return 0;
    }

    if (*metrics_cmd) {
        auto records = load_records(records_path);
        std::string m = method_of(records, method);
        auto b = json::parse(io::read_text(boundary_path)).get<DecisionBoundary>();
        json j = quadrant_metrics(select_method(records, m), b);
        j["method"] = m;
        if (!out.empty()) io::write_atomic(out, j.dump(2) + "\n");
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (*fit_cmd) {
        auto records = load_records(records_path);
        std::string m = method_of(records, method);
        std::vector<double> c, e;
        for (const auto& r : select_method(records, m)) {
            if (!r.error) throw ConfigError("record " + std::to_string(r.sample_id) + " has no error");
            c.push_back(r.certificate);
            e.push_back(*r.error);
        }
        ErrorFit fit = fit_error_curve(c, e, percentile);
        json j = fit;
        j["method"] = m;
        for (double q : query) {
            auto est = predict_error(fit, q);
            j["predictions"].push_back({{"certificate", q}, {"estimate", est.estimate}, {"lower", est.lower},
                                        {"upper", est.upper}});
        }
        if (!out.empty()) io::write_atomic(out, j.dump(2) + "\n");
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (*report) {
        if (!out.empty()) overrides.push_back("output_dir=\"" + out + "\"");
        auto exp = Experiment::load(config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path), overrides);
        auto res = run_pipeline(exp, &std::cerr, workers);
        std::cout << metrics_csv(res.report);
        std::cout << "report: " << (res.dir / "report.json").string() << "\n";
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const oodcert::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const oodcert::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
