// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "oodcert/certificates.hpp"
#include "oodcert/config.hpp"
#include "oodcert/datagen.hpp"
#include "oodcert/decision.hpp"
#include "oodcert/report.hpp"

#ifndef OODCERT_VERSION
#define OODCERT_VERSION "0.1.0"
#endif

namespace oodcert {

//---------------------------------------------------------------------------//
// Workers

/// Worker count from OODCERT_WORKERS, else the hardware concurrency.
inline std::size_t worker_count()
{
    if (const char* env = std::getenv("OODCERT_WORKERS")) {
        try {
            long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("OODCERT_WORKERS must be a positive integer, got '") + env + "'");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// fn(i) for i in [0, n) on up to \p workers threads; results in index order.
/// The first failing index's exception is rethrown.
template<class R>
std::vector<R> parallel_map(std::size_t n, std::size_t workers, const std::function<R(std::size_t)>& fn)
{
    std::vector<R> out(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                out[i] = fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

//---------------------------------------------------------------------------//
// Experiment configuration

inline json experiment_defaults()
{
    return json{
        {"seed", std::uint64_t{2026}},
        {"output_dir", "oodcert-run"},
        {"data.scale", "desk"},
        {"data.train_n", std::uint64_t{1000}},
        {"data.decision_n", std::uint64_t{32}},
        {"data.pool_id_n", std::uint64_t{100}},
        {"data.pool_ood_n", std::uint64_t{200}},
        {"data.fit_n", std::uint64_t{64}},
        {"regressor.arch", "mlp"},
        {"regressor.widths", json::array({512})},
        {"regressor.activation", "silu"},
        {"regressor.epochs", std::uint64_t{200}},
        {"regressor.batch_size", std::uint64_t{50}},
        {"regressor.lr", 1e-3},
        {"regressor.lr_schedule", "cosine"},
        {"regressor.weight_decay", 0.0},
        {"regressor.ema_decay", 0.999},
        {"regressor.precision", "f32"},
        {"regressor.loss", "l1"},
        {"denoiser.arch", "mlp"},
        {"denoiser.widths", json::array({512, 512})},
        {"denoiser.activation", "silu"},
        {"denoiser.epochs", std::uint64_t{200}},
        {"denoiser.batch_size", std::uint64_t{50}},
        {"denoiser.lr", 1e-3},
        {"denoiser.lr_schedule", "cosine"},
        {"denoiser.weight_decay", 0.0},
        {"denoiser.ema_decay", 0.999},
        {"denoiser.precision", "f32"},
        {"denoiser.sigma_min", 0.01},
        {"denoiser.sigma_max", 20.0},
        {"denoiser.sigma_data", 1.0},
        {"solver.method", "rk38"},
        {"solver.steps", std::uint64_t{32}},
        {"solver.divergence", "hutchinson"},
        {"solver.probes", std::uint64_t{8}},
        {"solver.fd_epsilon", 1e-3},
        {"certify.methods", "jlbc,jdpath,jsfns,jsbddm,jmssm"},
        {"certify.p", 2.0},
        {"boundary.alpha", 1.5},
        {"boundary.beta", 5.0},
        {"fit.percentile", 75.0},
    };
}

struct Experiment {
    FlatConfig cfg{experiment_defaults()};

    /// Defaults, then the file (if any), then key=value overrides.
    static Experiment load(const std::optional<std::filesystem::path>& file,
                           const std::vector<std::string>& overrides = {})
    {
        Experiment e;
        if (file) e.cfg.merge_file(*file);
        for (const auto& o : overrides) e.cfg.set(o);
        e.validate();
        return e;
    }

    std::uint64_t seed() const { return cfg.get<std::uint64_t>("seed"); }
    std::filesystem::path output_dir() const { return cfg.get<std::string>("output_dir"); }
    /// Configuration without the output location, which never affects results.
    json content() const
    {
        json j = cfg.values();
        j.erase("output_dir");
        return j;
    }
    std::string hash() const { return sha256_hex(content().dump()); }

    /// Independent 64-bit seed for pipeline component k.
    std::uint64_t derived_seed(std::uint64_t k) const
    {
        Rng r = Rng(seed()).split(k);
        return r.next_u64();
    }

    ModelSpec model_spec(const std::string& prefix) const
    {
        ModelSpec s;
        s.arch = cfg.get<std::string>(prefix + ".arch");
        s.widths = cfg.get<std::vector<std::size_t>>(prefix + ".widths");
        s.activation = cfg.get<std::string>(prefix + ".activation");
        return s;
    }

    TrainConfig train_config(const std::string& prefix, std::uint64_t seed) const
    {
        TrainConfig t;
        t.epochs = cfg.get<std::size_t>(prefix + ".epochs");
        t.batch_size = cfg.get<std::size_t>(prefix + ".batch_size");
        t.adam.lr = cfg.get<double>(prefix + ".lr");
        t.adam.weight_decay = cfg.get<double>(prefix + ".weight_decay");
        t.lr_schedule = cfg.get<std::string>(prefix + ".lr_schedule");
        t.ema_decay = cfg.get<double>(prefix + ".ema_decay");
        t.precision = cfg.get<std::string>(prefix + ".precision");
        if (prefix == "regressor") t.loss = cfg.get<std::string>("regressor.loss");
        t.seed = seed;
        return t;
    }

    NoiseSchedule schedule() const
    {
        return {cfg.get<double>("denoiser.sigma_min"), cfg.get<double>("denoiser.sigma_max")};
    }

    SolverConfig solver() const
    {
        SolverConfig s;
        s.method = ode::parse_method(cfg.get<std::string>("solver.method"));
        s.steps = cfg.get<std::size_t>("solver.steps");
        s.divergence = parse_divergence(cfg.get<std::string>("solver.divergence"));
        s.probes = cfg.get<std::size_t>("solver.probes");
        s.fd_epsilon = cfg.get<double>("solver.fd_epsilon");
        return s;
    }

    std::vector<CertificateMethod> methods() const
    {
        auto m = parse_methods(cfg.get<std::string>("certify.methods"), cfg.get<double>("certify.p"));
        for (const auto& x : m)
            if (x.tag == "OODC") throw ConfigError("the pipeline does not run OODC; use the oodc subcommands");
        return m;
    }

    bool desk() const
    {
        auto s = cfg.get<std::string>("data.scale");
        if (s != "desk" && s != "full") throw ConfigError("data.scale must be desk or full");
        return s == "desk";
    }

    void validate() const
    {
        desk();
        solver().validate();
        methods();
        schedule().validate();
        model_spec("regressor");
        model_spec("denoiser");
        if (cfg.get<std::size_t>("data.decision_n") < 2) throw ConfigError("data.decision_n must be >= 2");
        if (cfg.get<std::size_t>("data.fit_n") < 8) throw ConfigError("data.fit_n must be >= 8");
        if (cfg.get<std::size_t>("data.fit_n") >= pool_size()) throw ConfigError("data.fit_n must be below the pool size");
        double beta = cfg.get<double>("boundary.beta");
        if (!(beta > 0 && beta < 100)) throw ConfigError("boundary.beta must lie in (0, 100)");
        double q = cfg.get<double>("fit.percentile");
        if (!(q >= 0 && q <= 100)) throw ConfigError("fit.percentile must lie in [0, 100]");
    }

    std::size_t pool_size() const
    {
        return cfg.get<std::size_t>("data.pool_id_n") + cfg.get<std::size_t>("data.pool_ood_n");
    }

    /// Subset of the configuration as a flat object.
    json slice(std::initializer_list<std::string> prefixes) const
    {
        json out = json::object();
        for (const auto& [k, v] : cfg.values().items())
            for (const auto& p : prefixes)
                if (k == p || k.rfind(p + ".", 0) == 0) out[k] = v;
        return out;
    }
};

//---------------------------------------------------------------------------//
// Resumable stages

/// Runs a stage only when its artifact is missing or its input key changed.
/// The key digest is kept next to the artifact in "<artifact>.stamp".
class StageRunner {
  public:
    StageRunner(std::filesystem::path dir, std::ostream* log) : dir_(std::move(dir)), log_(log) {}

    /// Returns the artifact's SHA-256.
    std::string run(const std::string& rel, const json& key, const std::function<void(const std::filesystem::path&)>& produce)
    {
        auto path = dir_ / rel;
        auto stamp = path;
        stamp += ".stamp";
        std::string digest = sha256_hex(key.dump());
        bool fresh = std::filesystem::exists(path) && std::filesystem::exists(stamp) && io::read_text(stamp) == digest;
        if (fresh) {
            say("stage " + rel + ": up to date");
        } else {
            say("stage " + rel + ": running");
            produce(path);
            io::write_atomic(stamp, digest);
        }
        std::string h = sha256_file(path);
        hashes_[rel] = h;
        return h;
    }

    const json& hashes() const { return hashes_; }
    const std::filesystem::path& dir() const { return dir_; }
    void say(const std::string& msg) const
    {
        if (log_) *log_ << msg << std::endl;
    }

  private:
    std::filesystem::path dir_;
    std::ostream* log_;
    json hashes_ = json::object();
};

struct PipelineResult {
    Report report;
    std::vector<CertificateRecord> pool_records;      // labeled, all methods
    std::vector<CertificateRecord> decision_records;  // all methods
    std::vector<std::size_t> fit_indices;             // pool positions used for the fit
    std::filesystem::path dir;
    json hashes;
};

//---------------------------------------------------------------------------//
/*!
 * Certify every sample of \p data with all methods. Sample i uses the probe
 * stream split(first_id + i) of \p seed.
 */
inline std::vector<CertificateRecord> certify_dataset(const Model& reg, const Denoiser& den, const Dataset& data,
                                                      const std::vector<CertificateMethod>& methods,
                                                      const SolverConfig& solver, std::uint64_t seed,
                                                      std::size_t first_id, const std::string& tag,
                                                      std::size_t workers, const StageRunner* log = nullptr)
{
    std::atomic<std::size_t> done{0};
    std::mutex mu;
    auto per = parallel_map<std::vector<CertificateRecord>>(data.size(), workers, [&](std::size_t i) {
        auto r = certify_sample(reg, den, data.input(i), methods, solver, seed, first_id + i, data.output(i), tag);
        std::size_t d = ++done;
        if (log && (d % 25 == 0 || d == data.size())) {
            std::lock_guard<std::mutex> g(mu);
            log->say("  " + tag + ": " + std::to_string(d) + "/" + std::to_string(data.size()));
        }
        return r;
    });
    std::vector<CertificateRecord> out;
    for (auto& v : per)
        for (auto& r : v) out.push_back(std::move(r));
    return out;
}

/// Decision boundary, metrics, correlation and error fit for one method.
inline MethodReport evaluate_method(const CertificateMethod& m, const std::vector<CertificateRecord>& decision,
                                    std::vector<CertificateRecord>& pool, const std::vector<std::size_t>& fit_idx,
                                    double alpha, double beta, double percentile)
{
    MethodReport rep;
    rep.method = m.tag;
    rep.boundary = make_boundary(decision, alpha, beta, m.sign());
    label_records(pool, rep.boundary);
    rep.metrics = quadrant_metrics(pool, rep.boundary);
    std::vector<double> c, e;
    for (const auto& r : pool) {
        c.push_back(r.certificate);
        e.push_back(*r.error);
    }
    rep.spearman = spearman(c, e);

    std::vector<bool> in_fit(pool.size(), false);
    std::vector<double> fc, fe;
    for (std::size_t i : fit_idx) {
        in_fit[i] = true;
        fc.push_back(c[i]);
        fe.push_back(e[i]);
    }
    ErrorFit fit = fit_error_curve(fc, fe, percentile);
    std::size_t held = 0, covered = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (in_fit[i]) continue;
        ++held;
        auto est = predict_error(fit, c[i]);
        covered += e[i] >= est.lower && e[i] <= est.upper;
    }
    rep.fit = fit;
    if (held) rep.band_coverage = static_cast<double>(covered) / static_cast<double>(held);
    return rep;
}

/*!
 * End-to-end wave experiment: generate data, train the regressor and the
 * joint denoiser, certify decision and pool samples, then derive boundaries,
 * metrics and error fits. Stages are skipped when their artifacts are up to
 * date; the report carries no timestamps so reruns are byte-identical.
 */
inline PipelineResult run_pipeline(const Experiment& exp, std::ostream* log = &std::cerr,
                                   std::optional<std::size_t> workers = std::nullopt)
{
    exp.validate();
    std::size_t nworkers = workers.value_or(worker_count());
    StageRunner st(exp.output_dir(), log);
    bool desk = exp.desk();
    const auto& C = exp.cfg;

    json data_key = exp.slice({"seed", "data"});
    auto gen = [&](const std::string& rel, const std::string& dist, const std::string& n_key, std::uint64_t k) {
        json key = data_key;
        key["stage"] = rel;
        st.run(rel, key, [&](const std::filesystem::path& p) {
            Dataset d = gen_wave_dataset(DistSpec::wave(dist, desk, C.get<std::size_t>(n_key), exp.derived_seed(k)));
            d.tag = rel.substr(rel.find('/') + 1, rel.find('.') - rel.find('/') - 1);
            d.save(p);
        });
    };
    gen("data/train.oodd", "train", "data.train_n", 1);
    gen("data/decision.oodd", "train", "data.decision_n", 2);
    gen("data/pool-id.oodd", "train", "data.pool_id_n", 3);
    gen("data/pool-ood.oodd", "test", "data.pool_ood_n", 4);

    auto dir = st.dir();
    Dataset train = Dataset::load(dir / "data/train.oodd");

    json reg_key = exp.slice({"regressor"});
    reg_key["train"] = st.hashes()["data/train.oodd"];
    reg_key["seed"] = exp.derived_seed(5);
    st.run("models/regressor.ckpt", reg_key, [&](const std::filesystem::path& p) {
        train_regressor(exp.model_spec("regressor"), train, exp.train_config("regressor", exp.derived_seed(5))).save(p);
    });

    json den_key = exp.slice({"denoiser"});
    den_key["train"] = st.hashes()["data/train.oodd"];
    den_key["seed"] = exp.derived_seed(6);
    st.run("models/denoiser.ckpt", den_key, [&](const std::filesystem::path& p) {
        Preconditioning pre{C.get<double>("denoiser.sigma_data")};
        train_denoiser(exp.model_spec("denoiser"), train.joint_all(), exp.train_config("denoiser", exp.derived_seed(6)),
                       exp.schedule(), pre, train.tag)
            .save(p);
    });

    auto methods = exp.methods();
    SolverConfig solver = exp.solver();
    std::size_t decision_n = C.get<std::size_t>("data.decision_n");
    std::size_t pool_id_n = C.get<std::size_t>("data.pool_id_n");

    json cert_key = exp.slice({"solver", "certify"});
    for (const auto& a : {"data/decision.oodd", "data/pool-id.oodd", "data/pool-ood.oodd", "models/regressor.ckpt",
                          "models/denoiser.ckpt"})
        cert_key[a] = st.hashes()[a];
    cert_key["seed"] = exp.derived_seed(7);
    st.run("certificates.json", cert_key, [&](const std::filesystem::path& p) {
        Model reg(Checkpoint::load(dir / "models/regressor.ckpt"));
        NetworkDenoiser den(Checkpoint::load(dir / "models/denoiser.ckpt"));
        std::uint64_t s = exp.derived_seed(7);
        std::vector<CertificateRecord> all;
        auto add = [&](const std::string& file, std::size_t first, const std::string& tag) {
            Dataset d = Dataset::load(dir / file);
            d.norm = train.norm;
            auto r = certify_dataset(reg, den, d, methods, solver, s, first, tag, nworkers, &st);
            all.insert(all.end(), r.begin(), r.end());
        };
        add("data/decision.oodd", 0, "decision");
        add("data/pool-id.oodd", decision_n, "pool-id");
        add("data/pool-ood.oodd", decision_n + pool_id_n, "pool-ood");
        save_records(p, all);
    });

    PipelineResult res;
    res.dir = dir;
    auto all = load_records(dir / "certificates.json");
    for (auto& r : all) (r.dataset == "decision" ? res.decision_records : res.pool_records).push_back(r);

    // Fit samples: a seeded choice of fit_n pool positions.
    std::size_t pool_n = exp.pool_size();
    std::vector<std::size_t> perm(pool_n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng prng(exp.derived_seed(8));
    for (std::size_t i = pool_n; i > 1; --i) {
        auto j = static_cast<std::size_t>(prng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(perm[i - 1], perm[j]);
    }
    res.fit_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(C.get<std::size_t>("data.fit_n")));
    std::sort(res.fit_indices.begin(), res.fit_indices.end());

    Report report;
    report.dataset = desk ? "wave-desk" : "wave-full";
    std::vector<CertificateRecord> labeled;
    for (const auto& m : methods) {
        auto dec = select_method(res.decision_records, m.tag);
        auto pool = select_method(res.pool_records, m.tag);
        if (pool.size() != pool_n || dec.size() != decision_n) throw ConfigError("certificates.json is incomplete");
        report.methods.push_back(evaluate_method(m, dec, pool, res.fit_indices, C.get<double>("boundary.alpha"),
                                                 C.get<double>("boundary.beta"), C.get<double>("fit.percentile")));
        labeled.insert(labeled.end(), pool.begin(), pool.end());
    }
    res.pool_records = labeled;

    json report_key = exp.slice({"boundary", "fit", "data.fit_n"});
    report_key["certificates"] = st.hashes()["certificates.json"];
    report_key["seed"] = exp.derived_seed(8);
    report_key["config"] = exp.hash();
    st.run("records.csv", report_key, [&](const std::filesystem::path& p) { save_records(p, labeled); });
    st.run("metrics.csv", report_key, [&](const std::filesystem::path& p) { io::write_atomic(p, metrics_csv(report)); });

    report.provenance = json{{"config_hash", exp.hash()}, {"config", exp.content()}, {"version", OODCERT_VERSION}};
    for (const auto& [k, v] : st.hashes().items()) report.provenance["artifacts"][k] = v;
    st.run("report.json", report_key, [&](const std::filesystem::path& p) {
        io::write_atomic(p, json(report).dump(2) + "\n");
    });
    res.report = std::move(report);
    res.hashes = st.hashes();
    return res;
}

}  // namespace oodcert
