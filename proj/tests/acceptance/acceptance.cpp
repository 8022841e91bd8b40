// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oodcert/oodcert.hpp"

#include "../support/gradcheck.hpp"

using namespace oodcert;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string id;
    std::string name;
    double budget_s;  // wall-clock limit, 0 = none
    std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Tensor<double> vec2(double a, double b)
{
    return Tensor<double>({2}, {a, b});
}

//---------------------------------------------------------------------------//
// Likelihood

Outcome gaussian_oracle()
{
    OracleDenoiser den(GaussianOracle::standard(2), {});
    SolverConfig cfg;
    cfg.steps = 128;
    cfg.divergence = DivergenceMode::exact_dense;
    double ref = -std::log(2 * std::numbers::pi);
    double e0 = std::abs(log_likelihood(den, vec2(0, 0), cfg, Rng(1)).log_likelihood - ref);
    double e1 = std::abs(log_likelihood(den, vec2(1, 1), cfg, Rng(1)).log_likelihood - (ref - 1));
    return {e0 < 5e-3 && e1 < 5e-3, fmt("|err| at (0,0) %.2e, at (1,1) %.2e (tol 5e-3)", e0, e1)};
}

Outcome trained_denoiser()
{
    const std::size_t n = 10000;
    auto oracle = GaussianOracle::standard(2);
    Tensor<double> joint({n, 2});
    Rng rng(11);
    for (double& v : joint.data()) v = rng.normal();
    ModelSpec spec;
    spec.widths = {128, 128};
    TrainConfig tc;
    tc.epochs = 80;
    tc.batch_size = 100;
    tc.adam.lr = 2e-3;
    tc.seed = 12;
    tc.precision = "f32";
    NetworkDenoiser den(train_denoiser(spec, joint, tc));

    SolverConfig cfg;
    cfg.steps = 64;
    cfg.divergence = DivergenceMode::exact_dense;
    Rng test(13);
    std::vector<double> err;
    for (int i = 0; i < 100; ++i) {
        double a = test.normal(), b = test.normal();
        double ll = log_likelihood(den, vec2(a, b), cfg, Rng(14)).log_likelihood;
        std::vector<double> z{a, b};
        err.push_back(std::abs(ll - oracle.log_density(z)));
    }
    double med = median(err);
    return {med < 0.15, fmt("median |ll - log p| over 100 points %.4f nats (tol 0.15)", med)};
}

Outcome hutchinson()
{
    const std::size_t d = 8, repeats = 1000, probes = 32;
    Rng rng(21);
    std::vector<double> a(d * d);
    for (double& v : a) v = rng.normal();
    double trace = 0;
    for (std::size_t i = 0; i < d; ++i) trace += a[i * d + i];
    ScoreFn linear = [&](const Tensor<double>& batch) {
        Tensor<double> out(batch.shape());
        std::size_t rows = batch.size() / d;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < d; ++i) {
                double acc = 0;
                for (std::size_t j = 0; j < d; ++j) acc += a[i * d + j] * batch[r * d + j];
                out[r * d + i] = acc;
            }
        return out;
    };
    Tensor<double> z({d});
    for (double& v : z.data()) v = rng.normal();
    std::vector<double> est;
    for (std::size_t k = 0; k < repeats; ++k) {
        auto p = rademacher_probes({d}, probes, rng);
        est.push_back(divergence(linear, z, p, DivergenceMode::hutchinson));
    }
    double m = mean(est);
    double se = population_std(est) * std::sqrt(static_cast<double>(repeats) / (repeats - 1)) / std::sqrt(double(repeats));
    double dev = std::abs(m - trace) / se;

    ScoreFn identity = [](const Tensor<double>& b) { return b; };
    bool exact = true;
    for (int k = 0; k < 20; ++k) {
        Tensor<double> zz({d});
        for (double& v : zz.data()) v = rng.normal(0, 3);
        auto p = rademacher_probes({d}, probes, rng);
        exact = exact && divergence(identity, zz, p, DivergenceMode::hutchinson) == static_cast<double>(d);
    }
    return {dev <= 3 && exact,
            fmt("mean %.4f vs trace %.4f: %.2f SE (tol 3); s(z)=z gives exactly %zu: %s", m, trace, dev, d,
                exact ? "yes" : "no")};
}

//---------------------------------------------------------------------------//
// Autodiff

Outcome autodiff()
{
    double worst = 0;
    std::string worst_name;
    std::size_t n = 0;
    for (const auto& c : oodcert::testing::primitive_cases()) {
        auto r = oodcert::testing::check_gradient(c.fn, c.at);
        ++n;
        if (r.rel_error >= worst) {
            worst = r.rel_error;
            worst_name = c.name + "/" + r.worst;
        }
    }
    return {worst < 1e-4, fmt("%zu primitives, worst relative error %.2e at %s (tol 1e-4)", n, worst, worst_name.c_str())};
}

//---------------------------------------------------------------------------//
// Toy reproductions

Outcome toy_bimodal()
{
    std::vector<double> minus, plus, ratio;
    for (std::uint64_t run = 0; run < 10; ++run) {
        DistSpec s;
        s.tag = "toy-bimodal";
        s.nu = 0.1;
        s.n_plus = 200;
        s.toy_function = "linear";
        s.seed = 100 + run;
        Dataset d = generate(s);
        ModelSpec spec;
        spec.widths = {32, 32};
        TrainConfig tc;
        tc.epochs = 300;
        tc.batch_size = 22;
        tc.adam.lr = 3e-3;
        tc.loss = "l2";
        tc.seed = 200 + run;
        Model m(train_regressor(spec, d, tc));

        Rng rng(300 + run);
        double sd = std::sqrt(s.mode_var), em = 0, ep = 0;
        const int nt = 1000;
        for (int i = 0; i < nt; ++i) {
            double xp = rng.normal(1.0, sd), xm = rng.normal(-1.0, sd);
            double rp = m.predict(Tensor<double>({1}, {xp}))[0] - toy_function("linear", xp);
            double rm = m.predict(Tensor<double>({1}, {xm}))[0] - toy_function("linear", xm);
            ep += rp * rp / nt;
            em += rm * rm / nt;
        }
        minus.push_back(em);
        plus.push_back(ep);
        ratio.push_back(em / ep);
    }
    double mm = median(minus), mp = median(plus);
    return {mm >= 3 * mp, fmt("median MSE '-' %.4g, '+' %.4g, ratio %.2f (need >= 3); per-run ratio median %.2f", mm, mp,
                              mm / mp, median(ratio))};
}

Outcome toy_sine()
{
    Dataset train = gen_toy_piecewise_sine(5000, 31);
    train.fit_normalization();
    ModelSpec spec;
    spec.widths = {256, 256};
    TrainConfig tc;
    tc.epochs = 100;
    tc.batch_size = 100;
    tc.adam.lr = 2e-3;
    tc.seed = 32;
    tc.precision = "f32";
    NetworkDenoiser den(train_denoiser(spec, train.joint_all(), tc, {}, {}, train.tag));

    SolverConfig cfg;
    cfg.steps = 64;
    cfg.divergence = DivergenceMode::exact_dense;
    Rng rng(33);
    std::vector<double> on, off;
    for (int i = 0; i < 50; ++i) {
        double x = rng.uniform(-1.0, 0.0), y = piecewise_sine(x);
        auto field = [&](double yy) {
            return concat0(train.norm.norm_x(Tensor<double>({1}, {x})), train.norm.norm_y(Tensor<double>({1}, {yy})));
        };
        on.push_back(log_likelihood(den, field(y), cfg, Rng(34)).log_likelihood);
        off.push_back(log_likelihood(den, field(y + 0.5), cfg, Rng(34)).log_likelihood);
    }
    double auc = rank_auc(on, off);
    return {auc >= 0.9, fmt("AUC on-graph vs off-graph %.3f (need >= 0.9); median ll %.2f vs %.2f", auc, median(on),
                            median(off))};
}

//---------------------------------------------------------------------------//
// Desk-scale wave experiment

struct DeskRuns {
    fs::path work;
    std::size_t workers = 1;
    std::optional<PipelineResult> first;
    std::optional<double> first_seconds;

    const PipelineResult& get()
    {
        if (!first) {
            auto t0 = std::chrono::steady_clock::now();
            first = run("desk-a");
            first_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
        return *first;
    }

    PipelineResult run(const std::string& name) const
    {
        fs::path dir = work / name;
        fs::remove_all(dir);
        auto exp = Experiment::load(std::nullopt, {"output_dir=\"" + dir.string() + "\""});
        std::ofstream log(work / (name + ".log"));
        return run_pipeline(exp, &log, workers);
    }

    const MethodReport& method(const std::string& tag)
    {
        for (const auto& m : get().report.methods)
            if (m.method == tag) return m;
        throw ConfigError("report lacks method " + tag);
    }
};

Outcome desk_wave(DeskRuns& desk)
{
    const auto& m = desk.method("JLBC");
    bool ok = m.spearman <= -0.5 && m.metrics.fpr <= 0.15 && m.metrics.acc >= 0.7;
    return {ok, fmt("JLBC Spearman %.3f (<= -0.5), FPR %.3f (<= 0.15), ACC %.3f (>= 0.7); pipeline %.0f s", m.spearman,
                    m.metrics.fpr, m.metrics.acc, *desk.first_seconds)};
}

Outcome family(DeskRuns& desk)
{
    // Bit-exact toggle additivity on the real pool and on random trajectories.
    const auto& res = desk.get();
    auto a = select_method(res.pool_records, "JSFNS");
    auto b = select_method(res.pool_records, "JDPath");
    auto ab = select_method(res.pool_records, "JSBDDM");
    bool additive = !a.empty() && a.size() == b.size() && a.size() == ab.size();
    for (std::size_t i = 0; additive && i < a.size(); ++i) additive = ab[i].certificate == a[i].certificate + b[i].certificate;

    Rng rng(41);
    for (int t = 0; additive && t < 100; ++t) {
        Trajectory traj;
        for (int k = 0; k < 17; ++k) {
            TrajectoryPoint p;
            p.t = k / 16.0;
            p.eps = Tensor<double>({6});
            p.z = Tensor<double>({6});
            for (double& v : p.eps.data()) v = rng.normal();
            traj.push_back(p);
        }
        for (double p : {1.0, 2.0, 3.0}) {
            double ta = unified_certificate(traj, find_method("JSFNS", p));
            double tb = unified_certificate(traj, find_method("JDPath", p));
            double tc = unified_certificate(traj, find_method("JMSSM", p));
            for (int mask = 1; mask < 8; ++mask) {
                CertificateMethod m{"mix", double(mask & 1), double((mask >> 1) & 1), double((mask >> 2) & 1), p};
                additive = additive && unified_certificate(traj, m) == (m.alpha * ta + m.beta * tb) + m.gamma * tc;
            }
        }
    }
    double rho = desk.method("JDPath").spearman;
    return {additive && rho >= 0.4,
            fmt("additivity bit-exact: %s (%zu pool samples, 100 random trajectories); JDPath Spearman %.3f (>= 0.4)",
                additive ? "yes" : "no", a.size(), rho)};
}

//---------------------------------------------------------------------------//
// Decision

Outcome decision_oracle()
{
    std::vector<double> five{1, 2, 3, 4, 5};
    bool exact = certificate_boundary(five, 1.5, -1) == 3 - 1.5 * std::sqrt(2.0);
    std::size_t mismatches = 0;
    Rng rng(51);
    for (int inst = 0; inst < 100; ++inst) {
        std::vector<double> dc(32), de(32);
        for (double& v : dc) v = rng.normal();
        for (double& v : de) v = std::abs(rng.normal());
        int sign = inst % 2 ? 1 : -1;
        auto b = make_boundary(dc, de, 1.5, 5, sign);
        auto n = static_cast<std::size_t>(rng.uniform_int(1, 1000));
        std::vector<CertificateRecord> recs;
        std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            CertificateRecord r;
            r.sample_id = i;
            r.certificate = i % 7 == 0 ? b.certificate_threshold : 0.5 * std::round(4 * rng.normal());
            r.error = i % 5 == 0 ? b.error_threshold : std::abs(rng.normal());
            bool ood = sign < 0 ? r.certificate < b.certificate_threshold : r.certificate > b.certificate_threshold;
            bool large = *r.error > b.error_threshold;
            tp += ood && large;
            fp += ood && !large;
            tn += !ood && !large;
            fn += !ood && large;
            recs.push_back(r);
        }
        auto m = quadrant_metrics(recs, b);
        auto ratio = [](std::size_t x, std::size_t y) { return y ? double(x) / double(y) : 0.0; };
        bool same = m.counts.tp == tp && m.counts.fp == fp && m.counts.tn == tn && m.counts.fn == fn
                    && m.acc == ratio(tp + tn, n) && m.fpr == ratio(fp, fp + tn) && m.fnr == ratio(fn, fn + tp)
                    && m.fdr == ratio(fp, fp + tp);
        mismatches += !same;
    }
    return {exact && mismatches == 0,
            fmt("boundary [1..5], alpha 1.5 equals 3 - 1.5 sqrt 2 exactly: %s; exhaustive-count mismatches %zu/100",
                exact ? "yes" : "no", mismatches)};
}

Outcome error_fit(DeskRuns& desk)
{
    std::vector<double> x, y;
    for (int i = 0; i < 64; ++i) {
        double c = -4 + 8.0 * i / 63;
        x.push_back(c);
        y.push_back(2 * std::exp(-0.5 * c) + 0.1);
    }
    auto f = fit_error_curve(x, y);
    double ea = std::abs(f.a * std::exp(0.5 * f.center) - 2), eb = std::abs(f.b - 0.5), ec = std::abs(f.c - 0.1);
    double worst = std::max({ea, eb, ec});
    const auto& m = desk.method("JLBC");
    double cov = m.band_coverage.value_or(0);
    return {worst < 1e-4 && cov >= 0.7,
            fmt("synthetic max parameter error %.1e (tol 1e-4); desk 75th-percentile band covers %.3f of held-out pool "
                "(>= 0.7)",
                worst, cov)};
}

Outcome determinism(DeskRuns& desk)
{
    const auto& a = desk.get();
    auto b = desk.run("desk-b");
    std::size_t same = 0, total = 0;
    std::string differing;
    for (const auto& [k, v] : a.hashes.items()) {
        ++total;
        if (b.hashes.contains(k) && b.hashes[k] == v)
            ++same;
        else
            differing += " " + k;
    }
    bool report_same = sha256_file(a.dir / "report.json") == sha256_file(b.dir / "report.json");
    return {same == total && report_same && total > 0,
            fmt("independent rerun: %zu/%zu artifact hashes identical, report.json identical: %s%s", same, total,
                report_same ? "yes" : "no", differing.empty() ? "" : (", differing:" + differing).c_str())};
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"oodcert acceptance suite"};
    std::string work = "acceptance-work";
    std::vector<std::string> only;
    std::size_t workers = worker_count();
    app.add_option("--work-dir", work, "scratch directory for pipeline runs");
    app.add_option("--only", only, "criterion ids to run")->delimiter(',');
    app.add_option("--workers", workers, "worker threads for certification");
    CLI11_PARSE(app, argc, argv);

    fs::create_directories(work);
    DeskRuns desk{work, workers};

    std::vector<Criterion> all{
        {"gaussian-oracle", "Gaussian-oracle likelihood", 10, gaussian_oracle},
        {"trained-denoiser", "Trained-denoiser likelihood", 600, trained_denoiser},
        {"hutchinson", "Hutchinson estimator", 0, hutchinson},
        {"autodiff", "Autodiff gradient checks", 0, autodiff},
        {"toy-bimodal", "Bimodal-input toy reproduction", 300, toy_bimodal},
        {"toy-sine", "Piecewise-sine joint likelihood ranking", 1200, toy_sine},
        {"desk-wave", "Desk-scale wave experiment (JLBC)", 7200, [&] { return desk_wave(desk); }},
        {"family", "Certificate family additivity and JDPath", 0, [&] { return family(desk); }},
        {"decision", "Decision and metrics oracle", 0, decision_oracle},
        {"error-fit", "Error fit recovery and band coverage", 0, [&] { return error_fit(desk); }},
        {"determinism", "Pipeline rerun determinism", 0, [&] { return determinism(desk); }},
    };
    std::set<std::string> wanted(only.begin(), only.end());

    int failed = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0 && s > c.budget_s) {
            o.pass = false;
            o.detail += fmt("; over time budget %.0f s", c.budget_s);
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.id << ": " << c.name << " | " << o.detail
                  << fmt(" [%.1f s]", s) << std::endl;
    }
    std::cout << (failed ? "FAILED " : "ALL PASSED ") << failed << " failing criteria" << std::endl;
    return failed ? 1 : 0;
}
