// Acceptance suite: one PASS/FAIL line per criterion. Criteria can be
// selected on the command line (e.g. `medfuse_acceptance 1 6`); the default
// runs all of them. Exit status is non-zero when any selected criterion fails.

#include "medfuse/cli.hpp"
#include "medfuse/error.hpp"
#include "medfuse/estimators.hpp"
#include "medfuse/inference.hpp"
#include "medfuse/io.hpp"
#include "medfuse/simlab.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <unistd.h>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace medfuse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> lines;

    void check(bool ok, const std::string& what) {
        pass = pass && ok;
        lines.push_back(std::string(ok ? "  ok    " : "  FAIL  ") + what);
    }
};

std::string num(double x, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

std::string sci(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", x);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

double max_abs(const Matrix& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

double param_gap(const MediationFit& f, const testsupport::Params& o, bool with_c) {
    double g = std::max({max_abs(f.alpha_a - o.alpha), max_abs(f.sigma_m - o.sigma), max_abs(f.beta_m - o.beta),
                         std::abs(f.beta_a - o.beta_a), std::abs(f.sigma_e2 - o.s2)});
    if (with_c) g = std::max({g, max_abs(f.alpha_c - o.alpha_c), max_abs(f.beta_c - o.beta_c)});
    return g;
}

ScenarioConfig grid_cell(Index n, double r2_ac, double r2_mac, std::uint64_t seed) {
    ScenarioConfig c;
    c.id = "acceptance";
    c.n = n;
    c.n_e_multiplier = 100;
    c.r2_ac = r2_ac;
    c.r2_mac = r2_mac;
    c.replicates = 2000;
    c.bootstrap_B = 0;
    c.seed = seed;
    return c;
}

double rmse(const ScenarioSummary& s, SimMethod m, const char* effect) { return s.row(m, effect).rmse; }

// ---------------------------------------------------------------------------

Outcome criterion_1() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20240601);
    double gap_u = 0.0, gap_h = 0.0, gap_s = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const InternalDataset d = testsupport::random_dataset(rng, 60, 3, 2);
        const MediationFit u = fit_unconstrained(d);
        gap_u = std::max(gap_u, param_gap(u, testsupport::oracle_unconstrained(d), true));

        const double theta_h = u.te + (rep % 2 ? 0.5 : -0.5);
        const MediationFit h = fit_hard_constraint(d, {theta_h, 0.01, std::nullopt});
        gap_h = std::max(gap_h, param_gap(h, testsupport::oracle_hard(d, theta_h), true));

        const ExternalSummary ext{u.te + (rep % 2 ? 0.4 : -0.4), 0.05, std::nullopt};
        const MediationFit s = fit_soft_constraint(d, ext, SoftConfig::fixed(1.0));
        const ResidualizedData r = residualize(d);
        gap_s = std::max(gap_s, param_gap(s, testsupport::oracle_soft(r.y_r, r.m_r, r.a_r, ext.theta_hat, 0.05),
                                          false));
    }
    const double secs = seconds_since(t0);
    o.check(gap_u <= 1e-5, "unconstrained vs generic optimizer, max parameter gap " + sci(gap_u));
    o.check(gap_h <= 1e-5, "hard constraint vs generic optimizer, max parameter gap " + sci(gap_h));
    o.check(gap_s <= 1e-5, "soft (s2 = 1) vs generic optimizer of the marginal likelihood, max gap " + sci(gap_s));
    o.check(secs < 60.0, "runtime " + num(secs, 1) + " s (< 60 s)");
    return o;
}

Outcome criterion_2() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const ScenarioSummary a = run_scenario(grid_cell(200, 0.05, 0.2, 2), workers()).summary;
    const double uh = rmse(a, SimMethod::Unconstrained, "nde") / rmse(a, SimMethod::Hard, "nde");
    const double us = rmse(a, SimMethod::Unconstrained, "nde") / rmse(a, SimMethod::SoftEB, "nde");
    o.check(std::abs(uh - 1.314) <= 0.06, "(a) NDE RMSE unconstrained/hard = " + num(uh, 3) + " (1.314 +- 0.06)");
    o.check(std::abs(us - 1.161) <= 0.06, "(a) NDE RMSE unconstrained/soft = " + num(us, 3) + " (1.161 +- 0.06)");

    const ScenarioSummary b = run_scenario(grid_cell(200, 0.05, 0.8, 2), workers()).summary;
    const double nie = rmse(b, SimMethod::Unconstrained, "nie") / rmse(b, SimMethod::Hard, "nie");
    o.check(std::abs(nie - 1.695) <= 0.08, "(b) NIE RMSE unconstrained/hard = " + num(nie, 3) + " (1.695 +- 0.08)");
    o.lines.push_back("  info  runtime " + num(seconds_since(t0), 1) + " s");
    return o;
}

Outcome criterion_3() {
    Outcome o;
    ScenarioConfig cfg = grid_cell(200, 0.2, 0.5, 3);
    cfg.theta_e = ThetaEMode::fixed(2.0);
    const ScenarioSummary s = run_scenario(cfg, workers()).summary;
    const double nde = rmse(s, SimMethod::SoftEB, "nde") / rmse(s, SimMethod::Unconstrained, "nde");
    const double nie = rmse(s, SimMethod::SoftEB, "nie") / rmse(s, SimMethod::Unconstrained, "nie");
    const double hard = rmse(s, SimMethod::Hard, "nde") / rmse(s, SimMethod::Unconstrained, "nde");
    o.check(std::abs(nde - 1.0) <= 0.02, "soft-EB/unconstrained NDE RMSE = " + num(nde, 4) + " (within 2%)");
    o.check(std::abs(nie - 1.0) <= 0.02, "soft-EB/unconstrained NIE RMSE = " + num(nie, 4) + " (within 2%)");
    o.check(hard >= 1.5, "hard/unconstrained NDE RMSE = " + num(hard, 3) + " (>= 1.5)");
    return o;
}

// Criteria 4 and 5 share one n = 2000 run.
const ScenarioResult& large_run() {
    static const ScenarioResult result = [] {
        ScenarioConfig cfg = grid_cell(2000, 0.05, 0.2, 4);
        cfg.bootstrap_B = 200;
        return run_scenario(cfg, workers());
    }();
    return result;
}

Outcome criterion_4() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const ScenarioResult& res = large_run();
    const double n = 2000.0;
    struct Acc {
        double sum = 0, sq = 0, plug = 0;
        long k = 0;
    };
    Acc acc[3][2];
    std::set<long> bad;
    for (const ReplicateResult& r : res.replicates) {
        if (!r.converged) bad.insert(r.replicate);
    }
    for (const ReplicateResult& r : res.replicates) {
        if (bad.count(r.replicate) || r.method == SimMethod::HardOracle) continue;
        const int m = r.method == SimMethod::Unconstrained ? 0 : (r.method == SimMethod::Hard ? 1 : 2);
        const EffectRecord* eff[2] = {&r.nde, &r.nie};
        const double truth[2] = {res.truth.nde, res.truth.nie};
        for (int e = 0; e < 2; ++e) {
            const double err = std::sqrt(n) * (eff[e]->estimate - truth[e]);
            Acc& a = acc[m][e];
            a.sum += err;
            a.sq += err * err;
            a.plug += (m == 2 && e == 0) ? n * r.bootstrap_var_nde : eff[e]->avar;
            ++a.k;
        }
    }
    const char* methods[3] = {"unconstrained", "hard", "soft-EB"};
    const char* effects[2] = {"NDE", "NIE"};
    for (int m = 0; m < 3; ++m) {
        for (int e = 0; e < 2; ++e) {
            const Acc& a = acc[m][e];
            const double k = static_cast<double>(a.k);
            const double emp = (a.sq - a.sum * a.sum / k) / (k - 1.0);
            const double plug = a.plug / k;
            const double ratio = emp / plug;
            o.check(std::abs(ratio - 1.0) <= 0.05,
                    std::string(methods[m]) + " " + effects[e] + ": empirical var " + num(emp) + " vs " +
                        (m == 2 && e == 0 ? "n x bootstrap var " : "plug-in avar ") + num(plug) + ", ratio " +
                        num(ratio, 3));
        }
    }
    // Same formulas at the true parameters, for reference; the per-replicate
    // plug-ins above carry an O(p_m / n) upward bias.
    MediationFit t;
    t.alpha_a = res.truth.alpha_a;
    t.sigma_m = res.truth.sigma_m;
    t.beta_m = res.truth.beta_m;
    t.beta_a = res.truth.beta_a;
    t.sigma_e2 = res.truth.sigma_e2;
    const AsymptoticVariances tu = avar_unconstrained(t, res.truth.sigma_a2);
    const AsymptoticVariances th = avar_hard(t, res.truth.sigma_a2);
    o.lines.push_back("  info  formulas at the true parameters: unconstrained NDE " + num(*tu.avar_nde) + ", NIE " +
                      num(tu.avar_nie) + "; hard NDE " + num(*th.avar_nde) + ", NIE " + num(th.avar_nie));
    o.lines.push_back("  info  " + std::to_string(acc[0][0].k) + " usable replicates; runtime (incl. shared run) " +
                      num(seconds_since(t0), 1) + " s");
    return o;
}

Outcome criterion_5() {
    Outcome o;
    const ScenarioSummary& s = large_run().summary;
    const auto in_band = [](double c) { return c >= 0.935 && c <= 0.965; };
    for (SimMethod m : {SimMethod::Unconstrained, SimMethod::Hard, SimMethod::SoftEB}) {
        const double c = s.row(m, "nde").coverage;
        o.check(in_band(c), std::string(to_string(m)) + " NDE coverage " + num(c, 4) + " in [0.935, 0.965]");
    }
    const double c = s.row(SimMethod::Unconstrained, "nie").coverage;
    o.check(in_band(c), "unconstrained NIE coverage " + num(c, 4) + " in [0.935, 0.965]");
    o.lines.push_back("  info  hard-oracle NDE coverage " + num(s.row(SimMethod::HardOracle, "nde").coverage, 4));
    return o;
}

Outcome criterion_6() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();

    // Hard TE identity and the TE = NDE + NIE decomposition.
    {
        std::mt19937_64 rng(61);
        bool identity = true;
        double decomposition = 0.0;
        for (int rep = 0; rep < 100; ++rep) {
            const InternalDataset d = testsupport::random_dataset(rng, 50, 1 + rep % 4, 1 + rep % 3);
            const MediationFit u = fit_unconstrained(d);
            const ExternalSummary ext{u.te + 0.1 * (rep % 7 - 3), 0.02, std::nullopt};
            const MediationFit h = fit_hard_constraint(d, ext);
            const MediationFit s = fit_soft_constraint(d, ext);
            identity = identity && h.te == ext.theta_hat;
            for (const MediationFit* f : {&u, &h, &s}) {
                const Effects e = extract_effects(*f);
                decomposition = std::max(decomposition, std::abs(e.te - e.nde - e.nie));
            }
        }
        o.check(identity, "hard TE identity holds exactly on 100 instances");
        o.check(decomposition <= 1e-12, "TE = NDE + NIE, max gap " + sci(decomposition));
    }

    // Monotone objective traces.
    {
        std::mt19937_64 rng(62);
        bool ccd = true, em = true;
        for (int rep = 0; rep < 100; ++rep) {
            const InternalDataset d = testsupport::random_dataset(rng, 40, 3, 2);
            const MediationFit u = fit_unconstrained(d);
            std::vector<double> trace;
            fit_hard_constraint(cross_products(d), u.te + (rep % 2 ? 1.0 : -0.7), {}, u, &trace);
            for (std::size_t k = 1; k < trace.size(); ++k) {
                ccd = ccd && trace[k] >= trace[k - 1] - 1e-9 * std::abs(trace[k - 1]);
            }
            const CrossProducts st = cross_products(residualize(d), d.p_c());
            const MediationFit ur = fit_unconstrained(st);
            trace.clear();
            fit_soft_constraint(st, {ur.te + (rep % 2 ? 0.8 : -0.5), 0.03, std::nullopt}, 0.5 + 0.05 * rep,
                                SoftConfig{}, ur, &trace);
            for (std::size_t k = 1; k < trace.size(); ++k) {
                em = em && trace[k] >= trace[k - 1] - 1e-9 * std::abs(trace[k - 1]);
            }
        }
        o.check(ccd, "coordinate-descent log-likelihood is non-decreasing on 100 instances");
        o.check(em, "EM marginal log-likelihood is non-decreasing on 100 instances");
    }

    // Soft endpoints.
    {
        std::mt19937_64 rng(63);
        double gap = 0.0;
        for (int rep = 0; rep < 20; ++rep) {
            const InternalDataset d = testsupport::random_dataset(rng, 80, 3, 2);
            const MediationFit u = fit_unconstrained(d);
            const ExternalSummary ext{u.te + 0.5, 0.02, std::nullopt};
            const Effects eu = extract_effects(u), eh = extract_effects(fit_hard_constraint(d, ext));
            const Effects big = extract_effects(fit_soft_constraint(d, ext, SoftConfig::fixed(1e8)));
            const Effects tiny = extract_effects(fit_soft_constraint(d, ext, SoftConfig::fixed(1e-10)));
            gap = std::max({gap, std::abs(big.nde - eu.nde), std::abs(big.nie - eu.nie), std::abs(big.te - eu.te),
                            std::abs(tiny.nde - eh.nde), std::abs(tiny.nie - eh.nie), std::abs(tiny.te - eh.te)});
        }
        o.check(gap <= 1e-4, "soft s2 -> 0 / infinity matches hard / unconstrained, max gap " + sci(gap));
    }

    // Variance identities and limits.
    {
        std::mt19937_64 rng(64);
        std::normal_distribution<double> z;
        std::uniform_real_distribution<double> u(0.2, 2.0);
        double eq = 0.0, lim = 0.0;
        for (int rep = 0; rep < 1000; ++rep) {
            const Index p = 1 + rep % 6;
            MediationFit f;
            f.alpha_a = Vector(p);
            f.beta_m = Vector(p);
            Matrix l(p, p);
            for (Index i = 0; i < p; ++i) {
                f.alpha_a(i) = z(rng);
                f.beta_m(i) = z(rng);
                for (Index j = 0; j < p; ++j) l(i, j) = z(rng);
            }
            f.sigma_m = l * l.transpose() + 0.5 * Matrix::Identity(p, p);
            f.sigma_e2 = u(rng);
            const double sa2 = u(rng);
            const AsymptoticVariances h = avar_hard(f, sa2);
            const AsymptoticVariances un = avar_unconstrained(f, sa2);
            eq = std::max(eq, std::abs(*h.avar_nde - h.avar_nie) / std::max(1.0, h.avar_nie));
            lim = std::max({lim, std::abs(avar_soft(f, sa2, 1e12).avar_nie - un.avar_nie) / std::max(1.0, un.avar_nie),
                            std::abs(avar_soft(f, sa2, 1e-12).avar_nie - h.avar_nie) / std::max(1.0, h.avar_nie)});
        }
        o.check(eq <= 1e-10, "hard-constraint avar_nde == avar_nie, max gap " + sci(eq));
        o.check(lim <= 1e-6, "soft variance recovers the unconstrained / hard limits, max gap " + sci(lim));
    }

    // Residualization equivalence.
    {
        std::mt19937_64 rng(65);
        double gap = 0.0;
        for (int rep = 0; rep < 10; ++rep) {
            const InternalDataset d = testsupport::random_dataset(rng, 70, 3, 3);
            const ResidualizedData r = residualize(d);
            const InternalDataset dr{r.y_r, r.m_r, r.a_r, Matrix::Ones(70, 1)};
            const ExternalSummary ext{fit_unconstrained(d).te - 0.3, 0.02, std::nullopt};
            const auto diff = [](const MediationFit& a, const MediationFit& b) {
                return std::max({max_abs(a.alpha_a - b.alpha_a), std::abs(a.beta_a - b.beta_a),
                                 max_abs(a.beta_m - b.beta_m), max_abs(a.sigma_m - b.sigma_m),
                                 std::abs(a.sigma_e2 - b.sigma_e2)});
            };
            gap = std::max({gap, diff(fit_unconstrained(d), fit_unconstrained(dr)),
                            diff(fit_hard_constraint(d, ext), fit_hard_constraint(dr, ext)),
                            diff(fit_soft_constraint(d, ext, SoftConfig::fixed(1.0)),
                                 fit_soft_constraint(dr, ext, SoftConfig::fixed(1.0)))});
        }
        o.check(gap <= 1e-6, "residualized and raw fits agree, max gap " + sci(gap));
    }

    // Mixture-null sampler.
    {
        double worst_var = 0.0, worst_sym = 0.0;
        for (int p : {1, 5, 50}) {
            const double s2 = 1.7, sa2 = 0.6;
            const std::vector<double> draws = mixture_null_draws(p, s2, sa2, 1'000'000, 66);
            double mean = 0.0;
            for (double x : draws) mean += x;
            mean /= static_cast<double>(draws.size());
            double var = 0.0;
            for (double x : draws) var += (x - mean) * (x - mean);
            var /= static_cast<double>(draws.size() - 1);
            const double target = p * s2 / sa2;
            worst_var = std::max(worst_var, std::abs(var / target - 1.0));
            const std::vector<double> q = mixture_null_quantiles(p, s2, sa2, {0.025, 0.975}, 1'000'000, 67);
            worst_sym = std::max(worst_sym, std::abs(q[0] + q[1]) / std::sqrt(target));
        }
        o.check(worst_var <= 0.02, "mixture-null variance p sigma_e2 / sigma_a2 within " + num(100 * worst_var, 2) +
                                       "% (<= 2%)");
        o.check(worst_sym <= 0.02, "mixture-null symmetry |q_0.025 + q_0.975| / sd = " + sci(worst_sym));
    }

    const double secs = seconds_since(t0);
    o.check(secs < 120.0, "runtime " + num(secs, 1) + " s (< 120 s)");
    return o;
}

Outcome criterion_7() {
    Outcome o;
    const fs::path dir = fs::temp_directory_path() / ("medfuse_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    write_file(dir / "grid.yaml",
               "id: determinism\nn: 200\nr2_ac: 0.05\nr2_mac: [0.2, 0.8]\ntheta_e: [congenial, {normal: {mean: 1, "
               "variance: 0.1}}]\nreplicates: 25\nbootstrap_B: 50\nseed: 7\n");
    const auto simulate = [&](const std::string& out, const std::string& w) {
        const std::string cfg = (dir / "grid.yaml").string(), target = (dir / out).string();
        const char* argv[] = {"medfuse", "simulate", "--config", cfg.c_str(), "--out", target.c_str(),
                              "--workers", w.c_str()};
        std::ostringstream sink;
        return run_cli(8, argv, sink, sink);
    };
    const bool ran = simulate("w1", "1") == 0 && simulate("w1b", "1") == 0 && simulate("w3", "3") == 0 &&
                     simulate("w8", "8") == 0;
    o.check(ran, "simulate runs complete");
    int files = 0;
    bool same = ran;
    if (ran) {
        for (const auto& e : fs::directory_iterator(dir / "w1")) {
            const std::string name = e.path().filename().string();
            if (name.find(".summary.csv") == std::string::npos) continue;
            ++files;
            const std::string ref = read_file(e.path());
            for (const char* other : {"w1b", "w3", "w8"}) same = same && ref == read_file(dir / other / name);
        }
    }
    o.check(same && files == 4, std::to_string(files) + " summary files byte-identical across repeats and 1/3/8 workers");
    std::error_code ec;
    fs::remove_all(dir, ec);
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"oracle equivalence on 20 small datasets", criterion_1},
        {"congenial relative RMSE, n = 200", criterion_2},
        {"incongenial robustness, theta_E = 2", criterion_3},
        {"asymptotic variances at n = 2000", criterion_4},
        {"coverage at n = 2000", criterion_5},
        {"property suite", criterion_6},
        {"simulate determinism", criterion_7},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failed = 0, run = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        ++run;
        Outcome out;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            out = criteria[k].second();
        } catch (const std::exception& e) {
            out.check(false, std::string("exception: ") + e.what());
        }
        failed += !out.pass;
        std::cout << "criterion " << id << " [" << (out.pass ? "PASS" : "FAIL") << "] " << criteria[k].first << " ("
                  << num(seconds_since(t0), 1) << " s)\n";
        for (const std::string& l : out.lines) std::cout << l << "\n";
        std::cout.flush();
    }
    std::cout << "acceptance: " << (run - failed) << "/" << run << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
