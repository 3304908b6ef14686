#include "medfuse/simlab.hpp"

#include "medfuse/error.hpp"
#include "medfuse/parallel.hpp"
#include "medfuse/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>

namespace medfuse {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr const char* kEffects[] = {"nde", "nie", "te"};

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorKind::ConfigError, what);
}

Matrix normal_matrix(Index rows, Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix out(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) out(i, j) = z(rng);
    return out;
}

Matrix cholesky_or_throw(const Matrix& s, const std::string& what) {
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::NotPositiveDefinite, what + " is not positive definite");
    return llt.matrixL();
}

// Draws (A, C) rows: A first, then C with the intercept prepended.
std::pair<Vector, Matrix> draw_exposure_confounders(const ScenarioTruth& truth, Index n, std::mt19937_64& rng) {
    const Index k = truth.omega.rows();
    const Matrix l = cholesky_or_throw(truth.omega, "Omega");
    const Matrix x = normal_matrix(n, k, rng) * l.transpose();
    Matrix c(n, k);
    c.col(0).setOnes();
    c.rightCols(k - 1) = x.rightCols(k - 1);
    return {x.col(0), c};
}

double theta_for_replicate(const ScenarioConfig& cfg, long r) {
    switch (cfg.theta_e.kind) {
        case ThetaEMode::Kind::Congenial: return cfg.theta_i;
        case ThetaEMode::Kind::Fixed: return cfg.theta_e.value;
        case ThetaEMode::Kind::RandomNormal: {
            std::mt19937_64 rng = substream(cfg.seed, static_cast<std::uint64_t>(r), Stream::ExternalTheta);
            return cfg.theta_e.mean + std::sqrt(cfg.theta_e.variance) * std::normal_distribution<double>(0.0, 1.0)(rng);
        }
    }
    return cfg.theta_i;
}

EffectRecord effect_record(double est, const std::optional<IntervalEstimate>& ci, std::optional<double> avar) {
    EffectRecord e;
    e.estimate = est;
    e.lower = ci ? ci->lower : kNaN;
    e.upper = ci ? ci->upper : kNaN;
    e.avar = avar ? *avar : kNaN;
    return e;
}

class LazyMixtureTable {
public:
    LazyMixtureTable(int p_m, double level, std::uint64_t seed) : p_m_(p_m), level_(level), seed_(seed) {}
    const MixtureNullTable& get() {
        std::call_once(once_, [&] { table_ = mixture_null_table(p_m_, level_, 1'000'000, seed_); });
        return table_;
    }

private:
    int p_m_;
    double level_;
    std::uint64_t seed_;
    std::once_flag once_;
    MixtureNullTable table_;
};

void run_replicate(const ScenarioConfig& cfg, const ScenarioTruth& truth, long r, LazyMixtureTable& mixture,
                   ReplicateResult* out) {
    const auto ur = static_cast<std::uint64_t>(r);
    for (int k = 0; k < 4; ++k) {
        out[k] = ReplicateResult{};
        out[k].replicate = r;
        out[k].method = kSimMethods[k];
        out[k].bootstrap_var_nde = kNaN;
        out[k].s2_used = kNaN;
    }

    std::mt19937_64 rng_int = substream(cfg.seed, ur, Stream::Internal);
    const InternalDataset data = simulate_internal(truth, cfg.n, rng_int);
    const double theta_e = theta_for_replicate(cfg, r);
    const long n_e = static_cast<long>(cfg.n) * cfg.n_e_multiplier;
    std::mt19937_64 rng_ext = substream(cfg.seed, ur, Stream::External);
    const ExternalSummary ext = n_e > cfg.external_exact_threshold
                                    ? simulate_external_summary_exact(truth, theta_e, n_e, rng_ext)
                                    : simulate_external_summary(truth, theta_e, n_e, rng_ext);
    const ExternalSummary oracle{truth.theta_i, ext.var_theta_hat, ext.n_e};

    CrossProducts stats;
    MediationFit u;
    try {
        stats = cross_products(prepare(data), data.p_c());
        u = fit_unconstrained(stats);
    } catch (const Error& e) {
        for (int k = 0; k < 4; ++k) out[k].error = e.what();
        return;
    }

    InferenceOptions opts;
    opts.level = cfg.level;
    opts.bootstrap_B = cfg.bootstrap_B;
    opts.seed = substream(cfg.seed, ur, Stream::Bootstrap)();
    opts.workers = 1;
    const double sigma_a2 = stats.aa() / static_cast<double>(stats.n);
    const MixtureNullTable* table = nullptr;

    for (int k = 0; k < 4; ++k) {
        ReplicateResult& rec = out[k];
        const ExternalSummary& used = kSimMethods[k] == SimMethod::HardOracle ? oracle : ext;
        rec.theta_e_hat = used.theta_hat;
        rec.var_theta_e = used.var_theta_hat;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            MediationFit fit;
            switch (kSimMethods[k]) {
                case SimMethod::Unconstrained: fit = u; break;
                case SimMethod::Hard:
                case SimMethod::HardOracle: fit = fit_hard_constraint(stats, used.theta_hat, cfg.hard, u); break;
                case SimMethod::SoftEB: fit = fit_soft_constraint(stats, used, cfg.soft); break;
            }
            if (!table && wald_null_test(u, sigma_a2, stats.n).p_value > opts.wald_alpha) table = &mixture.get();
            const EffectReport rep = make_report(fit, u, stats, &used, cfg.soft, opts, table);
            rec.nde = effect_record(rep.point.nde, rep.nde_ci, rep.avar.avar_nde);
            rec.nie = effect_record(rep.point.nie, rep.nie_ci, rep.avar.avar_nie);
            rec.te = effect_record(rep.point.te, rep.te_ci, rep.avar.avar_te);
            if (rep.bootstrap_var_nde) rec.bootstrap_var_nde = *rep.bootstrap_var_nde;
            if (fit.s2_used) rec.s2_used = *fit.s2_used;
            rec.iterations = fit.iterations;
            rec.wald_p = rep.wald.p_value;
            rec.converged = std::isfinite(rec.nde.estimate) && std::isfinite(rec.nie.estimate);
            if (!rec.converged) rec.error = "non-finite estimate";
        } catch (const Error& e) {
            rec.error = e.what();
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
}

}  // namespace

std::string_view to_string(SimMethod m) {
    switch (m) {
        case SimMethod::Unconstrained: return "unconstrained";
        case SimMethod::Hard: return "hard";
        case SimMethod::SoftEB: return "soft_eb";
        case SimMethod::HardOracle: return "hard_oracle";
    }
    return "unknown";
}

SimMethod parse_sim_method(std::string_view text) {
    for (SimMethod m : kSimMethods) {
        if (to_string(m) == text) return m;
    }
    throw Error(ErrorKind::ParseError, "unknown simulation method '" + std::string(text) + "'");
}

const SummaryRow& ScenarioSummary::row(SimMethod m, std::string_view effect) const {
    for (const SummaryRow& r : rows) {
        if (r.method == m && r.effect == effect) return r;
    }
    throw Error(ErrorKind::InvalidArgument, "no summary row for " + std::string(to_string(m)) + "/" +
                                                std::string(effect));
}

void validate(const ScenarioConfig& cfg) {
    require(cfg.n > 0, "n must be positive");
    require(cfg.n_e_multiplier > 0, "n_E_multiplier must be positive");
    require(cfg.p_m > 0, "p_m must be positive");
    require(cfg.p_c >= 0, "p_c must be >= 0");
    require(cfg.alpha_active_count >= 0 && cfg.alpha_active_count <= cfg.p_m,
            "alpha_active_count must lie in [0, p_m]");
    Index pattern_len = 0;
    for (const auto& [value, count] : cfg.beta_m_pattern) {
        require(count >= 0, "beta_m_pattern counts must be >= 0");
        pattern_len += count;
    }
    require(pattern_len == cfg.p_m, "beta_m_pattern must cover exactly p_m mediators");
    require(std::accumulate(cfg.sigma_m_blocks.begin(), cfg.sigma_m_blocks.end(), Index{0}) == cfg.p_m,
            "sigma_m_blocks must sum to p_m");
    for (Index b : cfg.sigma_m_blocks) require(b > 0, "sigma_m_blocks entries must be positive");
    require(cfg.r2_ac > 0.0 && cfg.r2_ac < 1.0, "r2_ac must lie in (0, 1)");
    require(cfg.r2_mac > 0.0 && cfg.r2_mac < 1.0, "r2_mac must lie in (0, 1)");
    require(cfg.replicates > 0, "replicates must be positive");
    require(cfg.bootstrap_B == 0 || cfg.bootstrap_B >= 2, "bootstrap_B must be 0 or at least 2");
    require(cfg.level > 0.0 && cfg.level < 1.0, "level must lie in (0, 1)");
    require(cfg.n * cfg.n_e_multiplier >= 10, "external sample size must be at least 10");
    require(cfg.theta_e.kind != ThetaEMode::Kind::RandomNormal || cfg.theta_e.variance >= 0.0,
            "theta_E variance must be >= 0");
    require(cfg.n >= cfg.p_m + cfg.p_c + 2, "n is too small for p_m + p_c");
    validate(cfg.soft);
    validate(cfg.hard);
}

ScenarioTruth build_truth(const ScenarioConfig& cfg) {
    validate(cfg);
    const Index p = cfg.p_m;
    const Index q = cfg.p_c + 1;
    ScenarioTruth t;
    t.theta_i = cfg.theta_i;

    t.alpha_a = Vector::Zero(p);
    t.alpha_a.head(cfg.alpha_active_count).setConstant(cfg.alpha_active);
    t.alpha_c = Matrix::Constant(p, q, cfg.alpha_c_fill);
    t.beta_m = Vector(p);
    Index k = 0;
    for (const auto& [value, count] : cfg.beta_m_pattern) {
        t.beta_m.segment(k, count).setConstant(value);
        k += count;
    }
    t.beta_c = Vector::Constant(q, cfg.beta_c_fill);

    // R2 of a mediator on A given C: alpha^2 / (Sigma_jj + alpha^2).
    const double a1 = cfg.alpha_active;
    const double diag = a1 * a1 * (1.0 - cfg.r2_ac) / cfg.r2_ac;
    Matrix corr = Matrix::Constant(p, p, cfg.across_block_corr);
    Index start = 0;
    for (Index b : cfg.sigma_m_blocks) {
        corr.block(start, start, b, b).setConstant(cfg.within_block_corr);
        start += b;
    }
    corr.diagonal().setOnes();
    t.sigma_m = diag * corr;
    cholesky_or_throw(t.sigma_m, "Sigma_m");

    const double bsb = t.beta_m.dot(t.sigma_m * t.beta_m);
    t.sigma_e2 = bsb * (1.0 - cfg.r2_mac) / cfg.r2_mac;

    t.nie = t.alpha_a.dot(t.beta_m);
    t.beta_a = cfg.theta_i - t.nie;
    t.nde = t.beta_a;
    t.te = cfg.theta_i;

    t.omega = Matrix::Constant(cfg.p_c + 1, cfg.p_c + 1, cfg.rho);
    t.omega.diagonal().setOnes();
    cholesky_or_throw(t.omega, "Omega");
    if (cfg.p_c > 0) {
        const Matrix occ = t.omega.bottomRightCorner(cfg.p_c, cfg.p_c);
        const Vector oca = t.omega.col(0).tail(cfg.p_c);
        t.sigma_a2 = 1.0 - oca.dot(occ.llt().solve(oca));
    } else {
        t.sigma_a2 = 1.0;
    }
    t.sigma_t2 = t.sigma_e2 + bsb;
    t.theta_c = t.beta_c + t.alpha_c.transpose() * t.beta_m;
    return t;
}

InternalDataset simulate_internal(const ScenarioTruth& truth, Index n, std::mt19937_64& rng) {
    const Index p = truth.alpha_a.size();
    auto [a, c] = draw_exposure_confounders(truth, n, rng);
    const Matrix l = cholesky_or_throw(truth.sigma_m, "Sigma_m");
    InternalDataset d;
    d.a = std::move(a);
    d.c = std::move(c);
    d.m = d.a * truth.alpha_a.transpose() + d.c * truth.alpha_c.transpose() + normal_matrix(n, p, rng) * l.transpose();
    const Vector e = normal_matrix(n, 1, rng).col(0) * std::sqrt(truth.sigma_e2);
    d.y = d.m * truth.beta_m + truth.beta_a * d.a + d.c * truth.beta_c + e;
    return d;
}

ExternalSummary simulate_external_summary(const ScenarioTruth& truth, double theta_e, long n_e, std::mt19937_64& rng) {
    if (n_e < 10) throw Error(ErrorKind::InvalidArgument, "external sample size must be at least 10");
    auto [a, c] = draw_exposure_confounders(truth, n_e, rng);
    const Vector e = normal_matrix(n_e, 1, rng).col(0) * std::sqrt(truth.sigma_t2);
    const Vector y = theta_e * a + c * truth.theta_c + e;

    Matrix x(n_e, 1 + c.cols());
    x.col(0) = a;
    x.rightCols(c.cols()) = c;
    const Matrix xtx = x.transpose() * x;
    Eigen::LDLT<Matrix> ldlt(xtx);
    const Vector coef = ldlt.solve(x.transpose() * y);
    const double s2 = (y - x * coef).squaredNorm() / static_cast<double>(n_e);
    const Vector e0 = Vector::Unit(x.cols(), 0);
    return {coef(0), s2 * ldlt.solve(e0)(0), n_e};
}

ExternalSummary simulate_external_summary_exact(const ScenarioTruth& truth, double theta_e, long n_e,
                                                std::mt19937_64& rng) {
    const double k = static_cast<double>(truth.omega.rows());  // columns of [1 | C]
    const double df_q = static_cast<double>(n_e) - k;
    const double df_rss = df_q - 1.0;
    if (df_rss <= 0.0) throw Error(ErrorKind::InvalidArgument, "external sample size too small");
    const double q = truth.sigma_a2 * std::chi_squared_distribution<double>(df_q)(rng);
    const double z = std::normal_distribution<double>(0.0, 1.0)(rng);
    const double rss = truth.sigma_t2 * std::chi_squared_distribution<double>(df_rss)(rng);
    return {theta_e + std::sqrt(truth.sigma_t2 / q) * z, rss / static_cast<double>(n_e) / q, n_e};
}

ScenarioSummary summarize(const ScenarioConfig& cfg, const ScenarioTruth& truth,
                          const std::vector<ReplicateResult>& reps) {
    const std::size_t n_rep = reps.size() / 4;
    std::vector<char> usable(n_rep, 1);
    long failed[4] = {0, 0, 0, 0};
    for (std::size_t r = 0; r < n_rep; ++r) {
        for (int k = 0; k < 4; ++k) {
            if (!reps[4 * r + k].converged) {
                usable[r] = 0;
                ++failed[k];
            }
        }
    }
    const long used = std::count(usable.begin(), usable.end(), 1);

    ScenarioSummary s;
    s.scenario_id = cfg.id;
    s.seed = cfg.seed;
    const double truths[3] = {truth.nde, truth.nie, truth.te};
    double rmse_u[3] = {0, 0, 0};
    for (int k = 0; k < 4; ++k) {
        for (int j = 0; j < 3; ++j) {
            SummaryRow row;
            row.scenario_id = cfg.id;
            row.method = kSimMethods[k];
            row.effect = kEffects[j];
            row.truth = truths[j];
            row.n_replicates = used;
            row.n_failed = failed[k];
            double sum = 0.0, sq = 0.0, cover = 0.0, len = 0.0;
            bool has_ci = true;
            for (std::size_t r = 0; r < n_rep; ++r) {
                if (!usable[r]) continue;
                const ReplicateResult& rec = reps[4 * r + k];
                const EffectRecord& e = j == 0 ? rec.nde : (j == 1 ? rec.nie : rec.te);
                sum += e.estimate;
                sq += (e.estimate - truths[j]) * (e.estimate - truths[j]);
                if (std::isnan(e.lower) || std::isnan(e.upper)) {
                    has_ci = false;
                } else {
                    cover += (e.lower <= truths[j] && truths[j] <= e.upper) ? 1.0 : 0.0;
                    len += e.upper - e.lower;
                }
            }
            const double denom = used > 0 ? static_cast<double>(used) : kNaN;
            row.mean_est = sum / denom;
            row.rmse = std::sqrt(sq / denom);
            row.coverage = has_ci ? cover / denom : kNaN;
            row.mean_ci_length = has_ci ? len / denom : kNaN;
            if (k == 0) rmse_u[j] = row.rmse;
            row.rel_rmse_vs_unconstrained = row.rmse / rmse_u[j];
            s.rows.push_back(row);
        }
    }
    for (int k = 0; k < 4; ++k) {
        if (static_cast<double>(failed[k]) > 0.01 * static_cast<double>(n_rep)) {
            s.warnings.push_back(std::string(to_string(kSimMethods[k])) + ": " + std::to_string(failed[k]) + " of " +
                                 std::to_string(n_rep) + " replicates failed");
        }
    }
    return s;
}

ScenarioResult run_scenario(const ScenarioConfig& cfg, int workers) {
    ScenarioResult out;
    out.truth = build_truth(cfg);
    out.replicates.resize(static_cast<std::size_t>(cfg.replicates) * 4);
    LazyMixtureTable mixture(static_cast<int>(cfg.p_m), cfg.level, cfg.seed);
    parallel_for(static_cast<std::size_t>(cfg.replicates), workers, [&](std::size_t r) {
        run_replicate(cfg, out.truth, static_cast<long>(r), mixture, &out.replicates[4 * r]);
    });
    out.summary = summarize(cfg, out.truth, out.replicates);
    return out;
}

}  // namespace medfuse
