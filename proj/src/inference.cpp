#include "medfuse/inference.hpp"

#include "medfuse/error.hpp"
#include "medfuse/parallel.hpp"
#include "medfuse/rng.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <limits>
#include <cmath>
#include <random>

namespace medfuse {

namespace {

struct PathwayTerms {
    double bsb = 0.0;   // beta'Sigma beta
    double asia = 0.0;  // alpha'Sigma^{-1} alpha
};

PathwayTerms pathway_terms(const MediationFit& fit) {
    Eigen::LLT<Matrix> llt(fit.sigma_m);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::SingularSigmaM, "Sigma_m is not positive definite");
    PathwayTerms t;
    t.bsb = fit.beta_m.dot(fit.sigma_m * fit.beta_m);
    t.asia = fit.alpha_a.dot(llt.solve(fit.alpha_a));
    return t;
}

double partial_r2(double bsb, double s2) {
    const double den = s2 + bsb;
    return den > 0.0 ? bsb / den : 0.0;
}

void require_sigma_a2(double sigma_a2) {
    if (!(sigma_a2 > 0.0)) throw Error(ErrorKind::InvalidArgument, "sigma_a2 must be > 0");
}

void require_level(double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorKind::InvalidArgument, "level must lie in (0, 1)");
}

// Type-7 quantile of sorted data.
double sorted_quantile(const std::vector<double>& x, double p) {
    if (x.empty()) throw Error(ErrorKind::InvalidArgument, "quantile of an empty sample");
    const double h = (static_cast<double>(x.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

double chi2_draw(std::mt19937_64& rng, double dof) {
    if (dof <= 0.0) return 0.0;
    return std::chi_squared_distribution<double>(dof)(rng);
}

// Standard Wishart(df, I_d) draw.
Matrix wishart_identity(Index d, Index df, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    if (df >= d) {
        Matrix b = Matrix::Zero(d, d);
        for (Index i = 0; i < d; ++i) {
            b(i, i) = std::sqrt(chi2_draw(rng, static_cast<double>(df - i)));
            for (Index j = 0; j < i; ++j) b(i, j) = z(rng);
        }
        return b * b.transpose();
    }
    Matrix x(std::max<Index>(df, 0), d);
    for (Index i = 0; i < x.rows(); ++i)
        for (Index j = 0; j < d; ++j) x(i, j) = z(rng);
    return x.transpose() * x;
}

}  // namespace

std::string_view to_string(IntervalKind kind) {
    switch (kind) {
        case IntervalKind::AsymptoticNormal: return "asymptotic_normal";
        case IntervalKind::ParametricBootstrap: return "parametric_bootstrap";
        case IntervalKind::MixtureNull: return "mixture_null";
    }
    return "unknown";
}

IntervalKind parse_interval_kind(std::string_view text) {
    if (text == "asymptotic_normal") return IntervalKind::AsymptoticNormal;
    if (text == "parametric_bootstrap") return IntervalKind::ParametricBootstrap;
    if (text == "mixture_null") return IntervalKind::MixtureNull;
    throw Error(ErrorKind::ParseError, "unknown interval kind '" + std::string(text) + "'");
}

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

double chi_squared_upper_tail(double x, double dof) {
    if (!(x > 0.0)) return 1.0;
    if (std::isinf(x)) return 0.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), x));
}

// ---------------------------------------------------------------------------
// Asymptotic variances
// ---------------------------------------------------------------------------

AsymptoticVariances avar_unconstrained(const MediationFit& fit, double sigma_a2) {
    require_sigma_a2(sigma_a2);
    const PathwayTerms t = pathway_terms(fit);
    const double s2 = fit.sigma_e2;
    AsymptoticVariances v;
    v.method = Method::Unconstrained;
    v.avar_nde = s2 / sigma_a2 + s2 * t.asia;
    v.avar_nie = t.bsb / sigma_a2 + s2 * t.asia;
    v.avar_te = (s2 + t.bsb) / sigma_a2;
    v.partial_r2 = partial_r2(t.bsb, s2);
    return v;
}

AsymptoticVariances avar_hard(const MediationFit& fit, double sigma_a2) {
    require_sigma_a2(sigma_a2);
    const PathwayTerms t = pathway_terms(fit);
    const double s2 = fit.sigma_e2;
    const double r2 = partial_r2(t.bsb, s2);
    AsymptoticVariances v;
    v.method = Method::HardConstraint;
    v.partial_r2 = r2;
    v.avar_nde = (s2 / sigma_a2) * r2 + s2 * t.asia;
    v.avar_nie = (t.bsb / sigma_a2) * (1.0 - r2) + s2 * t.asia;
    return v;
}

AsymptoticVariances avar_soft(const MediationFit& fit, double sigma_a2, double tau_a2) {
    require_sigma_a2(sigma_a2);
    if (!(tau_a2 > 0.0)) throw Error(ErrorKind::InvalidArgument, "tau_a2 must be > 0");
    const PathwayTerms t = pathway_terms(fit);
    const double s2 = fit.sigma_e2;
    AsymptoticVariances v;
    v.method = Method::SoftConstraint;
    v.partial_r2 = partial_r2(t.bsb, s2);
    // (1/tau2) (sigma_a2/s2 + 1/tau2)^{-1} = s2 / (tau2 sigma_a2 + s2)
    const double shrink = s2 > 0.0 ? s2 / (tau_a2 * sigma_a2 + s2) : 0.0;
    const double ratio = s2 > 0.0 ? t.bsb / s2 : 0.0;
    v.avar_nie = (t.bsb / sigma_a2) / (1.0 + shrink * ratio) + s2 * t.asia;
    return v;
}

double estimate_partial_r2(const MediationFit& fit_u) {
    const double bsb = fit_u.beta_m.dot(fit_u.sigma_m * fit_u.beta_m);
    return std::clamp(partial_r2(bsb, fit_u.sigma_e2), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Composite null and Wald test
// ---------------------------------------------------------------------------

std::vector<double> mixture_null_draws(int p_m, double sigma_e2, double sigma_a2, long n_draws, std::uint64_t seed) {
    if (p_m <= 0 || n_draws <= 0) throw Error(ErrorKind::InvalidArgument, "p_m and n_draws must be positive");
    require_sigma_a2(sigma_a2);
    const double scale = 0.5 * std::sqrt(sigma_e2 / sigma_a2);
    std::mt19937_64 rng = substream(seed, 0, Stream::MixtureNull);
    std::chi_squared_distribution<double> chi(static_cast<double>(p_m));
    std::vector<double> out(static_cast<std::size_t>(n_draws));
    for (auto& x : out) {
        const double xi1 = chi(rng);
        const double xi2 = chi(rng);
        x = scale * (xi1 - xi2);
    }
    return out;
}

std::vector<double> mixture_null_quantiles(int p_m, double sigma_e2, double sigma_a2, const std::vector<double>& probs,
                                           long n_draws, std::uint64_t seed) {
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!(probs[i] > 0.0 && probs[i] < 1.0)) throw Error(ErrorKind::InvalidArgument, "probabilities must lie in (0, 1)");
        if (i > 0 && probs[i] < probs[i - 1]) throw Error(ErrorKind::InvalidArgument, "probabilities must be sorted");
    }
    std::vector<double> draws = mixture_null_draws(p_m, sigma_e2, sigma_a2, n_draws, seed);
    std::sort(draws.begin(), draws.end());
    std::vector<double> q;
    q.reserve(probs.size());
    for (double p : probs) q.push_back(sorted_quantile(draws, p));
    return q;
}

MixtureNullTable mixture_null_table(int p_m, double level, long n_draws, std::uint64_t seed) {
    require_level(level);
    const std::vector<double> q =
        mixture_null_quantiles(p_m, 1.0, 1.0, {(1.0 - level) / 2.0, (1.0 + level) / 2.0}, n_draws, seed);
    return {p_m, level, q[0], q[1]};
}

WaldResult wald_null_test(const MediationFit& fit, double sigma_a2, Index n) {
    require_sigma_a2(sigma_a2);
    const PathwayTerms t = pathway_terms(fit);
    WaldResult w;
    w.dof = 2 * static_cast<int>(fit.alpha_a.size());
    const double outcome = fit.sigma_e2 > 0.0 ? t.bsb / fit.sigma_e2
                                              : (t.bsb > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    w.statistic = static_cast<double>(n) * (sigma_a2 * t.asia + outcome);
    w.p_value = chi_squared_upper_tail(w.statistic, w.dof);
    return w;
}

// ---------------------------------------------------------------------------
// Intervals
// ---------------------------------------------------------------------------

IntervalEstimate ci_asymptotic(double point, double avar, Index n, double level) {
    require_level(level);
    if (!(avar >= 0.0) || n <= 0) throw Error(ErrorKind::InvalidArgument, "avar must be >= 0 and n > 0");
    const double half = normal_quantile(0.5 + level / 2.0) * std::sqrt(avar / static_cast<double>(n));
    return {point - half, point + half, level, IntervalKind::AsymptoticNormal};
}

IntervalEstimate ci_mixture_null(double point, double q_lo, double q_hi, Index n, double level) {
    require_level(level);
    const double nn = static_cast<double>(n);
    return {point - q_hi / nn, point - q_lo / nn, level, IntervalKind::MixtureNull};
}

IntervalEstimate ci_quantile(std::vector<double> values, double level, IntervalKind kind) {
    require_level(level);
    std::sort(values.begin(), values.end());
    return {sorted_quantile(values, (1.0 - level) / 2.0), sorted_quantile(values, (1.0 + level) / 2.0), level, kind};
}

// ---------------------------------------------------------------------------
// Parametric bootstrap
// ---------------------------------------------------------------------------

CrossProducts resample_cross_products(const CrossProducts& stats, const MediationFit& fit, std::mt19937_64& rng) {
    if (stats.p_c != 0) throw Error(ErrorKind::InvalidArgument, "bootstrap needs residualized cross-products");
    const Index p = stats.p_m;
    const Index d = p + 1;
    const Index df = stats.n - stats.projected - 1;
    const double saa = stats.aa();

    // Rotating the residual space so the exposure is its first axis leaves one
    // Gaussian row g (paired with sqrt(saa)) and a Wishart block for the rest.
    Matrix l = Matrix::Zero(d, d);
    Eigen::LLT<Matrix> llt(fit.sigma_m);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::SingularSigmaM, "Sigma_m is not positive definite");
    l.topLeftCorner(p, p) = llt.matrixL();
    l(p, p) = std::sqrt(std::max(0.0, fit.sigma_e2));

    std::normal_distribution<double> z(0.0, 1.0);
    Vector u(d);
    for (Index i = 0; i < d; ++i) u(i) = z(rng);
    const Vector g = l * u;
    const Matrix w = l * wishart_identity(d, df, rng) * l.transpose();

    Matrix zz(d + 1, d + 1);
    zz(0, 0) = saa;
    zz.block(1, 0, d, 1) = std::sqrt(saa) * g;
    zz.block(0, 1, 1, d) = std::sqrt(saa) * g.transpose();
    zz.block(1, 1, d, d) = g * g.transpose() + w;

    // Columns [a | E | e] -> [A | M | Y].
    Matrix t = Matrix::Zero(d + 1, p + 2);
    t(0, 0) = 1.0;
    for (Index j = 0; j < p; ++j) {
        t(0, 1 + j) = fit.alpha_a(j);
        t(1 + j, 1 + j) = 1.0;
        t(1 + j, p + 1) = fit.beta_m(j);
    }
    t(0, p + 1) = fit.te;
    t(p + 1, p + 1) = 1.0;

    CrossProducts out;
    out.n = stats.n;
    out.p_m = p;
    out.p_c = 0;
    out.projected = stats.projected;
    out.gram = t.transpose() * zz * t;
    out.gram = 0.5 * (out.gram + out.gram.transpose()).eval();
    return out;
}

std::vector<Effects> bootstrap_soft(const CrossProducts& stats, const MediationFit& soft_fit, const ExternalSummary& ext,
                                    const SoftConfig& cfg, int B, std::uint64_t seed, int workers) {
    if (B <= 0) throw Error(ErrorKind::InvalidArgument, "bootstrap size must be positive");
    std::vector<Effects> out(static_cast<std::size_t>(B));
    parallel_for(out.size(), workers, [&](std::size_t b) {
        std::mt19937_64 rng = substream(seed, b, Stream::Bootstrap);
        std::normal_distribution<double> z(0.0, 1.0);
        const ExternalSummary ext_b{ext.theta_hat + std::sqrt(ext.var_theta_hat) * z(rng), ext.var_theta_hat, ext.n_e};
        const CrossProducts stats_b = resample_cross_products(stats, soft_fit, rng);
        try {
            out[b] = extract_effects(fit_soft_constraint(stats_b, ext_b, cfg));
        } catch (const NoConvergenceError& e) {
            throw NoConvergenceError("bootstrap soft-constraint fit did not converge", e.iterations(), e.last_delta(),
                                     static_cast<long>(b));
        }
    });
    return out;
}

std::vector<Effects> bootstrap_soft(const InternalDataset& data, const ExternalSummary& ext, const SoftConfig& cfg,
                                    int B, std::uint64_t seed, int workers) {
    const MediationFit soft = fit_soft_constraint(data, ext, cfg);
    const CrossProducts stats = cross_products(residualize(data), data.p_c());
    return bootstrap_soft(stats, soft, ext, cfg, B, seed, workers);
}

IntervalEstimate ci_bootstrap_soft_nde(const InternalDataset& data, const ExternalSummary& ext, const SoftConfig& cfg,
                                       int B, double level, std::uint64_t seed, int workers) {
    if (B < 100) throw Error(ErrorKind::InvalidArgument, "bootstrap size must be at least 100");
    require_level(level);
    const std::vector<Effects> draws = bootstrap_soft(data, ext, cfg, B, seed, workers);
    std::vector<double> nde;
    nde.reserve(draws.size());
    for (const Effects& e : draws) nde.push_back(e.nde);
    return ci_quantile(std::move(nde), level, IntervalKind::ParametricBootstrap);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

EffectReport make_report(const MediationFit& fit, const MediationFit& unconstrained, const CrossProducts& stats,
                         const ExternalSummary* ext, const SoftConfig& soft_cfg, const InferenceOptions& opts,
                         const MixtureNullTable* table) {
    require_level(opts.level);
    EffectReport r;
    r.method = fit.method;
    r.fit = fit;
    r.point = extract_effects(fit);
    r.n = stats.n;
    r.sigma_a2 = stats.aa() / static_cast<double>(stats.n);
    r.partial_r2 = estimate_partial_r2(unconstrained);
    r.wald = wald_null_test(unconstrained, r.sigma_a2, r.n);

    switch (fit.method) {
        case Method::Unconstrained:
            r.avar = avar_unconstrained(fit, r.sigma_a2);
            r.nde_ci = ci_asymptotic(r.point.nde, *r.avar.avar_nde, r.n, opts.level);
            r.nie_ci = ci_asymptotic(r.point.nie, r.avar.avar_nie, r.n, opts.level);
            r.te_ci = ci_asymptotic(r.point.te, *r.avar.avar_te, r.n, opts.level);
            break;
        case Method::HardConstraint:
            r.avar = avar_hard(fit, r.sigma_a2);
            r.nde_ci = ci_asymptotic(r.point.nde, *r.avar.avar_nde, r.n, opts.level);
            r.nie_ci = ci_asymptotic(r.point.nie, r.avar.avar_nie, r.n, opts.level);
            r.te_ci = IntervalEstimate{fit.te, fit.te, opts.level, IntervalKind::AsymptoticNormal};
            break;
        case Method::SoftConstraint: {
            if (!ext) throw Error(ErrorKind::InvalidArgument, "soft-constraint inference needs the external summary");
            const double s2 = fit.s2_used.value_or(soft_cfg.eps_s2);
            const double tau2 = static_cast<double>(r.n) * s2 * ext->var_theta_hat;
            r.avar = avar_soft(fit, r.sigma_a2, tau2);
            r.nie_ci = ci_asymptotic(r.point.nie, r.avar.avar_nie, r.n, opts.level);
            if (opts.bootstrap_B > 0) {
                const std::vector<Effects> draws =
                    bootstrap_soft(stats, fit, *ext, soft_cfg, opts.bootstrap_B, opts.seed, opts.workers);
                std::vector<double> nde, te;
                for (const Effects& e : draws) {
                    nde.push_back(e.nde);
                    te.push_back(e.te);
                }
                double mean = 0.0, var = 0.0;
                for (double x : nde) mean += x;
                mean /= static_cast<double>(nde.size());
                for (double x : nde) var += (x - mean) * (x - mean);
                r.bootstrap_var_nde = nde.size() > 1 ? var / static_cast<double>(nde.size() - 1) : 0.0;
                r.nde_ci = ci_quantile(std::move(nde), opts.level, IntervalKind::ParametricBootstrap);
                r.te_ci = ci_quantile(std::move(te), opts.level, IntervalKind::ParametricBootstrap);
            }
            break;
        }
    }

    if (r.wald.p_value > opts.wald_alpha) {
        const int p = static_cast<int>(fit.alpha_a.size());
        MixtureNullTable local;
        if (!table || table->p_m != p || table->level != opts.level) {
            local = mixture_null_table(p, opts.level, opts.mixture_draws, opts.seed);
            table = &local;
        }
        const double scale = std::sqrt(unconstrained.sigma_e2 / r.sigma_a2);
        r.nie_ci = ci_mixture_null(r.point.nie, scale * table->q_lo, scale * table->q_hi, r.n, opts.level);
        r.warnings.push_back("Wald pre-test did not reject the no-mediation null (p = " +
                             std::to_string(r.wald.p_value) + "); NIE interval uses mixture-null quantiles");
    }
    return r;
}

EffectReport analyze(const InternalDataset& data, const ExternalSummary* ext, Method method, const SoftConfig& soft_cfg,
                     const HardConfig& hard_cfg, const InferenceOptions& opts) {
    const ResidualizedData res = prepare(data);
    const CrossProducts stats = cross_products(res, data.p_c());
    const MediationFit u = fit_unconstrained(data);
    if (method != Method::Unconstrained && !ext) {
        throw Error(ErrorKind::InvalidArgument, "constrained fits need an external summary");
    }
    MediationFit fit = u;
    if (method == Method::HardConstraint) fit = fit_hard_constraint(data, *ext, hard_cfg);
    if (method == Method::SoftConstraint) fit = fit_soft_constraint(data, *ext, soft_cfg);
    return make_report(fit, u, stats, ext, soft_cfg, opts);
}

}  // namespace medfuse
