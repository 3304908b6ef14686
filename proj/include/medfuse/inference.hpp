#pragma once

// Asymptotic variances, the composite-null reference law for the NIE, the
// Wald pre-test, and confidence intervals (normal, mixture-null, bootstrap).
// Variances are for sqrt(n)-scaled estimators; plug-in values throughout.

#include "medfuse/core.hpp"
#include "medfuse/estimators.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace medfuse {

enum class IntervalKind { AsymptoticNormal, ParametricBootstrap, MixtureNull };

std::string_view to_string(IntervalKind kind);
IntervalKind parse_interval_kind(std::string_view text);

struct AsymptoticVariances {
    std::optional<double> avar_nde;  // absent for the soft constraint (bootstrap instead)
    double avar_nie = 0.0;
    std::optional<double> avar_te;   // absent for the hard constraint (TE fixed)
    double partial_r2 = 0.0;
    Method method = Method::Unconstrained;
};

struct IntervalEstimate {
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.95;
    IntervalKind kind = IntervalKind::AsymptoticNormal;

    double length() const { return upper - lower; }
    bool covers(double x) const { return lower <= x && x <= upper; }
};

struct WaldResult {
    double statistic = 0.0;
    int dof = 0;
    double p_value = 1.0;
};

AsymptoticVariances avar_unconstrained(const MediationFit& fit, double sigma_a2);
AsymptoticVariances avar_hard(const MediationFit& fit, double sigma_a2);
// tau_a2 = n * s2 * Var(theta_E)
AsymptoticVariances avar_soft(const MediationFit& fit, double sigma_a2, double tau_a2);

// beta'Sigma beta / (sigma_e2 + beta'Sigma beta)
double estimate_partial_r2(const MediationFit& fit_u);

// Draws of (1/2) sqrt(sigma_e2 / sigma_a2) (xi_1 - xi_2), xi_i ~ chi2(p_m):
// the reference law of n * NIE-hat when alpha_a = beta_m = 0.
std::vector<double> mixture_null_draws(int p_m, double sigma_e2, double sigma_a2, long n_draws, std::uint64_t seed);
std::vector<double> mixture_null_quantiles(int p_m, double sigma_e2, double sigma_a2,
                                           const std::vector<double>& probs, long n_draws = 1'000'000,
                                           std::uint64_t seed = 0);

WaldResult wald_null_test(const MediationFit& fit, double sigma_a2, Index n);

IntervalEstimate ci_asymptotic(double point, double avar, Index n, double level);

// Interval for the NIE from mixture-null quantiles q_lo, q_hi of n * NIE-hat.
IntervalEstimate ci_mixture_null(double point, double q_lo, double q_hi, Index n, double level);

// Empirical (1 - level)/2 and (1 + level)/2 quantiles (linear interpolation).
IntervalEstimate ci_quantile(std::vector<double> values, double level, IntervalKind kind);

double normal_quantile(double p);
double chi_squared_upper_tail(double x, double dof);

// ---------------------------------------------------------------------------
// Parametric bootstrap for the soft constraint
// ---------------------------------------------------------------------------

// Replicate b resamples the residualized cross-products from the fitted soft
// model (exposure held fixed), draws theta_E(b) ~ N(theta_E, Var(theta_E)),
// re-resolves s2 per cfg and refits. Results are indexed by replicate.
std::vector<Effects> bootstrap_soft(const CrossProducts& residualized, const MediationFit& soft_fit,
                                    const ExternalSummary& ext, const SoftConfig& cfg, int B, std::uint64_t seed,
                                    int workers = 1);

std::vector<Effects> bootstrap_soft(const InternalDataset& data, const ExternalSummary& ext, const SoftConfig& cfg,
                                    int B, std::uint64_t seed, int workers = 1);

IntervalEstimate ci_bootstrap_soft_nde(const InternalDataset& data, const ExternalSummary& ext,
                                       const SoftConfig& cfg, int B, double level, std::uint64_t seed,
                                       int workers = 1);

// Single draw of residualized cross-products from a fitted model with
// NDE coefficient fit.te - alpha'beta. Exposed for tests.
CrossProducts resample_cross_products(const CrossProducts& residualized, const MediationFit& fit,
                                      std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Assembled inference for one fit
// ---------------------------------------------------------------------------

struct InferenceOptions {
    double level = 0.95;
    double wald_alpha = 0.05;
    int bootstrap_B = 500;  // 0 disables the bootstrap (soft NDE/TE intervals absent)
    std::uint64_t seed = 0;
    int workers = 1;
    long mixture_draws = 1'000'000;
};

// Mixture-null quantiles at unit scale (sigma_e2 = sigma_a2 = 1); they scale
// with sqrt(sigma_e2 / sigma_a2), so one table serves every replicate.
struct MixtureNullTable {
    int p_m = 0;
    double level = 0.95;
    double q_lo = 0.0;
    double q_hi = 0.0;
};

MixtureNullTable mixture_null_table(int p_m, double level, long n_draws, std::uint64_t seed);

struct EffectReport {
    Method method = Method::Unconstrained;
    MediationFit fit;
    Effects point;
    std::optional<IntervalEstimate> nde_ci;
    std::optional<IntervalEstimate> nie_ci;
    std::optional<IntervalEstimate> te_ci;
    std::optional<double> bootstrap_var_nde;  // sample variance of the bootstrap NDEs
    AsymptoticVariances avar;
    WaldResult wald;
    double partial_r2 = 0.0;  // from the unconstrained fit
    double sigma_a2 = 0.0;
    Index n = 0;
    std::vector<std::string> warnings;
};

// Intervals for `fit`. The Wald pre-test uses the unconstrained fit; when it
// does not reject at wald_alpha, the NIE interval switches to mixture-null
// quantiles and a warning is attached.
EffectReport make_report(const MediationFit& fit, const MediationFit& unconstrained,
                         const CrossProducts& residualized, const ExternalSummary* ext, const SoftConfig& soft_cfg,
                         const InferenceOptions& opts, const MixtureNullTable* table = nullptr);

// Fits `method` on the dataset and assembles its report.
EffectReport analyze(const InternalDataset& data, const ExternalSummary* ext, Method method,
                     const SoftConfig& soft_cfg, const HardConfig& hard_cfg, const InferenceOptions& opts);

}  // namespace medfuse
