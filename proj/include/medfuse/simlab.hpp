#pragma once

// Monte Carlo harness: generative truth, internal and external samplers, and
// a replicate runner comparing the unconstrained, hard, soft-EB and
// hard-oracle estimators.

#include "medfuse/core.hpp"
#include "medfuse/estimators.hpp"
#include "medfuse/inference.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace medfuse {

struct ThetaEMode {
    enum class Kind { Congenial, Fixed, RandomNormal };
    Kind kind = Kind::Congenial;
    double value = 0.0;     // Fixed
    double mean = 0.0;      // RandomNormal
    double variance = 0.0;  // RandomNormal

    static ThetaEMode congenial() { return {}; }
    static ThetaEMode fixed(double v) { return {Kind::Fixed, v, 0.0, 0.0}; }
    static ThetaEMode random_normal(double m, double var) { return {Kind::RandomNormal, 0.0, m, var}; }
};

struct ScenarioConfig {
    std::string id = "scenario";
    Index n = 200;
    long n_e_multiplier = 100;
    Index p_m = 50;
    Index p_c = 5;  // confounders drawn jointly with A; the intercept is appended
    double rho = 0.2;
    double alpha_active = 0.6;
    Index alpha_active_count = 10;
    double alpha_c_fill = 0.1;
    std::vector<std::pair<double, Index>> beta_m_pattern = {{0.1, 5}, {0.0, 5}, {0.1, 5}, {0.0, 35}};
    double beta_c_fill = 0.1;
    double r2_ac = 0.05;
    double r2_mac = 0.2;
    double within_block_corr = 0.3;
    double across_block_corr = 0.2;
    std::vector<Index> sigma_m_blocks = std::vector<Index>(10, 5);  // consecutive block sizes, sum p_m
    double theta_i = 1.0;
    ThetaEMode theta_e;
    int replicates = 2000;
    std::uint64_t seed = 1;
    int bootstrap_B = 200;  // soft NDE/TE intervals; 0 skips them
    double level = 0.95;
    long external_exact_threshold = 100000;  // n_E above this uses the exact summary sampler
    SoftConfig soft;
    HardConfig hard;
};

void validate(const ScenarioConfig& cfg);

struct ScenarioTruth {
    Vector alpha_a;
    Matrix alpha_c;  // p_m x (1 + p_c), intercept first
    Matrix sigma_m;
    double beta_a = 0.0;
    Vector beta_m;
    Vector beta_c;   // 1 + p_c, intercept first
    double sigma_e2 = 0.0;
    double theta_i = 1.0;
    double nde = 0.0;
    double nie = 0.0;
    double te = 0.0;
    Matrix omega;       // covariance of (A, C) without the intercept
    double sigma_a2 = 0.0;  // Var(A | C)
    double sigma_t2 = 0.0;  // TE-model noise variance
    Vector theta_c;     // TE-model confounder coefficients
};

ScenarioTruth build_truth(const ScenarioConfig& cfg);

InternalDataset simulate_internal(const ScenarioTruth& truth, Index n, std::mt19937_64& rng);

// Simulates an external dataset from the TE model with slope theta_e and fits OLS.
ExternalSummary simulate_external_summary(const ScenarioTruth& truth, double theta_e, long n_e, std::mt19937_64& rng);

// Same law without materializing the data: A_r'A_r ~ sigma_a2 chi2(n_e - 1 - p_c),
// slope error | A ~ N(0, sigma_t2 / A_r'A_r), RSS ~ sigma_t2 chi2(n_e - 2 - p_c).
ExternalSummary simulate_external_summary_exact(const ScenarioTruth& truth, double theta_e, long n_e,
                                                std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

enum class SimMethod { Unconstrained, Hard, SoftEB, HardOracle };
inline constexpr SimMethod kSimMethods[] = {SimMethod::Unconstrained, SimMethod::Hard, SimMethod::SoftEB,
                                            SimMethod::HardOracle};

std::string_view to_string(SimMethod m);
SimMethod parse_sim_method(std::string_view text);

struct EffectRecord {
    double estimate = 0.0;
    double lower = 0.0;  // NaN when no interval
    double upper = 0.0;
    double avar = 0.0;   // plug-in asymptotic variance, NaN when absent
};

struct ReplicateResult {
    long replicate = 0;
    SimMethod method = SimMethod::Unconstrained;
    bool converged = false;
    std::string error;
    EffectRecord nde, nie, te;
    double bootstrap_var_nde = 0.0;  // NaN unless soft with bootstrap
    double theta_e_hat = 0.0;
    double var_theta_e = 0.0;
    double s2_used = 0.0;  // NaN unless soft
    int iterations = 0;
    double wald_p = 0.0;
    double seconds = 0.0;  // wall time, not deterministic
};

struct SummaryRow {
    std::string scenario_id;
    SimMethod method = SimMethod::Unconstrained;
    std::string effect;  // nde, nie, te
    double truth = 0.0;
    double mean_est = 0.0;
    double rmse = 0.0;
    double rel_rmse_vs_unconstrained = 0.0;
    double coverage = 0.0;        // NaN when the method has no interval for this effect
    double mean_ci_length = 0.0;  // NaN likewise
    long n_replicates = 0;
    long n_failed = 0;
};

struct ScenarioSummary {
    std::string scenario_id;
    std::uint64_t seed = 0;
    std::vector<SummaryRow> rows;
    std::vector<std::string> warnings;

    const SummaryRow& row(SimMethod m, std::string_view effect) const;
};

struct ScenarioResult {
    ScenarioTruth truth;
    std::vector<ReplicateResult> replicates;  // replicate-major, methods in kSimMethods order
    ScenarioSummary summary;
};

// Runs cfg.replicates independent replicates on `workers` threads. Replicate r
// draws from substreams keyed by (cfg.seed, r), so the output does not depend
// on the worker count. A replicate where any method fails is left out of every
// aggregate; failures are counted per method.
ScenarioResult run_scenario(const ScenarioConfig& cfg, int workers = 1);

// Aggregation step, exposed for tests.
ScenarioSummary summarize(const ScenarioConfig& cfg, const ScenarioTruth& truth,
                          const std::vector<ReplicateResult>& replicates);

}  // namespace medfuse
