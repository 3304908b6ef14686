#pragma once

// Unconstrained, hard-constraint and soft-constraint estimators.
//
// Each estimator has two entry points: one on an InternalDataset (validates
// and fills every field of MediationFit) and one on CrossProducts, used by the
// simulation harness and the bootstrap where the data only exist as sums.

#include "medfuse/core.hpp"

#include <vector>

namespace medfuse {

struct HardConfig {
    double ccd_tol = 1e-10;  // max |delta| / (1 + |value|) over one sweep
    int ccd_max_iter = 10000;
};

struct SoftConfig {
    enum class S2 { Fixed, EmpiricalBayes };

    S2 s2_mode = S2::EmpiricalBayes;
    double s2_fixed = 0.0;  // used when s2_mode == Fixed; 0 is replaced by eps_s2
    double eps_s2 = 1e-6;
    double em_tol = 1e-12;  // relative marginal log-likelihood change
    int em_max_iter = 5000;
    double inner_ccd_tol = 1e-8;
    int inner_ccd_max_iter = 1000;

    static SoftConfig fixed(double s2) {
        SoftConfig cfg;
        cfg.s2_mode = S2::Fixed;
        cfg.s2_fixed = s2;
        return cfg;
    }
};

void validate(const HardConfig& cfg);
void validate(const SoftConfig& cfg);

struct Effects {
    double nde = 0.0;
    double nie = 0.0;
    double te = 0.0;
};

Effects extract_effects(const MediationFit& fit);

// max{0, (theta_I - theta_E)^2 - Var(theta_I)} / Var(theta_E)
double eb_s2(const TEModelFit& te_fit, const ExternalSummary& ext);

// s2 actually used by the soft fit: the fixed value or the EB value, floored at eps_s2.
double resolve_s2(const SoftConfig& cfg, const TEModelFit& te_fit, const ExternalSummary& ext);

MediationFit fit_unconstrained(const InternalDataset& data);
MediationFit fit_hard_constraint(const InternalDataset& data, const ExternalSummary& ext,
                                 const HardConfig& cfg = {});
MediationFit fit_soft_constraint(const InternalDataset& data, const ExternalSummary& ext,
                                 const SoftConfig& cfg = {});

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

// Log-likelihood of the outcome and mediator models with beta_a = fit.te - alpha_a'beta_m.
// +inf when sigma_e2 = 0 and the outcome residual vanishes.
double joint_loglik(const CrossProducts& stats, const MediationFit& fit);

// Log-likelihood with the TE coefficient integrated out under
// theta ~ N(theta_e, prior_var). Needs residualized cross-products.
double marginal_loglik(const CrossProducts& stats, const MediationFit& fit, double theta_e, double prior_var);

// ---------------------------------------------------------------------------
// Cross-product entry points
// ---------------------------------------------------------------------------

MediationFit fit_unconstrained(const CrossProducts& stats);

// Cyclic coordinate descent from `init`. When `trace` is given, the joint
// log-likelihood after every sweep is appended (first entry: at init).
MediationFit fit_hard_constraint(const CrossProducts& stats, double theta_e, const HardConfig& cfg,
                                 const MediationFit& init, std::vector<double>* trace = nullptr);

// EM on residualized cross-products with a fixed s2. `trace` collects the
// marginal log-likelihood per EM iteration (first entry: at init).
MediationFit fit_soft_constraint(const CrossProducts& stats, const ExternalSummary& ext, double s2,
                                 const SoftConfig& cfg, const MediationFit& init,
                                 std::vector<double>* trace = nullptr);

// Soft fit on residualized cross-products with s2 resolved from cfg (EB uses
// the TE model fitted on the same cross-products).
MediationFit fit_soft_constraint(const CrossProducts& stats, const ExternalSummary& ext, const SoftConfig& cfg);

}  // namespace medfuse
