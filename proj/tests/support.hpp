#pragma once

// Test-only helpers: random instances and independent reference
// implementations (objectives evaluated from raw residual vectors, a generic
// BFGS minimizer) that share no code with the library estimators.

#include "medfuse/core.hpp"

#include <functional>
#include <random>

namespace testsupport {

using medfuse::Index;
using medfuse::Matrix;
using medfuse::Vector;

// C = [1 | extra confounders]; mediators and outcome follow the linear models
// with random coefficients of moderate size.
medfuse::InternalDataset random_dataset(std::mt19937_64& rng, Index n, Index p_m, Index p_c,
                                        double noise_e = 1.0);

struct Params {
    Vector alpha;
    Matrix alpha_c;  // p x q
    Matrix sigma;
    double beta_a = 0.0;
    Vector beta;
    Vector beta_c;
    double s2 = 0.0;
};

// Negative log-likelihood of the outcome and mediator models, from raw vectors.
double joint_nll(const medfuse::InternalDataset& d, const Params& th);

// Negative log-likelihood with the TE coefficient integrated out, using the
// explicit n x n outcome covariance s2 I + v A A'. Data must have no confounders.
double marginal_nll(const Vector& y, const Matrix& m, const Vector& a, const Params& th, double theta_e, double v);

// Posterior mean of the TE coefficient, from the explicit covariance.
double posterior_te(const Vector& y, const Matrix& m, const Vector& a, const Params& th, double theta_e, double v);

// BFGS (GSL vector_bfgs2) on central-difference gradients, restarted until
// the gradient norm stops improving.
Vector bfgs_minimize(const std::function<double(const Vector&)>& f, Vector x0, double grad_tol = 1e-9);

// Parameter vector <-> Params. Sigma is coded by its Cholesky factor with a
// log diagonal; s2 by its log. `with_beta_a` = false drops beta_a (constrained fits).
Vector encode(const Params& th, bool with_beta_a);
Params decode(const Vector& x, Index p, Index q, bool with_beta_a);

Params from_fit(const medfuse::MediationFit& f);

// Least-squares start from normal equations, shifted by `perturb` in every
// coefficient so the optimizer has work to do.
Params ols_start(const medfuse::InternalDataset& d, double perturb);

// Generic-optimizer references for the three estimators. The soft reference
// works on residualized data (confounder block empty).
Params oracle_unconstrained(const medfuse::InternalDataset& d);
Params oracle_hard(const medfuse::InternalDataset& d, double theta_e);
Params oracle_soft(const Vector& y, const Matrix& m, const Vector& a, double theta_e, double v);

}  // namespace testsupport
