#pragma once

// Domain model for linear mediation with an external total-effect summary.
//
//   outcome model   Y_i | M_i, A_i, C_i ~ N(M_i beta_m + A_i beta_a + C_i beta_c, sigma_e2)
//   mediator model  M_i | A_i, C_i      ~ N(A_i alpha_a + alpha_c C_i, Sigma_m)
//   TE model        Y_i | A_i, C_i      ~ N(A_i theta_a + C_i theta_c, sigma_t2)
//
// with theta_a = beta_a + alpha_a' beta_m. C carries the intercept column.
// Every variance estimate in this library uses the maximum-likelihood 1/n
// convention, not 1/(n - p).

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>

namespace medfuse {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

enum class Method { Unconstrained, HardConstraint, SoftConstraint };

std::string_view to_string(Method method);
Method parse_method(std::string_view text);

struct InternalDataset {
    Vector y;  // outcome, n
    Matrix m;  // mediators, n x p_m
    Vector a;  // exposure, n
    Matrix c;  // confounders including the intercept column, n x p_c

    Index n() const { return y.size(); }
    Index p_m() const { return m.cols(); }
    Index p_c() const { return c.cols(); }
};

struct ExternalSummary {
    double theta_hat = 0.0;      // external TE point estimate
    double var_theta_hat = 0.0;  // its variance estimate, > 0
    std::optional<long> n_e;     // informational only
};

void validate(const ExternalSummary& ext);

struct MediationFit {
    Vector alpha_a;  // p_m
    Matrix alpha_c;  // p_m x p_c
    Matrix sigma_m;  // p_m x p_m, 1/n convention
    double beta_a = 0.0;
    Vector beta_m;   // p_m
    Vector beta_c;   // p_c
    double sigma_e2 = 0.0;  // 1/n convention
    double te = 0.0;
    Method method = Method::Unconstrained;
    double loglik = 0.0;
    std::optional<double> s2_used;  // soft constraint only
    int iterations = 0;

    double nie() const { return alpha_a.dot(beta_m); }
    double nde() const { return te - nie(); }
};

struct TEModelFit {
    double theta_a = 0.0;
    Vector theta_c;
    double sigma_t2 = 0.0;     // RSS / n
    double var_theta_a = 0.0;  // sigma_t2 * [(X'X)^{-1}]_aa
};

struct ResidualizedData {
    Vector y_r;
    Matrix m_r;
    Vector a_r;
    double sigma_a2_hat = 0.0;  // a_r'a_r / n
};

// Throws Error{DimensionMismatch, TooFewRows, MissingIntercept, RankDeficient, NonFinite}.
void validate(const InternalDataset& data);

// Same checks without the rank and intercept rules.
void check_dimensions(const InternalDataset& data);

// Least-squares residuals of y, each column of m, and a on c.
ResidualizedData residualize(const InternalDataset& data);

// Estimator entry checks: dimensions, ZeroExposureVariance (before the rank
// check, since A in the span of C is also rank deficient), then validate().
// Returns the residualized data.
ResidualizedData prepare(const InternalDataset& data);

// OLS of y on (a, c).
TEModelFit fit_te_model(const InternalDataset& data);

// Index of the single constant non-zero column of c, if any.
std::optional<Index> intercept_column(const Matrix& c);

// Numerical rank using the singular-value threshold rel_tol * s_max.
Index numerical_rank(const Matrix& x, double rel_tol = 1e-10);

// ---------------------------------------------------------------------------
// Cross-products of the stacked design [A | C | M | Y]
// ---------------------------------------------------------------------------

// Every estimator is a function of W'W with W = [A | C | M | Y]. For
// residualized data the confounder block is empty and `projected` records how
// many columns of C were projected out (degrees of freedom for resampling).
struct CrossProducts {
    Index n = 0;
    Index p_m = 0;
    Index p_c = 0;
    Index projected = 0;
    Matrix gram;

    Index ia() const { return 0; }
    Index ic() const { return 1; }
    Index im() const { return 1 + p_c; }
    Index iy() const { return 1 + p_c + p_m; }

    double aa() const { return gram(0, 0); }
    double ay() const { return gram(0, iy()); }
    double yy() const { return gram(iy(), iy()); }
    Vector ca() const { return gram.block(ic(), 0, p_c, 1); }
    Vector cy() const { return gram.block(ic(), iy(), p_c, 1); }
    Matrix cc() const { return gram.block(ic(), ic(), p_c, p_c); }
    Matrix cm() const { return gram.block(ic(), im(), p_c, p_m); }
    Vector am() const { return gram.block(im(), 0, p_m, 1); }
    Vector my() const { return gram.block(im(), iy(), p_m, 1); }
    Matrix mm() const { return gram.block(im(), im(), p_m, p_m); }
};

CrossProducts cross_products(const InternalDataset& data);
CrossProducts cross_products(const ResidualizedData& data, Index projected_columns);

// TE-model fit from residualized cross-products (confounder block empty).
TEModelFit fit_te_model(const CrossProducts& stats);

}  // namespace medfuse
