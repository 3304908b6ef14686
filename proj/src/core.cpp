#include "medfuse/core.hpp"

#include "medfuse/error.hpp"

#include <cmath>
#include <string>

namespace medfuse {

namespace {

constexpr double kRankTol = 1e-10;

std::string dims(Index rows, Index cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

bool is_constant(const Eigen::Ref<const Vector>& col) {
    if (col.size() == 0) return false;
    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    return hi - lo <= 1e-12 * std::max(1.0, std::abs(hi));
}

Matrix stacked_design(const InternalDataset& data) {
    Matrix z(data.n(), 1 + data.p_c() + data.p_m());
    z.col(0) = data.a;
    z.middleCols(1, data.p_c()) = data.c;
    z.rightCols(data.p_m()) = data.m;
    return z;
}

Matrix exposure_design(const InternalDataset& data) {
    Matrix x(data.n(), 1 + data.p_c());
    x.col(0) = data.a;
    x.rightCols(data.p_c()) = data.c;
    return x;
}

void require_full_rank(const Matrix& x, const std::string& what) {
    const Index r = numerical_rank(x, kRankTol);
    if (r < x.cols()) {
        throw Error(ErrorKind::RankDeficient, what + " has rank " + std::to_string(r) + " < " +
                                                  std::to_string(x.cols()) + " columns");
    }
}

}  // namespace

std::string_view to_string(Method method) {
    switch (method) {
        case Method::Unconstrained: return "unconstrained";
        case Method::HardConstraint: return "hard";
        case Method::SoftConstraint: return "soft";
    }
    return "unknown";
}

Method parse_method(std::string_view text) {
    if (text == "unconstrained") return Method::Unconstrained;
    if (text == "hard") return Method::HardConstraint;
    if (text == "soft") return Method::SoftConstraint;
    throw Error(ErrorKind::InvalidArgument, "unknown method '" + std::string(text) + "'");
}

void validate(const ExternalSummary& ext) {
    if (!std::isfinite(ext.theta_hat) || !std::isfinite(ext.var_theta_hat)) {
        throw Error(ErrorKind::NonFinite, "external summary contains a non-finite value");
    }
    if (!(ext.var_theta_hat > 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "external variance must be > 0");
    }
    if (ext.n_e && *ext.n_e <= 0) {
        throw Error(ErrorKind::InvalidArgument, "external sample size must be positive");
    }
}

Index numerical_rank(const Matrix& x, double rel_tol) {
    if (x.cols() == 0) return 0;
    if (x.rows() == 0) return 0;
    Eigen::BDCSVD<Matrix> svd(x);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    const double cut = rel_tol * s(0);
    Index r = 0;
    for (Index i = 0; i < s.size(); ++i) {
        if (s(i) > cut) ++r;
    }
    return r;
}

std::optional<Index> intercept_column(const Matrix& c) {
    for (Index j = 0; j < c.cols(); ++j) {
        if (is_constant(c.col(j)) && c(0, j) != 0.0) return j;
    }
    return std::nullopt;
}

void check_dimensions(const InternalDataset& data) {
    const Index n = data.y.size();
    if (data.m.rows() != n || data.a.size() != n || data.c.rows() != n) {
        throw Error(ErrorKind::DimensionMismatch,
                    "row counts differ: Y " + std::to_string(n) + ", M " + dims(data.m.rows(), data.m.cols()) +
                        ", A " + std::to_string(data.a.size()) + ", C " + dims(data.c.rows(), data.c.cols()));
    }
    if (data.p_m() < 1) throw Error(ErrorKind::DimensionMismatch, "at least one mediator is required");
    if (data.p_c() < 1) throw Error(ErrorKind::MissingIntercept, "C has no columns");
    if (!data.y.allFinite() || !data.m.allFinite() || !data.a.allFinite() || !data.c.allFinite()) {
        throw Error(ErrorKind::NonFinite, "input contains NaN or infinite values");
    }
    // [A | C | M] must be at least square for the outcome model to be identified.
    const Index need = data.p_m() + data.p_c() + 1;
    if (n < need) {
        throw Error(ErrorKind::TooFewRows,
                    "n = " + std::to_string(n) + " but at least " + std::to_string(need) + " rows are needed");
    }
}

void validate(const InternalDataset& data) {
    check_dimensions(data);
    if (!intercept_column(data.c)) {
        throw Error(ErrorKind::MissingIntercept, "C must contain a constant non-zero column");
    }
    require_full_rank(stacked_design(data), "design [A | C | M]");
}

ResidualizedData residualize(const InternalDataset& data) {
    if (data.m.rows() != data.y.size() || data.a.size() != data.y.size() || data.c.rows() != data.y.size()) {
        throw Error(ErrorKind::DimensionMismatch, "row counts differ");
    }
    require_full_rank(data.c, "confounder matrix C");
    const Index n = data.n();
    const Index q = data.p_c();

    Eigen::HouseholderQR<Matrix> qr(data.c);
    const Matrix qthin = qr.householderQ() * Matrix::Identity(n, q);
    auto project_out = [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        T r = x - qthin * (qthin.transpose() * x);
        // A second pass removes the rounding left by the first.
        r -= qthin * (qthin.transpose() * r);
        return r;
    };

    ResidualizedData out;
    out.y_r = project_out(data.y);
    out.m_r = project_out(data.m);
    out.a_r = project_out(data.a);
    out.sigma_a2_hat = out.a_r.squaredNorm() / static_cast<double>(n);
    return out;
}

ResidualizedData prepare(const InternalDataset& data) {
    check_dimensions(data);
    ResidualizedData res = residualize(data);
    if (res.a_r.squaredNorm() <= 1e-20 * std::max(1.0, data.a.squaredNorm())) {
        throw Error(ErrorKind::ZeroExposureVariance, "exposure has no variation after projecting out C");
    }
    validate(data);
    return res;
}

TEModelFit fit_te_model(const InternalDataset& data) {
    check_dimensions(data);
    const Matrix x = exposure_design(data);
    require_full_rank(x, "design [A | C]");
    const Index n = data.n();

    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    const Vector coef = qr.solve(data.y);
    const Vector resid = data.y - x * coef;

    // Frisch-Waugh: [(X'X)^{-1}]_aa = 1 / (A_r'A_r).
    const ResidualizedData res = residualize(data);

    TEModelFit out;
    out.theta_a = coef(0);
    out.theta_c = coef.tail(data.p_c());
    out.sigma_t2 = resid.squaredNorm() / static_cast<double>(n);
    out.var_theta_a = out.sigma_t2 / res.a_r.squaredNorm();
    return out;
}

TEModelFit fit_te_model(const CrossProducts& stats) {
    if (stats.p_c != 0) throw Error(ErrorKind::InvalidArgument, "expected residualized cross-products");
    const double aa = stats.aa();
    if (!(aa > 0.0)) throw Error(ErrorKind::ZeroExposureVariance, "A'A = 0");
    TEModelFit out;
    out.theta_a = stats.ay() / aa;
    out.theta_c = Vector(0);
    out.sigma_t2 = std::max(0.0, stats.yy() - stats.ay() * stats.ay() / aa) / static_cast<double>(stats.n);
    out.var_theta_a = out.sigma_t2 / aa;
    return out;
}

CrossProducts cross_products(const InternalDataset& data) {
    Matrix w(data.n(), data.p_c() + data.p_m() + 2);
    w.col(0) = data.a;
    w.middleCols(1, data.p_c()) = data.c;
    w.middleCols(1 + data.p_c(), data.p_m()) = data.m;
    w.col(w.cols() - 1) = data.y;

    CrossProducts out;
    out.n = data.n();
    out.p_m = data.p_m();
    out.p_c = data.p_c();
    out.gram = Matrix(w.cols(), w.cols());
    out.gram.setZero();
    out.gram.selfadjointView<Eigen::Lower>().rankUpdate(w.transpose());
    out.gram = out.gram.selfadjointView<Eigen::Lower>();
    return out;
}

CrossProducts cross_products(const ResidualizedData& data, Index projected_columns) {
    const Index n = data.y_r.size();
    const Index p = data.m_r.cols();
    Matrix w(n, p + 2);
    w.col(0) = data.a_r;
    w.middleCols(1, p) = data.m_r;
    w.col(p + 1) = data.y_r;

    CrossProducts out;
    out.n = n;
    out.p_m = p;
    out.p_c = 0;
    out.projected = projected_columns;
    out.gram = Matrix(w.cols(), w.cols());
    out.gram.setZero();
    out.gram.selfadjointView<Eigen::Lower>().rankUpdate(w.transpose());
    out.gram = out.gram.selfadjointView<Eigen::Lower>();
    return out;
}

}  // namespace medfuse
