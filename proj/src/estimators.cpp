#include "medfuse/estimators.hpp"

#include "medfuse/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace medfuse {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Copies of the Gram blocks; the sweeps touch every block many times.
struct Blocks {
    Index n = 0, p = 0, q = 0;
    double aa = 0.0, ay = 0.0, yy = 0.0;
    Vector ca, cy, am, my;
    Matrix cc, cm, mm;
    Eigen::LLT<Matrix> cc_llt;

    explicit Blocks(const CrossProducts& s)
        : n(s.n), p(s.p_m), q(s.p_c), aa(s.aa()), ay(s.ay()), yy(s.yy()),
          ca(s.ca()), cy(s.cy()), am(s.am()), my(s.my()), cc(s.cc()), cm(s.cm()), mm(s.mm()) {
        if (q > 0) {
            cc_llt.compute(cc);
            if (cc_llt.info() != Eigen::Success) throw Error(ErrorKind::RankDeficient, "C'C is singular");
        }
        if (!(aa > 0.0)) throw Error(ErrorKind::ZeroExposureVariance, "A'A = 0");
    }
};

struct State {
    Vector alpha;
    Matrix alpha_c;  // p x q
    Matrix sigma;
    Vector beta;
    Vector beta_c;
    double s2 = 0.0;
};

State from_fit(const MediationFit& f, const Blocks& b) {
    State st{f.alpha_a, f.alpha_c, f.sigma_m, f.beta_m, f.beta_c, f.sigma_e2};
    if (st.alpha.size() != b.p || st.beta.size() != b.p || st.sigma.rows() != b.p) {
        throw Error(ErrorKind::DimensionMismatch, "initial fit does not match the mediator count");
    }
    if (st.alpha_c.cols() != b.q) st.alpha_c = Matrix::Zero(b.p, b.q);
    if (st.beta_c.size() != b.q) st.beta_c = Vector::Zero(b.q);
    return st;
}

Vector pack(const State& st) {
    Vector v(st.alpha.size() + st.alpha_c.size() + st.sigma.size() + st.beta.size() + st.beta_c.size() + 1);
    Index k = 0;
    auto put = [&](const auto& x) {
        for (Index i = 0; i < x.size(); ++i) v(k++) = x.data()[i];
    };
    put(st.alpha);
    put(st.alpha_c);
    put(st.sigma);
    put(st.beta);
    put(st.beta_c);
    v(k) = st.s2;
    return v;
}

double max_rel_change(const Vector& before, const Vector& after) {
    return ((after - before).array().abs() / (1.0 + after.array().abs())).maxCoeff();
}

// R'R for R = M - A alpha' - C alpha_c'.
Matrix mediator_rr(const Blocks& b, const Vector& alpha, const Matrix& alpha_c) {
    Matrix rr = b.mm - b.am * alpha.transpose() - alpha * b.am.transpose() + b.aa * alpha * alpha.transpose();
    if (b.q > 0) {
        const Matrix kc = alpha_c * b.cm;                  // p x p
        const Vector kca = alpha_c * b.ca;                 // p
        rr -= kc + kc.transpose();
        rr += alpha * kca.transpose() + kca * alpha.transpose();
        rr += alpha_c * b.cc * alpha_c.transpose();
    }
    return 0.5 * (rr + rr.transpose());
}

// r'r for r = Y - c A - C beta_c - M beta with c = theta - alpha'beta.
double outcome_rr(const Blocks& b, double theta, const State& st) {
    const double c = theta - st.alpha.dot(st.beta);
    double rr = b.yy + c * c * b.aa + st.beta.dot(b.mm * st.beta) - 2.0 * c * b.ay - 2.0 * st.beta.dot(b.my) +
                2.0 * c * b.am.dot(st.beta);
    if (b.q > 0) {
        rr += st.beta_c.dot(b.cc * st.beta_c) - 2.0 * st.beta_c.dot(b.cy) + 2.0 * c * b.ca.dot(st.beta_c) +
              2.0 * st.beta_c.dot(b.cm * st.beta);
    }
    return std::max(0.0, rr);
}

double mediator_loglik(const Blocks& b, const State& st) {
    Eigen::LLT<Matrix> llt(st.sigma);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Matrix rr = mediator_rr(b, st.alpha, st.alpha_c);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double tr = llt.solve(rr).trace();
    const double n = static_cast<double>(b.n);
    return -0.5 * n * static_cast<double>(b.p) * kLog2Pi - 0.5 * n * logdet - 0.5 * tr;
}

double outcome_loglik(const Blocks& b, double theta, const State& st) {
    const double rr = outcome_rr(b, theta, st);
    const double n = static_cast<double>(b.n);
    if (st.s2 <= 0.0) {
        return rr <= 1e-12 * std::max(1.0, b.yy) ? std::numeric_limits<double>::infinity()
                                                 : -std::numeric_limits<double>::infinity();
    }
    return -0.5 * n * (kLog2Pi + std::log(st.s2)) - rr / (2.0 * st.s2);
}

Vector solve_spd(const Matrix& g, const Vector& rhs) {
    Eigen::LLT<Matrix> llt(g);
    if (llt.info() == Eigen::Success) return llt.solve(rhs);
    return g.ldlt().solve(rhs);
}

// One pass over the six coordinate updates in the order alpha_c, alpha_a,
// Sigma_m, beta_c, beta_m, sigma_e2. `extra_rss` is added to the outcome RSS
// before dividing by n (the posterior-variance term of the EM M-step).
void sweep(const Blocks& b, State& st, double theta, double extra_rss) {
    const double n = static_cast<double>(b.n);

    if (b.q > 0) {
        const Matrix rhs = b.cm - b.ca * st.alpha.transpose();  // q x p
        st.alpha_c = b.cc_llt.solve(rhs).transpose();
    }

    {
        const Vector g = b.q > 0 ? Vector(b.am - st.alpha_c * b.ca) : b.am;
        const Vector u = st.sigma * st.beta;
        double a_r = b.ay - theta * b.aa - b.am.dot(st.beta);
        if (b.q > 0) a_r -= b.ca.dot(st.beta_c);
        const double den = st.s2 + st.beta.dot(u);
        Vector alpha = g;
        if (den > 0.0) alpha -= u * ((st.beta.dot(g) + a_r) / den);
        st.alpha = alpha / b.aa;
    }

    st.sigma = mediator_rr(b, st.alpha, st.alpha_c) / n;

    if (b.q > 0) {
        const double c = theta - st.alpha.dot(st.beta);
        const Vector rhs = b.cy - b.cm * st.beta - b.ca * c;
        st.beta_c = b.cc_llt.solve(rhs);
    }

    {
        Matrix g = b.mm - b.am * st.alpha.transpose() - st.alpha * b.am.transpose() +
                   b.aa * st.alpha * st.alpha.transpose();
        g = 0.5 * (g + g.transpose());
        double ay_adj = b.ay - theta * b.aa;
        Vector rhs = b.my - theta * b.am;
        if (b.q > 0) {
            rhs -= b.cm.transpose() * st.beta_c;
            ay_adj -= b.ca.dot(st.beta_c);
        }
        rhs -= st.alpha * ay_adj;
        st.beta = solve_spd(g, rhs);
    }

    st.s2 = (outcome_rr(b, theta, st) + extra_rss) / n;
}

MediationFit to_fit(const State& st, double te, Method method) {
    MediationFit f;
    f.alpha_a = st.alpha;
    f.alpha_c = st.alpha_c;
    f.sigma_m = st.sigma;
    f.beta_m = st.beta;
    f.beta_c = st.beta_c;
    f.sigma_e2 = st.s2;
    f.te = te;
    f.beta_a = te - st.alpha.dot(st.beta);
    f.method = method;
    return f;
}

double marginal_loglik(const Blocks& b, const State& st, double theta_e, double v) {
    // r = Y - M beta + A (alpha'beta - theta_e); integrate theta ~ N(theta_e, v).
    const double n = static_cast<double>(b.n);
    const double c = theta_e - st.alpha.dot(st.beta);
    const double rr = outcome_rr(b, theta_e, st);
    const double ar = b.ay - c * b.aa - b.am.dot(st.beta);
    double ly;
    if (st.s2 <= 0.0) {
        ly = std::numeric_limits<double>::infinity();
    } else {
        const double den = st.s2 + v * b.aa;
        ly = -0.5 * n * (kLog2Pi + std::log(st.s2)) - 0.5 * std::log1p(v * b.aa / st.s2) -
             (rr - v * ar * ar / den) / (2.0 * st.s2);
    }
    return mediator_loglik(b, st) + ly;
}

struct Posterior {
    double mean = 0.0;
    double var = 0.0;
};

Posterior te_posterior(const Blocks& b, const State& st, double theta_e, double v) {
    const double ab = st.alpha.dot(st.beta);
    const double ays = b.ay - b.am.dot(st.beta) + b.aa * ab;
    const double den = v * b.aa + st.s2;
    return {(v * ays + st.s2 * theta_e) / den, st.s2 * v / den};
}

bool converged_rel(double now, double before, double tol) {
    return std::abs(now - before) <= tol * std::max(1.0, std::abs(before));
}

// Recovers alpha_c and beta_c for a fit made on residualized data.
void restore_confounder_coefficients(const InternalDataset& data, MediationFit& fit) {
    const Blocks raw(cross_products(data));
    const Matrix rhs = raw.cm - raw.ca * fit.alpha_a.transpose();
    fit.alpha_c = raw.cc_llt.solve(rhs).transpose();
    const double c = fit.te - fit.alpha_a.dot(fit.beta_m);
    fit.beta_c = raw.cc_llt.solve(Vector(raw.cy - raw.cm * fit.beta_m - raw.ca * c));
}

}  // namespace

void validate(const HardConfig& cfg) {
    if (!(cfg.ccd_tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "ccd_tol must be > 0");
    if (cfg.ccd_max_iter <= 0) throw Error(ErrorKind::InvalidArgument, "ccd_max_iter must be > 0");
}

void validate(const SoftConfig& cfg) {
    if (!(cfg.eps_s2 > 0.0) || !(cfg.em_tol > 0.0) || !(cfg.inner_ccd_tol > 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "soft-constraint tolerances must be > 0");
    }
    if (cfg.em_max_iter <= 0 || cfg.inner_ccd_max_iter <= 0) {
        throw Error(ErrorKind::InvalidArgument, "soft-constraint iteration caps must be > 0");
    }
    if (cfg.s2_mode == SoftConfig::S2::Fixed && !(cfg.s2_fixed >= 0.0 && std::isfinite(cfg.s2_fixed))) {
        throw Error(ErrorKind::InvalidArgument, "fixed s2 must be finite and >= 0");
    }
}

Effects extract_effects(const MediationFit& fit) {
    Effects e;
    e.nie = fit.alpha_a.dot(fit.beta_m);
    e.te = fit.te;
    e.nde = e.te - e.nie;
    return e;
}

double eb_s2(const TEModelFit& te_fit, const ExternalSummary& ext) {
    const double d = te_fit.theta_a - ext.theta_hat;
    return std::max(0.0, d * d - te_fit.var_theta_a) / ext.var_theta_hat;
}

double resolve_s2(const SoftConfig& cfg, const TEModelFit& te_fit, const ExternalSummary& ext) {
    if (cfg.s2_mode == SoftConfig::S2::Fixed) return cfg.s2_fixed == 0.0 ? cfg.eps_s2 : cfg.s2_fixed;
    return std::max(eb_s2(te_fit, ext), cfg.eps_s2);
}

double joint_loglik(const CrossProducts& stats, const MediationFit& fit) {
    const Blocks b(stats);
    const State st = from_fit(fit, b);
    return mediator_loglik(b, st) + outcome_loglik(b, fit.te, st);
}

double marginal_loglik(const CrossProducts& stats, const MediationFit& fit, double theta_e, double prior_var) {
    if (stats.p_c != 0) throw Error(ErrorKind::InvalidArgument, "marginal likelihood needs residualized data");
    const Blocks b(stats);
    return marginal_loglik(b, from_fit(fit, b), theta_e, prior_var);
}

// ---------------------------------------------------------------------------
// Unconstrained
// ---------------------------------------------------------------------------

MediationFit fit_unconstrained(const CrossProducts& stats) {
    const Index p = stats.p_m;
    const Index q = stats.p_c;
    const Index k = 1 + q + p;
    const double n = static_cast<double>(stats.n);

    const Matrix zz = stats.gram.topLeftCorner(k, k);
    const Vector zy = stats.gram.block(0, stats.iy(), k, 1);
    const Vector gamma = solve_spd(zz, zy);

    const Matrix xx = stats.gram.topLeftCorner(1 + q, 1 + q);
    const Matrix xm = stats.gram.block(0, stats.im(), 1 + q, p);
    Eigen::LLT<Matrix> llt(xx);
    const Matrix coef = llt.info() == Eigen::Success ? Matrix(llt.solve(xm)) : Matrix(xx.ldlt().solve(xm));

    MediationFit f;
    f.method = Method::Unconstrained;
    f.alpha_a = coef.row(0).transpose();
    f.alpha_c = coef.bottomRows(q).transpose();
    Matrix sigma = (stats.mm() - xm.transpose() * coef) / n;
    f.sigma_m = 0.5 * (sigma + sigma.transpose());
    f.beta_a = gamma(0);
    f.beta_c = gamma.segment(1, q);
    f.beta_m = gamma.tail(p);
    f.sigma_e2 = std::max(0.0, stats.yy() - zy.dot(gamma)) / n;
    f.te = f.beta_a + f.alpha_a.dot(f.beta_m);
    f.loglik = joint_loglik(stats, f);
    return f;
}

MediationFit fit_unconstrained(const InternalDataset& data) {
    prepare(data);
    const Index n = data.n();
    const Index p = data.p_m();
    const Index q = data.p_c();

    Matrix z(n, 1 + q + p);
    z.col(0) = data.a;
    z.middleCols(1, q) = data.c;
    z.rightCols(p) = data.m;
    Eigen::ColPivHouseholderQR<Matrix> qr_z(z);
    const Vector gamma = qr_z.solve(data.y);
    const Vector e = data.y - z * gamma;

    const Matrix x = z.leftCols(1 + q);
    Eigen::ColPivHouseholderQR<Matrix> qr_x(x);
    const Matrix coef = qr_x.solve(data.m);
    const Matrix r = data.m - x * coef;

    MediationFit f;
    f.method = Method::Unconstrained;
    f.alpha_a = coef.row(0).transpose();
    f.alpha_c = coef.bottomRows(q).transpose();
    f.sigma_m = r.transpose() * r / static_cast<double>(n);
    f.beta_a = gamma(0);
    f.beta_c = gamma.segment(1, q);
    f.beta_m = gamma.tail(p);
    f.sigma_e2 = e.squaredNorm() / static_cast<double>(n);
    f.te = f.beta_a + f.alpha_a.dot(f.beta_m);
    f.loglik = joint_loglik(cross_products(data), f);
    return f;
}

// ---------------------------------------------------------------------------
// Hard constraint
// ---------------------------------------------------------------------------

MediationFit fit_hard_constraint(const CrossProducts& stats, double theta_e, const HardConfig& cfg,
                                 const MediationFit& init, std::vector<double>* trace) {
    const Blocks b(stats);
    State st = from_fit(init, b);
    auto loglik = [&] { return mediator_loglik(b, st) + outcome_loglik(b, theta_e, st); };
    if (trace) trace->push_back(loglik());

    double delta = std::numeric_limits<double>::infinity();
    int it = 0;
    while (it < cfg.ccd_max_iter) {
        ++it;
        const Vector before = pack(st);
        sweep(b, st, theta_e, 0.0);
        if (trace) trace->push_back(loglik());
        delta = max_rel_change(before, pack(st));
        if (!std::isfinite(delta)) break;
        if (delta < cfg.ccd_tol) break;
    }
    if (!(delta < cfg.ccd_tol)) {
        throw NoConvergenceError("hard-constraint coordinate descent did not converge", it, delta);
    }

    MediationFit f = to_fit(st, theta_e, Method::HardConstraint);
    f.iterations = it;
    f.loglik = loglik();
    return f;
}

MediationFit fit_hard_constraint(const InternalDataset& data, const ExternalSummary& ext, const HardConfig& cfg) {
    validate(ext);
    validate(cfg);
    const MediationFit init = fit_unconstrained(data);
    return fit_hard_constraint(cross_products(data), ext.theta_hat, cfg, init);
}

// ---------------------------------------------------------------------------
// Soft constraint
// ---------------------------------------------------------------------------

MediationFit fit_soft_constraint(const CrossProducts& stats, const ExternalSummary& ext, double s2,
                                 const SoftConfig& cfg, const MediationFit& init, std::vector<double>* trace) {
    if (stats.p_c != 0) throw Error(ErrorKind::InvalidArgument, "soft-constraint EM needs residualized data");
    if (!(s2 >= 0.0)) throw Error(ErrorKind::InvalidArgument, "s2 must be >= 0");
    const Blocks b(stats);
    State st = from_fit(init, b);
    const double v = s2 * ext.var_theta_hat;

    // Exact internal fit: the likelihood pins the TE coefficient, the prior has no pull.
    if (init.sigma_e2 <= 1e-12 * b.yy / static_cast<double>(b.n)) {
        MediationFit f = to_fit(st, init.te, Method::SoftConstraint);
        f.s2_used = s2;
        f.loglik = std::numeric_limits<double>::infinity();
        if (trace) trace->push_back(f.loglik);
        return f;
    }

    double ll_old = marginal_loglik(b, st, ext.theta_hat, v);
    if (trace) trace->push_back(ll_old);

    bool converged = false;
    double delta = std::numeric_limits<double>::infinity();
    int it = 0;
    while (it < cfg.em_max_iter) {
        ++it;
        const Posterior post = te_posterior(b, st, ext.theta_hat, v);
        const double extra = b.aa * post.var;
        for (int k = 0; k < cfg.inner_ccd_max_iter; ++k) {
            const Vector before = pack(st);
            sweep(b, st, post.mean, extra);
            if (max_rel_change(before, pack(st)) < cfg.inner_ccd_tol) break;
        }
        const double ll = marginal_loglik(b, st, ext.theta_hat, v);
        if (trace) trace->push_back(ll);
        delta = std::abs(ll - ll_old) / std::max(1.0, std::abs(ll_old));
        if (!std::isfinite(ll)) break;
        if (converged_rel(ll, ll_old, cfg.em_tol)) {
            converged = true;
            break;
        }
        ll_old = ll;
    }
    if (!converged) throw NoConvergenceError("soft-constraint EM did not converge", it, delta);

    const Posterior post = te_posterior(b, st, ext.theta_hat, v);
    MediationFit f = to_fit(st, post.mean, Method::SoftConstraint);
    f.s2_used = s2;
    f.iterations = it;
    f.loglik = marginal_loglik(b, st, ext.theta_hat, v);
    return f;
}

MediationFit fit_soft_constraint(const CrossProducts& stats, const ExternalSummary& ext, const SoftConfig& cfg) {
    const TEModelFit te_fit = fit_te_model(stats);
    const double s2 = resolve_s2(cfg, te_fit, ext);
    return fit_soft_constraint(stats, ext, s2, cfg, fit_unconstrained(stats));
}

MediationFit fit_soft_constraint(const InternalDataset& data, const ExternalSummary& ext, const SoftConfig& cfg) {
    validate(ext);
    validate(cfg);
    const ResidualizedData res = prepare(data);
    const CrossProducts stats = cross_products(res, data.p_c());
    const double s2 = resolve_s2(cfg, fit_te_model(data), ext);
    MediationFit f = fit_soft_constraint(stats, ext, s2, cfg, fit_unconstrained(stats));
    restore_confounder_coefficients(data, f);
    return f;
}

}  // namespace medfuse
