#include "support.hpp"

#include <gsl/gsl_multimin.h>
#include <gsl/gsl_blas.h>
#include <gsl/gsl_vector.h>

#include <cmath>
#include <numbers>

namespace testsupport {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

struct Objective {
    const std::function<double(const Vector&)>* f;
    Index dim;
};

Vector to_eigen(const gsl_vector* v) {
    Vector out(v->size);
    for (size_t i = 0; i < v->size; ++i) out(i) = gsl_vector_get(v, i);
    return out;
}

double gsl_f(const gsl_vector* x, void* params) {
    auto* obj = static_cast<Objective*>(params);
    const double val = (*obj->f)(to_eigen(x));
    return std::isfinite(val) ? val : GSL_POSINF;
}

void gsl_df(const gsl_vector* x, void* params, gsl_vector* g) {
    auto* obj = static_cast<Objective*>(params);
    Vector p = to_eigen(x);
    for (Index i = 0; i < p.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(p(i)));
        const double keep = p(i);
        p(i) = keep + h;
        const double fp = (*obj->f)(p);
        p(i) = keep - h;
        const double fm = (*obj->f)(p);
        p(i) = keep;
        gsl_vector_set(g, i, (fp - fm) / (2.0 * h));
    }
}

void gsl_fdf(const gsl_vector* x, void* params, double* f, gsl_vector* g) {
    *f = gsl_f(x, params);
    gsl_df(x, params, g);
}

}  // namespace

medfuse::InternalDataset random_dataset(std::mt19937_64& rng, Index n, Index p_m, Index p_c, double noise_e) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    medfuse::InternalDataset d;
    d.c = Matrix(n, p_c);
    d.c.col(0).setOnes();
    for (Index j = 1; j < p_c; ++j)
        for (Index i = 0; i < n; ++i) d.c(i, j) = z(rng);
    d.a = Vector(n);
    for (Index i = 0; i < n; ++i) {
        double v = 0.3 + z(rng);
        for (Index j = 1; j < p_c; ++j) v += 0.3 * d.c(i, j);
        d.a(i) = v;
    }
    Vector alpha(p_m), beta(p_m);
    Matrix alpha_c(p_m, p_c);
    for (Index j = 0; j < p_m; ++j) {
        alpha(j) = 0.8 * u(rng);
        beta(j) = 0.8 * u(rng);
        for (Index k = 0; k < p_c; ++k) alpha_c(j, k) = 0.5 * u(rng);
    }
    Matrix lm = Matrix::Identity(p_m, p_m);
    for (Index j = 0; j < p_m; ++j)
        for (Index k = 0; k < j; ++k) lm(j, k) = 0.4 * u(rng);
    d.m = Matrix(n, p_m);
    for (Index i = 0; i < n; ++i) {
        Vector e(p_m);
        for (Index j = 0; j < p_m; ++j) e(j) = z(rng);
        d.m.row(i) = (d.a(i) * alpha + alpha_c * d.c.row(i).transpose() + lm * e).transpose();
    }
    Vector beta_c(p_c);
    for (Index k = 0; k < p_c; ++k) beta_c(k) = 0.5 * u(rng);
    const double beta_a = u(rng);
    d.y = Vector(n);
    for (Index i = 0; i < n; ++i) {
        d.y(i) = d.m.row(i).dot(beta) + beta_a * d.a(i) + d.c.row(i).dot(beta_c) + noise_e * z(rng);
    }
    return d;
}

double joint_nll(const medfuse::InternalDataset& d, const Params& th) {
    const double n = static_cast<double>(d.n());
    const Index p = d.p_m();
    const Matrix r = d.m - d.a * th.alpha.transpose() - d.c * th.alpha_c.transpose();
    Eigen::LLT<Matrix> llt(th.sigma);
    if (llt.info() != Eigen::Success || !(th.s2 > 0.0)) return INFINITY;
    const Matrix l = llt.matrixL();
    double logdet = 0.0;
    for (Index j = 0; j < p; ++j) logdet += 2.0 * std::log(l(j, j));
    double quad = 0.0;
    for (Index i = 0; i < d.n(); ++i) {
        const Vector ri = r.row(i).transpose();
        quad += ri.dot(llt.solve(ri));
    }
    const Vector e = d.y - d.a * th.beta_a - d.m * th.beta - d.c * th.beta_c;
    return 0.5 * n * (p * kLog2Pi + logdet) + 0.5 * quad + 0.5 * n * (kLog2Pi + std::log(th.s2)) +
           e.squaredNorm() / (2.0 * th.s2);
}

double marginal_nll(const Vector& y, const Matrix& m, const Vector& a, const Params& th, double theta_e, double v) {
    const Index n = y.size();
    const Index p = m.cols();
    Eigen::LLT<Matrix> llt_s(th.sigma);
    if (llt_s.info() != Eigen::Success || !(th.s2 > 0.0)) return INFINITY;
    const Matrix r = m - a * th.alpha.transpose();
    double logdet_s = 0.0;
    const Matrix ls = llt_s.matrixL();
    for (Index j = 0; j < p; ++j) logdet_s += 2.0 * std::log(ls(j, j));
    double quad = 0.0;
    for (Index i = 0; i < n; ++i) {
        const Vector ri = r.row(i).transpose();
        quad += ri.dot(llt_s.solve(ri));
    }
    const double nll_m = 0.5 * n * (p * kLog2Pi + logdet_s) + 0.5 * quad;

    const Matrix cov = th.s2 * Matrix::Identity(n, n) + v * a * a.transpose();
    Eigen::LLT<Matrix> llt(cov);
    const Vector mu = m * th.beta + a * (theta_e - th.alpha.dot(th.beta));
    const Vector e = y - mu;
    const Matrix l = llt.matrixL();
    double logdet = 0.0;
    for (Index i = 0; i < n; ++i) logdet += 2.0 * std::log(l(i, i));
    const double nll_y = 0.5 * (n * kLog2Pi + logdet) + 0.5 * e.dot(llt.solve(e));
    return nll_m + nll_y;
}

double posterior_te(const Vector& y, const Matrix& m, const Vector& a, const Params& th, double theta_e, double v) {
    const Index n = y.size();
    const Matrix cov = th.s2 * Matrix::Identity(n, n) + v * a * a.transpose();
    const Vector e = y - m * th.beta - a * (theta_e - th.alpha.dot(th.beta));
    return theta_e + v * a.dot(cov.llt().solve(e));
}

Vector bfgs_minimize(const std::function<double(const Vector&)>& f, Vector x0, double grad_tol) {
    const Index dim = x0.size();
    Objective obj{&f, dim};
    gsl_multimin_function_fdf fdf;
    fdf.n = static_cast<size_t>(dim);
    fdf.f = gsl_f;
    fdf.df = gsl_df;
    fdf.fdf = gsl_fdf;
    fdf.params = &obj;

    gsl_vector* x = gsl_vector_alloc(dim);
    gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, dim);
    double best_grad = INFINITY;
    for (int restart = 0; restart < 20; ++restart) {
        for (Index i = 0; i < dim; ++i) gsl_vector_set(x, i, x0(i));
        gsl_multimin_fdfminimizer_set(s, &fdf, x, 0.01, 0.1);
        for (int it = 0; it < 5000; ++it) {
            if (gsl_multimin_fdfminimizer_iterate(s) != GSL_SUCCESS) break;
            if (gsl_multimin_test_gradient(s->gradient, grad_tol) == GSL_SUCCESS) break;
        }
        x0 = to_eigen(s->x);
        const double g = gsl_blas_dnrm2(s->gradient);
        if (g < grad_tol || g >= 0.5 * best_grad) {
            best_grad = std::min(best_grad, g);
            break;
        }
        best_grad = g;
    }
    gsl_multimin_fdfminimizer_free(s);
    gsl_vector_free(x);
    return x0;
}

Vector encode(const Params& th, bool with_beta_a) {
    const Index p = th.alpha.size();
    const Index q = th.alpha_c.cols();
    Vector x(p + p * q + p * (p + 1) / 2 + (with_beta_a ? 1 : 0) + p + q + 1);
    Index k = 0;
    for (Index j = 0; j < p; ++j) x(k++) = th.alpha(j);
    for (Index j = 0; j < p; ++j)
        for (Index c = 0; c < q; ++c) x(k++) = th.alpha_c(j, c);
    const Matrix l = th.sigma.llt().matrixL();
    for (Index j = 0; j < p; ++j)
        for (Index c = 0; c <= j; ++c) x(k++) = (c == j) ? std::log(l(j, j)) : l(j, c);
    if (with_beta_a) x(k++) = th.beta_a;
    for (Index j = 0; j < p; ++j) x(k++) = th.beta(j);
    for (Index c = 0; c < q; ++c) x(k++) = th.beta_c(c);
    x(k) = std::log(th.s2);
    return x;
}

Params decode(const Vector& x, Index p, Index q, bool with_beta_a) {
    Params th;
    Index k = 0;
    th.alpha = Vector(p);
    for (Index j = 0; j < p; ++j) th.alpha(j) = x(k++);
    th.alpha_c = Matrix(p, q);
    for (Index j = 0; j < p; ++j)
        for (Index c = 0; c < q; ++c) th.alpha_c(j, c) = x(k++);
    Matrix l = Matrix::Zero(p, p);
    for (Index j = 0; j < p; ++j)
        for (Index c = 0; c <= j; ++c) l(j, c) = (c == j) ? std::exp(x(k++)) : x(k++);
    th.sigma = l * l.transpose();
    th.beta_a = with_beta_a ? x(k++) : 0.0;
    th.beta = Vector(p);
    for (Index j = 0; j < p; ++j) th.beta(j) = x(k++);
    th.beta_c = Vector(q);
    for (Index c = 0; c < q; ++c) th.beta_c(c) = x(k++);
    th.s2 = std::exp(x(k));
    return th;
}

Params from_fit(const medfuse::MediationFit& f) {
    return Params{f.alpha_a, f.alpha_c, f.sigma_m, f.beta_a, f.beta_m, f.beta_c, f.sigma_e2};
}

Params ols_start(const medfuse::InternalDataset& d, double perturb) {
    const Index n = d.n();
    const Index p = d.p_m();
    const Index q = d.p_c();
    Matrix x(n, 1 + q);
    x << d.a, d.c;
    const Matrix coef = (x.transpose() * x).ldlt().solve(x.transpose() * d.m);
    const Matrix r = d.m - x * coef;
    Matrix z(n, 1 + q + p);
    z << d.a, d.c, d.m;
    const Vector g = (z.transpose() * z).ldlt().solve(z.transpose() * d.y);
    const Vector e = d.y - z * g;

    Params th;
    th.alpha = coef.row(0).transpose().array() + perturb;
    th.alpha_c = coef.bottomRows(q).transpose().array() - perturb;
    th.sigma = r.transpose() * r / static_cast<double>(n) + perturb * Matrix::Identity(p, p);
    th.beta_a = g(0) + perturb;
    th.beta_c = g.segment(1, q).array() + perturb;
    th.beta = g.tail(p).array() - perturb;
    th.s2 = e.squaredNorm() / static_cast<double>(n) + perturb;
    return th;
}

Params oracle_unconstrained(const medfuse::InternalDataset& d) {
    const Index p = d.p_m(), q = d.p_c();
    std::function<double(const Vector&)> f = [&](const Vector& x) {
        return joint_nll(d, decode(x, p, q, true));
    };
    return decode(bfgs_minimize(f, encode(ols_start(d, 0.05), true)), p, q, true);
}

Params oracle_hard(const medfuse::InternalDataset& d, double theta_e) {
    const Index p = d.p_m(), q = d.p_c();
    auto full = [&](const Vector& x) {
        Params th = decode(x, p, q, false);
        th.beta_a = theta_e - th.alpha.dot(th.beta);
        return th;
    };
    std::function<double(const Vector&)> f = [&](const Vector& x) { return joint_nll(d, full(x)); };
    return full(bfgs_minimize(f, encode(ols_start(d, 0.05), false)));
}

Params oracle_soft(const Vector& y, const Matrix& m, const Vector& a, double theta_e, double v) {
    const Index p = m.cols();
    medfuse::InternalDataset d;
    d.y = y;
    d.m = m;
    d.a = a;
    d.c = Matrix(y.size(), 0);
    std::function<double(const Vector&)> f = [&](const Vector& x) {
        return marginal_nll(y, m, a, decode(x, p, 0, false), theta_e, v);
    };
    Params th = decode(bfgs_minimize(f, encode(ols_start(d, 0.05), false)), p, 0, false);
    th.beta_a = posterior_te(y, m, a, th, theta_e, v) - th.alpha.dot(th.beta);
    return th;
}

}  // namespace testsupport
