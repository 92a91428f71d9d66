#pragma once

// Quadrature helpers used by the test suites as oracles that are independent
// of the library's own special-function implementations.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace testsupport {

inline constexpr double qpi = 3.141592653589793238462643383279502884;

// Gauss-Legendre nodes and weights on [-1,1] via Newton iteration on the
// Legendre polynomial recurrence.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(qpi * (i + 0.75) / (n + 0.5));
        double z1 = 0.0;
        double pp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p1 = 1.0;
            double p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
            }
            pp = n * (z * p1 - p2) / (z * z - 1.0);
            z1 = z;
            z = z1 - p1 / pp;
            if (std::fabs(z - z1) <= 1e-15) break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
}

// Single-panel Gauss-Legendre integral of f over [a,b].
inline double integrate_gl(const std::function<double(double)>& f, double a, double b,
                           int n = 64) {
    std::vector<double> x, w;
    gauss_legendre(n, x, w);
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += w[i] * f(mid + half * x[i]);
    return sum * half;
}

// Composite rule: split [a,b] into equal panels, Gauss-Legendre on each.
inline double integrate_panels(const std::function<double(double)>& f, double a, double b,
                               int panels = 16, int n = 32) {
    double sum = 0.0;
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p)
        sum += integrate_gl(f, a + p * h, a + (p + 1) * h, n);
    return sum;
}

// tanh-sinh (double exponential) quadrature over (a,b) with npoints nodes.
// Nodes cluster at the endpoints, so integrands with endpoint boundary
// layers or mild endpoint singularities converge fast.  The t-range is
// capped so nodes never round onto the endpoints themselves.
inline double integrate_tanh_sinh(const std::function<double(double)>& f, double a,
                                  double b, int npoints = 256) {
    const double tmax = 3.0;
    const int half_n = (npoints - 1) / 2;
    const double h = tmax / half_n;
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    double sum = 0.0;
    for (int k = -half_n; k <= half_n; ++k) {
        const double t = k * h;
        const double s = 0.5 * qpi * std::sinh(t);
        const double x = mid + half * std::tanh(s);
        const double c = std::cosh(s);
        const double w = 0.5 * qpi * std::cosh(t) / (c * c);
        sum += w * f(x);
    }
    return sum * half * h;
}

// Upper tail integral  P(T > x)  for x > 0 given a density, using the
// substitution t = x/s which maps [x, inf) onto (0, 1] and keeps the
// integrand smooth for polynomial-tailed densities.
inline double upper_tail(const std::function<double(double)>& pdf, double x) {
    if (!(x > 0.0)) throw std::invalid_argument("upper_tail: x must be positive");
    auto g = [&](double s) { return pdf(x / s) * x / (s * s); };
    return integrate_panels(g, 0.0, 1.0, 24, 40);
}

// Oracle CDFs built purely from quadrature over the density.  Small
// arguments integrate the density directly from zero; large arguments use
// the tail substitution, where the integrand is well conditioned.
inline double oracle_cdf_from_pdf(const std::function<double(double)>& pdf, double x) {
    if (x == 0.0) return 0.5;
    const double ax = std::fabs(x);
    double below_half;
    if (ax <= 2.0) below_half = 0.5 - integrate_panels(pdf, 0.0, ax, 8, 40);
    else below_half = upper_tail(pdf, ax);
    return x > 0.0 ? 1.0 - below_half : below_half;
}

inline double oracle_norm_pdf(double t) {
    return std::exp(-0.5 * t * t) / std::sqrt(2.0 * qpi);
}

inline double oracle_norm_cdf(double x) {
    return oracle_cdf_from_pdf(oracle_norm_pdf, x);
}

inline double oracle_t_pdf(double t, double nu) {
    const double lp = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                      0.5 * std::log(nu * qpi) -
                      0.5 * (nu + 1.0) * std::log1p(t * t / nu);
    return std::exp(lp);
}

inline double oracle_t_cdf(double x, double nu) {
    auto pdf = [nu](double t) { return oracle_t_pdf(t, nu); };
    return oracle_cdf_from_pdf(pdf, x);
}

// Inverse of a strictly increasing CDF by plain bisection.
inline double oracle_invert(const std::function<double(double)>& cdf, double p, double lo,
                            double hi) {
    for (int i = 0; i < 400; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        if (cdf(mid) < p) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

// Quantile oracles.  Upper-half probabilities are mapped to the lower half
// by symmetry, so all bisection happens on the well-conditioned lower tail.
inline double oracle_quantile_from_pdf(const std::function<double(double)>& pdf, double p,
                                       double hi) {
    if (p == 0.5) return 0.0;
    if (p > 0.5) return -oracle_quantile_from_pdf(pdf, 1.0 - p, hi);
    auto cdf = [&](double x) { return oracle_cdf_from_pdf(pdf, x); };
    return oracle_invert(cdf, p, -hi, 0.0);
}

inline double oracle_norm_quantile(double p) {
    return oracle_quantile_from_pdf(oracle_norm_pdf, p, 45.0);
}

inline double oracle_t_quantile(double p, double nu) {
    auto pdf = [nu](double t) { return oracle_t_pdf(t, nu); };
    return oracle_quantile_from_pdf(pdf, p, 1e6);
}

} // namespace testsupport
