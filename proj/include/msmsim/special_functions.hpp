#pragma once

// Self-contained special functions: standard normal CDF/quantile, Student t
// CDF/quantile, and the regularized incomplete beta function.  Published
// minimax rational approximations (plus Newton refinement where no direct
// approximation exists) give absolute errors far below 1e-9 everywhere.

#include <cmath>
#include <limits>
#include <stdexcept>

namespace msmsim {

inline constexpr double pi = 3.141592653589793238462643383279502884;
inline constexpr double sqrt2 = 1.414213562373095048801688724209698079;
inline constexpr double sqrt_2pi = 2.506628274631000502415765284811045253;

// ---------------------------------------------------------------------------
// Logistic link
// ---------------------------------------------------------------------------

inline double expit(double x) noexcept {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::domain_error("logit: argument must lie in (0,1)");
    return std::log(p / (1.0 - p));
}

// ---------------------------------------------------------------------------
// Standard normal
// ---------------------------------------------------------------------------

inline double norm_pdf(double x) noexcept {
    return std::exp(-0.5 * x * x) / sqrt_2pi;
}

inline double norm_cdf(double x) noexcept {
    return 0.5 * std::erfc(-x / sqrt2);
}

// Wichura's PPND16 rational approximation for the normal quantile: three
// minimax rationals in q = p - 1/2 (central) or sqrt(-ln min(p, 1-p))
// (tails).  Absolute error stays below ~1e-15 across the open unit interval
// with no iterative refinement, and the upper tail is computed from 1 - p,
// which is exact for p >= 1/2, so both tails carry full precision.
inline double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::domain_error("norm_quantile: argument must lie in (0,1)");

    const double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                     6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                   1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
                 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
               (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                     3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                   5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
                 4.2313330701600911252e+1) * r + 1.0);
    }
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double x;
    if (r <= 5.0) {
        r -= 1.6;
        x = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                  2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
                3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
              4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                  1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
              2.05319162663775882187e+0) * r + 1.0);
    } else {
        r -= 5.0;
        x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
              5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                  1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
              5.99832206555887937690e-1) * r + 1.0);
    }
    return q < 0.0 ? -x : x;
}

// ---------------------------------------------------------------------------
// Regularized incomplete beta function I_x(a, b)
// ---------------------------------------------------------------------------

namespace detail {

// Lentz's continued fraction for the incomplete beta function.
inline double ibeta_cf(double a, double b, double x) {
    const double tiny = 1e-300;
    const double eps = 1e-16;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) return h;
    }
    throw std::runtime_error("ibeta: continued fraction did not converge");
}

} // namespace detail

inline double ibeta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0))
        throw std::domain_error("ibeta: shape parameters must be positive");
    if (x < 0.0 || x > 1.0)
        throw std::domain_error("ibeta: x must lie in [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double lfront = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(lfront);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * detail::ibeta_cf(a, b, x) / a;
    return 1.0 - front * detail::ibeta_cf(b, a, 1.0 - x) / b;
}

// ---------------------------------------------------------------------------
// Student t with nu > 0 degrees of freedom
// ---------------------------------------------------------------------------

inline double student_t_pdf(double x, double nu) {
    if (!(nu > 0.0))
        throw std::domain_error("student_t_pdf: degrees of freedom must be positive");
    const double lp = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                      0.5 * std::log(nu * pi) -
                      0.5 * (nu + 1.0) * std::log1p(x * x / nu);
    return std::exp(lp);
}

namespace detail {

inline bool near_integer(double x, double n) noexcept {
    return std::fabs(x - n) < 1e-12;
}

} // namespace detail

inline double student_t_cdf(double x, double nu) {
    if (!(nu > 0.0))
        throw std::domain_error("student_t_cdf: degrees of freedom must be positive");
    if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
    if (x == 0.0) return 0.5;

    // Closed forms for the small integer orders that dominate practical use.
    if (detail::near_integer(nu, 1.0)) return 0.5 + std::atan(x) / pi;
    if (detail::near_integer(nu, 2.0)) return 0.5 + 0.5 * x / std::sqrt(x * x + 2.0);
    if (detail::near_integer(nu, 3.0)) {
        const double s3 = 1.7320508075688772935;
        return 0.5 + (s3 * x / (x * x + 3.0) + std::atan(x / s3)) / pi;
    }
    if (detail::near_integer(nu, 4.0)) {
        const double s = x / std::sqrt(x * x + 4.0);
        return 0.5 + 0.5 * s * (1.0 + 0.5 * (1.0 - s * s));
    }

    const double z = nu / (nu + x * x);
    const double tail = 0.5 * ibeta(0.5 * nu, 0.5, z);
    return x > 0.0 ? 1.0 - tail : tail;
}

inline double student_t_quantile(double p, double nu) {
    if (!(nu > 0.0))
        throw std::domain_error("student_t_quantile: degrees of freedom must be positive");
    if (!(p > 0.0 && p < 1.0))
        throw std::domain_error("student_t_quantile: argument must lie in (0,1)");
    if (p == 0.5) return 0.0;

    if (detail::near_integer(nu, 1.0)) return std::tan(pi * (p - 0.5));
    if (detail::near_integer(nu, 2.0))
        return (2.0 * p - 1.0) / std::sqrt(2.0 * p * (1.0 - p));
    if (detail::near_integer(nu, 4.0)) {
        const double alpha = 4.0 * p * (1.0 - p);
        const double sa = std::sqrt(alpha);
        const double q = std::cos(std::acos(sa) / 3.0) / sa;
        const double x = 2.0 * std::sqrt(q - 1.0);
        return p < 0.5 ? -x : x;
    }

    if (p < 0.5) return -student_t_quantile(1.0 - p, nu);

    // Cornish-Fisher start around the normal quantile, then safeguarded
    // Newton on the CDF.
    const double zq = norm_quantile(p);
    const double z3 = zq * zq * zq;
    const double z5 = z3 * zq * zq;
    double x = zq + (z3 + zq) / (4.0 * nu) +
               (5.0 * z5 + 16.0 * z3 + 3.0 * zq) / (96.0 * nu * nu);
    if (!std::isfinite(x) || x < 0.0) x = zq;

    double lo = 0.0;
    double hi = std::max(x, 1.0);
    while (student_t_cdf(hi, nu) < p) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300)
            throw std::runtime_error("student_t_quantile: bracket expansion failed");
    }
    if (x <= lo || x >= hi) x = 0.5 * (lo + hi);

    for (int it = 0; it < 200; ++it) {
        const double f = student_t_cdf(x, nu) - p;
        if (f > 0.0) hi = x;
        else lo = x;
        const double dens = student_t_pdf(x, nu);
        double xn = dens > 0.0 ? x - f / dens : 0.5 * (lo + hi);
        if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
        const double dx = std::fabs(xn - x);
        x = xn;
        if (dx <= 1e-14 * std::max(1.0, std::fabs(x))) break;
    }
    return x;
}

} // namespace msmsim
