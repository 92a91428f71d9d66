#pragma once

// Bivariate copula families and their conditional distribution functions
// ("h-functions"):
//
//   r(u1 | u2) = P(U1 <= u1 | U2 = u2) = dC(u1, u2) / du2.
//
// Supported families: gaussian, student_t (elliptical); clayton, gumbel,
// frank, joe (Archimedean).  The Archimedean evaluations work in log space
// where the naive expressions would overflow or lose precision at strong
// dependence.

#include <cmath>
#include <string>

#include <msmsim/errors.hpp>
#include <msmsim/special_functions.hpp>

namespace msmsim {

enum class copula_family { gaussian, student_t, clayton, gumbel, frank, joe };

inline const char* to_string(copula_family f) {
    switch (f) {
        case copula_family::gaussian: return "gaussian";
        case copula_family::student_t: return "student_t";
        case copula_family::clayton: return "clayton";
        case copula_family::gumbel: return "gumbel";
        case copula_family::frank: return "frank";
        case copula_family::joe: return "joe";
    }
    return "?";
}

inline copula_family copula_family_from_string(const std::string& s) {
    if (s == "gaussian") return copula_family::gaussian;
    if (s == "student_t") return copula_family::student_t;
    if (s == "clayton") return copula_family::clayton;
    if (s == "gumbel") return copula_family::gumbel;
    if (s == "frank") return copula_family::frank;
    if (s == "joe") return copula_family::joe;
    throw config_error("unknown copula family '" + s + "'");
}

struct copula_spec {
    copula_family family = copula_family::gaussian;
    double rho = 0.0;    // elliptical correlation, in (-1, 1)
    double df = 0.0;     // student_t degrees of freedom, > 0
    double theta = 0.0;  // Archimedean dependence parameter

    void validate() const {
        switch (family) {
            case copula_family::gaussian:
                if (!(rho > -1.0 && rho < 1.0))
                    throw config_error("gaussian copula: rho must lie in (-1,1)");
                break;
            case copula_family::student_t:
                if (!(rho > -1.0 && rho < 1.0))
                    throw config_error("student_t copula: rho must lie in (-1,1)");
                if (!(df > 0.0))
                    throw config_error("student_t copula: df must be positive");
                break;
            case copula_family::clayton:
                if (!(theta > 0.0))
                    throw config_error("clayton copula: theta must be positive");
                break;
            case copula_family::gumbel:
                if (!(theta >= 1.0))
                    throw config_error("gumbel copula: theta must be >= 1");
                break;
            case copula_family::frank:
                if (theta == 0.0 || !std::isfinite(theta))
                    throw config_error("frank copula: theta must be nonzero and finite");
                if (std::fabs(theta) > 350.0)
                    throw config_error(
                        "frank copula: |theta| > 350 is not representable in double "
                        "precision");
                break;
            case copula_family::joe:
                if (!(theta >= 1.0))
                    throw config_error("joe copula: theta must be >= 1");
                break;
        }
    }
};

namespace detail {

// Arguments are clamped to [1e-12, 1-1e-12]; exact 0 or 1 (or values outside
// the unit interval) are domain errors because the conditional probability
// is degenerate or undefined there.
inline double clamp_unit(double u, const char* what) {
    if (!(u > 0.0 && u < 1.0))
        throw std::domain_error(std::string(what) +
                                " must lie strictly inside (0,1)");
    if (u < 1e-12) return 1e-12;
    if (u > 1.0 - 1e-12) return 1.0 - 1e-12;
    return u;
}

// ln(e^x - 1) for x > 0 without overflow.
inline double log_expm1(double x) {
    return x > 36.0 ? x + std::log1p(-std::exp(-x)) : std::log(std::expm1(x));
}

} // namespace detail

// Evaluates r(u1 | u2) for one fixed u1 across many u2 values.  Everything
// that depends only on (family parameters, u1) is computed once at
// construction; prob(u2) then reproduces conditional_prob(c, u1, u2) exactly,
// value for value, because conditional_prob is defined through this class.
class conditional_evaluator {
public:
    conditional_evaluator(const copula_spec& c, double u1)
        : family_(c.family), rho_(c.rho), theta_(c.theta) {
        u1_ = detail::clamp_unit(u1, "copula argument u1");
        switch (family_) {
            case copula_family::gaussian:
                if (rho_ != 0.0) {
                    c0_ = norm_quantile(u1_);                  // x1
                    c1_ = std::sqrt(1.0 - rho_ * rho_);        // scale
                }
                break;
            case copula_family::student_t:
                nu_ = c.df;
                c0_ = student_t_quantile(u1_, nu_);            // x1
                c1_ = 1.0 - rho_ * rho_;
                c2_ = nu_ + 1.0;
                break;
            case copula_family::clayton:
                c0_ = -theta_ * std::log(u1_);                 // ln u1^-theta
                c1_ = -theta_ - 1.0;
                c2_ = -1.0 - 1.0 / theta_;
                break;
            case copula_family::gumbel:
                c0_ = theta_ * std::log(-std::log(u1_));       // theta ln(-ln u1)
                c1_ = theta_ - 1.0;
                c2_ = 1.0 / theta_ - 1.0;
                break;
            case copula_family::frank:
                if (std::fabs(theta_) <= 15.0) {
                    c0_ = std::expm1(-theta_ * u1_);           // g1
                    c1_ = std::expm1(-theta_);                 // w
                } else if (theta_ < 0.0) {
                    c0_ = detail::log_expm1(-theta_ * u1_);    // ln g1
                    c1_ = detail::log_expm1(-theta_);          // ln w
                }
                break;
            case copula_family::joe:
                c0_ = theta_ * std::log1p(-u1_);               // ln (1-u1)^theta
                c1_ = -std::expm1(c0_);                        // 1 - (1-u1)^theta
                c2_ = std::log(c1_);
                c3_ = 1.0 / theta_ - 1.0;
                c4_ = theta_ - 1.0;
                break;
        }
    }

    double u1() const noexcept { return u1_; }

    // Conditional distribution function r(u1 | u2); a probability in [0,1].
    double prob(double u2) const {
        if (z_space()) return prob_of(threshold(u2));
        u2 = detail::clamp_unit(u2, "copula argument u2");
        double r;
        switch (family_) {
            case copula_family::gaussian: r = u1_; break;  // rho == 0
            case copula_family::student_t: r = student_t_h(u2); break;
            case copula_family::clayton: r = clayton_h(u2); break;
            case copula_family::gumbel: r = gumbel_h(u2); break;
            case copula_family::frank: r = frank_h(u2); break;
            case copula_family::joe: r = joe_h(u2); break;
            default: throw config_error("conditional_prob: unknown copula family");
        }
        if (r < 0.0) r = 0.0;
        if (r > 1.0) r = 1.0;
        return r;
    }

    // The failure test V < prob(u2) admits a cheaper equivalent form for the
    // Gaussian family: with t the normal-CDF argument of the conditional,
    // V < Phi(t) exactly when Phi^{-1}(V) < t, which trades the CDF
    // evaluation for a (cheaper) quantile evaluation.  threshold() returns
    // the family's decision value — that CDF argument when z_space() is
    // true, the probability itself otherwise — ordered the same way as the
    // probability in both cases; fails() runs the comparison on matching
    // scales, and prob_of() maps a decision value back to its probability,
    // with prob(u2) == prob_of(threshold(u2)) value for value.
    bool z_space() const noexcept {
        return family_ == copula_family::gaussian && rho_ != 0.0;
    }

    double threshold(double u2) const {
        if (!z_space()) return prob(u2);
        u2 = detail::clamp_unit(u2, "copula argument u2");
        return (c0_ - rho_ * norm_quantile(u2)) / c1_;
    }

    double prob_of(double t) const {
        if (!z_space()) return t;
        double r = norm_cdf(t);
        if (r < 0.0) r = 0.0;
        if (r > 1.0) r = 1.0;
        return r;
    }

    bool fails(double v, double t) const {
        return z_space() ? norm_quantile(v) < t : v < t;
    }

private:

    double student_t_h(double u2) const {
        const double x2 = student_t_quantile(u2, nu_);
        const double scale = std::sqrt((nu_ + x2 * x2) * c1_ / c2_);
        return student_t_cdf((c0_ - rho_ * x2) / scale, c2_);
    }

    double clayton_h(double u2) const {
        // h = u2^(-theta-1) * (u1^-theta + u2^-theta - 1)^(-1-1/theta), in logs.
        const double b = -theta_ * std::log(u2);
        const double m = std::max(c0_, b);
        // ln(e^a + e^b - 1) without overflow.
        const double ls =
            m + std::log(std::exp(c0_ - m) + std::exp(b - m) - std::exp(-m));
        const double lh = c1_ * std::log(u2) + c2_ * ls;
        return std::exp(lh);
    }

    double gumbel_h(double u2) const {
        // With T = (-ln u1)^theta + (-ln u2)^theta:
        //   h = exp(-T^(1/theta)) * (-ln u2)^(theta-1) / (u2 * T^(1-1/theta)).
        const double ly = std::log(-std::log(u2));
        const double m = std::max(c0_, theta_ * ly);
        const double lnT = m + std::log(std::exp(c0_ - m) + std::exp(theta_ * ly - m));
        const double lh = -std::exp(lnT / theta_) + c1_ * ly - std::log(u2) + c2_ * lnT;
        return std::exp(lh);
    }

    double frank_h(double u2) const {
        if (std::fabs(theta_) <= 15.0) {
            // Direct form; exact here, but the denominator cancels
            // catastrophically once e^-theta terms drop below double slack.
            const double g2 = std::expm1(-theta_ * u2);
            return std::exp(-theta_ * u2) * c0_ / (c1_ + c0_ * g2);
        }
        if (theta_ > 0.0) {
            // Denominator rearranged exactly into pure exponentials:
            //   D = e^(-theta u1) + e^(-theta u2) - e^(-theta(u1+u2)) - e^-theta,
            // then the dominant factor e^(-theta min(u1,u2)) is pulled out, which
            // leaves a bracket in (0,2] with no cancellation at large theta.
            const double mn = std::min(u1_, u2);
            const double mx = std::max(u1_, u2);
            const double br = 1.0 + std::exp(-theta_ * (mx - mn)) -
                              std::exp(-theta_ * mx) - std::exp(-theta_ * (1.0 - mn));
            const double lnD = -theta_ * mn + std::log(br);
            const double lnN = -theta_ * u2 + std::log(-std::expm1(-theta_ * u1_));
            return std::exp(lnN - lnD);
        }
        // theta < 0: every term is positive; work in logs to dodge overflow.
        const double psi = -theta_;
        const double lnG2 = detail::log_expm1(psi * u2);
        const double b = c0_ + lnG2;
        const double m = std::max(c1_, b);
        const double lnD = m + std::log(std::exp(c1_ - m) + std::exp(b - m));
        return std::exp(psi * u2 + c0_ - lnD);
    }

    double joe_h(double u2) const {
        // h = S^(1/theta-1) * (1-u2)^(theta-1) * (1-(1-u1)^theta),
        // S = (1-u1)^theta + (1-u2)^theta - (1-u1)^theta (1-u2)^theta.
        const double lb = theta_ * std::log1p(-u2);
        const double e2 = -std::expm1(lb);
        double lnS;
        const double prod = c1_ * e2;
        if (prod < 0.5) {
            lnS = std::log1p(-prod);  // S = 1 - e1*e2, well conditioned near 1
        } else {
            const double m = std::max(c0_, lb);
            lnS = m + std::log(std::exp(c0_ - m) + std::exp(lb - m) -
                               std::exp(c0_ + lb - m));
        }
        const double lh = c3_ * lnS + c4_ * std::log1p(-u2) + c2_;
        return std::exp(lh);
    }

    copula_family family_;
    double rho_ = 0.0, nu_ = 0.0, theta_ = 0.0;
    double u1_ = 0.5;
    double c0_ = 0.0, c1_ = 0.0, c2_ = 0.0, c3_ = 0.0, c4_ = 0.0;
};

// Conditional distribution function r(u1 | u2) of the copula.  The result is
// a probability in [0,1].
inline double conditional_prob(const copula_spec& c, double u1, double u2) {
    return conditional_evaluator(c, u1).prob(u2);
}

} // namespace msmsim
