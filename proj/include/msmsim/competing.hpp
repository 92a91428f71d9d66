#pragma once

// Competing-event policies shared by the simulation engine.
//
// Two designs are supported:
//
//  * subdistribution: the marginal model is a subdistribution hazard — the
//    failure probability among clones still free of the *main* event,
//    including clones that already experienced the competing event.  Clones
//    past the competing event can never fail, so the conditional failure
//    probability applied to the still-eligible clones must be inflated to
//    keep the ensemble-average hazard on target: the copula conditional is
//    divided by the eligible fraction.
//
//  * cause_specific: the competing event carries its own marginal model /
//    risk score / copula triple, run first at every visit among all clones;
//    an individual's follow-up ends when clone 1 experiences the competing
//    event.  The main-event model conditions on remaining free of the
//    competing event, so no divisor applies there.

#include <cstdio>
#include <string>

#include <msmsim/errors.hpp>

namespace msmsim {

namespace detail {

// Short human-readable number for diagnostics.
inline std::string format_short(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
}

} // namespace detail

// Divisor applied to the copula conditional probability in the
// subdistribution main trial.  `eligible_fraction` is (clones still free of
// the competing event) / m.  The default policy divides by the eligible
// fraction itself: the eligible clones receive uniform risk quantiles, so
// their average conditional probability is the marginal hazard, and scaling
// by 1 / eligible_fraction restores the expected failure count over the full
// ensemble (whose immune members count toward the risk set but never fail).
// The `literal` variant divides by one minus the eligible fraction instead;
// it is provided so the consequences of that choice can be demonstrated, not
// because it preserves the marginal model.
inline double subdistribution_divisor(double eligible_fraction, bool literal) {
    return literal ? 1.0 - eligible_fraction : eligible_fraction;
}

// Under the default divisor the per-clone failure probability is capped at
// one, so the ensemble can produce at most eligible_fraction * m failures.
// A marginal hazard above the eligible fraction is unattainable no matter
// how the trial is run; fail loudly rather than silently under-shoot.
inline void check_subdistribution_feasible(double hazard, double eligible_fraction,
                                           int event_visit) {
    if (hazard > eligible_fraction)
        throw simulation_error(
            "infeasible subdistribution hazard at event visit " +
            std::to_string(event_visit) + ": marginal hazard " +
            detail::format_short(hazard) +
            " exceeds the fraction of clones still free of the competing event (" +
            detail::format_short(eligible_fraction) + ")");
}

} // namespace msmsim
