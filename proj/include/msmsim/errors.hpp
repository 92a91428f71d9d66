#pragma once

#include <stdexcept>
#include <string>

namespace msmsim {

// Error hierarchy.  Every failure mode maps onto one of these so the CLI can
// translate exceptions into stable process exit codes.

// Malformed scenario text, unknown keys, out-of-range parameters, references
// to undefined variables, schema violations.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric or structural failure while generating data (e.g. an infeasible
// hazard given the competing-event law, or an exhausted donor pool that the
// algorithm cannot recover from).
class simulation_error : public std::runtime_error {
public:
    explicit simulation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// A generated dataset failed a requested diagnostic check.
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Estimation failure: separation, singular information matrix, no usable
// person-time rows, non-convergence.
class fit_error : public std::runtime_error {
public:
    explicit fit_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument to a library function (domain errors on mathematical
// functions, inconsistent array sizes, ...).  std::invalid_argument and
// std::domain_error are also used directly where natural.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace msmsim
