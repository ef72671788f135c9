#pragma once

#include <stdexcept>
#include <string>

namespace dmch {

/// Invalid shapes, axes, or argument values. Maps to CLI exit code 1.
class argument_error : public std::invalid_argument {
public:
    explicit argument_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Bad configuration: dimension mismatches between checkpoint and config,
/// invalid hyperparameters. CLI exit code 2.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad input data: missing ground truth, unsatisfiable sampling ratios,
/// out-of-vocabulary tokens. CLI exit code 3.
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed file contents (bad magic, truncation, version skew). Treated as
/// a data problem at the CLI boundary (exit code 3).
class format_error : public std::runtime_error {
public:
    explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Filesystem failures: unreadable/unwritable paths. CLI exit code 4.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Failures inside the optimization loop (missing grads, NaN losses).
class training_error : public std::runtime_error {
public:
    explicit training_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A checking harness detected that it cannot trust its own verdict,
/// e.g. the function under finite-difference test is nondeterministic.
class oracle_error : public std::runtime_error {
public:
    explicit oracle_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace dmch
