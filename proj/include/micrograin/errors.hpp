// Exception types shared across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace micrograin {

// Tm == Tc (or similar) makes a normalization ill-defined.
class DegenerateRange : public std::domain_error {
public:
    explicit DegenerateRange(const std::string& msg) : std::domain_error(msg) {}
};

// A field became non-finite during explicit time stepping (dt too large).
class NumericBlowup : public std::runtime_error {
public:
    explicit NumericBlowup(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Requested stripe frequency falls outside the encodable range.
class FrequencyDomainError : public std::domain_error {
public:
    explicit FrequencyDomainError(const std::string& msg) : std::domain_error(msg) {}
};

class SolveFailure : public std::runtime_error {
public:
    explicit SolveFailure(const std::string& msg) : std::runtime_error(msg) {}
};

// (D1111+D2222)/2 <= D1212: no isotropic (E, nu) pair exists.
class DegenerateModuli : public std::domain_error {
public:
    explicit DegenerateModuli(const std::string& msg) : std::domain_error(msg) {}
};

class PoissonLimit : public std::domain_error {
public:
    explicit PoissonLimit(const std::string& msg) : std::domain_error(msg) {}
};

class NonFiniteLoss : public std::runtime_error {
public:
    explicit NonFiniteLoss(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace micrograin
