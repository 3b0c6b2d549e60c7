#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace clbf {

/// Malformed expression text. `position` is the 0-based character offset.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t position)
        : std::runtime_error(what + " at position " + std::to_string(position)),
          position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// Base for failures raised while evaluating a vector field at a state.
/// The integrator treats these as a rejected trial step.
class FieldError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Arithmetic domain violation (log of non-positive, sqrt of negative, ...).
class DomainError : public FieldError {
public:
    DomainError(const std::string& what, std::string node)
        : FieldError(what + " in `" + node + "`"), node_(std::move(node)) {}
    const std::string& node() const noexcept { return node_; }

private:
    std::string node_;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IntegrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// V or h fails a structural requirement (e.g. Hessian of V at 0 not positive definite).
class CertificateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// ∇h·F at the hit point is too small for the hitting time to be differentiable.
class TransversalityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace clbf

namespace clbf {

/// Boundary ray sampling failed (set not contained in the box, or not star-shaped).
class SamplingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace clbf
