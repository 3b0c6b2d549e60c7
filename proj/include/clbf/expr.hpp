#pragma once

// Scalar expression language used by system configs: parsing, evaluation and
// forward-mode differentiation.
//
// Grammar (precedence low to high):
//   sum     := product (('+' | '-') product)*
//   product := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?          (right-associative)
//   primary := number | identifier | identifier '(' args ')' | '(' sum ')'
// so "-x^2" is -(x^2) and "2^3^2" is 2^(3^2).

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace clbf::expr {

inline constexpr std::size_t kMaxVariables = 8;

/// Value plus partial derivatives w.r.t. every declared variable.
class DualValue {
public:
    DualValue() = default;
    DualValue(double value, std::size_t n) : value_(value), size_(n) {}

    static DualValue variable(double value, std::size_t index, std::size_t n) {
        DualValue d(value, n);
        d.partials_[index] = 1.0;
        return d;
    }

    double value() const noexcept { return value_; }
    double& value() noexcept { return value_; }
    std::size_t size() const noexcept { return size_; }
    double partial(std::size_t i) const { return partials_[i]; }
    double& partial(std::size_t i) { return partials_[i]; }
    bool is_constant() const noexcept;

private:
    double value_ = 0.0;
    std::size_t size_ = 0;
    std::array<double, kMaxVariables> partials_{};
};

enum class NodeKind : std::uint8_t { constant, variable, negate, add, sub, mul, div, pow, call };
enum class Function : std::uint8_t { sin, cos, tan, exp, log, sqrt, abs, pow };

struct Node {
    NodeKind kind = NodeKind::constant;
    Function fn = Function::sin;
    double value = 0.0;   // constant
    int index = -1;       // variable slot
    int lhs = -1;
    int rhs = -1;
};

/// Immutable parsed expression. Copies share nothing and are cheap for the
/// small trees found in configs.
class Expression {
public:
    Expression() = default;

    /// Throws ParseError (syntax, unknown identifier, unknown function, arity).
    static Expression parse(std::string_view source, std::span<const std::string> variables);
    static Expression parse(std::string_view source, const std::vector<std::string>& variables) {
        return parse(source, std::span<const std::string>(variables));
    }

    /// Throws DomainError naming the offending sub-expression.
    double eval(std::span<const double> bindings) const;
    double eval(const Eigen::VectorXd& x) const { return eval(as_span(x)); }

    DualValue eval_dual(std::span<const double> bindings) const;
    DualValue eval_dual(const Eigen::VectorXd& x) const { return eval_dual(as_span(x)); }

    /// Exact gradient by dual-number propagation. Additionally throws
    /// DomainError at non-differentiable points (abs at 0, sqrt at 0, ...).
    Eigen::VectorXd grad(std::span<const double> bindings) const;
    Eigen::VectorXd grad(const Eigen::VectorXd& x) const { return grad(as_span(x)); }

    /// Fully parenthesized text that re-parses to an equivalent tree.
    std::string to_string() const;

    const std::string& source() const noexcept { return source_; }
    const std::vector<std::string>& variables() const noexcept { return variables_; }
    std::size_t variable_count() const noexcept { return variables_.size(); }
    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    bool empty() const noexcept { return nodes_.empty(); }

private:
    static std::span<const double> as_span(const Eigen::VectorXd& x) {
        return {x.data(), static_cast<std::size_t>(x.size())};
    }
    double eval_node(int id, std::span<const double> b) const;
    DualValue dual_node(int id, std::span<const double> b) const;
    std::string print_node(int id) const;
    void check_bindings(std::span<const double> b) const;

    std::vector<Node> nodes_;
    int root_ = -1;
    std::vector<std::string> variables_;
    std::string source_;

    friend class Parser;
};

std::string_view function_name(Function fn);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

}  // namespace clbf::expr
