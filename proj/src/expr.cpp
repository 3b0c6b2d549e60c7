#include "clbf/expr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>

#include "clbf/errors.hpp"

namespace clbf::expr {

bool DualValue::is_constant() const noexcept {
    for (std::size_t i = 0; i < size_; ++i) {
        if (partials_[i] != 0.0) return false;
    }
    return true;
}

std::string_view function_name(Function fn) {
    switch (fn) {
        case Function::sin: return "sin";
        case Function::cos: return "cos";
        case Function::tan: return "tan";
        case Function::exp: return "exp";
        case Function::log: return "log";
        case Function::sqrt: return "sqrt";
        case Function::abs: return "abs";
        case Function::pow: return "pow";
    }
    return "?";
}

std::string format_double(double v) {
    if (v == 0.0) v = 0.0;  // drop the sign of -0
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc()) return std::to_string(v);
    return std::string(buf.data(), end);
}

namespace {

std::optional<Function> lookup_function(std::string_view name) {
    static constexpr std::array<Function, 8> all = {Function::sin, Function::cos, Function::tan,
                                                    Function::exp, Function::log, Function::sqrt,
                                                    Function::abs, Function::pow};
    for (Function fn : all) {
        if (function_name(fn) == name) return fn;
    }
    return std::nullopt;
}

int arity(Function fn) { return fn == Function::pow ? 2 : 1; }

bool is_ident_start(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9') || c == '_'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

enum class Tok { number, ident, plus, minus, star, slash, caret, lparen, rparen, comma, end };

struct Token {
    Tok kind;
    std::size_t pos;
    std::string_view text;
    double number = 0.0;
};

std::vector<Token> tokenize(std::string_view src) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < src.size()) {
        const char c = src[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            ++i;
            continue;
        }
        const std::size_t start = i;
        if (is_digit(c) || (c == '.' && i + 1 < src.size() && is_digit(src[i + 1]))) {
            while (i < src.size() && is_digit(src[i])) ++i;
            if (i < src.size() && src[i] == '.') {
                ++i;
                while (i < src.size() && is_digit(src[i])) ++i;
            }
            if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
                std::size_t j = i + 1;
                if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
                if (j < src.size() && is_digit(src[j])) {
                    while (j < src.size() && is_digit(src[j])) ++j;
                    i = j;
                }
            }
            Token t{Tok::number, start, src.substr(start, i - start)};
            auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
            if (ec != std::errc() || p != t.text.data() + t.text.size()) {
                throw ParseError("malformed number `" + std::string(t.text) + "`", start);
            }
            out.push_back(t);
            continue;
        }
        if (is_ident_start(c)) {
            while (i < src.size() && is_ident_char(src[i])) ++i;
            out.push_back({Tok::ident, start, src.substr(start, i - start)});
            continue;
        }
        Tok kind;
        switch (c) {
            case '+': kind = Tok::plus; break;
            case '-': kind = Tok::minus; break;
            case '*': kind = Tok::star; break;
            case '/': kind = Tok::slash; break;
            case '^': kind = Tok::caret; break;
            case '(': kind = Tok::lparen; break;
            case ')': kind = Tok::rparen; break;
            case ',': kind = Tok::comma; break;
            default:
                throw ParseError(std::string("unexpected character '") + c + "'", start);
        }
        out.push_back({kind, start, src.substr(start, 1)});
        ++i;
    }
    out.push_back({Tok::end, src.size(), {}});
    return out;
}

// Binding powers for the Pratt loop.
constexpr int kSumBp = 10;
constexpr int kProductBp = 20;
constexpr int kUnaryBp = 25;
constexpr int kPowerBp = 30;

}  // namespace

class Parser {
public:
    Parser(std::string_view src, std::span<const std::string> vars)
        : tokens_(tokenize(src)), vars_(vars) {}

    Expression run(std::string_view src) {
        Expression e;
        e.source_ = std::string(src);
        e.variables_.assign(vars_.begin(), vars_.end());
        out_ = &e;
        e.root_ = parse_expr(0);
        if (peek().kind != Tok::end) {
            throw ParseError("unexpected `" + std::string(peek().text) + "`", peek().pos);
        }
        return e;
    }

private:
    const Token& peek() const { return tokens_[pos_]; }
    const Token& next() { return tokens_[pos_++]; }

    int add(Node n) {
        out_->nodes_.push_back(n);
        return static_cast<int>(out_->nodes_.size()) - 1;
    }

    static std::optional<std::pair<NodeKind, int>> infix(Tok t) {
        switch (t) {
            case Tok::plus: return std::pair{NodeKind::add, kSumBp};
            case Tok::minus: return std::pair{NodeKind::sub, kSumBp};
            case Tok::star: return std::pair{NodeKind::mul, kProductBp};
            case Tok::slash: return std::pair{NodeKind::div, kProductBp};
            case Tok::caret: return std::pair{NodeKind::pow, kPowerBp};
            default: return std::nullopt;
        }
    }

    int parse_expr(int min_bp) {
        int lhs = parse_prefix();
        for (;;) {
            const auto op = infix(peek().kind);
            if (!op || op->second <= min_bp) break;
            next();
            // ^ is right-associative: its right operand may itself start with unary minus.
            const int rhs = op->first == NodeKind::pow ? parse_expr(kPowerBp - 1) : parse_expr(op->second);
            Node n;
            n.kind = op->first;
            n.lhs = lhs;
            n.rhs = rhs;
            lhs = add(n);
        }
        return lhs;
    }

    int parse_prefix() {
        const Token t = next();
        switch (t.kind) {
            case Tok::number: {
                Node n;
                n.kind = NodeKind::constant;
                n.value = t.number;
                return add(n);
            }
            case Tok::minus: {
                Node n;
                n.kind = NodeKind::negate;
                n.lhs = parse_expr(kUnaryBp);
                return add(n);
            }
            case Tok::lparen: {
                const int inner = parse_expr(0);
                expect(Tok::rparen, "')'");
                return inner;
            }
            case Tok::ident: return parse_identifier(t);
            case Tok::end: throw ParseError("unexpected end of input", t.pos);
            default: throw ParseError("unexpected `" + std::string(t.text) + "`", t.pos);
        }
    }

    int parse_identifier(const Token& t) {
        if (peek().kind == Tok::lparen) {
            const auto fn = lookup_function(t.text);
            if (!fn) throw ParseError("unknown function `" + std::string(t.text) + "`", t.pos);
            next();
            std::vector<int> args;
            if (peek().kind != Tok::rparen) {
                args.push_back(parse_expr(0));
                while (peek().kind == Tok::comma) {
                    next();
                    args.push_back(parse_expr(0));
                }
            }
            expect(Tok::rparen, "')'");
            if (static_cast<int>(args.size()) != arity(*fn)) {
                throw ParseError("function `" + std::string(t.text) + "` expects " +
                                     std::to_string(arity(*fn)) + " argument(s), got " +
                                     std::to_string(args.size()),
                                 t.pos);
            }
            Node n;
            n.kind = NodeKind::call;
            n.fn = *fn;
            n.lhs = args[0];
            n.rhs = args.size() > 1 ? args[1] : -1;
            return add(n);
        }
        const auto it = std::find(vars_.begin(), vars_.end(), t.text);
        if (it == vars_.end()) throw ParseError("unknown identifier `" + std::string(t.text) + "`", t.pos);
        Node n;
        n.kind = NodeKind::variable;
        n.index = static_cast<int>(it - vars_.begin());
        return add(n);
    }

    void expect(Tok kind, const char* what) {
        if (peek().kind != kind) {
            const std::string got = peek().kind == Tok::end ? "end of input" : "`" + std::string(peek().text) + "`";
            throw ParseError(std::string("expected ") + what + ", got " + got, peek().pos);
        }
        next();
    }

    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
    std::span<const std::string> vars_;
    Expression* out_ = nullptr;
};

Expression Expression::parse(std::string_view source, std::span<const std::string> variables) {
    if (variables.size() > kMaxVariables) {
        throw ParseError("at most " + std::to_string(kMaxVariables) + " variables are supported", 0);
    }
    for (std::size_t i = 0; i < variables.size(); ++i) {
        const std::string& v = variables[i];
        if (v.empty() || !is_ident_start(v[0]) || !std::all_of(v.begin(), v.end(), is_ident_char)) {
            throw ParseError("invalid variable name `" + v + "`", 0);
        }
        if (lookup_function(v)) throw ParseError("variable name `" + v + "` shadows a function", 0);
        for (std::size_t j = 0; j < i; ++j) {
            if (variables[j] == v) throw ParseError("duplicate variable name `" + v + "`", 0);
        }
    }
    bool blank = std::all_of(source.begin(), source.end(), [](char c) { return c == ' ' || c == '\t'; });
    if (blank) throw ParseError("empty expression", 0);
    return Parser(source, variables).run(source);
}

void Expression::check_bindings(std::span<const double> b) const {
    if (b.size() != variables_.size()) {
        throw std::invalid_argument("expression over " + std::to_string(variables_.size()) +
                                    " variables bound to " + std::to_string(b.size()) + " values");
    }
}

namespace {

bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

}  // namespace

double Expression::eval(std::span<const double> bindings) const {
    check_bindings(bindings);
    return eval_node(root_, bindings);
}

double Expression::eval_node(int id, std::span<const double> b) const {
    const Node& n = nodes_[id];
    double r = 0.0;
    switch (n.kind) {
        case NodeKind::constant: return n.value;
        case NodeKind::variable: return b[n.index];
        case NodeKind::negate: return -eval_node(n.lhs, b);
        case NodeKind::add: r = eval_node(n.lhs, b) + eval_node(n.rhs, b); break;
        case NodeKind::sub: r = eval_node(n.lhs, b) - eval_node(n.rhs, b); break;
        case NodeKind::mul: r = eval_node(n.lhs, b) * eval_node(n.rhs, b); break;
        case NodeKind::div: {
            const double den = eval_node(n.rhs, b);
            if (den == 0.0) throw DomainError("division by zero", print_node(id));
            r = eval_node(n.lhs, b) / den;
            break;
        }
        case NodeKind::pow:
        case NodeKind::call: {
            if (n.kind == NodeKind::pow || n.fn == Function::pow) {
                const double base = eval_node(n.lhs, b);
                const double ex = eval_node(n.rhs, b);
                if (base < 0.0 && !is_integer(ex)) {
                    throw DomainError("negative base with non-integer exponent", print_node(id));
                }
                if (base == 0.0 && ex < 0.0) throw DomainError("division by zero", print_node(id));
                r = std::pow(base, ex);
                break;
            }
            const double a = eval_node(n.lhs, b);
            switch (n.fn) {
                case Function::sin: r = std::sin(a); break;
                case Function::cos: r = std::cos(a); break;
                case Function::tan: r = std::tan(a); break;
                case Function::exp: r = std::exp(a); break;
                case Function::log:
                    if (a <= 0.0) throw DomainError("log of non-positive value", print_node(id));
                    r = std::log(a);
                    break;
                case Function::sqrt:
                    if (a < 0.0) throw DomainError("sqrt of negative value", print_node(id));
                    r = std::sqrt(a);
                    break;
                case Function::abs: r = std::abs(a); break;
                case Function::pow: break;
            }
            break;
        }
    }
    if (!std::isfinite(r)) throw DomainError("non-finite result", print_node(id));
    return r;
}

DualValue Expression::eval_dual(std::span<const double> bindings) const {
    check_bindings(bindings);
    return dual_node(root_, bindings);
}

Eigen::VectorXd Expression::grad(std::span<const double> bindings) const {
    const DualValue d = eval_dual(bindings);
    Eigen::VectorXd g(static_cast<Eigen::Index>(d.size()));
    for (std::size_t i = 0; i < d.size(); ++i) g[static_cast<Eigen::Index>(i)] = d.partial(i);
    return g;
}

namespace {

// out = alpha * u + beta * v, partials only
DualValue combine(double value, double alpha, const DualValue& u, double beta, const DualValue& v) {
    DualValue r(value, u.size());
    for (std::size_t i = 0; i < u.size(); ++i) r.partial(i) = alpha * u.partial(i) + beta * v.partial(i);
    return r;
}

DualValue chain(double value, double slope, const DualValue& u) {
    DualValue r(value, u.size());
    for (std::size_t i = 0; i < u.size(); ++i) r.partial(i) = slope * u.partial(i);
    return r;
}

}  // namespace

DualValue Expression::dual_node(int id, std::span<const double> b) const {
    const Node& n = nodes_[id];
    const std::size_t nv = variables_.size();
    DualValue r;
    switch (n.kind) {
        case NodeKind::constant: return DualValue(n.value, nv);
        case NodeKind::variable: return DualValue::variable(b[n.index], n.index, nv);
        case NodeKind::negate: {
            const DualValue a = dual_node(n.lhs, b);
            return chain(-a.value(), -1.0, a);
        }
        case NodeKind::add: {
            const DualValue x = dual_node(n.lhs, b), y = dual_node(n.rhs, b);
            r = combine(x.value() + y.value(), 1.0, x, 1.0, y);
            break;
        }
        case NodeKind::sub: {
            const DualValue x = dual_node(n.lhs, b), y = dual_node(n.rhs, b);
            r = combine(x.value() - y.value(), 1.0, x, -1.0, y);
            break;
        }
        case NodeKind::mul: {
            const DualValue x = dual_node(n.lhs, b), y = dual_node(n.rhs, b);
            r = combine(x.value() * y.value(), y.value(), x, x.value(), y);
            break;
        }
        case NodeKind::div: {
            const DualValue x = dual_node(n.lhs, b), y = dual_node(n.rhs, b);
            if (y.value() == 0.0) throw DomainError("division by zero", print_node(id));
            const double q = x.value() / y.value();
            r = combine(q, 1.0 / y.value(), x, -q / y.value(), y);
            break;
        }
        case NodeKind::pow:
        case NodeKind::call: {
            if (n.kind == NodeKind::pow || n.fn == Function::pow) {
                const DualValue x = dual_node(n.lhs, b), y = dual_node(n.rhs, b);
                const double base = x.value(), ex = y.value();
                if (base < 0.0 && !is_integer(ex)) {
                    throw DomainError("negative base with non-integer exponent", print_node(id));
                }
                if (base == 0.0 && ex < 0.0) throw DomainError("division by zero", print_node(id));
                const double v = std::pow(base, ex);
                if (y.is_constant()) {
                    if (base == 0.0 && ex < 1.0 && ex != 0.0 && !x.is_constant()) {
                        throw DomainError("power not differentiable at 0", print_node(id));
                    }
                    const double slope = ex == 0.0 ? 0.0 : ex * std::pow(base, ex - 1.0);
                    r = chain(v, slope, x);
                } else {
                    if (base <= 0.0) {
                        throw DomainError("variable exponent requires positive base", print_node(id));
                    }
                    r = combine(v, ex * std::pow(base, ex - 1.0), x, v * std::log(base), y);
                }
                break;
            }
            const DualValue a = dual_node(n.lhs, b);
            const double u = a.value();
            switch (n.fn) {
                case Function::sin: r = chain(std::sin(u), std::cos(u), a); break;
                case Function::cos: r = chain(std::cos(u), -std::sin(u), a); break;
                case Function::tan: {
                    const double c = std::cos(u);
                    r = chain(std::tan(u), 1.0 / (c * c), a);
                    break;
                }
                case Function::exp: {
                    const double e = std::exp(u);
                    r = chain(e, e, a);
                    break;
                }
                case Function::log:
                    if (u <= 0.0) throw DomainError("log of non-positive value", print_node(id));
                    r = chain(std::log(u), 1.0 / u, a);
                    break;
                case Function::sqrt: {
                    if (u < 0.0) throw DomainError("sqrt of negative value", print_node(id));
                    const double s = std::sqrt(u);
                    if (s == 0.0) {
                        if (!a.is_constant()) throw DomainError("sqrt not differentiable at 0", print_node(id));
                        r = DualValue(0.0, nv);
                    } else {
                        r = chain(s, 0.5 / s, a);
                    }
                    break;
                }
                case Function::abs:
                    if (u == 0.0 && !a.is_constant()) {
                        throw DomainError("abs not differentiable at 0", print_node(id));
                    }
                    r = chain(std::abs(u), u > 0.0 ? 1.0 : (u < 0.0 ? -1.0 : 0.0), a);
                    break;
                case Function::pow: break;
            }
            break;
        }
    }
    if (!std::isfinite(r.value())) throw DomainError("non-finite result", print_node(id));
    for (std::size_t i = 0; i < nv; ++i) {
        if (!std::isfinite(r.partial(i))) throw DomainError("non-finite derivative", print_node(id));
    }
    return r;
}

std::string Expression::to_string() const { return empty() ? std::string() : print_node(root_); }

std::string Expression::print_node(int id) const {
    const Node& n = nodes_[id];
    auto bin = [&](const char* op) { return "(" + print_node(n.lhs) + " " + op + " " + print_node(n.rhs) + ")"; };
    switch (n.kind) {
        case NodeKind::constant: return format_double(n.value);
        case NodeKind::variable: return variables_[n.index];
        case NodeKind::negate: return "(-" + print_node(n.lhs) + ")";
        case NodeKind::add: return bin("+");
        case NodeKind::sub: return bin("-");
        case NodeKind::mul: return bin("*");
        case NodeKind::div: return bin("/");
        case NodeKind::pow: return bin("^");
        case NodeKind::call: {
            std::string s = std::string(function_name(n.fn)) + "(" + print_node(n.lhs);
            if (n.rhs >= 0) s += ", " + print_node(n.rhs);
            return s + ")";
        }
    }
    return {};
}

}  // namespace clbf::expr
