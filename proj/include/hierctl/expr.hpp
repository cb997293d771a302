#pragma once

#include <hierctl/errors.hpp>

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace hierctl {

/// Variable slots an expression may reference.
enum class Var { X, Y, T, U, PX, PY };

struct Bindings {
    double x = 0.0, y = 0.0, t = 0.0, u = 0.0, px = 0.0, py = 0.0;
    double get(Var v) const {
        switch (v) {
        case Var::X: return x;
        case Var::Y: return y;
        case Var::T: return t;
        case Var::U: return u;
        case Var::PX: return px;
        case Var::PY: return py;
        }
        return 0.0;
    }
};

/// Immutable expression tree. Printing gives a fully normalized form that parses back to
/// the same tree.
class Expression {
public:
    enum class Kind { Number, Variable, Negate, Add, Sub, Mul, Div, Pow, Call };

    Expression() : Expression(number(0.0)) {}

    static Expression number(double v) { return Expression(std::make_shared<Node>(Node{Kind::Number, v, Var::X, "", {}})); }
    static Expression variable(Var v) { return Expression(std::make_shared<Node>(Node{Kind::Variable, 0.0, v, "", {}})); }

    double eval(const Bindings& b) const { return eval(*node_, b); }
    double operator()(double x, double y = 0.0, double t = 0.0) const {
        Bindings b;
        b.x = x;
        b.y = y;
        b.t = t;
        return eval(b);
    }

    std::string str() const { return print(*node_); }

    bool uses(Var v) const { return uses(*node_, v); }

    bool operator==(const Expression& o) const { return equal(*node_, *o.node_); }

    static Expression unary(Kind k, Expression a, std::string fn = {}) {
        return Expression(std::make_shared<Node>(Node{k, 0.0, Var::X, std::move(fn), {a.node_}}));
    }
    static Expression binary(Kind k, Expression a, Expression b) {
        return Expression(std::make_shared<Node>(Node{k, 0.0, Var::X, "", {a.node_, b.node_}}));
    }

private:
    struct Node {
        Kind kind;
        double value;
        Var var;
        std::string fn;
        std::vector<std::shared_ptr<const Node>> args;
    };
    explicit Expression(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

    static double eval(const Node& n, const Bindings& b) {
        switch (n.kind) {
        case Kind::Number: return n.value;
        case Kind::Variable: return b.get(n.var);
        case Kind::Negate: return -eval(*n.args[0], b);
        case Kind::Add: return eval(*n.args[0], b) + eval(*n.args[1], b);
        case Kind::Sub: return eval(*n.args[0], b) - eval(*n.args[1], b);
        case Kind::Mul: return eval(*n.args[0], b) * eval(*n.args[1], b);
        case Kind::Div: return eval(*n.args[0], b) / eval(*n.args[1], b);
        case Kind::Pow: return std::pow(eval(*n.args[0], b), eval(*n.args[1], b));
        case Kind::Call: {
            double a = eval(*n.args[0], b);
            if (n.fn == "sin") return std::sin(a);
            if (n.fn == "cos") return std::cos(a);
            if (n.fn == "exp") return std::exp(a);
            if (n.fn == "tanh") return std::tanh(a);
            return std::abs(a);
        }
        }
        return 0.0;
    }

    static std::string var_name(Var v) {
        static const char* names[] = {"x", "y", "t", "u", "px", "py"};
        return names[static_cast<int>(v)];
    }

    static std::string print(const Node& n) {
        switch (n.kind) {
        case Kind::Number: {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", n.value);
            return buf;
        }
        case Kind::Variable: return var_name(n.var);
        case Kind::Negate: return "(-" + print(*n.args[0]) + ")";
        case Kind::Call: return n.fn + "(" + print(*n.args[0]) + ")";
        default: break;
        }
        static const char ops[] = {'+', '-', '*', '/', '^'};
        char op = ops[static_cast<int>(n.kind) - static_cast<int>(Kind::Add)];
        return "(" + print(*n.args[0]) + " " + op + " " + print(*n.args[1]) + ")";
    }

    static bool uses(const Node& n, Var v) {
        if (n.kind == Kind::Variable) return n.var == v;
        for (const auto& a : n.args)
            if (uses(*a, v)) return true;
        return false;
    }

    static bool equal(const Node& a, const Node& b) {
        if (a.kind != b.kind || a.args.size() != b.args.size()) return false;
        if (a.kind == Kind::Number && a.value != b.value) return false;
        if (a.kind == Kind::Variable && a.var != b.var) return false;
        if (a.kind == Kind::Call && a.fn != b.fn) return false;
        for (std::size_t i = 0; i < a.args.size(); ++i)
            if (!equal(*a.args[i], *b.args[i])) return false;
        return true;
    }

    std::shared_ptr<const Node> node_;
};

namespace detail {

/// Recursive-descent parser. Grammar:
///   sum     := product (('+' | '-') product)*
///   product := unary (('*' | '/') unary)*
///   unary   := '-' unary | power
///   power   := atom ('^' unary)?
///   atom    := number | name | name '(' sum ')' | '(' sum ')'
class Parser {
public:
    Parser(std::string_view text, bool allow_state) : s_(text), allow_state_(allow_state) {}

    Expression parse() {
        skip();
        Expression e = sum();
        skip();
        if (pos_ != s_.size()) fail({"operator", "end of input"});
        return e;
    }

private:
    using Kind = Expression::Kind;

    [[noreturn]] void fail(std::vector<std::string> expected) {
        std::string what = "unexpected ";
        what += pos_ < s_.size() ? "'" + std::string(1, s_[pos_]) + "'" : "end of input";
        what += " at offset " + std::to_string(pos_);
        throw ParseError(what, pos_, std::move(expected));
    }
    void skip() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }
    bool eat(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    Expression sum() {
        Expression e = product();
        for (;;) {
            if (eat('+')) e = Expression::binary(Kind::Add, e, product());
            else if (eat('-')) e = Expression::binary(Kind::Sub, e, product());
            else return e;
        }
    }
    Expression product() {
        Expression e = unary();
        for (;;) {
            if (eat('*')) e = Expression::binary(Kind::Mul, e, unary());
            else if (eat('/')) e = Expression::binary(Kind::Div, e, unary());
            else return e;
        }
    }
    Expression unary() {
        if (eat('-')) return Expression::unary(Kind::Negate, unary());
        return power();
    }
    Expression power() {
        Expression base = atom();
        if (eat('^')) return Expression::binary(Kind::Pow, base, unary());
        return base;
    }
    Expression atom() {
        skip();
        static const std::vector<std::string> operand{"number", "variable", "function", "("};
        if (pos_ >= s_.size()) fail(operand);
        char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            Expression e = sum();
            if (!eat(')')) fail({")"});
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c))) return name();
        fail(operand);
    }
    Expression number() {
        std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) ++pos_;
        if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
            std::size_t save = pos_++;
            if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) ++pos_;
            if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            } else {
                pos_ = save;
            }
        }
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, v);
        if (ec != std::errc() || ptr != s_.data() + pos_) {
            pos_ = start;
            fail({"number"});
        }
        return Expression::number(v);
    }
    Expression name() {
        std::size_t start = pos_;
        while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        std::string id(s_.substr(start, pos_ - start));
        static const char* fns[] = {"sin", "cos", "exp", "tanh", "abs"};
        for (const char* f : fns)
            if (id == f) {
                if (!eat('(')) fail({"("});
                Expression arg = sum();
                if (!eat(')')) fail({")"});
                return Expression::unary(Kind::Call, arg, id);
            }
        if (id == "pi") return Expression::number(3.141592653589793);
        if (id == "x") return Expression::variable(Var::X);
        if (id == "y") return Expression::variable(Var::Y);
        if (id == "t") return Expression::variable(Var::T);
        if (allow_state_) {
            if (id == "u") return Expression::variable(Var::U);
            if (id == "px") return Expression::variable(Var::PX);
            if (id == "py") return Expression::variable(Var::PY);
        }
        pos_ = start;
        std::vector<std::string> expected{"x", "y", "t", "sin", "cos", "exp", "tanh", "abs", "pi"};
        if (allow_state_) expected.insert(expected.end(), {"u", "px", "py"});
        fail(expected);
    }

    std::string_view s_;
    bool allow_state_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Parses an expression over x, y, t.
inline Expression parse_expr(std::string_view text) { return detail::Parser(text, false).parse(); }

/// Parses an expression that may also reference the state u and its gradient px, py.
inline Expression parse_state_expr(std::string_view text) { return detail::Parser(text, true).parse(); }

} // namespace hierctl
