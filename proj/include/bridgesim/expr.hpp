#ifndef BRIDGESIM_EXPR_HPP
#define BRIDGESIM_EXPR_HPP

#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "bridgesim/core.hpp"

/**
 * \file
 * \brief Small coefficient-expression language: recursive-descent parser,
 *        evaluator and printer for formulas in t and x1..xd.
 *
 * Precedence, tightest first: ^ (right-associative), unary -, * /, + -.
 * Note that ^ binds tighter than unary minus: -x1^2 is -(x1^2).
 */

namespace bridgesim::expr {

struct parse_error : std::runtime_error {
  parse_error(const std::string& what, std::size_t pos)
      : std::runtime_error(what + " (at position " + std::to_string(pos) + ")"),
        position(pos) {}
  std::size_t position;
};

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  enum class Kind { Number, Var, Neg, Binary, Call };

  Kind kind;
  double number = 0.0;
  int var = 0;          ///< 0 = t, k >= 1 = x_k
  char op = 0;          ///< one of + - * / ^
  std::string fn;
  std::vector<NodePtr> args;  ///< operands (1 for Neg, 2 for Binary, n for Call)
};

inline NodePtr make_number(double v) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Number;
  n->number = v;
  return n;
}
inline NodePtr make_var(int idx) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Var;
  n->var = idx;
  return n;
}
inline NodePtr make_neg(NodePtr a) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Neg;
  n->args = {std::move(a)};
  return n;
}
inline NodePtr make_binary(char op, NodePtr a, NodePtr b) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Binary;
  n->op = op;
  n->args = {std::move(a), std::move(b)};
  return n;
}
inline NodePtr make_call(std::string fn, std::vector<NodePtr> args) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Call;
  n->fn = std::move(fn);
  n->args = std::move(args);
  return n;
}

/// Arity of a builtin, or -1 for unknown names.
inline int builtin_arity(const std::string& fn) {
  if (fn == "sin" || fn == "cos" || fn == "exp" || fn == "log" ||
      fn == "tanh" || fn == "sqrt" || fn == "abs")
    return 1;
  if (fn == "min" || fn == "max") return 2;
  return -1;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  NodePtr parse() {
    NodePtr e = parse_sum();
    skip_ws();
    if (pos_ != src_.size())
      throw parse_error("unexpected trailing input; expected operator or end", pos_);
    return e;
  }

 private:
  std::string_view src_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_])))
      ++pos_;
  }

  char peek() {
    skip_ws();
    return pos_ < src_.size() ? src_[pos_] : '\0';
  }

  bool consume(char c) {
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr parse_sum() {
    NodePtr e = parse_term();
    for (;;) {
      const char c = peek();
      if (c == '+' || c == '-') {
        ++pos_;
        e = make_binary(c, std::move(e), parse_term());
      } else {
        return e;
      }
    }
  }

  NodePtr parse_term() {
    NodePtr e = parse_unary();
    for (;;) {
      const char c = peek();
      if (c == '*' || c == '/') {
        ++pos_;
        e = make_binary(c, std::move(e), parse_unary());
      } else {
        return e;
      }
    }
  }

  // unary binds looser than ^: -x^2 == -(x^2), 2^-3 == 2^(-3)
  NodePtr parse_unary() {
    if (consume('-')) return make_neg(parse_unary());
    return parse_power();
  }

  NodePtr parse_power() {
    NodePtr base = parse_atom();
    if (consume('^')) return make_binary('^', std::move(base), parse_unary());
    return base;
  }

  NodePtr parse_atom() {
    skip_ws();
    if (pos_ >= src_.size())
      throw parse_error("unexpected end of input; expected number, identifier or '('",
                        pos_);
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr e = parse_sum();
      if (!consume(')')) throw parse_error("expected ')'", pos_);
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
    throw parse_error(std::string("unexpected character '") + c +
                          "'; expected number, identifier or '('",
                      pos_);
  }

  NodePtr parse_number() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() &&
           std::isdigit(static_cast<unsigned char>(src_[pos_])))
      ++pos_;
    if (pos_ < src_.size() && src_[pos_] == '.') {
      ++pos_;
      while (pos_ < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[pos_])))
        ++pos_;
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t mark = pos_++;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        while (pos_ < src_.size() &&
               std::isdigit(static_cast<unsigned char>(src_[pos_])))
          ++pos_;
      } else {
        pos_ = mark;  // 'e' belongs to a following identifier, not this number
      }
    }
    const std::string text(src_.substr(start, pos_ - start));
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw parse_error("malformed number", start);
      return make_number(v);
    } catch (const std::exception&) {
      throw parse_error("malformed number '" + text + "'", start);
    }
  }

  NodePtr parse_ident() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
      ++pos_;
    const std::string name(src_.substr(start, pos_ - start));

    if (peek() == '(') {
      ++pos_;
      std::vector<NodePtr> args;
      if (peek() != ')') {
        args.push_back(parse_sum());
        while (consume(',')) args.push_back(parse_sum());
      }
      if (!consume(')')) throw parse_error("expected ')' or ','", pos_);
      const int arity = builtin_arity(name);
      if (arity < 0)
        throw parse_error("unknown function '" + name + "'", start);
      if (static_cast<int>(args.size()) != arity)
        throw parse_error("function '" + name + "' takes " +
                              std::to_string(arity) + " argument(s), got " +
                              std::to_string(args.size()),
                          start);
      return make_call(name, std::move(args));
    }

    if (name == "t") return make_var(0);
    if (name.size() >= 2 && name[0] == 'x') {
      bool digits = true;
      for (std::size_t i = 1; i < name.size(); ++i)
        digits = digits && std::isdigit(static_cast<unsigned char>(name[i]));
      if (digits) {
        const int idx = std::stoi(name.substr(1));
        if (idx >= 1) return make_var(idx);
      }
    }
    throw parse_error("unknown identifier '" + name + "'", start);
  }
};

}  // namespace detail

inline NodePtr parse(std::string_view source) { return detail::Parser(source).parse(); }

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline double eval(const Node& n, double t, Eigen::Ref<const Vec> x) {
  switch (n.kind) {
    case Node::Kind::Number:
      return n.number;
    case Node::Kind::Var:
      if (n.var == 0) return t;
      if (n.var > x.size())
        throw evaluation_error("variable x" + std::to_string(n.var) +
                               " exceeds the state dimension");
      return x[n.var - 1];
    case Node::Kind::Neg:
      return -eval(*n.args[0], t, x);
    case Node::Kind::Binary: {
      const double a = eval(*n.args[0], t, x);
      const double b = eval(*n.args[1], t, x);
      double r = 0.0;
      switch (n.op) {
        case '+': r = a + b; break;
        case '-': r = a - b; break;
        case '*': r = a * b; break;
        case '/': r = a / b; break;
        case '^': r = std::pow(a, b); break;
      }
      if (std::isnan(r))
        throw evaluation_error(std::string("operation '") + n.op +
                               "' produced NaN");
      return r;
    }
    case Node::Kind::Call: {
      const double a = eval(*n.args[0], t, x);
      if (n.fn == "sin") return std::sin(a);
      if (n.fn == "cos") return std::cos(a);
      if (n.fn == "exp") return std::exp(a);
      if (n.fn == "tanh") return std::tanh(a);
      if (n.fn == "abs") return std::abs(a);
      if (n.fn == "log") {
        if (!(a > 0.0)) throw evaluation_error("log of non-positive value");
        return std::log(a);
      }
      if (n.fn == "sqrt") {
        if (a < 0.0) throw evaluation_error("sqrt of negative value");
        return std::sqrt(a);
      }
      const double b = eval(*n.args[1], t, x);
      if (n.fn == "min") return std::min(a, b);
      return std::max(a, b);  // "max"
    }
  }
  throw evaluation_error("corrupt expression node");
}

inline double eval(const NodePtr& n, double t, Eigen::Ref<const Vec> x) {
  return eval(*n, t, x);
}

/// Highest x index referenced (0 when the expression uses only t).
inline int max_var_index(const Node& n) {
  int m = n.kind == Node::Kind::Var ? n.var : 0;
  for (const auto& a : n.args) m = std::max(m, max_var_index(*a));
  return m;
}

/// True if the expression depends on the state at all.
inline bool uses_state(const Node& n) { return max_var_index(n) > 0; }

// ---------------------------------------------------------------------------
// Printing and structural equality
// ---------------------------------------------------------------------------

namespace detail {

enum Prec { kAdd = 1, kMul = 2, kUnary = 3, kPow = 4, kAtom = 5 };

inline int precedence(const Node& n) {
  switch (n.kind) {
    case Node::Kind::Binary:
      if (n.op == '+' || n.op == '-') return kAdd;
      if (n.op == '*' || n.op == '/') return kMul;
      return kPow;
    case Node::Kind::Neg:
      return kUnary;
    default:
      return kAtom;
  }
}

inline void print_to(const Node& n, std::string& out, int ctx) {
  const int prec = precedence(n);
  const bool parens = prec < ctx;
  if (parens) out += '(';
  switch (n.kind) {
    case Node::Kind::Number: {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", n.number);
      out += buf;
      break;
    }
    case Node::Kind::Var:
      out += n.var == 0 ? "t" : "x" + std::to_string(n.var);
      break;
    case Node::Kind::Neg:
      out += '-';
      print_to(*n.args[0], out, kUnary);
      break;
    case Node::Kind::Binary:
      if (n.op == '^') {
        print_to(*n.args[0], out, kAtom);  // base is an atom in the grammar
        out += '^';
        print_to(*n.args[1], out, kUnary);  // exponent is a unary
      } else {
        print_to(*n.args[0], out, prec);
        out += ' ';
        out += n.op;
        out += ' ';
        print_to(*n.args[1], out, prec + 1);  // left-associative
      }
      break;
    case Node::Kind::Call:
      out += n.fn;
      out += '(';
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        if (i) out += ", ";
        print_to(*n.args[i], out, kAdd);
      }
      out += ')';
      break;
  }
  if (parens) out += ')';
}

}  // namespace detail

/// Prints so that parse(print(e)) yields a structurally identical tree.
inline std::string print(const Node& n) {
  std::string out;
  detail::print_to(n, out, detail::kAdd);
  return out;
}
inline std::string print(const NodePtr& n) { return print(*n); }

inline bool equal(const Node& a, const Node& b) {
  if (a.kind != b.kind || a.args.size() != b.args.size()) return false;
  switch (a.kind) {
    case Node::Kind::Number:
      if (a.number != b.number) return false;
      break;
    case Node::Kind::Var:
      if (a.var != b.var) return false;
      break;
    case Node::Kind::Binary:
      if (a.op != b.op) return false;
      break;
    case Node::Kind::Call:
      if (a.fn != b.fn) return false;
      break;
    default:
      break;
  }
  for (std::size_t i = 0; i < a.args.size(); ++i)
    if (!equal(*a.args[i], *b.args[i])) return false;
  return true;
}
inline bool equal(const NodePtr& a, const NodePtr& b) { return equal(*a, *b); }

}  // namespace bridgesim::expr

#endif  // BRIDGESIM_EXPR_HPP
