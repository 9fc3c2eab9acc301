#ifndef AUTODA_DSL_HPP
#define AUTODA_DSL_HPP

#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "autoda/core.hpp"
#include "autoda/rng.hpp"

// A small sandboxed vector-arithmetic language for candidate `generate`
// programs. One program per UTF-8 text file (extension .gen). Grammar:
//
//   program : statement lines, then a final `return <expr>` line
//   stmt    : NAME = expr          (single assignment; no forward refs)
//   expr    : + - * / over scalars and vectors (scalar broadcasts; vector *
//             vector is elementwise; division needs a scalar denominator),
//             dot(a, b), norm2(a), max(a, b), min(a, b), randn(),
//             rand(lo, hi), choice(e1; e2; ...)
//   inputs  : x0, x1, noise (vectors), s (scalar)
//   '#' starts a comment running to end of line
//
// Programs are pure: no loops, no I/O, no oracle access. Random draws are
// consumed from the context stream strictly left-to-right, top-to-bottom;
// choice() consumes one draw for the branch pick and then evaluates only the
// chosen branch.
namespace autoda::dsl {

enum class Kind { Scalar, Vector };

enum class Op {
  VectorVar,
  ScalarVar,
  Const,
  Add,
  Sub,
  Mul,
  Div,
  Dot,
  Norm2,
  Max,
  Min,
  RandNormal,
  RandUniform,
  Choice,
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

// Immutable after construction; programs are shared freely across threads.
struct Expr {
  Op op{};
  Kind kind{};
  std::string name;           // VectorVar / ScalarVar
  double value = 0.0;         // Const
  double lo = 0.0, hi = 0.0;  // RandUniform bounds
  std::vector<ExprPtr> args;
};

inline bool equal(const ExprPtr& a, const ExprPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  if (a->op != b->op || a->kind != b->kind) return false;
  if (a->name != b->name) return false;
  if (a->value != b->value || a->lo != b->lo || a->hi != b->hi) return false;
  if (a->args.size() != b->args.size()) return false;
  for (std::size_t i = 0; i < a->args.size(); ++i)
    if (!equal(a->args[i], b->args[i])) return false;
  return true;
}

struct GenProgram {
  std::vector<std::pair<std::string, ExprPtr>> statements;
  ExprPtr result;
  std::string source_text;
};

// Structural equality; source_text is presentation only.
inline bool equal(const GenProgram& a, const GenProgram& b) {
  if (a.statements.size() != b.statements.size()) return false;
  for (std::size_t i = 0; i < a.statements.size(); ++i) {
    if (a.statements[i].first != b.statements[i].first) return false;
    if (!equal(a.statements[i].second, b.statements[i].second)) return false;
  }
  return equal(a.result, b.result);
}

inline std::size_t node_count(const ExprPtr& e) {
  std::size_t n = 1;
  for (const auto& a : e->args) n += node_count(a);
  return n;
}

inline std::size_t node_count(const GenProgram& p) {
  std::size_t n = node_count(p.result);
  for (const auto& [name, expr] : p.statements) n += node_count(expr);
  return n;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace detail {

struct Token {
  enum Type { Ident, Number, Punct, Newline, End } type = End;
  std::string text;
  double number = 0.0;
  int line = 0, col = 0;
};

inline std::vector<Token> lex(const std::string& src) {
  std::vector<Token> out;
  int line = 1, col = 1;
  std::size_t i = 0;
  auto push = [&](Token::Type t, std::string text, double num, int l, int c) {
    out.push_back(Token{t, std::move(text), num, l, c});
  };
  while (i < src.size()) {
    char ch = src[i];
    if (ch == '#') {  // comment to end of line
      while (i < src.size() && src[i] != '\n') ++i, ++col;
      continue;
    }
    if (ch == '\n') {
      push(Token::Newline, "\n", 0, line, col);
      ++i;
      ++line;
      col = 1;
      continue;
    }
    if (ch == ' ' || ch == '\t' || ch == '\r') {
      ++i;
      ++col;
      continue;
    }
    int tl = line, tc = col;
    if (std::isdigit(static_cast<unsigned char>(ch)) ||
        (ch == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      double v = 0.0;
      const char* begin = src.data() + i;
      const char* end = src.data() + src.size();
      auto [ptr, ec] = std::from_chars(begin, end, v);
      if (ec != std::errc{}) throw SyntaxError(tl, tc, "malformed number");
      std::size_t len = static_cast<std::size_t>(ptr - begin);
      push(Token::Number, src.substr(i, len), v, tl, tc);
      i += len;
      col += static_cast<int>(len);
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
      std::size_t j = i;
      while (j < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_'))
        ++j;
      push(Token::Ident, src.substr(i, j - i), 0, tl, tc);
      col += static_cast<int>(j - i);
      i = j;
      continue;
    }
    if (std::string_view("+-*/()=,;").find(ch) != std::string_view::npos) {
      push(Token::Punct, std::string(1, ch), 0, tl, tc);
      ++i;
      ++col;
      continue;
    }
    throw SyntaxError(tl, tc, std::string("unexpected character '") + ch + "'");
  }
  push(Token::End, "", 0, line, col);
  return out;
}

class Parser {
 public:
  explicit Parser(const std::string& source) : tokens_(lex(source)) {}

  GenProgram parse_program(const std::string& source) {
    GenProgram prog;
    prog.source_text = source;
    bindings_ = {{"x0", Kind::Vector}, {"x1", Kind::Vector}, {"noise", Kind::Vector}, {"s", Kind::Scalar}};
    bool saw_return = false;
    while (peek().type != Token::End) {
      if (peek().type == Token::Newline) {
        advance();
        continue;
      }
      const Token& first = peek();
      if (saw_return) throw SyntaxError(first.line, first.col, "statement after return");
      if (first.type == Token::Ident && first.text == "return") {
        advance();
        prog.result = parse_expr();
        expect_end_of_line("after return expression");
        saw_return = true;
        continue;
      }
      if (first.type != Token::Ident)
        throw SyntaxError(first.line, first.col, "expected assignment or return");
      std::string name = first.text;
      if (is_reserved(name))
        throw SyntaxError(first.line, first.col, "'" + name + "' is reserved and cannot be assigned");
      advance();
      if (!match_punct("="))
        throw SyntaxError(peek().line, peek().col, "expected '=' after identifier '" + name + "'");
      if (bindings_.count(name))
        throw SyntaxError(first.line, first.col, "redefinition of '" + name + "'");
      ExprPtr value = parse_expr();
      expect_end_of_line("after assignment");
      bindings_.emplace(name, value->kind);
      prog.statements.emplace_back(std::move(name), std::move(value));
    }
    if (!saw_return) throw SyntaxError(peek().line, peek().col, "missing return statement");
    if (prog.result->kind != Kind::Vector)
      throw TypeError(1, 1, "return expression must be a vector");
    return prog;
  }

 private:
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  std::map<std::string, Kind> bindings_;

  static bool is_reserved(const std::string& name) {
    static const char* kReserved[] = {"return", "dot", "norm2", "max", "min", "randn", "rand", "choice"};
    for (const char* r : kReserved)
      if (name == r) return true;
    return false;
  }

  const Token& peek() const { return tokens_[pos_]; }
  const Token& advance() { return tokens_[pos_++]; }

  bool match_punct(const char* p) {
    if (peek().type == Token::Punct && peek().text == p) {
      advance();
      return true;
    }
    return false;
  }

  void expect_punct(const char* p, const char* what) {
    if (!match_punct(p))
      throw SyntaxError(peek().line, peek().col, std::string("expected '") + p + "' " + what);
  }

  void expect_end_of_line(const char* what) {
    if (peek().type == Token::Newline) {
      advance();
      return;
    }
    if (peek().type == Token::End) return;
    throw SyntaxError(peek().line, peek().col, std::string("unexpected token '") + peek().text + "' " + what);
  }

  static ExprPtr make(Expr e) { return std::make_shared<Expr>(std::move(e)); }

  // expr := term (('+'|'-') term)*
  ExprPtr parse_expr() {
    ExprPtr lhs = parse_term();
    while (peek().type == Token::Punct && (peek().text == "+" || peek().text == "-")) {
      Token op = advance();
      ExprPtr rhs = parse_term();
      lhs = combine(op.text == "+" ? Op::Add : Op::Sub, lhs, rhs, op);
    }
    return lhs;
  }

  // term := factor (('*'|'/') factor)*
  ExprPtr parse_term() {
    ExprPtr lhs = parse_factor();
    while (peek().type == Token::Punct && (peek().text == "*" || peek().text == "/")) {
      Token op = advance();
      ExprPtr rhs = parse_factor();
      if (op.text == "/") {
        if (rhs->kind != Kind::Scalar)
          throw TypeError(op.line, op.col, "division requires a scalar denominator");
        lhs = make({Op::Div, lhs->kind, "", 0, 0, 0, {lhs, rhs}});
      } else {
        lhs = combine(Op::Mul, lhs, rhs, op);
      }
    }
    return lhs;
  }

  ExprPtr combine(Op op, ExprPtr lhs, ExprPtr rhs, const Token& at) {
    Kind kind = (lhs->kind == Kind::Vector || rhs->kind == Kind::Vector) ? Kind::Vector : Kind::Scalar;
    (void)at;
    return make({op, kind, "", 0, 0, 0, {std::move(lhs), std::move(rhs)}});
  }

  // factor := '-' factor | primary. A unary minus on a literal folds into the
  // constant; otherwise it desugars to (0 - operand).
  ExprPtr parse_factor() {
    if (peek().type == Token::Punct && peek().text == "-") {
      Token minus = advance();
      ExprPtr operand = parse_factor();
      if (operand->op == Op::Const) return make({Op::Const, Kind::Scalar, "", -operand->value, 0, 0, {}});
      ExprPtr zero = make({Op::Const, Kind::Scalar, "", 0.0, 0, 0, {}});
      return combine(Op::Sub, zero, operand, minus);
    }
    return parse_primary();
  }

  ExprPtr parse_primary() {
    const Token& tok = peek();
    if (tok.type == Token::Number) {
      advance();
      return make({Op::Const, Kind::Scalar, "", tok.number, 0, 0, {}});
    }
    if (tok.type == Token::Punct && tok.text == "(") {
      advance();
      ExprPtr inner = parse_expr();
      expect_punct(")", "to close parenthesis");
      return inner;
    }
    if (tok.type == Token::Ident) {
      if (tok.text == "dot" || tok.text == "norm2" || tok.text == "max" || tok.text == "min" ||
          tok.text == "randn" || tok.text == "rand" || tok.text == "choice")
        return parse_call();
      advance();
      auto it = bindings_.find(tok.text);
      if (it == bindings_.end()) throw UnboundIdentifier(tok.line, tok.col, tok.text);
      Op op = it->second == Kind::Vector ? Op::VectorVar : Op::ScalarVar;
      return make({op, it->second, tok.text, 0, 0, 0, {}});
    }
    throw SyntaxError(tok.line, tok.col, "expected expression");
  }

  ExprPtr parse_call() {
    Token name = advance();
    expect_punct("(", ("after '" + name.text + "'").c_str());
    if (name.text == "randn") {
      expect_punct(")", "to close randn()");
      return make({Op::RandNormal, Kind::Scalar, "", 0, 0, 0, {}});
    }
    if (name.text == "rand") {
      double lo = parse_literal("rand lower bound");
      expect_punct(",", "between rand bounds");
      double hi = parse_literal("rand upper bound");
      expect_punct(")", "to close rand()");
      return make({Op::RandUniform, Kind::Scalar, "", 0, lo, hi, {}});
    }
    if (name.text == "choice") {
      std::vector<ExprPtr> branches;
      branches.push_back(parse_expr());
      while (match_punct(";")) branches.push_back(parse_expr());
      expect_punct(")", "to close choice()");
      Kind kind = branches.front()->kind;
      for (const auto& b : branches)
        if (b->kind != kind)
          throw TypeError(name.line, name.col, "choice branches must all have the same kind");
      return make({Op::Choice, kind, "", 0, 0, 0, std::move(branches)});
    }
    ExprPtr a = parse_expr();
    if (name.text == "norm2") {
      expect_punct(")", "to close norm2()");
      if (a->kind != Kind::Vector) throw TypeError(name.line, name.col, "norm2 expects a vector");
      return make({Op::Norm2, Kind::Scalar, "", 0, 0, 0, {std::move(a)}});
    }
    expect_punct(",", ("between arguments of " + name.text).c_str());
    ExprPtr b = parse_expr();
    expect_punct(")", ("to close " + name.text + "()").c_str());
    if (name.text == "dot") {
      if (a->kind != Kind::Vector || b->kind != Kind::Vector)
        throw TypeError(name.line, name.col, "dot expects two vectors");
      return make({Op::Dot, Kind::Scalar, "", 0, 0, 0, {std::move(a), std::move(b)}});
    }
    if (a->kind != Kind::Scalar || b->kind != Kind::Scalar)
      throw TypeError(name.line, name.col, name.text + " expects two scalars");
    return make({name.text == "max" ? Op::Max : Op::Min, Kind::Scalar, "", 0, 0, 0,
                 {std::move(a), std::move(b)}});
  }

  // rand() bounds must be numeric literals (optionally negated).
  double parse_literal(const char* what) {
    bool neg = false;
    if (peek().type == Token::Punct && peek().text == "-") {
      advance();
      neg = true;
    }
    if (peek().type != Token::Number)
      throw TypeError(peek().line, peek().col, std::string(what) + " must be a numeric literal");
    double v = advance().number;
    return neg ? -v : v;
  }
};

inline void format_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

inline void print_expr(std::string& out, const ExprPtr& e) {
  switch (e->op) {
    case Op::VectorVar:
    case Op::ScalarVar:
      out += e->name;
      return;
    case Op::Const:
      format_double(out, e->value);
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const char* sym = e->op == Op::Add ? " + " : e->op == Op::Sub ? " - " : e->op == Op::Mul ? " * " : " / ";
      out += '(';
      print_expr(out, e->args[0]);
      out += sym;
      print_expr(out, e->args[1]);
      out += ')';
      return;
    }
    case Op::Dot:
    case Op::Max:
    case Op::Min: {
      out += e->op == Op::Dot ? "dot(" : e->op == Op::Max ? "max(" : "min(";
      print_expr(out, e->args[0]);
      out += ", ";
      print_expr(out, e->args[1]);
      out += ')';
      return;
    }
    case Op::Norm2:
      out += "norm2(";
      print_expr(out, e->args[0]);
      out += ')';
      return;
    case Op::RandNormal:
      out += "randn()";
      return;
    case Op::RandUniform:
      out += "rand(";
      format_double(out, e->lo);
      out += ", ";
      format_double(out, e->hi);
      out += ')';
      return;
    case Op::Choice: {
      out += "choice(";
      for (std::size_t i = 0; i < e->args.size(); ++i) {
        if (i) out += "; ";
        print_expr(out, e->args[i]);
      }
      out += ')';
      return;
    }
  }
}

}  // namespace detail

inline GenProgram parse(const std::string& source) {
  detail::Parser parser(source);
  return parser.parse_program(source);
}

// Canonical fully parenthesized form. parse(pretty_print(p)) is structurally
// identical to p.
inline std::string pretty_print(const GenProgram& prog) {
  std::string out;
  for (const auto& [name, expr] : prog.statements) {
    out += name;
    out += " = ";
    detail::print_expr(out, expr);
    out += '\n';
  }
  out += "return ";
  detail::print_expr(out, prog.result);
  out += '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalContext {
  const InputVector* x0 = nullptr;
  const InputVector* x1 = nullptr;
  const InputVector* noise = nullptr;
  double s = 0.0;
  Rng* rng = nullptr;
  std::size_t eval_steps = 0;  // AST nodes visited; bounded by node_count
};

namespace detail {

using Vec = std::shared_ptr<const std::vector<double>>;
using Value = std::variant<double, Vec>;

inline double nan_aware_max(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<double>::quiet_NaN();
  return a > b ? a : b;
}
inline double nan_aware_min(double a, double b) {
  if (std::isnan(a) || std::isnan(b)) return std::numeric_limits<double>::quiet_NaN();
  return a < b ? a : b;
}

template <typename F>
Value broadcast_binop(const Value& a, const Value& b, F&& f) {
  if (std::holds_alternative<double>(a) && std::holds_alternative<double>(b))
    return f(std::get<double>(a), std::get<double>(b));
  auto result = std::make_shared<std::vector<double>>();
  if (std::holds_alternative<Vec>(a) && std::holds_alternative<Vec>(b)) {
    const auto& va = *std::get<Vec>(a);
    const auto& vb = *std::get<Vec>(b);
    if (va.size() != vb.size()) throw ShapeMismatch("vector operands of different lengths");
    result->resize(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) (*result)[i] = f(va[i], vb[i]);
  } else if (std::holds_alternative<Vec>(a)) {
    const auto& va = *std::get<Vec>(a);
    double sb = std::get<double>(b);
    result->resize(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) (*result)[i] = f(va[i], sb);
  } else {
    double sa = std::get<double>(a);
    const auto& vb = *std::get<Vec>(b);
    result->resize(vb.size());
    for (std::size_t i = 0; i < vb.size(); ++i) (*result)[i] = f(sa, vb[i]);
  }
  return result;
}

class Evaluator {
 public:
  Evaluator(const GenProgram& prog, EvalContext& ctx) : prog_(prog), ctx_(ctx) {
    if (!ctx.x0 || !ctx.x1 || !ctx.noise || !ctx.rng)
      throw Error("evaluate: incomplete evaluation context");
    if (ctx.x1->shape != ctx.x0->shape || ctx.noise->shape != ctx.x0->shape)
      throw ShapeMismatch("evaluate: context vectors must share one shape");
    env_.emplace("x0", Vec(&ctx.x0->data, [](auto*) {}));
    env_.emplace("x1", Vec(&ctx.x1->data, [](auto*) {}));
    env_.emplace("noise", Vec(&ctx.noise->data, [](auto*) {}));
  }

  InputVector run() {
    for (const auto& [name, expr] : prog_.statements) {
      if (scalar_env_.count(name) || env_.count(name)) throw Error("duplicate binding '" + name + "'");
      bind(name, eval(expr));
    }
    Value result = eval(prog_.result);
    const auto& vec = *std::get<Vec>(result);
    for (double v : vec)
      if (!std::isfinite(v)) throw NumericError("generate program produced a non-finite component");
    return InputVector(std::vector<double>(vec), ctx_.x0->shape);
  }

 private:
  const GenProgram& prog_;
  EvalContext& ctx_;
  std::map<std::string, Vec> env_;            // vector bindings
  std::map<std::string, double> scalar_env_;  // scalar bindings

  void bind(const std::string& name, Value v) {
    if (std::holds_alternative<double>(v))
      scalar_env_.emplace(name, std::get<double>(v));
    else
      env_.emplace(name, std::get<Vec>(v));
  }

  Value eval(const ExprPtr& e) {
    ++ctx_.eval_steps;
    switch (e->op) {
      case Op::VectorVar: {
        auto it = env_.find(e->name);
        if (it == env_.end()) throw Error("unbound vector '" + e->name + "'");
        return it->second;
      }
      case Op::ScalarVar: {
        if (e->name == "s") return ctx_.s;
        auto it = scalar_env_.find(e->name);
        if (it == scalar_env_.end()) throw Error("unbound scalar '" + e->name + "'");
        return it->second;
      }
      case Op::Const:
        return e->value;
      case Op::Add:
        return binop(e, [](double a, double b) { return a + b; });
      case Op::Sub:
        return binop(e, [](double a, double b) { return a - b; });
      case Op::Mul:
        return binop(e, [](double a, double b) { return a * b; });
      case Op::Div:
        return binop(e, [](double a, double b) { return a / b; });
      case Op::Dot: {
        Value a = eval(e->args[0]);
        Value b = eval(e->args[1]);
        const auto& va = *std::get<Vec>(a);
        const auto& vb = *std::get<Vec>(b);
        if (va.size() != vb.size()) throw ShapeMismatch("dot operands of different lengths");
        double sum = 0;
        for (std::size_t i = 0; i < va.size(); ++i) sum += va[i] * vb[i];
        return sum;
      }
      case Op::Norm2: {
        Value a = eval(e->args[0]);
        const auto& va = *std::get<Vec>(a);
        double sum = 0;
        for (double v : va) sum += v * v;
        return std::sqrt(sum);
      }
      case Op::Max: {
        double a = std::get<double>(eval(e->args[0]));
        double b = std::get<double>(eval(e->args[1]));
        return nan_aware_max(a, b);
      }
      case Op::Min: {
        double a = std::get<double>(eval(e->args[0]));
        double b = std::get<double>(eval(e->args[1]));
        return nan_aware_min(a, b);
      }
      case Op::RandNormal:
        return ctx_.rng->normal();
      case Op::RandUniform:
        return ctx_.rng->uniform(e->lo, e->hi);
      case Op::Choice: {
        std::size_t pick = ctx_.rng->uniform_index(e->args.size());
        return eval(e->args[pick]);
      }
    }
    throw Error("unreachable expression op");
  }

  template <typename F>
  Value binop(const ExprPtr& e, F&& f) {
    Value a = eval(e->args[0]);
    Value b = eval(e->args[1]);
    return broadcast_binop(a, b, std::forward<F>(f));
  }
};

}  // namespace detail

// Evaluates the program against the context. Returns the raw (unclamped)
// result vector; throws NumericError when any component is NaN/Inf.
inline InputVector evaluate(const GenProgram& prog, EvalContext& ctx) {
  detail::Evaluator ev(prog, ctx);
  return ev.run();
}

// ---------------------------------------------------------------------------
// Built-in programs
// ---------------------------------------------------------------------------

inline constexpr const char* kBuiltinFinalSource =
    "d = x0 - x1\n"
    "norm = max(norm2(d), norm2(noise))\n"
    "return x1 + s * (d + d / norm) + s * (noise + s * (noise / norm))\n";

inline constexpr const char* kBuiltinInitialSource =
    "n0 = randn()\n"
    "x = s * x0 + (1 - s) * x1 + n0 * noise\n"
    "n1 = rand(0.5, 1.5)\n"
    "return choice(x + n1 * noise; x - n1 * noise; x * (n1 * noise))\n";

// The evolved difference-plus-normalized-noise walk program.
inline const GenProgram& built_in_final() {
  static const GenProgram prog = parse(kBuiltinFinalSource);
  return prog;
}

// The blend-then-random-operation sampler used to seed populations.
inline const GenProgram& built_in_initial() {
  static const GenProgram prog = parse(kBuiltinInitialSource);
  return prog;
}

inline GenProgram load_program_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open program file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace autoda::dsl

#endif  // AUTODA_DSL_HPP
