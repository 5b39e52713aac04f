#include "colflow/expr.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <span>

namespace colflow::expr {

namespace {

std::string at_text(SourceSpan s) { return std::to_string(s.line) + ":" + std::to_string(s.col); }

// ---------------------------------------------------------------------------
// Lexer

enum class Tok {
  End,
  Int,
  Float,
  Ident,
  True,
  False,
  LParen,
  RParen,
  LBracket,
  RBracket,
  Comma,
  Question,
  Colon,
  Plus,
  Minus,
  Star,
  Slash,
  Percent,
  Lt,
  Le,
  Gt,
  Ge,
  EqEq,
  NotEq,
  AndAnd,
  OrOr,
  Bang,
};

struct Token {
  Tok kind = Tok::End;
  std::string_view text;
  SourceSpan span;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    skip_space();
    Token t;
    t.span = {line_, col_};
    if (pos_ >= src_.size()) {
      t.text = "end of input";
      return t;
    }
    std::size_t start = pos_;
    char c = src_[pos_];
    auto is_ident = [](char ch, bool head) {
      return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || ch == '_' || (!head && ch >= '0' && ch <= '9');
    };
    if (is_ident(c, true)) {
      while (pos_ < src_.size() && is_ident(src_[pos_], false)) advance();
      t.text = src_.substr(start, pos_ - start);
      t.kind = t.text == "true" ? Tok::True : t.text == "false" ? Tok::False : Tok::Ident;
      return t;
    }
    if (c >= '0' && c <= '9') {
      bool is_float = false;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
      if (pos_ < src_.size() && src_[pos_] == '.') {
        is_float = true;
        advance();
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
      }
      if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
        std::size_t save = pos_;
        auto save_col = col_;
        advance();
        if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) advance();
        if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
          is_float = true;
          while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        } else {
          pos_ = save;
          col_ = save_col;
        }
      }
      t.text = src_.substr(start, pos_ - start);
      t.kind = is_float ? Tok::Float : Tok::Int;
      return t;
    }
    auto two = [&](char second, Tok yes, Tok no) {
      advance();
      if (pos_ < src_.size() && src_[pos_] == second) {
        advance();
        return yes;
      }
      return no;
    };
    switch (c) {
      case '(': advance(); t.kind = Tok::LParen; break;
      case ')': advance(); t.kind = Tok::RParen; break;
      case '[': advance(); t.kind = Tok::LBracket; break;
      case ']': advance(); t.kind = Tok::RBracket; break;
      case ',': advance(); t.kind = Tok::Comma; break;
      case '?': advance(); t.kind = Tok::Question; break;
      case ':': advance(); t.kind = Tok::Colon; break;
      case '+': advance(); t.kind = Tok::Plus; break;
      case '-': advance(); t.kind = Tok::Minus; break;
      case '*': advance(); t.kind = Tok::Star; break;
      case '/': advance(); t.kind = Tok::Slash; break;
      case '%': advance(); t.kind = Tok::Percent; break;
      case '<': t.kind = two('=', Tok::Le, Tok::Lt); break;
      case '>': t.kind = two('=', Tok::Ge, Tok::Gt); break;
      case '!': t.kind = two('=', Tok::NotEq, Tok::Bang); break;
      case '=':
        if (two('=', Tok::EqEq, Tok::End) == Tok::End) throw ParseError(t.span, "unexpected token '='");
        t.kind = Tok::EqEq;
        break;
      case '&':
        if (two('&', Tok::AndAnd, Tok::End) == Tok::End) throw ParseError(t.span, "unexpected token '&'");
        t.kind = Tok::AndAnd;
        break;
      case '|':
        if (two('|', Tok::OrOr, Tok::End) == Tok::End) throw ParseError(t.span, "unexpected token '|'");
        t.kind = Tok::OrOr;
        break;
      default:
        throw ParseError(t.span, "unexpected character '" + std::string(1, c) + "'");
    }
    t.text = src_.substr(start, pos_ - start);
    return t;
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }
  void skip_space() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) advance();
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::uint32_t line_ = 1;
  std::uint32_t col_ = 1;
};

// ---------------------------------------------------------------------------
// Parser

class Parser {
 public:
  explicit Parser(std::string_view src) : lex_(src) { tok_ = lex_.next(); }

  Expr parse_all() {
    Expr e = parse_expr();
    if (tok_.kind != Tok::End) fail("unexpected token '" + std::string(tok_.text) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) { throw ParseError(tok_.span, msg); }

  Token take() {
    Token t = tok_;
    tok_ = lex_.next();
    return t;
  }

  void expect(Tok kind, std::string_view what) {
    if (tok_.kind != kind) {
      fail("expected " + std::string(what) + " but found '" + std::string(tok_.text) + "'");
    }
    take();
  }

  static Expr make_binary(BinaryOp op, SourceSpan span, Expr lhs, Expr rhs) {
    Expr e;
    e.kind = Expr::Kind::Binary;
    e.binary = op;
    e.span = span;
    e.args.push_back(std::move(lhs));
    e.args.push_back(std::move(rhs));
    return e;
  }

  Expr parse_expr() {
    Expr cond = parse_or();
    if (tok_.kind != Tok::Question) return cond;
    auto span = take().span;
    Expr then = parse_expr();
    expect(Tok::Colon, "':'");
    Expr otherwise = parse_expr();
    Expr e;
    e.kind = Expr::Kind::Ternary;
    e.span = span;
    e.args.push_back(std::move(cond));
    e.args.push_back(std::move(then));
    e.args.push_back(std::move(otherwise));
    return e;
  }

  Expr parse_or() {
    Expr lhs = parse_and();
    while (tok_.kind == Tok::OrOr) {
      auto span = take().span;
      lhs = make_binary(BinaryOp::Or, span, std::move(lhs), parse_and());
    }
    return lhs;
  }

  Expr parse_and() {
    Expr lhs = parse_cmp();
    while (tok_.kind == Tok::AndAnd) {
      auto span = take().span;
      lhs = make_binary(BinaryOp::And, span, std::move(lhs), parse_cmp());
    }
    return lhs;
  }

  Expr parse_cmp() {
    Expr lhs = parse_add();
    std::optional<BinaryOp> op;
    switch (tok_.kind) {
      case Tok::Lt: op = BinaryOp::Lt; break;
      case Tok::Le: op = BinaryOp::Le; break;
      case Tok::Gt: op = BinaryOp::Gt; break;
      case Tok::Ge: op = BinaryOp::Ge; break;
      case Tok::EqEq: op = BinaryOp::Eq; break;
      case Tok::NotEq: op = BinaryOp::Ne; break;
      default: return lhs;
    }
    auto span = take().span;
    return make_binary(*op, span, std::move(lhs), parse_add());
  }

  Expr parse_add() {
    Expr lhs = parse_mul();
    while (tok_.kind == Tok::Plus || tok_.kind == Tok::Minus) {
      auto op = tok_.kind == Tok::Plus ? BinaryOp::Add : BinaryOp::Sub;
      auto span = take().span;
      lhs = make_binary(op, span, std::move(lhs), parse_mul());
    }
    return lhs;
  }

  Expr parse_mul() {
    Expr lhs = parse_unary();
    while (tok_.kind == Tok::Star || tok_.kind == Tok::Slash || tok_.kind == Tok::Percent) {
      auto op = tok_.kind == Tok::Star ? BinaryOp::Mul : tok_.kind == Tok::Slash ? BinaryOp::Div : BinaryOp::Mod;
      auto span = take().span;
      lhs = make_binary(op, span, std::move(lhs), parse_unary());
    }
    return lhs;
  }

  Expr parse_unary() {
    if (tok_.kind == Tok::Bang || tok_.kind == Tok::Minus) {
      auto op = tok_.kind == Tok::Bang ? UnaryOp::Not : UnaryOp::Neg;
      auto span = take().span;
      Expr e;
      e.kind = Expr::Kind::Unary;
      e.unary = op;
      e.span = span;
      e.args.push_back(parse_postfix());
      return e;
    }
    return parse_postfix();
  }

  Expr parse_postfix() {
    Expr base = parse_atom();
    while (tok_.kind == Tok::LBracket) {
      auto span = take().span;
      Expr idx = parse_expr();
      expect(Tok::RBracket, "']'");
      Expr e;
      e.kind = Expr::Kind::Index;
      e.span = span;
      e.args.push_back(std::move(base));
      e.args.push_back(std::move(idx));
      base = std::move(e);
    }
    return base;
  }

  Expr parse_atom() {
    Expr e;
    e.span = tok_.span;
    switch (tok_.kind) {
      case Tok::Int: {
        std::int64_t v = 0;
        auto text = tok_.text;
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc() || p != text.data() + text.size()) fail("integer literal out of range");
        e.literal = v;
        take();
        return e;
      }
      case Tok::Float: {
        std::string text(tok_.text);
        e.literal = std::strtod(text.c_str(), nullptr);
        take();
        return e;
      }
      case Tok::True:
      case Tok::False:
        e.literal = tok_.kind == Tok::True;
        take();
        return e;
      case Tok::LParen: {
        take();
        Expr inner = parse_expr();
        expect(Tok::RParen, "')'");
        return inner;
      }
      case Tok::Ident: {
        auto name = take();
        if (tok_.kind != Tok::LParen) {
          e.kind = Expr::Kind::Column;
          e.name = std::string(name.text);
          return e;
        }
        auto fn = builtin_from_name(name.text);
        if (!fn) throw ParseError(name.span, "unknown function '" + std::string(name.text) + "'");
        take();
        e.kind = Expr::Kind::Call;
        e.fn = *fn;
        if (tok_.kind != Tok::RParen) {
          e.args.push_back(parse_expr());
          while (tok_.kind == Tok::Comma) {
            take();
            e.args.push_back(parse_expr());
          }
        }
        expect(Tok::RParen, "')'");
        return e;
      }
      default:
        fail("unexpected token '" + std::string(tok_.text) + "'");
    }
  }

  Lexer lex_;
  Token tok_;
};

// ---------------------------------------------------------------------------
// Typechecking

bool is_boolish(ValueType t) { return t == ValueType::BOOL || t == ValueType::VEC_BOOL; }

ValueType numeric_result(ValueType a, ValueType b) {
  bool vec = is_vector(a) || is_vector(b);
  bool integral = element_type(a) == ValueType::I64 && element_type(b) == ValueType::I64;
  ValueType elem = integral ? ValueType::I64 : ValueType::F64;
  return vec ? vector_of(elem) : elem;
}

ValueType check(Expr& e, const Scope& scope) {
  auto type_fail = [&](const std::string& msg) -> ValueType { throw TypeError(e.span, msg); };
  switch (e.kind) {
    case Expr::Kind::Literal:
      return e.type = type_of(e.literal);
    case Expr::Kind::Column: {
      auto b = scope.find(e.name);
      if (!b) return type_fail("unknown column '" + e.name + "'");
      e.slot = b->slot;
      return e.type = b->type;
    }
    case Expr::Kind::Unary: {
      auto t = check(e.args[0], scope);
      if (e.unary == UnaryOp::Neg) {
        if (!is_numeric(t)) return type_fail("unary '-' needs a numeric operand, got " + std::string(type_name(t)));
      } else if (!is_boolish(t)) {
        return type_fail("'!' needs a boolean operand, got " + std::string(type_name(t)));
      }
      return e.type = t;
    }
    case Expr::Kind::Binary: {
      auto a = check(e.args[0], scope);
      auto b = check(e.args[1], scope);
      auto mismatch = [&]() -> ValueType {
        return type_fail("operator '" + std::string(op_text(e.binary)) + "' cannot combine " +
                         std::string(type_name(a)) + " and " + std::string(type_name(b)));
      };
      bool vec = is_vector(a) || is_vector(b);
      switch (e.binary) {
        case BinaryOp::Add:
        case BinaryOp::Sub:
        case BinaryOp::Mul:
        case BinaryOp::Div:
        case BinaryOp::Mod:
          if (!is_numeric(a) || !is_numeric(b)) return mismatch();
          return e.type = numeric_result(a, b);
        case BinaryOp::Lt:
        case BinaryOp::Le:
        case BinaryOp::Gt:
        case BinaryOp::Ge:
          if (!is_numeric(a) || !is_numeric(b)) return mismatch();
          return e.type = vec ? ValueType::VEC_BOOL : ValueType::BOOL;
        case BinaryOp::Eq:
        case BinaryOp::Ne:
          if (!(is_numeric(a) && is_numeric(b)) && !(is_boolish(a) && is_boolish(b))) return mismatch();
          return e.type = vec ? ValueType::VEC_BOOL : ValueType::BOOL;
        case BinaryOp::And:
        case BinaryOp::Or:
          if (!is_boolish(a) || !is_boolish(b)) return mismatch();
          return e.type = vec ? ValueType::VEC_BOOL : ValueType::BOOL;
      }
      return mismatch();
    }
    case Expr::Kind::Ternary: {
      auto c = check(e.args[0], scope);
      auto a = check(e.args[1], scope);
      auto b = check(e.args[2], scope);
      if (c != ValueType::BOOL) return type_fail("condition must be BOOL, got " + std::string(type_name(c)));
      if (a == b) return e.type = a;
      if (is_numeric(a) && is_numeric(b) && is_vector(a) == is_vector(b)) return e.type = numeric_result(a, b);
      return type_fail("branches have incompatible types " + std::string(type_name(a)) + " and " +
                       std::string(type_name(b)));
    }
    case Expr::Kind::Index: {
      auto base = check(e.args[0], scope);
      auto idx = check(e.args[1], scope);
      if (!is_vector(base)) return type_fail("cannot index a " + std::string(type_name(base)));
      if (idx != ValueType::I64) return type_fail("index must be I64, got " + std::string(type_name(idx)));
      return e.type = element_type(base);
    }
    case Expr::Kind::Call: {
      std::vector<ValueType> ts;
      for (auto& a : e.args) ts.push_back(check(a, scope));
      std::string fname(builtin_name(e.fn));
      auto arity = [&](std::size_t n) {
        if (ts.size() != n) {
          type_fail(fname + " takes " + std::to_string(n) + " argument(s), got " + std::to_string(ts.size()));
        }
      };
      switch (e.fn) {
        case Builtin::Len:
          arity(1);
          if (!is_vector(ts[0])) return type_fail("len requires a vector, got " + std::string(type_name(ts[0])));
          return e.type = ValueType::I64;
        case Builtin::Sum:
          arity(1);
          if (!is_vector(ts[0])) return type_fail("sum requires a vector, got " + std::string(type_name(ts[0])));
          return e.type = ts[0] == ValueType::VEC_F64 ? ValueType::F64 : ValueType::I64;
        case Builtin::Min:
        case Builtin::Max:
          if (ts.size() == 1) {
            if (!is_vector(ts[0]) || !is_numeric(ts[0])) {
              return type_fail(fname + " requires a numeric vector, got " + std::string(type_name(ts[0])));
            }
            return e.type = element_type(ts[0]);
          }
          arity(2);
          if (!is_numeric(ts[0]) || !is_numeric(ts[1])) return type_fail(fname + " requires numeric arguments");
          return e.type = numeric_result(ts[0], ts[1]);
        case Builtin::Abs:
          arity(1);
          if (!is_numeric(ts[0])) return type_fail("abs requires a numeric argument");
          return e.type = ts[0];
        case Builtin::Sqrt:
        case Builtin::Log:
        case Builtin::Exp:
          arity(1);
          if (!is_numeric(ts[0])) return type_fail(fname + " requires a numeric argument");
          return e.type = is_vector(ts[0]) ? ValueType::VEC_F64 : ValueType::F64;
        case Builtin::Where:
          arity(2);
          if (!is_vector(ts[0])) return type_fail("where requires a vector, got " + std::string(type_name(ts[0])));
          if (ts[1] != ValueType::VEC_BOOL) {
            return type_fail("where mask must be VEC_BOOL, got " + std::string(type_name(ts[1])));
          }
          return e.type = ts[0];
      }
      return type_fail("unknown function");
    }
  }
  return type_fail("malformed expression");
}

// ---------------------------------------------------------------------------
// Evaluation

[[noreturn]] void eval_fail(const Expr& e, const std::string& msg) {
  throw EvalError(msg + " at " + at_text(e.span));
}

// Scalar-or-span view of an operand with elements converted to T.
template <typename T>
struct Operand {
  bool vec = false;
  T scalar{};
  std::vector<T> owned;
  std::span<const T> items;

  std::size_t size() const { return items.size(); }
  T operator[](std::size_t i) const { return vec ? items[i] : scalar; }
};

template <typename T>
Operand<T> operand(const Value& v) {
  Operand<T> o;
  std::visit(
      [&](const auto& x) {
        using X = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<X, double> || std::is_same_v<X, std::int64_t> || std::is_same_v<X, bool>) {
          o.scalar = static_cast<T>(x);
        } else {
          o.vec = true;
          const auto& src = [&]() -> const auto& {
            if constexpr (std::is_same_v<X, BoolVec>) {
              return x.v;
            } else {
              return x;
            }
          }();
          using E = typename std::decay_t<decltype(src)>::value_type;
          if constexpr (std::is_same_v<E, T>) {
            o.items = src;
          } else {
            o.owned.assign(src.begin(), src.end());
            o.items = o.owned;
          }
        }
      },
      v);
  return o;
}

template <typename R>
Value wrap_scalar(R v) {
  if constexpr (std::is_same_v<R, bool>) {
    return v;
  } else {
    return Value(v);
  }
}

template <typename R>
Value wrap_vector(std::vector<R> v) {
  if constexpr (std::is_same_v<R, bool>) {
    BoolVec b;
    b.v.assign(v.begin(), v.end());
    return b;
  } else {
    return Value(std::move(v));
  }
}

// Applies f elementwise with scalar broadcast.
template <typename T, typename R, typename F>
Value elementwise(const Expr& e, const Operand<T>& a, const Operand<T>& b, F&& f) {
  if (!a.vec && !b.vec) return wrap_scalar<R>(f(a.scalar, b.scalar));
  std::size_t n = a.vec ? a.size() : b.size();
  if (a.vec && b.vec && a.size() != b.size()) {
    eval_fail(e, "vector length mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  std::vector<R> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
  return wrap_vector<R>(std::move(out));
}

template <typename T, typename R, typename F>
Value map_unary(const Operand<T>& a, F&& f) {
  if (!a.vec) return wrap_scalar<R>(f(a.scalar));
  std::vector<R> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return wrap_vector<R>(std::move(out));
}

std::int64_t wrap_add(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) + static_cast<std::uint64_t>(b));
}
std::int64_t wrap_sub(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) - static_cast<std::uint64_t>(b));
}
std::int64_t wrap_mul(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b));
}

Value eval_arith(const Expr& e, const Value& a, const Value& b) {
  if (element_type(e.type) == ValueType::I64) {
    auto x = operand<std::int64_t>(a);
    auto y = operand<std::int64_t>(b);
    auto check_div = [&](std::int64_t p, std::int64_t q) {
      if (q == 0) eval_fail(e, "integer division by zero");
      if (p == std::numeric_limits<std::int64_t>::min() && q == -1) eval_fail(e, "integer overflow in division");
    };
    switch (e.binary) {
      case BinaryOp::Add: return elementwise<std::int64_t, std::int64_t>(e, x, y, wrap_add);
      case BinaryOp::Sub: return elementwise<std::int64_t, std::int64_t>(e, x, y, wrap_sub);
      case BinaryOp::Mul: return elementwise<std::int64_t, std::int64_t>(e, x, y, wrap_mul);
      case BinaryOp::Div:
        return elementwise<std::int64_t, std::int64_t>(e, x, y, [&](std::int64_t p, std::int64_t q) {
          check_div(p, q);
          return p / q;
        });
      case BinaryOp::Mod:
        return elementwise<std::int64_t, std::int64_t>(e, x, y, [&](std::int64_t p, std::int64_t q) {
          check_div(p, q);
          return p % q;
        });
      default: break;
    }
  } else {
    auto x = operand<double>(a);
    auto y = operand<double>(b);
    switch (e.binary) {
      case BinaryOp::Add: return elementwise<double, double>(e, x, y, std::plus<>());
      case BinaryOp::Sub: return elementwise<double, double>(e, x, y, std::minus<>());
      case BinaryOp::Mul: return elementwise<double, double>(e, x, y, std::multiplies<>());
      case BinaryOp::Div: return elementwise<double, double>(e, x, y, std::divides<>());
      case BinaryOp::Mod:
        return elementwise<double, double>(e, x, y, [](double p, double q) { return std::fmod(p, q); });
      default: break;
    }
  }
  eval_fail(e, "internal: bad arithmetic operator");
}

template <typename T>
Value compare(const Expr& e, BinaryOp op, const Operand<T>& x, const Operand<T>& y) {
  switch (op) {
    case BinaryOp::Lt: return elementwise<T, bool>(e, x, y, std::less<>());
    case BinaryOp::Le: return elementwise<T, bool>(e, x, y, std::less_equal<>());
    case BinaryOp::Gt: return elementwise<T, bool>(e, x, y, std::greater<>());
    case BinaryOp::Ge: return elementwise<T, bool>(e, x, y, std::greater_equal<>());
    case BinaryOp::Eq: return elementwise<T, bool>(e, x, y, std::equal_to<>());
    case BinaryOp::Ne: return elementwise<T, bool>(e, x, y, std::not_equal_to<>());
    default: eval_fail(e, "internal: bad comparison operator");
  }
}

Value eval_compare(const Expr& e, const Value& a, const Value& b) {
  auto ta = element_type(type_of(a));
  auto tb = element_type(type_of(b));
  if (ta == ValueType::BOOL) return compare(e, e.binary, operand<std::uint8_t>(a), operand<std::uint8_t>(b));
  if (ta == ValueType::I64 && tb == ValueType::I64) {
    return compare(e, e.binary, operand<std::int64_t>(a), operand<std::int64_t>(b));
  }
  return compare(e, e.binary, operand<double>(a), operand<double>(b));
}

template <typename T>
Value reduce_minmax(const Expr& e, const std::vector<T>& v, bool is_min) {
  if (v.empty()) eval_fail(e, std::string(is_min ? "min" : "max") + " of an empty vector");
  T m = v[0];
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (is_min ? v[i] < m : v[i] > m) m = v[i];
  }
  return Value(m);
}

Value eval_call(const Expr& e, const RowContext& ctx) {
  switch (e.fn) {
    case Builtin::Len: {
      auto v = eval(e.args[0], ctx);
      return std::visit(
          [](const auto& x) -> Value {
            using X = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<X, BoolVec>) {
              return static_cast<std::int64_t>(x.v.size());
            } else if constexpr (std::is_same_v<X, std::vector<double>> || std::is_same_v<X, std::vector<std::int64_t>>) {
              return static_cast<std::int64_t>(x.size());
            } else {
              return std::int64_t{0};
            }
          },
          v);
    }
    case Builtin::Sum: {
      auto v = eval(e.args[0], ctx);
      if (auto* f = std::get_if<std::vector<double>>(&v)) {
        double s = 0.0;
        for (double x : *f) s += x;
        return s;
      }
      std::int64_t s = 0;
      if (auto* i = std::get_if<std::vector<std::int64_t>>(&v)) {
        for (auto x : *i) s = wrap_add(s, x);
      } else {
        for (auto x : std::get<BoolVec>(v).v) s += x;
      }
      return s;
    }
    case Builtin::Min:
    case Builtin::Max: {
      bool is_min = e.fn == Builtin::Min;
      if (e.args.size() == 1) {
        auto v = eval(e.args[0], ctx);
        if (auto* f = std::get_if<std::vector<double>>(&v)) return reduce_minmax(e, *f, is_min);
        return reduce_minmax(e, std::get<std::vector<std::int64_t>>(v), is_min);
      }
      auto a = eval(e.args[0], ctx);
      auto b = eval(e.args[1], ctx);
      auto pick = [is_min](auto p, auto q) { return is_min ? (q < p ? q : p) : (q > p ? q : p); };
      if (element_type(e.type) == ValueType::I64) {
        return elementwise<std::int64_t, std::int64_t>(e, operand<std::int64_t>(a), operand<std::int64_t>(b), pick);
      }
      return elementwise<double, double>(e, operand<double>(a), operand<double>(b), pick);
    }
    case Builtin::Abs: {
      auto v = eval(e.args[0], ctx);
      if (element_type(e.type) == ValueType::I64) {
        return map_unary<std::int64_t, std::int64_t>(operand<std::int64_t>(v), [](std::int64_t x) {
          return x < 0 ? wrap_sub(0, x) : x;
        });
      }
      return map_unary<double, double>(operand<double>(v), [](double x) { return std::fabs(x); });
    }
    case Builtin::Sqrt:
    case Builtin::Log:
    case Builtin::Exp: {
      auto v = eval(e.args[0], ctx);
      double (*fn)(double) = e.fn == Builtin::Sqrt ? static_cast<double (*)(double)>(std::sqrt)
                             : e.fn == Builtin::Log ? static_cast<double (*)(double)>(std::log)
                                                    : static_cast<double (*)(double)>(std::exp);
      return map_unary<double, double>(operand<double>(v), fn);
    }
    case Builtin::Where: {
      auto v = eval(e.args[0], ctx);
      auto mask = std::get<BoolVec>(eval(e.args[1], ctx));
      return std::visit(
          [&](auto& x) -> Value {
            using X = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<X, double> || std::is_same_v<X, std::int64_t> || std::is_same_v<X, bool>) {
              eval_fail(e, "where on a scalar");
            } else {
              auto& items = [&]() -> auto& {
                if constexpr (std::is_same_v<X, BoolVec>) {
                  return x.v;
                } else {
                  return x;
                }
              }();
              if (items.size() != mask.v.size()) {
                eval_fail(e, "where mask length " + std::to_string(mask.v.size()) + " does not match vector length " +
                                 std::to_string(items.size()));
              }
              std::size_t k = 0;
              for (std::size_t i = 0; i < items.size(); ++i) {
                if (mask.v[i]) items[k++] = items[i];
              }
              items.resize(k);
              return std::move(x);
            }
          },
          v);
    }
  }
  eval_fail(e, "internal: unknown builtin");
}

void print(const Expr& e, std::string& out) {
  switch (e.kind) {
    case Expr::Kind::Literal:
      out += to_string(e.literal);
      return;
    case Expr::Kind::Column:
      out += e.name;
      return;
    case Expr::Kind::Unary:
      out += e.unary == UnaryOp::Neg ? "(-" : "(!";
      print(e.args[0], out);
      out += ")";
      return;
    case Expr::Kind::Binary:
      out += "(";
      print(e.args[0], out);
      out += " ";
      out += op_text(e.binary);
      out += " ";
      print(e.args[1], out);
      out += ")";
      return;
    case Expr::Kind::Ternary:
      out += "(";
      print(e.args[0], out);
      out += " ? ";
      print(e.args[1], out);
      out += " : ";
      print(e.args[2], out);
      out += ")";
      return;
    case Expr::Kind::Index:
      print(e.args[0], out);
      out += "[";
      print(e.args[1], out);
      out += "]";
      return;
    case Expr::Kind::Call:
      out += builtin_name(e.fn);
      out += "(";
      for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (i) out += ", ";
        print(e.args[i], out);
      }
      out += ")";
      return;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

ParseError::ParseError(SourceSpan w, const std::string& what)
    : ValidationError("syntax error at " + at_text(w) + ": " + what), where(w) {}

TypeError::TypeError(SourceSpan w, const std::string& what)
    : ValidationError("type error at " + at_text(w) + ": " + what), where(w) {}

std::string_view type_name(ValueType t) {
  switch (t) {
    case ValueType::F64: return "F64";
    case ValueType::I64: return "I64";
    case ValueType::BOOL: return "BOOL";
    case ValueType::VEC_F64: return "VEC_F64";
    case ValueType::VEC_I64: return "VEC_I64";
    case ValueType::VEC_BOOL: return "VEC_BOOL";
  }
  return "?";
}

bool is_vector(ValueType t) {
  return t == ValueType::VEC_F64 || t == ValueType::VEC_I64 || t == ValueType::VEC_BOOL;
}

bool is_numeric(ValueType t) {
  auto e = element_type(t);
  return e == ValueType::F64 || e == ValueType::I64;
}

ValueType element_type(ValueType t) {
  switch (t) {
    case ValueType::VEC_F64: return ValueType::F64;
    case ValueType::VEC_I64: return ValueType::I64;
    case ValueType::VEC_BOOL: return ValueType::BOOL;
    default: return t;
  }
}

ValueType vector_of(ValueType t) {
  switch (t) {
    case ValueType::F64: return ValueType::VEC_F64;
    case ValueType::I64: return ValueType::VEC_I64;
    case ValueType::BOOL: return ValueType::VEC_BOOL;
    default: return t;
  }
}

ValueType from_dtype(Dtype d) {
  switch (d) {
    case Dtype::F64: return ValueType::F64;
    case Dtype::I64: return ValueType::I64;
    case Dtype::BOOL: return ValueType::BOOL;
    case Dtype::VEC_F64: return ValueType::VEC_F64;
    case Dtype::VEC_I64: return ValueType::VEC_I64;
  }
  return ValueType::F64;
}

std::optional<Dtype> to_dtype(ValueType t) {
  switch (t) {
    case ValueType::F64: return Dtype::F64;
    case ValueType::I64: return Dtype::I64;
    case ValueType::BOOL: return Dtype::BOOL;
    case ValueType::VEC_F64: return Dtype::VEC_F64;
    case ValueType::VEC_I64: return Dtype::VEC_I64;
    case ValueType::VEC_BOOL: return std::nullopt;
  }
  return std::nullopt;
}

std::string to_string(const Value& v) {
  auto num = [](double d) {
    if (std::isinf(d)) return std::string(d > 0 ? "1e999" : "(-1e999)");
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), d);
    std::string s(buf, p);
    if (s.find_first_of(".en") == std::string::npos) s += ".0";
    return s;
  };
  return std::visit(
      [&](const auto& x) -> std::string {
        using X = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<X, double>) {
          return num(x);
        } else if constexpr (std::is_same_v<X, std::int64_t>) {
          return std::to_string(x);
        } else if constexpr (std::is_same_v<X, bool>) {
          return x ? "true" : "false";
        } else {
          std::string s = "[";
          const auto& items = [&]() -> const auto& {
            if constexpr (std::is_same_v<X, BoolVec>) {
              return x.v;
            } else {
              return x;
            }
          }();
          for (std::size_t i = 0; i < items.size(); ++i) {
            if (i) s += ", ";
            if constexpr (std::is_same_v<X, BoolVec>) {
              s += items[i] ? "true" : "false";
            } else if constexpr (std::is_same_v<X, std::vector<double>>) {
              s += num(items[i]);
            } else {
              s += std::to_string(items[i]);
            }
          }
          return s + "]";
        }
      },
      v);
}

Value value_at(const ColumnData& col, std::size_t i) {
  switch (static_cast<Dtype>(col.index())) {
    case Dtype::F64: return std::get<std::vector<double>>(col)[i];
    case Dtype::I64: return std::get<std::vector<std::int64_t>>(col)[i];
    case Dtype::BOOL: return std::get<std::vector<std::uint8_t>>(col)[i] != 0;
    case Dtype::VEC_F64: {
      auto r = std::get<VecColumn<double>>(col).row(i);
      return std::vector<double>(r.begin(), r.end());
    }
    case Dtype::VEC_I64: {
      auto r = std::get<VecColumn<std::int64_t>>(col).row(i);
      return std::vector<std::int64_t>(r.begin(), r.end());
    }
  }
  throw EvalError("invalid column dtype");
}

void append_value(ColumnData& col, const Value& v) {
  switch (static_cast<Dtype>(col.index())) {
    case Dtype::F64: std::get<std::vector<double>>(col).push_back(std::get<double>(v)); return;
    case Dtype::I64: std::get<std::vector<std::int64_t>>(col).push_back(std::get<std::int64_t>(v)); return;
    case Dtype::BOOL: std::get<std::vector<std::uint8_t>>(col).push_back(std::get<bool>(v) ? 1 : 0); return;
    case Dtype::VEC_F64: std::get<VecColumn<double>>(col).push_back(std::get<std::vector<double>>(v)); return;
    case Dtype::VEC_I64:
      std::get<VecColumn<std::int64_t>>(col).push_back(std::get<std::vector<std::int64_t>>(v));
      return;
  }
}

std::string_view op_text(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add: return "+";
    case BinaryOp::Sub: return "-";
    case BinaryOp::Mul: return "*";
    case BinaryOp::Div: return "/";
    case BinaryOp::Mod: return "%";
    case BinaryOp::Lt: return "<";
    case BinaryOp::Le: return "<=";
    case BinaryOp::Gt: return ">";
    case BinaryOp::Ge: return ">=";
    case BinaryOp::Eq: return "==";
    case BinaryOp::Ne: return "!=";
    case BinaryOp::And: return "&&";
    case BinaryOp::Or: return "||";
  }
  return "?";
}

std::optional<Builtin> builtin_from_name(std::string_view name) {
  static const std::pair<std::string_view, Builtin> table[] = {
      {"len", Builtin::Len}, {"sum", Builtin::Sum},   {"min", Builtin::Min},
      {"max", Builtin::Max}, {"abs", Builtin::Abs},   {"sqrt", Builtin::Sqrt},
      {"log", Builtin::Log}, {"exp", Builtin::Exp},   {"where", Builtin::Where},
  };
  for (const auto& [n, fn] : table) {
    if (n == name) return fn;
  }
  return std::nullopt;
}

std::string_view builtin_name(Builtin fn) {
  switch (fn) {
    case Builtin::Len: return "len";
    case Builtin::Sum: return "sum";
    case Builtin::Min: return "min";
    case Builtin::Max: return "max";
    case Builtin::Abs: return "abs";
    case Builtin::Sqrt: return "sqrt";
    case Builtin::Log: return "log";
    case Builtin::Exp: return "exp";
    case Builtin::Where: return "where";
  }
  return "?";
}

bool Expr::operator==(const Expr& o) const {
  if (kind != o.kind || args != o.args) return false;
  switch (kind) {
    case Kind::Literal: {
      // compare bit patterns so NaN literals stay equal to themselves
      if (literal.index() != o.literal.index()) return false;
      if (auto* d = std::get_if<double>(&literal)) {
        return std::bit_cast<std::uint64_t>(*d) == std::bit_cast<std::uint64_t>(std::get<double>(o.literal));
      }
      return literal == o.literal;
    }
    case Kind::Column: return name == o.name;
    case Kind::Unary: return unary == o.unary;
    case Kind::Binary: return binary == o.binary;
    case Kind::Call: return fn == o.fn;
    case Kind::Ternary:
    case Kind::Index: return true;
  }
  return false;
}

Expr parse(std::string_view text) { return Parser(text).parse_all(); }

std::string to_string(const Expr& e) {
  std::string out;
  print(e, out);
  return out;
}

std::size_t Scope::add(std::string name, ValueType type) {
  auto [it, inserted] = index_.emplace(name, names_.size());
  if (!inserted) {
    types_[it->second] = type;
    return it->second;
  }
  names_.push_back(std::move(name));
  types_.push_back(type);
  return names_.size() - 1;
}

std::optional<Binding> Scope::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return Binding{it->second, types_[it->second]};
}

ValueType typecheck(Expr& e, const Scope& scope) { return check(e, scope); }

ValueType typecheck(Expr& e, const std::map<std::string, ValueType>& schema) {
  Scope scope;
  for (const auto& [name, type] : schema) scope.add(name, type);
  return check(e, scope);
}

void collect_columns(const Expr& e, std::set<std::string>& out) {
  if (e.kind == Expr::Kind::Column) out.insert(e.name);
  for (const auto& a : e.args) collect_columns(a, out);
}

MapRowContext::MapRowContext(const Scope& scope, std::map<std::string, Value> values) : slots_(scope.size()) {
  for (auto& [name, v] : values) {
    auto b = scope.find(name);
    if (b) slots_[b->slot] = std::move(v);
  }
}

const Value& MapRowContext::at(std::size_t slot) const {
  if (slot >= slots_.size() || !slots_[slot]) throw EvalError("no value bound for slot " + std::to_string(slot));
  return *slots_[slot];
}

Value eval(const Expr& e, const RowContext& ctx) {
  switch (e.kind) {
    case Expr::Kind::Literal:
      return e.literal;
    case Expr::Kind::Column:
      return ctx.at(e.slot);
    case Expr::Kind::Unary: {
      auto v = eval(e.args[0], ctx);
      if (e.unary == UnaryOp::Not) {
        if (auto* b = std::get_if<bool>(&v)) return !*b;
        auto bv = std::get<BoolVec>(std::move(v));
        for (auto& x : bv.v) x = !x;
        return bv;
      }
      if (element_type(e.type) == ValueType::I64) {
        return map_unary<std::int64_t, std::int64_t>(operand<std::int64_t>(v),
                                                     [](std::int64_t x) { return wrap_sub(0, x); });
      }
      return map_unary<double, double>(operand<double>(v), [](double x) { return -x; });
    }
    case Expr::Kind::Binary: {
      if (e.binary == BinaryOp::And || e.binary == BinaryOp::Or) {
        bool is_and = e.binary == BinaryOp::And;
        auto a = eval(e.args[0], ctx);
        if (auto* ab = std::get_if<bool>(&a); ab && e.args[1].type == ValueType::BOOL) {
          if (is_and && !*ab) return false;
          if (!is_and && *ab) return true;
          return std::get<bool>(eval(e.args[1], ctx));
        }
        auto b = eval(e.args[1], ctx);
        auto x = operand<std::uint8_t>(a);
        auto y = operand<std::uint8_t>(b);
        return elementwise<std::uint8_t, bool>(
            e, x, y, [is_and](std::uint8_t p, std::uint8_t q) { return is_and ? (p && q) : (p || q); });
      }
      auto a = eval(e.args[0], ctx);
      auto b = eval(e.args[1], ctx);
      switch (e.binary) {
        case BinaryOp::Add:
        case BinaryOp::Sub:
        case BinaryOp::Mul:
        case BinaryOp::Div:
        case BinaryOp::Mod:
          return eval_arith(e, a, b);
        default:
          return eval_compare(e, a, b);
      }
    }
    case Expr::Kind::Ternary: {
      bool c = std::get<bool>(eval(e.args[0], ctx));
      auto v = eval(e.args[c ? 1 : 2], ctx);
      if (type_of(v) == e.type) return v;
      // numeric promotion of the taken branch
      if (is_vector(e.type)) {
        auto o = operand<double>(v);
        return std::vector<double>(o.items.begin(), o.items.end());
      }
      return operand<double>(v).scalar;
    }
    case Expr::Kind::Index: {
      auto base = eval(e.args[0], ctx);
      auto idx = std::get<std::int64_t>(eval(e.args[1], ctx));
      return std::visit(
          [&](const auto& x) -> Value {
            using X = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<X, double> || std::is_same_v<X, std::int64_t> || std::is_same_v<X, bool>) {
              eval_fail(e, "index on a scalar");
            } else {
              std::size_t n = 0;
              if constexpr (std::is_same_v<X, BoolVec>) {
                n = x.v.size();
              } else {
                n = x.size();
              }
              if (idx < 0 || static_cast<std::size_t>(idx) >= n) {
                eval_fail(e, "index " + std::to_string(idx) + " out of range for length " + std::to_string(n));
              }
              if constexpr (std::is_same_v<X, BoolVec>) {
                return x.v[static_cast<std::size_t>(idx)] != 0;
              } else {
                return x[static_cast<std::size_t>(idx)];
              }
            }
          },
          base);
    }
    case Expr::Kind::Call:
      return eval_call(e, ctx);
  }
  eval_fail(e, "internal: malformed expression");
}

}  // namespace colflow::expr
