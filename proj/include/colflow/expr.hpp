#pragma once

// Expression language for Define / Filter / Vary bodies.
//
//   expr    := or ( '?' expr ':' expr )?
//   or      := and ( '||' and )*
//   and     := cmp ( '&&' cmp )*
//   cmp     := add ( ( '<' | '<=' | '>' | '>=' | '==' | '!=' ) add )?
//   add     := mul ( ( '+' | '-' ) mul )*
//   mul     := unary ( ( '*' | '/' | '%' ) unary )*
//   unary   := ( '!' | '-' )? postfix
//   postfix := atom ( '[' expr ']' )*
//   atom    := number | 'true' | 'false' | ident | ident '(' args ')' | '(' expr ')'
//
// Built-ins: len, sum, min, max, abs, sqrt, log, exp, where.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "colflow/colstore.hpp"
#include "colflow/error.hpp"

namespace colflow::expr {

// Alternative index of Value matches ValueType.
enum class ValueType : std::uint8_t { F64, I64, BOOL, VEC_F64, VEC_I64, VEC_BOOL };

std::string_view type_name(ValueType t);
bool is_vector(ValueType t);
bool is_numeric(ValueType t);  // scalar or vector of F64/I64
ValueType element_type(ValueType t);
ValueType vector_of(ValueType t);
ValueType from_dtype(Dtype d);
// VEC_BOOL has no storage dtype.
std::optional<Dtype> to_dtype(ValueType t);

struct BoolVec {
  std::vector<std::uint8_t> v;
  bool operator==(const BoolVec&) const = default;
};

using Value = std::variant<double, std::int64_t, bool, std::vector<double>, std::vector<std::int64_t>, BoolVec>;

inline ValueType type_of(const Value& v) { return static_cast<ValueType>(v.index()); }
std::string to_string(const Value& v);
// Value of row `i` of a stored column.
Value value_at(const ColumnData& col, std::size_t i);
// Appends `v` to a stored column of the matching dtype.
void append_value(ColumnData& col, const Value& v);

struct SourceSpan {
  std::uint32_t line = 1;
  std::uint32_t col = 1;
};

class ParseError : public ValidationError {
 public:
  ParseError(SourceSpan where, const std::string& what);
  SourceSpan where;
};

class TypeError : public ValidationError {
 public:
  TypeError(SourceSpan where, const std::string& what);
  SourceSpan where;
};

enum class UnaryOp { Neg, Not };
enum class BinaryOp { Add, Sub, Mul, Div, Mod, Lt, Le, Gt, Ge, Eq, Ne, And, Or };
enum class Builtin { Len, Sum, Min, Max, Abs, Sqrt, Log, Exp, Where };

std::string_view op_text(BinaryOp op);
std::optional<Builtin> builtin_from_name(std::string_view name);
std::string_view builtin_name(Builtin fn);

struct Expr {
  enum class Kind { Literal, Column, Unary, Binary, Ternary, Call, Index };

  Kind kind = Kind::Literal;
  SourceSpan span;
  Value literal;                 // Literal
  std::string name;              // Column
  UnaryOp unary = UnaryOp::Neg;  // Unary
  BinaryOp binary = BinaryOp::Add;
  Builtin fn = Builtin::Len;     // Call
  std::vector<Expr> args;        // operands in source order

  // Filled by typecheck().
  ValueType type = ValueType::F64;
  std::size_t slot = 0;

  // Structural equality: ignores spans and typecheck annotations.
  bool operator==(const Expr& o) const;
};

Expr parse(std::string_view text);

// Re-parses to a structurally equal tree.
std::string to_string(const Expr& e);

struct Binding {
  std::size_t slot;
  ValueType type;
};

// Names visible to an expression, each bound to a row-context slot.
class Scope {
 public:
  std::size_t add(std::string name, ValueType type);
  std::optional<Binding> find(std::string_view name) const;
  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t slot) const { return names_[slot]; }
  ValueType type(std::size_t slot) const { return types_[slot]; }

 private:
  std::vector<std::string> names_;
  std::vector<ValueType> types_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Annotates every node with its type and resolves column slots.
ValueType typecheck(Expr& e, const Scope& scope);
// Convenience overload; slots follow the map's ordering.
ValueType typecheck(Expr& e, const std::map<std::string, ValueType>& schema);

void collect_columns(const Expr& e, std::set<std::string>& out);

// Per-event values, addressed by the slots typecheck() resolved.
class RowContext {
 public:
  virtual ~RowContext() = default;
  virtual const Value& at(std::size_t slot) const = 0;
};

class MapRowContext final : public RowContext {
 public:
  MapRowContext(const Scope& scope, std::map<std::string, Value> values);
  const Value& at(std::size_t slot) const override;

 private:
  std::vector<std::optional<Value>> slots_;
};

Value eval(const Expr& e, const RowContext& ctx);

}  // namespace colflow::expr
