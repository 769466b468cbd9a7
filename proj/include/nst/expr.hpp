#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nst {

/// Position of a token in DSL source text (1-based; 0 means "not from source").
struct SourcePos {
  int line = 0;
  int column = 0;
};

enum class NodeKind { constant, state, time, parameter, unary, binary, call };

enum class UnaryOp { negate };

enum class BinaryOp { add, sub, mul, div, pow };

enum class Function { sqrt, exp, log, sin, cos, tanh, abs, max, min };

std::optional<Function> function_from_name(std::string_view name);
std::string_view function_name(Function f);
std::size_t function_arity(Function f);
char binary_op_symbol(BinaryOp op);

/// Immutable expression tree node handle. Copies share structure.
///
/// Equality is structural: node kinds, names, literal values and children
/// must match. Source positions are ignored.
class Expr {
 public:
  Expr();

  static Expr constant(double value, SourcePos pos = {});
  static Expr state(std::string name, SourcePos pos = {});
  static Expr time(SourcePos pos = {});
  static Expr parameter(std::string name, SourcePos pos = {});
  static Expr negate(Expr operand, SourcePos pos = {});
  static Expr binary(BinaryOp op, Expr lhs, Expr rhs, SourcePos pos = {});
  static Expr call(Function f, std::vector<Expr> args, SourcePos pos = {});

  NodeKind kind() const;
  double value() const;
  const std::string& name() const;
  BinaryOp binary_op() const;
  Function function() const;
  std::span<const Expr> children() const;
  SourcePos pos() const;

  /// True when the same node object is referenced (not structural).
  bool same_node(const Expr& other) const { return node_ == other.node_; }

  friend bool operator==(const Expr& a, const Expr& b);

 private:
  struct Node;
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator/(Expr a, Expr b);

/// Clamped primitives shared by every evaluator: sqrt sees max(x, 0) and
/// log sees max(x, 1e-12).
inline constexpr double kLogFloor = 1e-12;

/// Symbol bindings for eval_expr.
struct EvalEnv {
  std::map<std::string, double, std::less<>> states;
  double t = 0.0;
  std::map<std::string, double, std::less<>> params;
};

/// Tree-walking evaluator. Throws std::logic_error on an unbound symbol.
double eval_expr(const Expr& expr, const EvalEnv& env);

/// Pre-order, left-to-right visit of every node.
template <typename Fn>
void visit(const Expr& expr, Fn&& fn) {
  fn(expr);
  for (const Expr& child : expr.children()) visit(child, fn);
}

bool references_state(const Expr& expr, std::string_view name);
bool references_any_state(const Expr& expr);
bool references_time(const Expr& expr);
bool references_parameter(const Expr& expr, std::string_view name);
bool references_any_parameter(const Expr& expr);

/// Rebuilds the tree bottom-up. `fn` sees each node (children already
/// rewritten) and returns a replacement or std::nullopt to keep it.
Expr rewrite(const Expr& expr, const std::function<std::optional<Expr>(const Expr&)>& fn);

/// Parameter names in first-use order (duplicates removed).
std::vector<std::string> parameter_names(const Expr& expr);

/// Fully parenthesized canonical text, e.g. "(theta*(m-V))".
std::string to_string(const Expr& expr);

/// Formats a double with the shortest text that round-trips exactly.
std::string format_number(double value);

}  // namespace nst
