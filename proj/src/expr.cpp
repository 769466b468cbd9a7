#include "nst/expr.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace nst {

struct Expr::Node {
  NodeKind kind = NodeKind::constant;
  double value = 0.0;
  std::string name;
  BinaryOp op = BinaryOp::add;
  Function fn = Function::sqrt;
  std::vector<Expr> children;
  SourcePos pos;
};

namespace {

constexpr std::array<std::pair<std::string_view, Function>, 9> kFunctions{{
    {"sqrt", Function::sqrt},
    {"exp", Function::exp},
    {"log", Function::log},
    {"sin", Function::sin},
    {"cos", Function::cos},
    {"tanh", Function::tanh},
    {"abs", Function::abs},
    {"max", Function::max},
    {"min", Function::min},
}};

}  // namespace

std::optional<Function> function_from_name(std::string_view name) {
  for (const auto& [n, f] : kFunctions) {
    if (n == name) return f;
  }
  return std::nullopt;
}

std::string_view function_name(Function f) {
  for (const auto& [n, fn] : kFunctions) {
    if (fn == f) return n;
  }
  return "?";
}

std::size_t function_arity(Function f) {
  return (f == Function::max || f == Function::min) ? 2 : 1;
}

char binary_op_symbol(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return '+';
    case BinaryOp::sub: return '-';
    case BinaryOp::mul: return '*';
    case BinaryOp::div: return '/';
    case BinaryOp::pow: return '^';
  }
  return '?';
}

Expr::Expr() : Expr(Expr::constant(0.0)) {}

Expr Expr::constant(double value, SourcePos pos) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::constant;
  n->value = value;
  n->pos = pos;
  return Expr(std::move(n));
}

Expr Expr::state(std::string name, SourcePos pos) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::state;
  n->name = std::move(name);
  n->pos = pos;
  return Expr(std::move(n));
}

Expr Expr::time(SourcePos pos) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::time;
  n->name = "t";
  n->pos = pos;
  return Expr(std::move(n));
}

Expr Expr::parameter(std::string name, SourcePos pos) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::parameter;
  n->name = std::move(name);
  n->pos = pos;
  return Expr(std::move(n));
}

Expr Expr::negate(Expr operand, SourcePos pos) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::unary;
  n->children.push_back(std::move(operand));
  n->pos = pos;
  return Expr(std::move(n));
}

Expr Expr::binary(BinaryOp op, Expr lhs, Expr rhs, SourcePos pos) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::binary;
  n->op = op;
  n->children.push_back(std::move(lhs));
  n->children.push_back(std::move(rhs));
  n->pos = pos;
  return Expr(std::move(n));
}

Expr Expr::call(Function f, std::vector<Expr> args, SourcePos pos) {
  if (args.size() != function_arity(f)) {
    throw std::invalid_argument("wrong number of arguments for " +
                                std::string(function_name(f)));
  }
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::call;
  n->fn = f;
  n->children = std::move(args);
  n->pos = pos;
  return Expr(std::move(n));
}

NodeKind Expr::kind() const { return node_->kind; }
double Expr::value() const { return node_->value; }
const std::string& Expr::name() const { return node_->name; }
BinaryOp Expr::binary_op() const { return node_->op; }
Function Expr::function() const { return node_->fn; }
std::span<const Expr> Expr::children() const { return node_->children; }
SourcePos Expr::pos() const { return node_->pos; }

bool operator==(const Expr& a, const Expr& b) {
  if (a.node_ == b.node_) return true;
  const auto& x = *a.node_;
  const auto& y = *b.node_;
  if (x.kind != y.kind) return false;
  switch (x.kind) {
    case NodeKind::constant:
      if (x.value != y.value) return false;
      break;
    case NodeKind::state:
    case NodeKind::parameter:
      if (x.name != y.name) return false;
      break;
    case NodeKind::binary:
      if (x.op != y.op) return false;
      break;
    case NodeKind::call:
      if (x.fn != y.fn) return false;
      break;
    case NodeKind::time:
    case NodeKind::unary:
      break;
  }
  return std::equal(x.children.begin(), x.children.end(), y.children.begin(),
                    y.children.end());
}

Expr operator+(Expr a, Expr b) { return Expr::binary(BinaryOp::add, std::move(a), std::move(b)); }
Expr operator-(Expr a, Expr b) { return Expr::binary(BinaryOp::sub, std::move(a), std::move(b)); }
Expr operator*(Expr a, Expr b) { return Expr::binary(BinaryOp::mul, std::move(a), std::move(b)); }
Expr operator/(Expr a, Expr b) { return Expr::binary(BinaryOp::div, std::move(a), std::move(b)); }

namespace {

double lookup(const std::map<std::string, double, std::less<>>& table,
              const std::string& name, const char* what) {
  auto it = table.find(name);
  if (it == table.end()) {
    throw std::logic_error(std::string("unbound ") + what + " '" + name + "'");
  }
  return it->second;
}

}  // namespace

double eval_expr(const Expr& expr, const EvalEnv& env) {
  switch (expr.kind()) {
    case NodeKind::constant: return expr.value();
    case NodeKind::state: return lookup(env.states, expr.name(), "state variable");
    case NodeKind::time: return env.t;
    case NodeKind::parameter: return lookup(env.params, expr.name(), "parameter");
    case NodeKind::unary: return -eval_expr(expr.children()[0], env);
    case NodeKind::binary: {
      const double a = eval_expr(expr.children()[0], env);
      const double b = eval_expr(expr.children()[1], env);
      switch (expr.binary_op()) {
        case BinaryOp::add: return a + b;
        case BinaryOp::sub: return a - b;
        case BinaryOp::mul: return a * b;
        case BinaryOp::div: return a / b;
        case BinaryOp::pow: return std::pow(a, b);
      }
      break;
    }
    case NodeKind::call: {
      const double a = eval_expr(expr.children()[0], env);
      switch (expr.function()) {
        case Function::sqrt: return std::sqrt(std::max(a, 0.0));
        case Function::exp: return std::exp(a);
        case Function::log: return std::log(std::max(a, kLogFloor));
        case Function::sin: return std::sin(a);
        case Function::cos: return std::cos(a);
        case Function::tanh: return std::tanh(a);
        case Function::abs: return std::abs(a);
        case Function::max: return std::max(a, eval_expr(expr.children()[1], env));
        case Function::min: return std::min(a, eval_expr(expr.children()[1], env));
      }
      break;
    }
  }
  throw std::logic_error("corrupt expression node");
}

bool references_state(const Expr& expr, std::string_view name) {
  bool found = false;
  visit(expr, [&](const Expr& e) {
    if (e.kind() == NodeKind::state && e.name() == name) found = true;
  });
  return found;
}

bool references_any_state(const Expr& expr) {
  bool found = false;
  visit(expr, [&](const Expr& e) { found = found || e.kind() == NodeKind::state; });
  return found;
}

bool references_time(const Expr& expr) {
  bool found = false;
  visit(expr, [&](const Expr& e) { found = found || e.kind() == NodeKind::time; });
  return found;
}

bool references_parameter(const Expr& expr, std::string_view name) {
  bool found = false;
  visit(expr, [&](const Expr& e) {
    if (e.kind() == NodeKind::parameter && e.name() == name) found = true;
  });
  return found;
}

bool references_any_parameter(const Expr& expr) {
  bool found = false;
  visit(expr, [&](const Expr& e) { found = found || e.kind() == NodeKind::parameter; });
  return found;
}

Expr rewrite(const Expr& expr, const std::function<std::optional<Expr>(const Expr&)>& fn) {
  Expr rebuilt = expr;
  if (!expr.children().empty()) {
    std::vector<Expr> kids;
    kids.reserve(expr.children().size());
    bool changed = false;
    for (const Expr& child : expr.children()) {
      kids.push_back(rewrite(child, fn));
      changed = changed || !kids.back().same_node(child);
    }
    if (changed) {
      switch (expr.kind()) {
        case NodeKind::unary:
          rebuilt = Expr::negate(kids[0], expr.pos());
          break;
        case NodeKind::binary:
          rebuilt = Expr::binary(expr.binary_op(), kids[0], kids[1], expr.pos());
          break;
        case NodeKind::call:
          rebuilt = Expr::call(expr.function(), std::move(kids), expr.pos());
          break;
        default:
          break;
      }
    }
  }
  if (auto replacement = fn(rebuilt)) return *replacement;
  return rebuilt;
}

std::vector<std::string> parameter_names(const Expr& expr) {
  std::vector<std::string> names;
  visit(expr, [&](const Expr& e) {
    if (e.kind() == NodeKind::parameter &&
        std::find(names.begin(), names.end(), e.name()) == names.end()) {
      names.push_back(e.name());
    }
  });
  return names;
}

std::string format_number(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
  return std::string(buf.data(), end);
}

std::string to_string(const Expr& expr) {
  switch (expr.kind()) {
    case NodeKind::constant:
      if (expr.value() < 0.0 || std::signbit(expr.value())) {
        return "(-" + format_number(-expr.value()) + ")";
      }
      return format_number(expr.value());
    case NodeKind::state:
    case NodeKind::parameter:
      return expr.name();
    case NodeKind::time:
      return "t";
    case NodeKind::unary:
      return "(-" + to_string(expr.children()[0]) + ")";
    case NodeKind::binary:
      return "(" + to_string(expr.children()[0]) + binary_op_symbol(expr.binary_op()) +
             to_string(expr.children()[1]) + ")";
    case NodeKind::call: {
      std::string out(function_name(expr.function()));
      out += '(';
      bool first = true;
      for (const Expr& arg : expr.children()) {
        if (!first) out += ", ";
        out += to_string(arg);
        first = false;
      }
      out += ')';
      return out;
    }
  }
  return "?";
}

}  // namespace nst
