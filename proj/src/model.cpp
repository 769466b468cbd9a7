#include "nst/model.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <numbers>
#include <set>
#include <sstream>

namespace nst {

std::optional<std::size_t> SdeModel::param_index(std::string_view name) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == name) return i;
  }
  return std::nullopt;
}

std::vector<double> SdeModel::initial_values() const {
  std::vector<double> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.initial);
  return out;
}

bool SdeModel::has_jump() const {
  return std::any_of(equations.begin(), equations.end(),
                     [](const Equation& e) { return e.jump.has_value(); });
}

bool structurally_equal(const SdeModel& a, const SdeModel& b) {
  return a.equations == b.equations && a.params == b.params;
}

namespace {

std::string describe(const std::string& message, SourcePos pos, const std::string& token) {
  std::ostringstream os;
  os << "line " << pos.line << ", column " << pos.column << ": " << message;
  if (!token.empty()) os << " (at '" << token << "')";
  return os.str();
}

}  // namespace

ParseError::ParseError(const std::string& message, SourcePos pos, std::string token)
    : std::runtime_error(describe(message, pos, token)),
      pos_(pos),
      token_(std::move(token)),
      detail_(message) {}

bool ValidationReport::has(std::string_view code) const {
  return std::any_of(issues.begin(), issues.end(),
                     [&](const ValidationIssue& i) { return i.code == code; });
}

// ---------------------------------------------------------------------------
// Lexer

namespace {

enum class TokKind { ident, number, symbol, end };

struct Token {
  TokKind kind = TokKind::end;
  std::string text;
  double number = 0.0;
  SourcePos pos;

  bool is(char c) const { return kind == TokKind::symbol && text.size() == 1 && text[0] == c; }
  bool is_ident(std::string_view s) const { return kind == TokKind::ident && text == s; }
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  int line = 1;
  int col = 1;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
      ++i;
    }
  };
  while (i < src.size()) {
    const char c = src[i];
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    Token tok;
    tok.pos = {line, col};
    if (ident_start(c)) {
      std::size_t j = i;
      while (j < src.size() && ident_char(src[j])) ++j;
      tok.kind = TokKind::ident;
      tok.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t j = i;
      while (j < src.size() && (std::isdigit(static_cast<unsigned char>(src[j])) || src[j] == '.')) ++j;
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
          while (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) ++k;
          j = k;
        }
      }
      tok.kind = TokKind::number;
      tok.text = std::string(src.substr(i, j - i));
      const char* first = tok.text.data();
      const char* last = first + tok.text.size();
      auto [ptr, ec] = std::from_chars(first, last, tok.number);
      if (ec != std::errc{} || ptr != last) {
        throw ParseError("malformed number", tok.pos, tok.text);
      }
      advance(j - i);
    } else if (std::string_view("+-*/^(),=").find(c) != std::string_view::npos) {
      tok.kind = TokKind::symbol;
      tok.text = std::string(1, c);
      advance(1);
    } else {
      throw ParseError("unexpected character", tok.pos, std::string(1, c));
    }
    out.push_back(std::move(tok));
  }
  Token end;
  end.pos = {line, col};
  out.push_back(end);
  return out;
}

bool is_reserved(std::string_view name) {
  return name == "t" || name == "pi" || name == "dt" || name == "jump" || name == "param" ||
         function_from_name(name).has_value() ||
         (name.size() >= 2 && name.substr(0, 2) == "dW");
}

// Tokens like dW, dW1, dW2: returns the driver digit (0 for a bare dW).
std::optional<int> brownian_token(const Token& tok) {
  if (tok.kind != TokKind::ident) return std::nullopt;
  const std::string& s = tok.text;
  if (s == "dW") return 0;
  if (s.size() == 3 && s[0] == 'd' && s[1] == 'W' && std::isdigit(static_cast<unsigned char>(s[2]))) {
    return s[2] - '0';
  }
  return std::nullopt;
}

bool looks_differential(const Token& tok) {
  return tok.kind == TokKind::ident && tok.text.size() >= 2 && tok.text[0] == 'd' &&
         std::isupper(static_cast<unsigned char>(tok.text[1]));
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
 public:
  explicit Parser(std::string_view src) : toks_(tokenize(src)) {}

  SdeModel parse() {
    SdeModel model;
    std::vector<ParamDecl> declared;
    while (peek().kind != TokKind::end) {
      const Token& tok = peek();
      if (tok.is_ident("param")) {
        declared.push_back(parse_decl(declared));
      } else if (tok.kind == TokKind::ident && tok.text.size() >= 2 && tok.text[0] == 'd' &&
                 peek(1).is('=')) {
        model.equations.push_back(parse_equation(model.equations.size()));
      } else {
        throw ParseError("expected 'param' declaration or equation 'dX = ...'", tok.pos, tok.text);
      }
    }
    if (model.equations.empty()) {
      throw ParseError("model has no equation", peek().pos, "");
    }
    resolve(model, declared);
    return model;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }
  void expect(char c) {
    if (!peek().is(c)) {
      throw ParseError(std::string("expected '") + c + "'", peek().pos, peek().text);
    }
    next();
  }

  ParamDecl parse_decl(const std::vector<ParamDecl>& declared) {
    next();  // "param"
    const Token& name = next();
    if (name.kind != TokKind::ident) throw ParseError("expected parameter name", name.pos, name.text);
    if (is_reserved(name.text)) throw ParseError("reserved name used as parameter", name.pos, name.text);
    for (const auto& d : declared) {
      if (d.name == name.text) throw ParseError("duplicate parameter declaration", name.pos, name.text);
    }
    ParamDecl decl{name.text, kDefaultParamValue};
    if (peek().is('=')) {
      next();
      double sign = 1.0;
      if (peek().is('-') || peek().is('+')) sign = next().is('-') ? -1.0 : 1.0;
      const Token& num = next();
      if (num.kind != TokKind::number) throw ParseError("expected numeric value", num.pos, num.text);
      decl.initial = sign * num.number;
    }
    return decl;
  }

  Equation parse_equation(std::size_t index) {
    const Token& head = next();
    Equation eq;
    eq.state = head.text.substr(1);
    if (!ident_start(eq.state[0]) || is_reserved(eq.state)) {
      throw ParseError("invalid state variable name", head.pos, head.text);
    }
    expect('=');
    eq.drift = parse_expr();
    expect_differential("dt");
    while (peek().is('+')) {
      next();
      if (peek().is_ident("jump") && peek(1).is('(')) {
        if (eq.jump) throw ParseError("duplicate jump term", peek().pos, peek().text);
        next();
        next();
        JumpSpec jump;
        jump.intensity = parse_expr();
        expect(',');
        jump.mean = parse_expr();
        expect(',');
        jump.stddev = parse_expr();
        expect(')');
        eq.jump = jump;
        continue;
      }
      if (eq.diffusion || eq.jump) {
        throw ParseError("unexpected term after equation", peek().pos, peek().text);
      }
      eq.diffusion = parse_expr();
      const Token& dw = peek();
      auto driver = brownian_token(dw);
      if (!driver) {
        if (looks_differential(dw)) throw ParseError("unknown differential token", dw.pos, dw.text);
        throw ParseError("expected 'dW'", dw.pos, dw.text);
      }
      if (*driver != 0 && static_cast<std::size_t>(*driver) != index + 1) {
        throw ParseError("Brownian driver does not match equation index", dw.pos, dw.text);
      }
      next();
    }
    return eq;
  }

  void expect_differential(const char* what) {
    const Token& tok = peek();
    if (tok.is_ident(what)) {
      next();
      return;
    }
    if (looks_differential(tok) || brownian_token(tok)) {
      throw ParseError("unknown differential token", tok.pos, tok.text);
    }
    throw ParseError(std::string("expected '") + what + "'", tok.pos, tok.text);
  }

  Expr parse_expr() {
    Expr lhs = parse_term();
    while (peek().is('+') || peek().is('-')) {
      // "+ jump(" and "+ <diffusion>" are handled by the equation parser;
      // only continue when the sum is still inside the current expression.
      if (peek().is('+') && peek(1).is_ident("jump") && peek(2).is('(')) break;
      const Token& op = next();
      Expr rhs = parse_term();
      lhs = Expr::binary(op.is('+') ? BinaryOp::add : BinaryOp::sub, lhs, rhs, op.pos);
    }
    return lhs;
  }

  Expr parse_term() {
    Expr lhs = parse_unary();
    while (peek().is('*') || peek().is('/')) {
      const Token& op = next();
      Expr rhs = parse_unary();
      lhs = Expr::binary(op.is('*') ? BinaryOp::mul : BinaryOp::div, lhs, rhs, op.pos);
    }
    return lhs;
  }

  Expr parse_unary() {
    if (peek().is('-')) {
      const Token& op = next();
      return Expr::negate(parse_unary(), op.pos);
    }
    if (peek().is('+')) {
      next();
      return parse_unary();
    }
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_primary();
    if (peek().is('^')) {
      const Token& op = next();
      Expr exponent = parse_unary();
      return Expr::binary(BinaryOp::pow, base, exponent, op.pos);
    }
    return base;
  }

  Expr parse_primary() {
    const Token& tok = next();
    if (tok.kind == TokKind::number) return Expr::constant(tok.number, tok.pos);
    if (tok.is('(')) {
      Expr inner = parse_expr();
      expect(')');
      return inner;
    }
    if (tok.kind == TokKind::ident) {
      if (peek().is('(')) {
        auto fn = function_from_name(tok.text);
        if (!fn) throw ParseError("unknown function", tok.pos, tok.text);
        next();
        std::vector<Expr> args;
        args.push_back(parse_expr());
        while (peek().is(',')) {
          next();
          args.push_back(parse_expr());
        }
        expect(')');
        if (args.size() != function_arity(*fn)) {
          throw ParseError("wrong number of arguments", tok.pos, tok.text);
        }
        return Expr::call(*fn, std::move(args), tok.pos);
      }
      if (tok.text == "t") return Expr::time(tok.pos);
      if (tok.text == "pi") return Expr::constant(std::numbers::pi, tok.pos);
      if (tok.text == "dt" || brownian_token(tok)) {
        throw ParseError("expected expression before differential", tok.pos, tok.text);
      }
      if (is_reserved(tok.text)) throw ParseError("reserved name in expression", tok.pos, tok.text);
      // Provisional: resolved to state/parameter once all equations are known.
      return Expr::parameter(tok.text, tok.pos);
    }
    if (tok.kind == TokKind::end) throw ParseError("unexpected end of input", tok.pos, "");
    throw ParseError("unexpected token", tok.pos, tok.text);
  }

  static void resolve(SdeModel& model, const std::vector<ParamDecl>& declared) {
    std::set<std::string, std::less<>> states;
    for (const auto& eq : model.equations) {
      if (!states.insert(eq.state).second) {
        throw ParseError("state variable defined twice", {}, eq.state);
      }
    }
    for (const auto& d : declared) {
      if (states.count(d.name)) throw ParseError("parameter shadows a state variable", {}, d.name);
    }
    std::vector<ParamDecl> auto_declared;
    auto resolve_expr = [&](const Expr& e) {
      return rewrite(e, [&](const Expr& node) -> std::optional<Expr> {
        if (node.kind() != NodeKind::parameter) return std::nullopt;
        const std::string& name = node.name();
        if (states.count(name)) return Expr::state(name, node.pos());
        auto is_decl = [&](const ParamDecl& d) { return d.name == name; };
        if (std::any_of(declared.begin(), declared.end(), is_decl) ||
            std::any_of(auto_declared.begin(), auto_declared.end(), is_decl)) {
          return std::nullopt;
        }
        if (std::isupper(static_cast<unsigned char>(name[0]))) {
          throw ParseError("undeclared state variable", node.pos(), name);
        }
        auto_declared.push_back({name, kDefaultParamValue});
        return std::nullopt;
      });
    };
    for (auto& eq : model.equations) {
      eq.drift = resolve_expr(eq.drift);
      if (eq.diffusion) eq.diffusion = resolve_expr(*eq.diffusion);
      if (eq.jump) {
        eq.jump->intensity = resolve_expr(eq.jump->intensity);
        eq.jump->mean = resolve_expr(eq.jump->mean);
        eq.jump->stddev = resolve_expr(eq.jump->stddev);
      }
    }
    // Canonical order: first use, then declared-but-unused in declaration order.
    model.params = declared;
    model.params.insert(model.params.end(), auto_declared.begin(), auto_declared.end());
    std::vector<ParamDecl> ordered;
    auto take = [&](const std::string& name) {
      if (std::any_of(ordered.begin(), ordered.end(), [&](const ParamDecl& d) { return d.name == name; })) return;
      auto it = std::find_if(model.params.begin(), model.params.end(),
                             [&](const ParamDecl& d) { return d.name == name; });
      if (it != model.params.end()) ordered.push_back(*it);
    };
    for (const auto& eq : model.equations) {
      for (const auto& n : parameter_names(eq.drift)) take(n);
      if (eq.diffusion) for (const auto& n : parameter_names(*eq.diffusion)) take(n);
      if (eq.jump) {
        for (const auto& n : parameter_names(eq.jump->intensity)) take(n);
        for (const auto& n : parameter_names(eq.jump->mean)) take(n);
        for (const auto& n : parameter_names(eq.jump->stddev)) take(n);
      }
    }
    for (const auto& d : declared) take(d.name);
    model.params = std::move(ordered);
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

std::vector<std::string> first_use_order(const SdeModel& model) {
  std::vector<std::string> names;
  auto add = [&](const Expr& e) {
    for (auto& n : parameter_names(e)) {
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(std::move(n));
    }
  };
  for (const auto& eq : model.equations) {
    add(eq.drift);
    if (eq.diffusion) add(*eq.diffusion);
    if (eq.jump) {
      add(eq.jump->intensity);
      add(eq.jump->mean);
      add(eq.jump->stddev);
    }
  }
  return names;
}

}  // namespace

SdeModel parse_model(std::string_view source) {
  SdeModel model = Parser(source).parse();
  model.source = std::string(source);
  return model;
}

std::string print_model(const SdeModel& model) {
  std::ostringstream os;
  const auto used = first_use_order(model);
  std::vector<const ParamDecl*> order;
  for (const auto& name : used) {
    auto idx = model.param_index(name);
    if (idx) order.push_back(&model.params[*idx]);
  }
  for (const auto& p : model.params) {
    if (std::find(order.begin(), order.end(), &p) == order.end()) order.push_back(&p);
  }
  bool first = true;
  for (const ParamDecl* p : order) {
    if (!first) os << '\n';
    os << "param " << p->name << " = " << format_number(p->initial);
    first = false;
  }
  const bool numbered = model.equations.size() > 1;
  for (std::size_t i = 0; i < model.equations.size(); ++i) {
    const Equation& eq = model.equations[i];
    if (!first) os << '\n';
    first = false;
    os << 'd' << eq.state << " = " << to_string(eq.drift) << " dt";
    if (eq.diffusion) {
      os << " + " << to_string(*eq.diffusion) << " dW";
      if (numbered) os << (i + 1);
    }
    if (eq.jump) {
      os << " + jump(" << to_string(eq.jump->intensity) << ", " << to_string(eq.jump->mean) << ", "
         << to_string(eq.jump->stddev) << ")";
    }
  }
  return os.str();
}

namespace {

bool syntactically_negative(const Expr& e) {
  if (e.kind() == NodeKind::constant) return e.value() < 0.0;
  if (e.kind() == NodeKind::unary && e.children()[0].kind() == NodeKind::constant) {
    return e.children()[0].value() > 0.0;
  }
  return false;
}

}  // namespace

ValidationReport validate_model(const SdeModel& model) {
  ValidationReport report;
  auto error = [&](std::string code, std::string message, SourcePos pos = {}) {
    report.issues.push_back({std::move(code), Severity::error, std::move(message), pos});
  };
  auto warning = [&](std::string code, std::string message, SourcePos pos = {}) {
    report.issues.push_back({std::move(code), Severity::warning, std::move(message), pos});
  };

  if (model.equations.empty()) error("NO_EQUATIONS", "model has no equation");
  if (model.equations.size() > kMaxEquations) {
    error("TOO_MANY_EQUATIONS", "at most 2 equations are allowed, got " +
                                    std::to_string(model.equations.size()));
  }
  if (model.params.size() > kMaxParams) {
    error("PARAM_BUDGET", "at most 12 parameters are allowed, got " +
                              std::to_string(model.params.size()));
  }

  std::set<std::string, std::less<>> states;
  for (const auto& eq : model.equations) {
    if (!states.insert(eq.state).second) error("DUPLICATE_STATE", "state '" + eq.state + "' defined twice");
  }
  std::set<std::string, std::less<>> params;
  for (const auto& p : model.params) {
    if (!params.insert(p.name).second) error("DUPLICATE_PARAM", "parameter '" + p.name + "' declared twice");
    if (states.count(p.name)) error("NAME_CLASH", "parameter '" + p.name + "' shadows a state variable");
  }

  std::set<std::string, std::less<>> used;
  auto check = [&](const Expr& e) {
    visit(e, [&](const Expr& node) {
      if (node.kind() == NodeKind::state && !states.count(node.name())) {
        error("UNDEFINED_STATE", "state variable '" + node.name() + "' is never defined", node.pos());
      }
      if (node.kind() == NodeKind::parameter) {
        used.insert(node.name());
        if (!params.count(node.name())) {
          error("UNDECLARED_PARAM", "parameter '" + node.name() + "' is not declared", node.pos());
        }
      }
    });
  };

  std::size_t jumps = 0;
  for (const auto& eq : model.equations) {
    check(eq.drift);
    if (eq.diffusion) {
      check(*eq.diffusion);
      if (syntactically_negative(*eq.diffusion)) {
        error("NEGATIVE_DIFFUSION", "diffusion of '" + eq.state + "' is a negative constant",
              eq.diffusion->pos());
      }
    }
    if (eq.jump) {
      ++jumps;
      check(eq.jump->intensity);
      check(eq.jump->mean);
      check(eq.jump->stddev);
      if (syntactically_negative(eq.jump->stddev)) {
        error("NEGATIVE_JUMP_STD", "jump standard deviation is a negative constant", eq.jump->stddev.pos());
      }
      if (syntactically_negative(eq.jump->intensity)) {
        error("NEGATIVE_INTENSITY", "jump intensity is a negative constant", eq.jump->intensity.pos());
      }
    }
  }
  if (jumps > 1) error("MULTIPLE_JUMPS", "at most one equation may carry a jump term");

  for (const auto& p : model.params) {
    if (!used.count(p.name)) warning("UNUSED_PARAM", "parameter '" + p.name + "' is never used");
  }

  report.ok = std::none_of(report.issues.begin(), report.issues.end(),
                           [](const ValidationIssue& i) { return i.severity == Severity::error; });
  return report;
}

void require_valid(const SdeModel& model) {
  const auto report = validate_model(model);
  if (report.ok) return;
  std::string msg = "invalid model:";
  for (const auto& issue : report.issues) {
    if (issue.severity == Severity::error) msg += " [" + issue.code + "] " + issue.message + ";";
  }
  throw ModelError(msg);
}

void canonicalize_params(SdeModel& model) {
  std::vector<ParamDecl> ordered;
  for (const auto& name : first_use_order(model)) {
    auto idx = model.param_index(name);
    ordered.push_back(idx ? model.params[*idx] : ParamDecl{name, kDefaultParamValue});
  }
  model.params = std::move(ordered);
}

}  // namespace nst
