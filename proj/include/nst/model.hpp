#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nst/expr.hpp"

namespace nst {

inline constexpr std::size_t kMaxParams = 12;
inline constexpr std::size_t kMaxEquations = 2;
inline constexpr double kDefaultParamValue = 0.1;

struct JumpSpec {
  Expr intensity;  // events per unit time
  Expr mean;
  Expr stddev;

  friend bool operator==(const JumpSpec&, const JumpSpec&) = default;
};

struct Equation {
  std::string state;
  Expr drift;
  std::optional<Expr> diffusion;
  std::optional<JumpSpec> jump;

  friend bool operator==(const Equation&, const Equation&) = default;
};

struct ParamDecl {
  std::string name;
  double initial = kDefaultParamValue;

  friend bool operator==(const ParamDecl&, const ParamDecl&) = default;
};

/// A 1-2 equation SDE. Equation 0 is the value process; equation 1, when
/// present, is an auxiliary process (e.g. stochastic volatility) driven by
/// an independent Brownian motion.
struct SdeModel {
  std::vector<Equation> equations;
  std::vector<ParamDecl> params;
  std::string source;

  std::optional<std::size_t> param_index(std::string_view name) const;
  std::vector<double> initial_values() const;
  std::size_t driver_count() const { return equations.size(); }
  bool has_jump() const;
};

/// Structural equality: equations and parameter declarations; source text
/// is ignored.
bool structurally_equal(const SdeModel& a, const SdeModel& b);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, SourcePos pos, std::string token);

  SourcePos pos() const { return pos_; }
  const std::string& token() const { return token_; }
  const std::string& detail() const { return detail_; }

 private:
  SourcePos pos_;
  std::string token_;
  std::string detail_;
};

SdeModel parse_model(std::string_view source);

/// Canonical text: declarations in first-use order, one equation per line,
/// fully parenthesized subexpressions. No trailing newline.
std::string print_model(const SdeModel& model);

enum class Severity { warning, error };

struct ValidationIssue {
  std::string code;
  Severity severity = Severity::error;
  std::string message;
  SourcePos pos;
};

struct ValidationReport {
  bool ok = true;
  std::vector<ValidationIssue> issues;

  bool has(std::string_view code) const;
};

ValidationReport validate_model(const SdeModel& model);

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws ModelError listing the error-severity issues when validation fails.
void require_valid(const SdeModel& model);

/// Rebuilds the parameter list from the equations in first-use order,
/// keeping initial values of existing declarations (new names get the
/// default) and dropping unused ones.
void canonicalize_params(SdeModel& model);

}  // namespace nst
