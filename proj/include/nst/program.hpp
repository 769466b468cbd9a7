#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nst/dual.hpp"
#include "nst/model.hpp"

namespace nst {

enum class OpCode : std::uint8_t {
  constant, state, time, param,
  neg, add, sub, mul, div, pow,
  sqrt, exp, log, sin, cos, tanh, abs, max, min,
};

struct Instr {
  OpCode op = OpCode::constant;
  std::uint32_t index = 0;
  double value = 0.0;
};

/// Postfix form of an Expr with symbols resolved to slot indices, evaluated
/// for double or Dual scalars.
class Program {
 public:
  Program() = default;

  /// `states` and `params` give the slot order for symbol lookup. Throws
  /// ModelError for symbols missing from either list.
  static Program compile(const Expr& expr, std::span<const std::string> states,
                         std::span<const ParamDecl> params);

  std::size_t stack_depth() const { return depth_; }
  bool uses_params() const { return uses_params_; }
  std::span<const Instr> code() const { return code_; }

  template <typename T>
  T eval(std::span<const T> states, double t, std::span<const T> params, T* stack) const {
    std::size_t sp = 0;
    for (const Instr& in : code_) {
      switch (in.op) {
        case OpCode::constant: stack[sp++] = T(in.value); break;
        case OpCode::state: stack[sp++] = states[in.index]; break;
        case OpCode::time: stack[sp++] = T(t); break;
        case OpCode::param: stack[sp++] = params[in.index]; break;
        case OpCode::neg: stack[sp - 1] = -stack[sp - 1]; break;
        case OpCode::add: --sp; stack[sp - 1] = stack[sp - 1] + stack[sp]; break;
        case OpCode::sub: --sp; stack[sp - 1] = stack[sp - 1] - stack[sp]; break;
        case OpCode::mul: --sp; stack[sp - 1] = stack[sp - 1] * stack[sp]; break;
        case OpCode::div: --sp; stack[sp - 1] = stack[sp - 1] / stack[sp]; break;
        case OpCode::pow: {
          --sp;
          using std::pow;
          stack[sp - 1] = pow(stack[sp - 1], stack[sp]);
          break;
        }
        case OpCode::sqrt: stack[sp - 1] = clamped_sqrt(stack[sp - 1]); break;
        case OpCode::exp: { using std::exp; stack[sp - 1] = exp(stack[sp - 1]); break; }
        case OpCode::log: stack[sp - 1] = clamped_log(stack[sp - 1]); break;
        case OpCode::sin: { using std::sin; stack[sp - 1] = sin(stack[sp - 1]); break; }
        case OpCode::cos: { using std::cos; stack[sp - 1] = cos(stack[sp - 1]); break; }
        case OpCode::tanh: { using std::tanh; stack[sp - 1] = tanh(stack[sp - 1]); break; }
        case OpCode::abs: { using std::abs; stack[sp - 1] = abs(stack[sp - 1]); break; }
        case OpCode::max:
          --sp;
          if (value_of(stack[sp]) > value_of(stack[sp - 1])) stack[sp - 1] = stack[sp];
          break;
        case OpCode::min:
          --sp;
          if (value_of(stack[sp]) < value_of(stack[sp - 1])) stack[sp - 1] = stack[sp];
          break;
      }
    }
    return stack[0];
  }

 private:
  std::vector<Instr> code_;
  std::size_t depth_ = 0;
  bool uses_params_ = false;
};

struct CompiledEquation {
  Program drift;
  std::optional<Program> diffusion;
  std::optional<Program> jump_intensity;
  std::optional<Program> jump_mean;
  std::optional<Program> jump_stddev;
};

/// A validated SdeModel lowered to programs; state slot i is equation i.
struct CompiledModel {
  std::vector<CompiledEquation> equations;
  std::size_t n_params = 0;
  std::size_t stack_depth = 1;
  std::optional<std::size_t> jump_equation;

  /// True when the jump intensity depends on a parameter, which makes the
  /// pathwise loss piecewise constant in that parameter.
  bool intensity_depends_on_params() const;

  /// Validates then compiles. Throws ModelError.
  static CompiledModel compile(const SdeModel& model);
};

}  // namespace nst
