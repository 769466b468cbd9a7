#include "nst/program.hpp"

#include <algorithm>

namespace nst {

namespace {

OpCode opcode_for(Function f) {
  switch (f) {
    case Function::sqrt: return OpCode::sqrt;
    case Function::exp: return OpCode::exp;
    case Function::log: return OpCode::log;
    case Function::sin: return OpCode::sin;
    case Function::cos: return OpCode::cos;
    case Function::tanh: return OpCode::tanh;
    case Function::abs: return OpCode::abs;
    case Function::max: return OpCode::max;
    case Function::min: return OpCode::min;
  }
  return OpCode::sqrt;
}

OpCode opcode_for(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return OpCode::add;
    case BinaryOp::sub: return OpCode::sub;
    case BinaryOp::mul: return OpCode::mul;
    case BinaryOp::div: return OpCode::div;
    case BinaryOp::pow: return OpCode::pow;
  }
  return OpCode::add;
}

struct Emitter {
  std::span<const std::string> states;
  std::span<const ParamDecl> params;
  std::vector<Instr> code;
  std::size_t depth = 0;
  std::size_t max_depth = 0;
  bool uses_params = false;

  void push(Instr in) {
    code.push_back(in);
    ++depth;
    max_depth = std::max(max_depth, depth);
  }

  void emit(const Expr& e) {
    switch (e.kind()) {
      case NodeKind::constant:
        push({OpCode::constant, 0, e.value()});
        return;
      case NodeKind::time:
        push({OpCode::time, 0, 0.0});
        return;
      case NodeKind::state: {
        auto it = std::find(states.begin(), states.end(), e.name());
        if (it == states.end()) throw ModelError("unknown state variable '" + e.name() + "'");
        push({OpCode::state, static_cast<std::uint32_t>(it - states.begin()), 0.0});
        return;
      }
      case NodeKind::parameter: {
        auto it = std::find_if(params.begin(), params.end(),
                               [&](const ParamDecl& p) { return p.name == e.name(); });
        if (it == params.end()) throw ModelError("unknown parameter '" + e.name() + "'");
        push({OpCode::param, static_cast<std::uint32_t>(it - params.begin()), 0.0});
        uses_params = true;
        return;
      }
      case NodeKind::unary:
        emit(e.children()[0]);
        code.push_back({OpCode::neg, 0, 0.0});
        return;
      case NodeKind::binary:
        emit(e.children()[0]);
        emit(e.children()[1]);
        code.push_back({opcode_for(e.binary_op()), 0, 0.0});
        --depth;
        return;
      case NodeKind::call:
        for (const Expr& arg : e.children()) emit(arg);
        code.push_back({opcode_for(e.function()), 0, 0.0});
        depth -= e.children().size() - 1;
        return;
    }
  }
};

}  // namespace

Program Program::compile(const Expr& expr, std::span<const std::string> states,
                         std::span<const ParamDecl> params) {
  Emitter em{states, params, {}, 0, 0, false};
  em.emit(expr);
  Program p;
  p.code_ = std::move(em.code);
  p.depth_ = em.max_depth;
  p.uses_params_ = em.uses_params;
  return p;
}

bool CompiledModel::intensity_depends_on_params() const {
  for (const auto& eq : equations) {
    if (eq.jump_intensity && eq.jump_intensity->uses_params()) return true;
  }
  return false;
}

CompiledModel CompiledModel::compile(const SdeModel& model) {
  require_valid(model);
  std::vector<std::string> states;
  for (const auto& eq : model.equations) states.push_back(eq.state);

  CompiledModel out;
  out.n_params = model.params.size();
  auto lower = [&](const Expr& e) {
    Program p = Program::compile(e, states, model.params);
    out.stack_depth = std::max(out.stack_depth, p.stack_depth());
    return p;
  };
  for (std::size_t i = 0; i < model.equations.size(); ++i) {
    const Equation& eq = model.equations[i];
    CompiledEquation ce;
    ce.drift = lower(eq.drift);
    if (eq.diffusion) ce.diffusion = lower(*eq.diffusion);
    if (eq.jump) {
      ce.jump_intensity = lower(eq.jump->intensity);
      ce.jump_mean = lower(eq.jump->mean);
      ce.jump_stddev = lower(eq.jump->stddev);
      out.jump_equation = i;
    }
    out.equations.push_back(std::move(ce));
  }
  return out;
}

}  // namespace nst
