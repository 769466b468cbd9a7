#include "nst/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>

#include "json.hpp"

#include "nst/chart.hpp"
#include "nst/prompts.hpp"

namespace nst {

std::string_view to_string(PromptMode mode) {
  return mode == PromptMode::parsimonious ? "parsimonious" : "standard";
}

PromptMode prompt_mode_from_string(std::string_view s) {
  if (s == "standard") return PromptMode::standard;
  if (s == "parsimonious") return PromptMode::parsimonious;
  throw std::invalid_argument("unknown prompt mode '" + std::string(s) + "'");
}

PromptTemplate PromptTemplate::defaults(PromptMode mode, std::optional<std::string> domain) {
  return {std::string(prompt_asset("critic")), std::string(prompt_asset("builder")), mode,
          std::move(domain)};
}

namespace {

std::string decorate(const std::string& instruction, const PromptTemplate& p) {
  std::string out = instruction;
  if (p.domain_context) {
    std::string line(prompt_asset("domain"));
    const auto at = line.find("{context}");
    line.replace(at, 9, *p.domain_context);
    out += "\n" + line;
  }
  if (p.mode == PromptMode::parsimonious) out += "\n" + std::string(prompt_asset("brevity"));
  return out;
}

}  // namespace

std::string PromptTemplate::critic_text() const { return decorate(critic_instruction, *this); }
std::string PromptTemplate::builder_text() const { return decorate(builder_instruction, *this); }

std::string_view to_string(TermFamily family) {
  switch (family) {
    case TermFamily::mean_reversion: return "mean reversion";
    case TermFamily::sqrt_diffusion: return "square-root diffusion";
    case TermFamily::sinusoid: return "sinusoidal drift";
    case TermFamily::jump: return "jump";
    case TermFamily::time_scaled_diffusion: return "time-scaled diffusion";
  }
  return "";
}

namespace {

bool contains(const Expr& e, const std::function<bool(const Expr&)>& pred) {
  bool found = false;
  visit(e, [&](const Expr& n) { found = found || pred(n); });
  return found;
}

bool is_reverting_difference(const Expr& n, const std::string& state) {
  if (n.kind() != NodeKind::binary || n.binary_op() != BinaryOp::sub) return false;
  const Expr& a = n.children()[0];
  const Expr& b = n.children()[1];
  auto is_state = [&](const Expr& x) { return x.kind() == NodeKind::state && x.name() == state; };
  return (is_state(b) && !references_any_state(a)) || (is_state(a) && !references_any_state(b));
}

bool is_periodic_call(const Expr& n) {
  return n.kind() == NodeKind::call &&
         (n.function() == Function::sin || n.function() == Function::cos) && references_time(n);
}

bool is_state_sqrt(const Expr& n) {
  return n.kind() == NodeKind::call && n.function() == Function::sqrt && references_any_state(n);
}

}  // namespace

bool has_family(const SdeModel& model, TermFamily family) {
  if (model.equations.empty()) return false;
  const Equation& eq = model.equations[0];
  switch (family) {
    case TermFamily::mean_reversion:
      return contains(eq.drift, [&](const Expr& n) { return is_reverting_difference(n, eq.state); });
    case TermFamily::sinusoid:
      return contains(eq.drift, is_periodic_call);
    case TermFamily::jump:
      return eq.jump.has_value();
    case TermFamily::sqrt_diffusion:
      return eq.diffusion && contains(*eq.diffusion, is_state_sqrt);
    case TermFamily::time_scaled_diffusion:
      return eq.diffusion && references_time(*eq.diffusion);
  }
  return false;
}

SdeModel with_values(SdeModel model, std::span<const double> theta) {
  if (theta.size() != model.params.size()) throw std::invalid_argument("theta length mismatch");
  for (std::size_t i = 0; i < theta.size(); ++i) model.params[i].initial = theta[i];
  return model;
}

std::string describe(const Diagnostics& d) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "Mean-reversion slope %.4g. Periodicity ratio %.4g at frequency %.4g. "
                "Level-volatility correlation %.4g. Residual increment kurtosis %.4g.",
                d.mean_reversion_slope, d.periodicity_ratio, d.dominant_frequency,
                d.level_vol_correlation, d.residual_kurtosis);
  return buf;
}

// ---------------------------------------------------------------------------
// Term edits

namespace {

bool name_taken(const SdeModel& m, const std::string& name) {
  if (m.param_index(name)) return true;
  for (const auto& eq : m.equations)
    if (eq.state == name) return true;
  return false;
}

std::string fresh_name(const SdeModel& m, const std::string& base) {
  if (!name_taken(m, base)) return base;
  for (int i = 2;; ++i) {
    const std::string candidate = base + std::to_string(i);
    if (!name_taken(m, candidate)) return candidate;
  }
}

// Adds a parameter declaration (values of new names are set after
// canonicalization, which keeps existing initial values).
struct Builder {
  SdeModel model;
  std::vector<ParamDecl> added;

  Expr param(const std::string& base, double value) {
    std::string name = fresh_name(model, base);
    for (const auto& a : added)
      if (a.name == name) name = fresh_name(model, name + "_");
    added.push_back({name, value});
    model.params.push_back({name, value});
    return Expr::parameter(name);
  }

  std::string finish() {
    canonicalize_params(model);
    for (const auto& a : added)
      if (auto i = model.param_index(a.name)) model.params[*i].initial = a.initial;
    return print_model(model);
  }
};

struct Term {
  Expr expr;
  bool negative = false;
};

void flatten_sum(const Expr& e, bool negative, std::vector<Term>& out) {
  if (e.kind() == NodeKind::binary &&
      (e.binary_op() == BinaryOp::add || e.binary_op() == BinaryOp::sub)) {
    flatten_sum(e.children()[0], negative, out);
    flatten_sum(e.children()[1], e.binary_op() == BinaryOp::sub ? !negative : negative, out);
    return;
  }
  out.push_back({e, negative});
}

Expr rebuild_sum(const std::vector<Term>& terms) {
  if (terms.empty()) return Expr::constant(0.0);
  Expr acc = terms[0].negative ? Expr::negate(terms[0].expr) : terms[0].expr;
  for (std::size_t i = 1; i < terms.size(); ++i)
    acc = terms[i].negative ? acc - terms[i].expr : acc + terms[i].expr;
  return acc;
}

void flatten_product(const Expr& e, std::vector<Expr>& out) {
  if (e.kind() == NodeKind::binary && e.binary_op() == BinaryOp::mul) {
    flatten_product(e.children()[0], out);
    flatten_product(e.children()[1], out);
    return;
  }
  out.push_back(e);
}

Expr rebuild_product(const std::vector<Expr>& factors) {
  if (factors.empty()) return Expr::constant(1.0);
  Expr acc = factors[0];
  for (std::size_t i = 1; i < factors.size(); ++i) acc = acc * factors[i];
  return acc;
}

bool has_param_factor(const Expr& e, const std::string& name) {
  std::vector<Expr> fs;
  flatten_product(e, fs);
  return std::any_of(fs.begin(), fs.end(), [&](const Expr& f) {
    return f.kind() == NodeKind::parameter && f.name() == name;
  });
}

// (1 + X) with `name` a multiplicative factor of X.
bool is_scaling_factor(const Expr& f, const std::string& name) {
  if (f.kind() != NodeKind::binary || f.binary_op() != BinaryOp::add) return false;
  const Expr& a = f.children()[0];
  const Expr& b = f.children()[1];
  auto one = [](const Expr& x) { return x.kind() == NodeKind::constant && x.value() == 1.0; };
  return (one(a) && has_param_factor(b, name)) || (one(b) && has_param_factor(a, name));
}

// Removes the smallest unit that a negligible parameter scales. Returns the
// edited model, or nullopt when the parameter does not scale a removable
// unit.
std::optional<std::pair<SdeModel, std::string>> remove_scaled_unit(const SdeModel& m,
                                                                   const std::string& name,
                                                                   double negligible) {
  SdeModel out = m;
  Equation& eq = out.equations[0];

  std::vector<Term> terms;
  flatten_sum(eq.drift, false, terms);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (has_param_factor(terms[i].expr, name)) {
      const std::string removed = to_string(terms[i].expr);
      terms.erase(terms.begin() + static_cast<long>(i));
      eq.drift = rebuild_sum(terms);
      return std::make_pair(out, "drift term " + removed);
    }
  }
  if (eq.diffusion) {
    std::vector<Expr> factors;
    flatten_product(*eq.diffusion, factors);
    for (std::size_t i = 0; i < factors.size(); ++i) {
      if (is_scaling_factor(factors[i], name)) {
        const std::string removed = to_string(factors[i]);
        factors.erase(factors.begin() + static_cast<long>(i));
        eq.diffusion = rebuild_product(factors);
        return std::make_pair(out, "diffusion factor " + removed);
      }
    }
  }
  if (eq.jump) {
    const JumpSpec& j = *eq.jump;
    auto small = [&](const Expr& e) {
      if (e.kind() == NodeKind::constant) return std::abs(e.value()) < negligible;
      if (e.kind() != NodeKind::parameter) return false;
      return std::abs(m.params[*m.param_index(e.name())].initial) < negligible;
    };
    const bool scales_intensity = has_param_factor(j.intensity, name);
    const bool in_size = references_parameter(j.mean, name) || references_parameter(j.stddev, name);
    if (scales_intensity || (in_size && small(j.mean) && small(j.stddev))) {
      eq.jump.reset();
      return std::make_pair(out, std::string("jump term"));
    }
  }
  return std::nullopt;
}

bool tried(TermFamily f, const SdeModel& current, std::span<const SdeModel> history) {
  if (has_family(current, f)) return true;
  return std::any_of(history.begin(), history.end(),
                     [&](const SdeModel& h) { return has_family(h, f); });
}

}  // namespace

ModelProposal scripted_propose(const SdeModel& current, std::span<const SdeModel> history,
                               const Diagnostics& d, PromptMode mode, const Thresholds& th) {
  if (current.equations.empty()) throw std::invalid_argument("current model has no equations");

  if (mode == PromptMode::parsimonious) {
    for (const auto& p : current.params) {
      if (std::abs(p.initial) >= th.negligible) continue;
      if (auto edit = remove_scaled_unit(current, p.name, th.negligible)) {
        SdeModel m = edit->first;
        canonicalize_params(m);
        return {print_model(m), "removed negligible " + edit->second + " (|" + p.name + "| < " +
                                    format_number(th.negligible) + ")"};
      }
    }
  }

  Builder b{current, {}};
  Equation& eq = b.model.equations[0];
  const Expr state = Expr::state(eq.state);
  const bool constant_diffusion = eq.diffusion && !references_any_state(*eq.diffusion);

  if (d.mean_reversion_slope < th.reversion_slope &&
      !tried(TermFamily::mean_reversion, current, history)) {
    const Expr theta = b.param("theta", 0.0);
    const Expr level = b.param("m", d.level_mean);
    eq.drift = eq.drift + theta * (level - state);
    return {b.finish(), "add mean reversion: slope " + format_number(d.mean_reversion_slope)};
  }
  if (d.level_vol_correlation > th.level_vol && constant_diffusion &&
      !tried(TermFamily::sqrt_diffusion, current, history)) {
    const Expr root = Expr::call(Function::sqrt, {state});
    const double scale = 1.0 / std::sqrt(std::max(d.level_mean, 1e-6));
    if (eq.diffusion->kind() == NodeKind::parameter) {
      const auto i = *b.model.param_index(eq.diffusion->name());
      b.model.params[i].initial *= scale;
      eq.diffusion = *eq.diffusion * root;
    } else {
      eq.diffusion = b.param("s", scale) * *eq.diffusion * root;
    }
    return {b.finish(),
            "replace constant diffusion with square-root diffusion: level-volatility correlation " +
                format_number(d.level_vol_correlation)};
  }
  if (d.periodicity_ratio > th.periodicity && !tried(TermFamily::sinusoid, current, history)) {
    const Expr amp = b.param("A", 0.0);
    const Expr freq = b.param("f", d.dominant_frequency);
    const Expr phase = b.param("phi", 0.0);
    const Expr arg = Expr::constant(2.0) * Expr::constant(std::numbers::pi) * freq * Expr::time() + phase;
    eq.drift = eq.drift + amp * Expr::call(Function::sin, {arg});
    return {b.finish(), "add sinusoidal drift: periodicity ratio " + format_number(d.periodicity_ratio)};
  }
  if (d.residual_kurtosis > th.kurtosis && !tried(TermFamily::jump, current, history)) {
    bool other_jump = false;
    for (std::size_t e = 1; e < b.model.equations.size(); ++e)
      other_jump = other_jump || b.model.equations[e].jump.has_value();
    if (!other_jump) {
      const Expr lam = b.param("lam", 1.0);
      const Expr jm = b.param("jm", 0.0);
      const Expr js = b.param("js", 0.0);
      b.model.equations[0].jump = JumpSpec{lam, jm, js};
      return {b.finish(), "add jump term: residual kurtosis " + format_number(d.residual_kurtosis)};
    }
  }
  if (eq.diffusion && !tried(TermFamily::time_scaled_diffusion, current, history)) {
    const Expr slope = b.param("b", 0.0);
    eq.diffusion = *eq.diffusion * (Expr::constant(1.0) + slope * Expr::time());
    return {b.finish(), "add time-scaled diffusion factor"};
  }
  return {print_model(current), "no change"};
}

ModelProposal scripted_propose(std::span<const SdeModel> history, const Diagnostics& diagnostics,
                               PromptMode mode, const Thresholds& thresholds) {
  if (history.empty()) throw std::invalid_argument("model history is empty");
  return scripted_propose(history.back(), history, diagnostics, mode, thresholds);
}

Critique ScriptedProposer::critique(const RoundContext& ctx) {
  return {describe(ctx.diagnostics), ctx.diagnostics};
}

ModelProposal ScriptedProposer::build(const Critique& critique, const RoundContext& ctx) {
  return scripted_propose(*ctx.current, ctx.history, critique.diagnostics, ctx.prompt->mode,
                          thresholds_);
}

// ---------------------------------------------------------------------------
// Loop

FitSetup fit_setup(std::span<const double> dataset, const CalibConfig& config) {
  FitSetup s;
  s.grid = calibration_grid(dataset.size(), config);
  s.noise = generate_noise(config.seed, config.n_paths, s.grid, kMaxEquations);
  s.x0 = {config.x0.value_or(dataset.front()), config.aux0};
  return s;
}

PathEnsemble fitted_ensemble(const SdeModel& calibrated, const FitSetup& setup) {
  return simulate(calibrated, calibrated.initial_values(), setup.x0, setup.grid, setup.noise);
}

namespace {

std::filesystem::path round_dir(const std::filesystem::path& root, std::size_t i) {
  return root / ("round_" + std::to_string(i));
}

}  // namespace

DiscoveryTrace run_discovery(std::span<const double> dataset, Proposer& proposer,
                             const PromptTemplate& prompt, const DiscoveryConfig& config) {
  if (config.rounds < 1) throw std::invalid_argument("rounds must be >= 1");
  const FitSetup setup = fit_setup(dataset, config.calib);
  if (config.out_dir) std::filesystem::create_directories(*config.out_dir);

  DiscoveryTrace trace;
  std::vector<SdeModel> history;
  std::vector<double> history_mae;

  auto render = [&](const DiscoveryRound& r) {
    if (!config.out_dir) return;
    const auto dir = round_dir(*config.out_dir, r.index);
    std::filesystem::create_directories(dir);
    render_fit_chart(dataset, fitted_ensemble(r.model, setup), dir / "chart.png");
  };

  auto fit = [&](const SdeModel& model, DiscoveryRound& r) {
    auto result = calibrate(model, dataset, config.calib, config.loss);
    r.model = with_values(model, result.theta);
    r.mae = result.mae;
    r.calibration = std::move(result);
  };

  {
    DiscoveryRound r0;
    fit(parse_model(config.start_model), r0);
    r0.best_mae = *r0.mae;
    r0.best_round = 0;
    history.push_back(r0.model);
    history_mae.push_back(*r0.mae);
    render(r0);
    trace.rounds.push_back(std::move(r0));
  }

  for (std::size_t i = 1; i < config.rounds; ++i) {
    const DiscoveryRound& best = trace.rounds[trace.rounds.back().best_round];
    DiscoveryRound r;
    r.index = i;
    r.best_mae = best.best_mae;
    r.best_round = best.index;

    RoundContext ctx;
    ctx.round = i;
    ctx.dataset = dataset;
    ctx.history = history;
    ctx.history_mae = history_mae;
    ctx.current = &best.model;
    ctx.current_mae = *best.mae;
    const auto ens = fitted_ensemble(best.model, setup);
    ctx.diagnostics = residual_diagnostics(dataset, ens, setup.grid.dt);
    if (proposer.wants_chart()) ctx.chart_png = encode_png(draw_fit_chart(dataset, ens).canvas);
    ctx.prompt = &prompt;
    ctx.trace_dir = config.out_dir;

    r.critique.diagnostics = ctx.diagnostics;
    try {
      r.critique = proposer.critique(ctx);
      r.critique.diagnostics = ctx.diagnostics;
      r.proposal = proposer.build(r.critique, ctx);
      const SdeModel proposed = parse_model(r.proposal->dsl_source);
      require_valid(proposed);
      fit(proposed, r);
    } catch (const std::exception& e) {
      r.failed = true;
      r.failure = e.what();
      r.model = best.model;
      r.mae.reset();
      r.calibration.reset();
      ++trace.failures;
    }
    if (!r.failed) {
      history.push_back(r.model);
      history_mae.push_back(*r.mae);
      if (*r.mae <= r.best_mae) {
        r.best_mae = *r.mae;
        r.best_round = i;
      }
    }
    render(r);
    trace.rounds.push_back(std::move(r));
  }
  return trace;
}

void write_discovery_trace(const DiscoveryTrace& trace, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : trace.rounds) {
    const auto rd = round_dir(dir, r.index);
    std::filesystem::create_directories(rd);
    {
      std::ofstream f(rd / "model.sde");
      if (!f) throw std::runtime_error("cannot write " + (rd / "model.sde").string());
      f << print_model(r.model) << '\n';
    }
    if (r.calibration) {
      std::ofstream f(rd / "calibration.csv");
      write_calibration_log(*r.calibration, f);
    }
    if (!r.critique.text.empty() || r.proposal || r.failed) {
      std::ofstream f(rd / "critique.txt");
      f << r.critique.text << '\n';
      if (r.proposal) f << "\nrationale: " << r.proposal->rationale << '\n';
      if (r.failed) f << "\nfailure: " << r.failure << '\n';
    }
    nlohmann::json j;
    j["round"] = r.index;
    j["mae"] = r.mae ? nlohmann::json(*r.mae) : nlohmann::json(nullptr);
    j["mae_unweighted"] =
        r.calibration ? nlohmann::json(r.calibration->mae_unweighted) : nlohmann::json(nullptr);
    j["best_mae"] = r.best_mae;
    j["best_round"] = r.best_round;
    j["n_params"] = r.model.params.size();
    j["failed"] = r.failed;
    j["model"] = print_model(r.model);
    const auto& d = r.critique.diagnostics;
    if (r.index > 0) {
      j["diagnostics"] = {{"mean_reversion_slope", d.mean_reversion_slope},
                          {"periodicity_ratio", d.periodicity_ratio},
                          {"dominant_frequency", d.dominant_frequency},
                          {"level_vol_correlation", d.level_vol_correlation},
                          {"residual_kurtosis", d.residual_kurtosis}};
    }
    rounds.push_back(std::move(j));
  }
  nlohmann::json out;
  out["rounds"] = std::move(rounds);
  out["failures"] = trace.failures;
  out["best_round"] = trace.rounds.back().best_round;
  out["best_mae"] = trace.rounds.back().best_mae;
  std::ofstream f(dir / "trace.json");
  if (!f) throw std::runtime_error("cannot write " + (dir / "trace.json").string());
  f << out.dump(2) << '\n';
}

}  // namespace nst
