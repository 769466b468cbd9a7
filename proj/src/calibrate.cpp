#include "nst/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nst/dual.hpp"

namespace nst {

void LossSpec::check() const {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("moment weights must be >= 0");
    sum += w;
  }
  if (!(sum > 0.0)) throw std::invalid_argument("moment weights must not all be zero");
  if (!(l2_strength >= 0.0)) throw std::invalid_argument("l2_strength must be >= 0");
}

void CalibConfig::check() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("lr_decay must be in (0, 1]");
  if (decay_every < 1) throw std::invalid_argument("decay_every must be >= 1");
  if (!(clip_threshold > 0.0)) throw std::invalid_argument("clip_threshold must be > 0");
  if (!(grad_step > 0.0)) throw std::invalid_argument("grad_step must be > 0");
  if (n_paths < 1) throw std::invalid_argument("n_paths must be >= 1");
  if (dt && !(*dt > 0.0)) throw std::invalid_argument("dt must be > 0");
}

double moment_mae(const MomentVector& sim, const MomentVector& target,
                  const std::array<double, 4>& weights) {
  const auto a = sim.as_array();
  const auto b = target.as_array();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    num += weights[i] * std::abs(a[i] - b[i]);
    den += weights[i];
  }
  return num / den;
}

double unweighted_mae(const MomentVector& sim, const MomentVector& target) {
  return moment_mae(sim, target, {1.0, 1.0, 1.0, 1.0});
}

double divergence_penalty(std::span<const double> params) {
  double s = 0.0;
  for (double p : params) s += p * p;
  return 1e3 + s;
}

namespace {

template <typename T>
T loss_kernel(const CompiledModel& model, std::span<const T> params, const MomentVector& target,
              const LossSpec& spec, const NoisePanel& noise, const Grid& grid, InitialState x0,
              const std::vector<std::uint8_t>& used, bool* all_diverged) {
  const auto ens = detail::simulate_paths<T>(model, params, x0, grid, noise);
  const auto m = detail::averaged_moments<T>(ens);
  if (all_diverged) *all_diverged = !m.has_value();
  if (!m) {
    T s(1e3);
    for (const T& p : params) s += p * p;
    return s;
  }
  const auto tgt = target.as_array();
  T num(0.0);
  double den = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    using std::abs;
    num += T(spec.weights[i]) * abs((*m)[i] - T(tgt[i]));
    den += spec.weights[i];
  }
  T l2(0.0);
  for (std::size_t i = 0; i < params.size(); ++i)
    if (used[i]) l2 += params[i] * params[i];
  return num / T(den) + T(spec.l2_strength) * l2;
}

std::vector<std::uint8_t> used_parameters(const SdeModel& model) {
  std::vector<std::uint8_t> used(model.params.size(), 0);
  auto mark = [&](const Expr& e) {
    for (const auto& name : parameter_names(e))
      if (auto i = model.param_index(name)) used[*i] = 1;
  };
  for (const auto& eq : model.equations) {
    mark(eq.drift);
    if (eq.diffusion) mark(*eq.diffusion);
    if (eq.jump) {
      mark(eq.jump->intensity);
      mark(eq.jump->mean);
      mark(eq.jump->stddev);
    }
  }
  return used;
}

}  // namespace

MomentLoss::MomentLoss(const SdeModel& model, MomentVector target, LossSpec spec, NoisePanel noise,
                       Grid grid, InitialState x0)
    : model_(model),
      compiled_(CompiledModel::compile(model)),
      target_(target),
      spec_(spec),
      noise_(std::move(noise)),
      grid_(grid),
      x0_(x0),
      used_(used_parameters(model)) {
  spec_.check();
}

double MomentLoss::value(std::span<const double> params) const {
  return loss_kernel<double>(compiled_, params, target_, spec_, noise_, grid_, x0_, used_, nullptr);
}

GradientMethod MomentLoss::resolve(GradientMethod method) const {
  if (method != GradientMethod::automatic) return method;
  return compiled_.intensity_depends_on_params() ? GradientMethod::finite_difference
                                                 : GradientMethod::dual;
}

std::pair<double, std::vector<double>> MomentLoss::value_and_gradient(
    std::span<const double> params, GradientMethod method, double grad_step) const {
  const std::size_t n = params.size();
  std::vector<double> g(n, 0.0);
  if (resolve(method) == GradientMethod::dual) {
    std::vector<Dual> dp(n);
    for (std::size_t i = 0; i < n; ++i) dp[i] = Dual::variable(params[i], i);
    const Dual l = loss_kernel<Dual>(compiled_, dp, target_, spec_, noise_, grid_, x0_, used_,
                                     nullptr);
    for (std::size_t i = 0; i < n; ++i) g[i] = l.d[i];
    return {l.v, g};
  }
  std::vector<double> work(params.begin(), params.end());
  for (std::size_t i = 0; i < n; ++i) {
    const double h = grad_step * std::max(std::abs(params[i]), 1.0);
    work[i] = params[i] + h;
    const double up = value(work);
    work[i] = params[i] - h;
    const double down = value(work);
    work[i] = params[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return {value(params), g};
}

std::optional<MomentVector> MomentLoss::simulated_moments(std::span<const double> params) const {
  const auto ens = ensemble(params);
  const auto m = detail::averaged_moments<double>(ens);
  if (!m) return std::nullopt;
  return MomentVector::from_array(*m);
}

PathEnsemble MomentLoss::ensemble(std::span<const double> params) const {
  return simulate(compiled_, params, x0_, grid_, noise_);
}

double loss(const SdeModel& model, std::span<const double> params, const MomentVector& target,
            const LossSpec& spec, const NoisePanel& noise, const Grid& grid, InitialState x0) {
  return MomentLoss(model, target, spec, noise, grid, x0).value(params);
}

std::vector<double> gradient(const SdeModel& model, std::span<const double> params,
                             const MomentVector& target, const LossSpec& spec,
                             const NoisePanel& noise, const Grid& grid, InitialState x0,
                             GradientMethod method, double grad_step) {
  return MomentLoss(model, target, spec, noise, grid, x0).gradient(params, method, grad_step);
}

std::vector<double> clip_by_norm(std::vector<double> g, double threshold) {
  double norm = 0.0;
  for (double x : g) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > threshold) {
    const double scale = threshold / norm;
    for (double& x : g) x *= scale;
  }
  return g;
}

double scheduled_lr(const CalibConfig& config, std::size_t epoch) {
  return config.lr0 * std::pow(config.lr_decay, static_cast<double>(epoch / config.decay_every));
}

Grid calibration_grid(std::size_t n_points, const CalibConfig& config) {
  if (n_points < 2) throw std::invalid_argument("target series needs at least 2 points");
  const double dt = config.dt.value_or(1.0 / static_cast<double>(n_points - 1));
  return Grid{0.0, n_points - 1, dt};
}

CalibrationResult calibrate(const SdeModel& model, std::span<const double> target_series,
                            const CalibConfig& config, const LossSpec& spec) {
  config.check();
  spec.check();
  require_valid(model);
  const Grid grid = calibration_grid(target_series.size(), config);
  const InitialState x0{config.x0.value_or(target_series.front()), config.aux0};
  const MomentVector target = moments(target_series);
  MomentLoss objective(model, target, spec,
                       generate_noise(config.seed, config.n_paths, grid, kMaxEquations), grid, x0);

  CalibrationResult result;
  result.target = target;
  std::vector<double> theta = model.initial_values();
  std::vector<double> best = theta;
  double best_loss = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto [value, g] = objective.value_and_gradient(theta, config.method, config.grad_step);
    bool finite = std::isfinite(value);
    for (double x : g) finite = finite && std::isfinite(x);
    const bool diverged = objective.ensemble(theta).n_diverged() > 0;
    if (diverged) ++result.n_diverged_epochs;
    if (!finite) {
      // Keep the trace finite; a non-finite step is skipped.
      value = divergence_penalty(theta);
      std::fill(g.begin(), g.end(), 0.0);
    }
    result.loss_trace.push_back(value);
    if (value < best_loss) {
      best_loss = value;
      best = theta;
    }
    const auto clipped = clip_by_norm(g, config.clip_threshold);
    double norm = 0.0;
    for (double x : g) norm += x * x;
    const double lr = scheduled_lr(config, epoch);
    result.log.push_back({epoch, lr, value, std::sqrt(norm), diverged});
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * clipped[i];
  }
  const double last = objective.value(theta);
  if (std::isfinite(last) && last < best_loss) {
    best_loss = last;
    best = theta;
  }

  result.theta = best;
  result.best_loss = best_loss;
  if (auto m = objective.simulated_moments(best)) {
    result.fitted = *m;
    result.mae = moment_mae(*m, target, spec.weights);
    result.mae_unweighted = unweighted_mae(*m, target);
  } else {
    result.fitted = MomentVector{};
    result.mae = result.mae_unweighted = std::numeric_limits<double>::infinity();
  }
  return result;
}

void write_calibration_log(const CalibrationResult& result, std::ostream& out) {
  out << "epoch,lr,loss,grad_norm,diverged\n";
  for (const auto& r : result.log) {
    out << r.epoch << ',' << format_number(r.lr) << ',' << format_number(r.loss) << ','
        << format_number(r.grad_norm) << ',' << (r.diverged ? 1 : 0) << '\n';
  }
}

}  // namespace nst
