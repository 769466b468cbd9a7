#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "nst/engine.hpp"
#include "nst/model.hpp"

namespace nst {

struct LossSpec {
  std::array<double, 4> weights{0.35, 0.35, 0.15, 0.15};
  double l2_strength = 1e-5;

  /// Throws std::invalid_argument for negative weights or a zero weight sum.
  void check() const;
};

enum class GradientMethod {
  automatic,  // dual numbers unless the jump intensity depends on parameters
  dual,
  finite_difference,
};

struct CalibConfig {
  std::size_t epochs = 100;
  double lr0 = 0.05;
  double lr_decay = 0.9;
  std::size_t decay_every = 10;
  double clip_threshold = 5.0;
  double grad_step = 1e-4;  // relative: h = grad_step * max(|theta|, 1)
  std::uint64_t seed = 0;
  std::size_t n_paths = kDefaultPaths;
  std::optional<double> x0;  // defaults to the first observation
  std::optional<double> dt;  // defaults to 1 / (n - 1)
  double aux0 = 0.1;
  GradientMethod method = GradientMethod::automatic;

  void check() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  bool diverged = false;
};

struct CalibrationResult {
  std::vector<double> theta;
  std::vector<double> loss_trace;
  double best_loss = 0.0;
  double mae = 0.0;             // weighted moment MAE at theta
  double mae_unweighted = 0.0;  // plain mean of the four absolute errors
  MomentVector fitted;
  MomentVector target;
  std::size_t n_diverged_epochs = 0;
  std::vector<EpochRecord> log;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// sum_i w_i |sim_i - target_i| / sum_i w_i
double moment_mae(const MomentVector& sim, const MomentVector& target,
                  const std::array<double, 4>& weights);
double unweighted_mae(const MomentVector& sim, const MomentVector& target);

/// Penalty returned when every simulated path diverges.
double divergence_penalty(std::span<const double> params);

/// Moment-matching loss bound to one model, target, noise panel and grid
/// (common random numbers).
class MomentLoss {
 public:
  MomentLoss(const SdeModel& model, MomentVector target, LossSpec spec, NoisePanel noise, Grid grid,
             InitialState x0);

  double value(std::span<const double> params) const;
  /// Loss and gradient together; the loss value matches value() bitwise.
  std::pair<double, std::vector<double>> value_and_gradient(std::span<const double> params,
                                                            GradientMethod method,
                                                            double grad_step = 1e-4) const;
  std::vector<double> gradient(std::span<const double> params, GradientMethod method,
                               double grad_step = 1e-4) const {
    return value_and_gradient(params, method, grad_step).second;
  }

  /// Ensemble moments at params; nullopt when every path diverged.
  std::optional<MomentVector> simulated_moments(std::span<const double> params) const;
  PathEnsemble ensemble(std::span<const double> params) const;

  GradientMethod resolve(GradientMethod method) const;
  const SdeModel& model() const { return model_; }
  const MomentVector& target() const { return target_; }
  const LossSpec& spec() const { return spec_; }
  const Grid& grid() const { return grid_; }

 private:
  SdeModel model_;
  CompiledModel compiled_;
  MomentVector target_;
  LossSpec spec_;
  NoisePanel noise_;
  Grid grid_;
  InitialState x0_;
  std::vector<std::uint8_t> used_;  // parameters referenced by the model
};

double loss(const SdeModel& model, std::span<const double> params, const MomentVector& target,
            const LossSpec& spec, const NoisePanel& noise, const Grid& grid, InitialState x0);
std::vector<double> gradient(const SdeModel& model, std::span<const double> params,
                             const MomentVector& target, const LossSpec& spec,
                             const NoisePanel& noise, const Grid& grid, InitialState x0,
                             GradientMethod method = GradientMethod::automatic,
                             double grad_step = 1e-4);

/// Rescales g so that its Euclidean norm is at most threshold.
std::vector<double> clip_by_norm(std::vector<double> g, double threshold);
double scheduled_lr(const CalibConfig& config, std::size_t epoch);

/// Grid spanning the target series: n - 1 steps of config.dt or 1 / (n - 1).
Grid calibration_grid(std::size_t n_points, const CalibConfig& config);

CalibrationResult calibrate(const SdeModel& model, std::span<const double> target_series,
                            const CalibConfig& config = {}, const LossSpec& spec = {});

/// One CSV row per epoch: epoch,lr,loss,grad_norm,diverged
void write_calibration_log(const CalibrationResult& result, std::ostream& out);

}  // namespace nst
