#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "nst/model.hpp"
#include "nst/program.hpp"

namespace nst {

inline constexpr double kDivergenceThreshold = 1e6;
inline constexpr std::size_t kDefaultPaths = 100;
inline constexpr double kDefaultDt = 0.01;

struct Grid {
  double t0 = 0.0;
  std::size_t n_steps = 100;
  double dt = kDefaultDt;

  double time(std::size_t step) const { return t0 + static_cast<double>(step) * dt; }
  double horizon() const { return static_cast<double>(n_steps) * dt; }
  /// Throws std::invalid_argument unless dt > 0 and n_steps >= 1.
  void check() const;
};

/// Pre-generated randomness for a simulation run.
///
/// Every entry is a pure function of (seed, path, step, driver, stream)
/// computed with Philox4x32-10 (counter = {step, path, driver, stream},
/// key = seed) followed by a Box-Muller transform on two 53-bit uniforms.
/// Entries are stored path-major, step-minor, driver-innermost. Because no
/// entry depends on the panel's shape, a panel with more paths, steps or
/// drivers extends a smaller one with the same seed and dt.
struct NoisePanel {
  std::uint64_t seed = 0;
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  std::size_t n_drivers = 0;
  double dt = 0.0;
  std::vector<double> brownian;       // N(0, dt)
  std::vector<double> jump_uniforms;  // U(0, 1)
  std::vector<double> jump_normals;   // N(0, 1)

  double dw(std::size_t path, std::size_t step, std::size_t driver) const {
    return brownian[(path * n_steps + step) * n_drivers + driver];
  }
  double jump_uniform(std::size_t path, std::size_t step) const {
    return jump_uniforms[path * n_steps + step];
  }
  double jump_normal(std::size_t path, std::size_t step) const {
    return jump_normals[path * n_steps + step];
  }
};

NoisePanel generate_noise(std::uint64_t seed, std::size_t n_paths, const Grid& grid,
                          std::size_t n_drivers);

/// Standard normal draw at a counter position (exposed for the market's
/// own noise streams).
double counter_normal(std::uint64_t seed, std::uint32_t a, std::uint32_t b, std::uint32_t c,
                      std::uint32_t stream);
double counter_uniform(std::uint64_t seed, std::uint32_t a, std::uint32_t b, std::uint32_t c,
                       std::uint32_t stream);

/// Mixes a base seed with a tag into an independent seed (SplitMix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

struct InitialState {
  double value = 1.0;
  double aux = 0.1;  // initial level of an auxiliary (second) equation
};

template <typename T>
struct BasicPathEnsemble {
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  std::vector<T> values;  // [n_paths x (n_steps + 1)], equation 0
  std::vector<T> aux;     // same shape, equation 1 when present
  std::vector<std::uint8_t> diverged;

  std::span<const T> path(std::size_t p) const {
    return std::span<const T>(values).subspan(p * (n_steps + 1), n_steps + 1);
  }
  std::span<const T> aux_path(std::size_t p) const {
    return std::span<const T>(aux).subspan(p * (n_steps + 1), n_steps + 1);
  }
  std::size_t n_diverged() const {
    std::size_t n = 0;
    for (auto f : diverged) n += f ? 1 : 0;
    return n;
  }
};

using PathEnsemble = BasicPathEnsemble<double>;

/// Level-series summary: mean, population std, skewness, non-excess kurtosis.
struct MomentVector {
  double mean = 0.0;
  double stddev = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;

  std::array<double, 4> as_array() const { return {mean, stddev, skewness, kurtosis}; }
  static MomentVector from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
  friend bool operator==(const MomentVector&, const MomentVector&) = default;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by ensemble_moments when every path diverged.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PathEnsemble simulate(const SdeModel& model, std::span<const double> params,
                      InitialState x0, const Grid& grid, const NoisePanel& noise);
PathEnsemble simulate(const CompiledModel& model, std::span<const double> params,
                      InitialState x0, const Grid& grid, const NoisePanel& noise);

MomentVector moments(std::span<const double> series);
MomentVector ensemble_moments(const PathEnsemble& ensemble);

/// Mean across non-diverged paths at each time index (all paths when every
/// path diverged).
std::vector<double> mean_path(const PathEnsemble& ensemble);

// ---------------------------------------------------------------------------
// Scalar-generic kernels shared by the double and Dual routes.

namespace detail {

void check_dimensions(const CompiledModel& model, std::size_t n_params, const Grid& grid,
                      const NoisePanel& noise);

template <typename T>
BasicPathEnsemble<T> simulate_paths(const CompiledModel& model, std::span<const T> params,
                                    InitialState x0, const Grid& grid, const NoisePanel& noise) {
  using std::isfinite;
  check_dimensions(model, params.size(), grid, noise);
  const std::size_t n_eq = model.equations.size();
  const std::size_t width = grid.n_steps + 1;

  BasicPathEnsemble<T> ens;
  ens.n_paths = noise.n_paths;
  ens.n_steps = grid.n_steps;
  ens.values.assign(noise.n_paths * width, T(0.0));
  if (n_eq > 1) ens.aux.assign(noise.n_paths * width, T(0.0));
  ens.diverged.assign(noise.n_paths, 0);

  std::vector<T> stack(model.stack_depth + 1);
  std::array<T, kMaxEquations> state{};
  std::array<T, kMaxEquations> next{};
  const T dt(grid.dt);

  for (std::size_t p = 0; p < noise.n_paths; ++p) {
    state[0] = T(x0.value);
    state[1] = T(x0.aux);
    bool frozen = false;
    T* v_out = ens.values.data() + p * width;
    T* a_out = n_eq > 1 ? ens.aux.data() + p * width : nullptr;
    v_out[0] = state[0];
    if (a_out) a_out[0] = state[1];
    const std::span<const T> cur(state.data(), n_eq);

    for (std::size_t k = 0; k < grid.n_steps; ++k) {
      if (!frozen) {
        const double t = grid.time(k);
        for (std::size_t e = 0; e < n_eq; ++e) {
          const CompiledEquation& eq = model.equations[e];
          T x = state[e] + eq.drift.eval<T>(cur, t, params, stack.data()) * dt;
          if (eq.diffusion) {
            x += eq.diffusion->eval<T>(cur, t, params, stack.data()) * T(noise.dw(p, k, e));
          }
          if (eq.jump_intensity) {
            const double rate = value_of(eq.jump_intensity->eval<T>(cur, t, params, stack.data()));
            const double prob = std::clamp(rate * grid.dt, 0.0, 1.0);
            if (noise.jump_uniform(p, k) < prob) {
              x += eq.jump_mean->eval<T>(cur, t, params, stack.data()) +
                   eq.jump_stddev->eval<T>(cur, t, params, stack.data()) *
                       T(noise.jump_normal(p, k));
            }
          }
          next[e] = x;
        }
        for (std::size_t e = 0; e < n_eq; ++e) {
          const double v = value_of(next[e]);
          if (!std::isfinite(v) || std::abs(v) > kDivergenceThreshold) frozen = true;
        }
        if (frozen) {
          ens.diverged[p] = 1;
        } else {
          for (std::size_t e = 0; e < n_eq; ++e) state[e] = next[e];
        }
      }
      v_out[k + 1] = state[0];
      if (a_out) a_out[k + 1] = state[1];
    }
  }
  return ens;
}

/// Relative variance floor under which a series counts as constant.
inline constexpr double kConstantTolerance = 1e-28;

template <typename T>
std::array<T, 4> series_moments(std::span<const T> xs) {
  const double n = static_cast<double>(xs.size());
  T sum(0.0);
  for (const T& x : xs) sum += x;
  const T mean = sum / T(n);
  T s2(0.0), s3(0.0), s4(0.0);
  for (const T& x : xs) {
    const T d = x - mean;
    const T d2 = d * d;
    s2 += d2;
    s3 += d2 * d;
    s4 += d2 * d2;
  }
  const T var = s2 / T(n);
  const double mv = value_of(mean);
  if (value_of(var) <= kConstantTolerance * std::max(1.0, mv * mv)) {
    return {mean, T(0.0), T(0.0), T(0.0)};
  }
  using std::sqrt;
  const T sd = sqrt(var);
  const T skew = (s3 / T(n)) / (var * sd);
  const T kurt = (s4 / T(n)) / (var * var);
  return {mean, sd, skew, kurt};
}

/// Per-path moments averaged over non-diverged paths; nullopt when all
/// paths diverged.
template <typename T>
std::optional<std::array<T, 4>> averaged_moments(const BasicPathEnsemble<T>& ens) {
  std::array<T, 4> acc{T(0.0), T(0.0), T(0.0), T(0.0)};
  std::size_t used = 0;
  for (std::size_t p = 0; p < ens.n_paths; ++p) {
    if (ens.diverged[p]) continue;
    const auto m = series_moments<T>(ens.path(p));
    for (std::size_t i = 0; i < 4; ++i) acc[i] += m[i];
    ++used;
  }
  if (used == 0) return std::nullopt;
  for (auto& a : acc) a = a / T(static_cast<double>(used));
  return acc;
}

}  // namespace detail

}  // namespace nst
