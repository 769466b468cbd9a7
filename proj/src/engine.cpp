#include "nst/engine.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace nst {

void Grid::check() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("grid dt must be > 0");
  if (n_steps < 1) throw std::invalid_argument("grid needs at least one step");
}

namespace {

// Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
struct Philox {
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> c,
                                            std::array<std::uint32_t, 2> k) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        k[0] += kW0;
        k[1] += kW1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
      c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
    }
    return c;
  }
};

std::array<std::uint32_t, 4> draw(std::uint64_t seed, std::uint32_t a, std::uint32_t b,
                                  std::uint32_t c, std::uint32_t stream) {
  return Philox::block({a, b, c, stream},
                       {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
}

double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return static_cast<double>(bits) * 0x1.0p-53;  // [0, 1)
}

enum Stream : std::uint32_t { kBrownian = 0, kJumpUniform = 1, kJumpNormal = 2 };

}  // namespace

double counter_uniform(std::uint64_t seed, std::uint32_t a, std::uint32_t b, std::uint32_t c,
                       std::uint32_t stream) {
  const auto x = draw(seed, a, b, c, stream);
  return to_unit(x[0], x[1]);
}

double counter_normal(std::uint64_t seed, std::uint32_t a, std::uint32_t b, std::uint32_t c,
                      std::uint32_t stream) {
  const auto x = draw(seed, a, b, c, stream);
  const double u1 = 1.0 - to_unit(x[0], x[1]);  // (0, 1]
  const double u2 = to_unit(x[2], x[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

NoisePanel generate_noise(std::uint64_t seed, std::size_t n_paths, const Grid& grid,
                          std::size_t n_drivers) {
  grid.check();
  if (n_paths < 1) throw std::invalid_argument("noise panel needs at least one path");
  NoisePanel panel;
  panel.seed = seed;
  panel.n_paths = n_paths;
  panel.n_steps = grid.n_steps;
  panel.n_drivers = n_drivers;
  panel.dt = grid.dt;
  panel.brownian.resize(n_paths * grid.n_steps * n_drivers);
  panel.jump_uniforms.resize(n_paths * grid.n_steps);
  panel.jump_normals.resize(n_paths * grid.n_steps);
  const double scale = std::sqrt(grid.dt);
  std::size_t i = 0;
  std::size_t j = 0;
  for (std::size_t p = 0; p < n_paths; ++p) {
    const auto path = static_cast<std::uint32_t>(p);
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
      const auto step = static_cast<std::uint32_t>(k);
      for (std::size_t d = 0; d < n_drivers; ++d) {
        panel.brownian[i++] =
            scale * counter_normal(seed, step, path, static_cast<std::uint32_t>(d), kBrownian);
      }
      panel.jump_uniforms[j] = counter_uniform(seed, step, path, 0, kJumpUniform);
      panel.jump_normals[j] = counter_normal(seed, step, path, 0, kJumpNormal);
      ++j;
    }
  }
  return panel;
}

namespace detail {

void check_dimensions(const CompiledModel& model, std::size_t n_params, const Grid& grid,
                      const NoisePanel& noise) {
  grid.check();
  if (n_params != model.n_params) {
    throw SimulationError("parameter vector has " + std::to_string(n_params) +
                          " entries, model declares " + std::to_string(model.n_params));
  }
  if (noise.n_steps < grid.n_steps) throw SimulationError("noise panel has too few steps");
  if (noise.n_drivers < model.equations.size()) {
    throw SimulationError("noise panel has too few Brownian drivers");
  }
  if (noise.n_paths < 1) throw SimulationError("noise panel has no paths");
  if (std::abs(noise.dt - grid.dt) > 1e-12 * grid.dt) {
    throw SimulationError("noise panel dt does not match the grid");
  }
}

}  // namespace detail

PathEnsemble simulate(const CompiledModel& model, std::span<const double> params,
                      InitialState x0, const Grid& grid, const NoisePanel& noise) {
  return detail::simulate_paths<double>(model, params, x0, grid, noise);
}

PathEnsemble simulate(const SdeModel& model, std::span<const double> params, InitialState x0,
                      const Grid& grid, const NoisePanel& noise) {
  return simulate(CompiledModel::compile(model), params, x0, grid, noise);
}

MomentVector moments(std::span<const double> series) {
  if (series.size() < 2) throw std::invalid_argument("moments need at least 2 observations");
  return MomentVector::from_array(detail::series_moments<double>(series));
}

MomentVector ensemble_moments(const PathEnsemble& ensemble) {
  auto m = detail::averaged_moments<double>(ensemble);
  if (!m) throw DivergedError("all simulated paths diverged");
  return MomentVector::from_array(*m);
}

std::vector<double> mean_path(const PathEnsemble& ensemble) {
  const std::size_t width = ensemble.n_steps + 1;
  std::vector<double> out(width, 0.0);
  const bool all_diverged = ensemble.n_diverged() == ensemble.n_paths;
  std::size_t used = 0;
  for (std::size_t p = 0; p < ensemble.n_paths; ++p) {
    if (ensemble.diverged[p] && !all_diverged) continue;
    const auto path = ensemble.path(p);
    for (std::size_t k = 0; k < width; ++k) out[k] += path[k];
    ++used;
  }
  for (auto& v : out) v /= static_cast<double>(std::max<std::size_t>(used, 1));
  return out;
}

}  // namespace nst
