#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <random>

#include "nst/engine.hpp"

using namespace nst;

namespace {

const SdeModel& gbm() {
  static const SdeModel m = parse_model("dV = mu*V dt + sigma*V dW");
  return m;
}

double sample_variance(const std::vector<double>& xs) {
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return s / static_cast<double>(xs.size() - 1);
}

// Coarse panel whose increments are sums of consecutive fine increments.
NoisePanel coarsen(const NoisePanel& fine) {
  NoisePanel c;
  c.seed = fine.seed;
  c.n_paths = fine.n_paths;
  c.n_steps = fine.n_steps / 2;
  c.n_drivers = fine.n_drivers;
  c.dt = fine.dt * 2.0;
  c.brownian.resize(c.n_paths * c.n_steps * c.n_drivers);
  c.jump_uniforms.assign(c.n_paths * c.n_steps, 1.0);
  c.jump_normals.assign(c.n_paths * c.n_steps, 0.0);
  for (std::size_t p = 0; p < c.n_paths; ++p)
    for (std::size_t k = 0; k < c.n_steps; ++k)
      for (std::size_t d = 0; d < c.n_drivers; ++d)
        c.brownian[(p * c.n_steps + k) * c.n_drivers + d] =
            fine.dw(p, 2 * k, d) + fine.dw(p, 2 * k + 1, d);
  return c;
}

double mean_abs_terminal_error(const PathEnsemble& ens, const std::vector<double>& exact) {
  double s = 0.0;
  for (std::size_t p = 0; p < ens.n_paths; ++p) s += std::abs(ens.path(p).back() - exact[p]);
  return s / static_cast<double>(ens.n_paths);
}

}  // namespace

TEST_CASE("noise panel increments have variance dt") {
  const Grid grid{0.0, 100, 0.01};
  const auto panel = generate_noise(7, 100, grid, 1);
  CHECK(panel.brownian.size() == 100 * 100);
  const double var = sample_variance(panel.brownian);
  CHECK(std::abs(var - 0.01) < 0.001);
}

TEST_CASE("noise panel determinism and seed sensitivity") {
  const Grid grid{0.0, 50, 0.01};
  const auto a = generate_noise(7, 20, grid, 2);
  const auto b = generate_noise(7, 20, grid, 2);
  const auto c = generate_noise(8, 20, grid, 2);
  CHECK(a.brownian == b.brownian);
  CHECK(a.jump_uniforms == b.jump_uniforms);
  CHECK(a.jump_normals == b.jump_normals);
  CHECK(a.brownian != c.brownian);
}

TEST_CASE("noise panels nest across paths, steps and drivers") {
  const auto small = generate_noise(11, 3, Grid{0.0, 10, 0.01}, 1);
  const auto big = generate_noise(11, 8, Grid{0.0, 40, 0.01}, 2);
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t k = 0; k < 10; ++k) {
      CHECK(small.dw(p, k, 0) == big.dw(p, k, 0));
      CHECK(small.jump_uniform(p, k) == big.jump_uniform(p, k));
    }
}

TEST_CASE("uniform draws lie in [0, 1)") {
  const auto panel = generate_noise(3, 50, Grid{0.0, 100, 0.01}, 1);
  for (double u : panel.jump_uniforms) {
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
}

TEST_CASE("GBM with zero dynamics stays at x0") {
  const Grid grid;
  const auto noise = generate_noise(1, 10, grid, 1);
  const std::vector<double> params{0.0, 0.0};
  const auto ens = simulate(gbm(), params, {}, grid, noise);
  for (double v : ens.values) CHECK(v == 1.0);
  CHECK(ens.n_diverged() == 0);
  const auto m = ensemble_moments(ens);
  CHECK(m == MomentVector{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("GBM ensemble mean matches exp(mu T)") {
  const Grid grid{0.0, 100, 0.01};
  const auto noise = generate_noise(2024, 10000, grid, 1);
  const std::vector<double> params{0.05, 0.2};
  const auto ens = simulate(gbm(), params, {1.0, 0.1}, grid, noise);
  std::vector<double> terminal;
  for (std::size_t p = 0; p < ens.n_paths; ++p) terminal.push_back(ens.path(p).back());
  const double mean = std::accumulate(terminal.begin(), terminal.end(), 0.0) / 10000.0;
  const double se = std::sqrt(sample_variance(terminal) / 10000.0);
  CHECK(std::abs(mean - std::exp(0.05)) < 3.0 * se);
}

TEST_CASE("deterministic mean reversion decays to the level") {
  const auto model = parse_model("dV = theta*(m - V) dt + sigma dW");
  const Grid grid{0.0, 100, 0.01};
  const auto noise = generate_noise(5, 2, grid, 1);
  const std::vector<double> params{5.0, 1.0, 0.0};
  const auto ens = simulate(model, params, {2.0, 0.1}, grid, noise);
  const auto path = ens.path(0);
  for (std::size_t k = 1; k < path.size(); ++k) CHECK(path[k] < path[k - 1]);
  // Euler gives (1 - theta dt)^n exactly; the ODE gives exp(-theta T).
  CHECK(std::abs(path.back() - 1.0) <= std::exp(-5.0) + 0.01);
  CHECK(path.back() - 1.0 == doctest::Approx(std::pow(0.95, 100)).epsilon(1e-12));
}

TEST_CASE("divergence freezes and flags paths") {
  const auto model = parse_model("dV = a*V*V dt");
  const Grid grid{0.0, 100, 0.01};
  const auto noise = generate_noise(5, 3, grid, 1);
  const std::vector<double> params{1000.0};
  const auto ens = simulate(model, params, {1.0, 0.1}, grid, noise);
  CHECK(ens.n_diverged() == 3);
  for (double v : ens.values) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= kDivergenceThreshold);
  }
  CHECK(ens.path(0).back() == ens.path(0)[ens.n_steps - 1]);
  CHECK_THROWS_AS(ensemble_moments(ens), DivergedError);

  const auto zero_div = parse_model("dV = a/(V - V) dt");
  const auto ens2 = simulate(zero_div, std::vector<double>{1.0}, {1.0, 0.1}, grid, noise);
  CHECK(ens2.n_diverged() == 3);
  for (double v : ens2.values) CHECK(v == 1.0);
}

TEST_CASE("dimension mismatches are rejected") {
  const Grid grid{0.0, 100, 0.01};
  const auto noise = generate_noise(1, 4, grid, 1);
  CHECK_THROWS_AS(simulate(gbm(), std::vector<double>{0.1}, {}, grid, noise), SimulationError);
  CHECK_THROWS_AS(simulate(gbm(), std::vector<double>{0.1, 0.1}, {}, Grid{0.0, 200, 0.01}, noise),
                  SimulationError);
  CHECK_THROWS_AS(simulate(gbm(), std::vector<double>{0.1, 0.1}, {}, Grid{0.0, 100, 0.02}, noise),
                  SimulationError);
  const auto sv = parse_model("dV = mu*V dt + S*V dW1\ndS = k*(0.2 - S) dt + xi dW2");
  CHECK_THROWS_AS(simulate(sv, std::vector<double>(3, 0.1), {}, grid, noise), SimulationError);
  CHECK_THROWS_AS(generate_noise(1, 0, grid, 1), std::invalid_argument);
  CHECK_THROWS_AS(Grid({0.0, 10, 0.0}).check(), std::invalid_argument);
}

TEST_CASE("two-equation model uses the auxiliary state") {
  const auto sv = parse_model("dV = mu*V dt + S*V dW1\ndS = k*(0.2 - S) dt + xi dW2");
  const Grid grid{0.0, 100, 0.01};
  const auto noise = generate_noise(9, 5, grid, 2);
  const std::vector<double> params{0.0, 1.0, 0.0};  // mu, k, xi
  const auto ens = simulate(sv, params, {1.0, 0.1}, grid, noise);
  REQUIRE(ens.aux.size() == ens.values.size());
  CHECK(ens.aux_path(0)[0] == 0.1);
  CHECK(ens.aux_path(0).back() == doctest::Approx(0.2 - 0.1 * std::pow(0.99, 100)));
  CHECK(ens.path(0)[1] == doctest::Approx(1.0 + 0.1 * noise.dw(0, 0, 0)));
}

TEST_CASE("jump thinning follows the uniform draws") {
  const auto model = parse_model("dV = 0 dt + jump(lam, 0.5, 0)");
  const Grid grid{0.0, 100, 0.01};
  const auto noise = generate_noise(21, 4, grid, 1);
  const auto ens = simulate(model, std::vector<double>{30.0}, {1.0, 0.1}, grid, noise);
  for (std::size_t p = 0; p < 4; ++p) {
    double expected = 1.0;
    for (std::size_t k = 0; k < 100; ++k)
      if (noise.jump_uniform(p, k) < 0.3) expected += 0.5;
    CHECK(ens.path(p).back() == doctest::Approx(expected));
  }
  const auto never = simulate(model, std::vector<double>{0.0}, {1.0, 0.1}, grid, noise);
  for (double v : never.values) CHECK(v == 1.0);
  const auto always = simulate(model, std::vector<double>{1e9}, {1.0, 0.1}, grid, noise);
  CHECK(always.path(0).back() == doctest::Approx(51.0));
}

TEST_CASE("moments examples") {
  CHECK(moments(std::vector<double>{0, 0, 0, 0}) == MomentVector{0, 0, 0, 0});
  const auto m = moments(std::vector<double>{0, 1});
  CHECK(m.mean == 0.5);
  CHECK(m.stddev == 0.5);
  CHECK_THROWS_AS(moments(std::vector<double>{1.0}), std::invalid_argument);

  std::mt19937_64 rng(99);
  std::normal_distribution<double> n01;
  std::vector<double> xs(100000);
  for (auto& x : xs) x = n01(rng);
  const auto s = moments(xs);
  CHECK(std::abs(s.mean) < 0.05);
  CHECK(std::abs(s.stddev - 1.0) < 0.05);
  CHECK(std::abs(s.skewness) < 0.05);
  CHECK(std::abs(s.kurtosis - 3.0) < 0.15);
}

TEST_CASE("ensemble moments examples") {
  const auto model = parse_model("dV = a dt");
  const Grid grid{0.0, 100, 0.01};
  const auto noise = generate_noise(1, 5, grid, 1);
  const auto flat = simulate(model, std::vector<double>{0.0}, {1.0, 0.1}, grid, noise);
  CHECK(ensemble_moments(flat) == MomentVector{1.0, 0.0, 0.0, 0.0});

  const auto gbm_noise = generate_noise(4, 1, grid, 1);
  const auto single = simulate(gbm(), std::vector<double>{0.1, 0.2}, {}, grid, gbm_noise);
  CHECK(ensemble_moments(single) == moments(single.path(0)));

  const std::vector<double> params{0.05, 0.2};
  const auto small = simulate(gbm(), params, {}, grid, generate_noise(31, 100, grid, 1));
  const auto large = simulate(gbm(), params, {}, grid, generate_noise(32, 10000, grid, 1));
  const auto a = ensemble_moments(small).as_array();
  const auto b = ensemble_moments(large).as_array();
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(a[i] - b[i]) < 0.05);
}

TEST_CASE("simulation is bit-reproducible") {
  const Grid grid{0.0, 100, 0.01};
  const auto noise = generate_noise(77, 50, grid, 1);
  const auto model = parse_model("dV = theta*(m - V) dt + sigma*sqrt(V) dW");
  const std::vector<double> params{2.0, 0.5, 0.3};
  const auto a = simulate(model, params, {1.0, 0.1}, grid, noise);
  const auto b = simulate(model, params, {1.0, 0.1}, grid, noise);
  CHECK(a.values == b.values);
  CHECK(a.diverged == b.diverged);
}

TEST_CASE("strong convergence: order 1/2 for GBM, order 1 for additive noise") {
  const double mu = 0.05, sigma = 0.2, T = 1.0;
  const Grid fine_grid{0.0, 200, 0.005};
  const Grid coarse_grid{0.0, 100, 0.01};
  const auto fine = generate_noise(1234, 10000, fine_grid, 1);
  const auto coarse = coarsen(fine);

  std::vector<double> exact(fine.n_paths);
  for (std::size_t p = 0; p < fine.n_paths; ++p) {
    double w = 0.0;
    for (std::size_t k = 0; k < fine.n_steps; ++k) w += fine.dw(p, k, 0);
    exact[p] = std::exp((mu - 0.5 * sigma * sigma) * T + sigma * w);
  }
  const std::vector<double> params{mu, sigma};
  const double e_coarse =
      mean_abs_terminal_error(simulate(gbm(), params, {}, coarse_grid, coarse), exact);
  const double e_fine = mean_abs_terminal_error(simulate(gbm(), params, {}, fine_grid, fine), exact);
  const double gbm_ratio = e_coarse / e_fine;
  CHECK(gbm_ratio > 1.25);
  CHECK(gbm_ratio < 1.6);

  // Additive noise with a nonlinear drift: exact reference from a much finer
  // Euler run on the same Brownian path.
  const auto model = parse_model("dV = -sin(V) dt + s dW");
  const Grid ref_grid{0.0, 1600, 1.0 / 1600.0};
  const auto ref_noise = generate_noise(55, 500, ref_grid, 1);
  NoisePanel level = ref_noise;
  for (int i = 0; i < 3; ++i) level = coarsen(level);  // dt = 1/200
  const NoisePanel level_c = coarsen(level);           // dt = 1/100
  const std::vector<double> sp{0.5};
  const auto ref = simulate(model, sp, {1.0, 0.1}, ref_grid, ref_noise);
  std::vector<double> ref_t(ref.n_paths);
  for (std::size_t p = 0; p < ref.n_paths; ++p) ref_t[p] = ref.path(p).back();
  const double ef = mean_abs_terminal_error(
      simulate(model, sp, {1.0, 0.1}, Grid{0.0, level.n_steps, level.dt}, level), ref_t);
  const double ec = mean_abs_terminal_error(
      simulate(model, sp, {1.0, 0.1}, Grid{0.0, level_c.n_steps, level_c.dt}, level_c), ref_t);
  CHECK(ec / ef > 1.5);
  CHECK(ec / ef < 2.5);
}

TEST_CASE("mean path averages surviving paths") {
  const Grid grid{0.0, 10, 0.01};
  const auto noise = generate_noise(1, 3, grid, 1);
  const auto ens = simulate(gbm(), std::vector<double>{0.0, 0.5}, {}, grid, noise);
  const auto mp = mean_path(ens);
  REQUIRE(mp.size() == 11);
  const double expected = (ens.path(0)[5] + ens.path(1)[5] + ens.path(2)[5]) / 3.0;
  CHECK(mp[5] == doctest::Approx(expected));
}
