#include "nst/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace nst {

namespace {

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

std::vector<double> diff(std::span<const double> x) {
  std::vector<double> d;
  for (std::size_t i = 1; i < x.size(); ++i) d.push_back(x[i] - x[i - 1]);
  return d;
}

}  // namespace

double ols_slope(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double scale = std::max(mx * mx, 1.0) * std::max(my * my, 1.0);
  if (sxx <= 1e-24 * scale || syy <= 1e-24 * scale) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> periodogram(std::span<const double> x) {
  const std::size_t n = x.size();
  const double m = mean_of(x);
  std::vector<double> power;
  for (std::size_t j = 1; j <= n / 2; ++j) {
    double re = 0.0, im = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(j * k % n) / static_cast<double>(n);
      re += (x[k] - m) * std::cos(angle);
      im -= (x[k] - m) * std::sin(angle);
    }
    power.push_back(re * re + im * im);
  }
  return power;
}

Diagnostics residual_diagnostics(std::span<const double> y, std::span<const double> fitted,
                                 double dt) {
  if (y.size() < 3) throw std::invalid_argument("diagnostics need at least 3 observations");
  if (fitted.size() != y.size()) throw std::invalid_argument("fitted path length differs from data");
  Diagnostics d;
  d.level_mean = mean_of(y);

  const auto dy = diff(y);
  const auto lag = y.first(y.size() - 1);
  d.mean_reversion_slope = ols_slope(lag, dy);

  std::vector<double> abs_dy(dy.size());
  std::transform(dy.begin(), dy.end(), abs_dy.begin(), [](double v) { return std::abs(v); });
  d.level_vol_correlation = pearson(abs_dy, lag);

  std::vector<double> r(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) r[i] = y[i] - fitted[i];
  const auto dr = diff(r);
  d.residual_kurtosis = moments(dr).kurtosis;

  if (y.size() >= kMinPeriodogramPoints) {
    const auto power = periodogram(r);
    const auto peak = std::max_element(power.begin(), power.end());
    std::vector<double> sorted = power;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t h = sorted.size() / 2;
    const double median = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
    d.periodicity_ratio = median > 0.0 ? *peak / median : (*peak > 0.0 ? 1e12 : 1.0);
    const double j = static_cast<double>(peak - power.begin() + 1);
    d.dominant_frequency = j / (static_cast<double>(y.size()) * dt);
  }
  return d;
}

Diagnostics residual_diagnostics(std::span<const double> y, const PathEnsemble& ensemble,
                                 double dt) {
  if (ensemble.n_paths == 0) throw std::invalid_argument("ensemble is empty");
  const auto mp = mean_path(ensemble);
  return residual_diagnostics(y, mp, dt);
}

}  // namespace nst
