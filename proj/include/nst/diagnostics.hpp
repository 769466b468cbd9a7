#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nst/engine.hpp"

namespace nst {

/// Residual statistics the critic reacts to. Computed on the historical
/// series y and the residual r = y - (mean simulated path).
struct Diagnostics {
  double mean_reversion_slope = 0.0;   // OLS slope of dy on y
  double periodicity_ratio = 1.0;      // max / median periodogram power of r
  double dominant_frequency = 1.0;     // cycles per unit time at the peak
  double level_vol_correlation = 0.0;  // corr(|dy|, y), 0 when undefined
  double residual_kurtosis = 0.0;      // non-excess kurtosis of dr
  double level_mean = 0.0;             // mean of y

  friend bool operator==(const Diagnostics&, const Diagnostics&) = default;
};

inline constexpr std::size_t kMinPeriodogramPoints = 16;

/// `fitted` is the mean simulated path on the same grid as y; dt is the
/// sampling interval used to convert the peak index to a frequency.
Diagnostics residual_diagnostics(std::span<const double> y, std::span<const double> fitted,
                                 double dt);
Diagnostics residual_diagnostics(std::span<const double> y, const PathEnsemble& ensemble,
                                 double dt);

double ols_slope(std::span<const double> x, std::span<const double> y);
/// Pearson correlation; 0 when either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
/// |DFT|^2 at frequencies 1 .. n/2 (the mean term is excluded).
std::vector<double> periodogram(std::span<const double> x);

}  // namespace nst
