#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nst/engine.hpp"

namespace nst {

struct PriceSeries {
  std::vector<std::string> dates;  // ISO yyyy-mm-dd, strictly increasing
  std::vector<double> close;
  std::string asset;
  std::string period;

  std::size_t size() const { return close.size(); }
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a "date,close" CSV (other columns ignored), sorts by date and
/// rejects bad dates, duplicate dates and non-positive prices with the
/// offending line number.
PriceSeries load_csv(const std::filesystem::path& path);
PriceSeries parse_csv(std::istream& in, const std::string& source = "<input>");
void write_csv(const PriceSeries& series, std::ostream& out);

struct NormalizedSeries {
  std::vector<double> values;  // in [0, 1]
  double y_min = 0.0;
  double y_max = 1.0;
  double t_min = 0.0;  // observation index range mapped onto [0, 1]
  double t_max = 1.0;

  double time(std::size_t i) const;
};

/// Min-max scaling of values and index. Throws DataError for a constant
/// series or fewer than 2 points.
NormalizedSeries normalize(std::span<const double> series);
std::vector<double> denormalize(std::span<const double> values, const NormalizedSeries& transform);
std::vector<double> denormalize(const NormalizedSeries& series);

/// Consecutive ISO dates from 2023-01-01.
std::vector<std::string> synthetic_dates(std::size_t n);

/// One Euler GBM path from x0 on `grid` (n_steps + 1 points) using path 0
/// of the noise panel for `seed`.
PriceSeries synthesize_gbm(double mu, double sigma, std::uint64_t seed, const Grid& grid,
                           double x0 = 1.0);

struct OuSeasonalSpec {
  double theta = 25.0;
  double level = 1.0;
  double amplitude = 3.0;
  double frequency = 3.0;
  double sigma = 0.3;
  double x0 = 1.0;
};

/// dV = (theta (level - V) + amplitude sin(2 pi frequency t)) dt + sigma dW
PriceSeries synthesize_ou_seasonal(const OuSeasonalSpec& spec, std::uint64_t seed, const Grid& grid);

/// Parses "synthetic:gbm:mu,sigma,seed[,n]" and
/// "synthetic:ou:theta,level,amplitude,frequency,sigma,seed[,n]" (n points,
/// default 101, dt = 1/(n-1)); anything else is read as a CSV path.
PriceSeries load_dataset(const std::string& spec);
bool is_synthetic(const std::string& spec);

}  // namespace nst
