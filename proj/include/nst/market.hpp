#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nst/discovery.hpp"

namespace nst {

struct MarketConfig {
  double kyle_lambda = 0.1;
  double noise_sigma = 0.1;
  double kappa = 1.0;  // per trader group, split evenly over its realizations
  std::size_t n_traders = 3;
  std::size_t n_realizations = 10;
  std::size_t n_windows = 5;
  std::uint64_t seed = 0;
  std::optional<double> dt;  // default 1/(n-1) of the historical series

  /// Throws std::invalid_argument.
  void check() const;
};

class MarketError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DemandComponents {
  std::vector<double> fundamental;  // per (trader, realization), trader-major
  double noise = 0.0;
  double total = 0.0;

  /// Sum of the fundamental entries in storage order.
  double fundamental_total() const;
  /// Sets total = fundamental_total() + noise.
  void close();
};

double fundamental_demand(double value, double price, double kappa);

/// P + lambda * (sum(fundamental) * dt + noise); the noise entry already
/// carries its sqrt(dt) scale.
double step_price(double price, const DemandComponents& components, double lambda, double dt);

/// sigma * dW for global market step `step` (dW ~ N(0, dt)).
double market_noise(std::uint64_t seed, std::size_t step, double sigma, double dt);

/// Contiguous sections of equal length with the remainder in the last one.
/// Throws MarketError when the series is shorter than 2k.
std::vector<std::vector<double>> split_windows(std::span<const double> series, std::size_t k);
/// Start offsets of the sections plus the total length (k + 1 entries).
std::vector<std::size_t> window_boundaries(std::size_t n, std::size_t k);

/// Fundamental-value realizations of one trader group in market units.
/// Path r supplies V at step j as paths[r][j]; paths may be missing (diverged)
/// in which case they contribute no demand.
struct TraderBelief {
  std::vector<std::vector<double>> paths;
};

struct MarketStep {
  std::size_t step = 0;
  std::size_t window = 0;
  double price = 0.0;
  DemandComponents demand;  // demand that moved the price into this step
};

/// Integrates n_steps price updates from p_start. Step j uses the beliefs at
/// index j and produces global step first_step + j.
std::vector<MarketStep> integrate_window(double p_start, std::span<const TraderBelief> beliefs,
                                         std::size_t n_steps, std::size_t first_step,
                                         std::size_t window, const MarketConfig& config, double dt);

struct TraderWindow {
  std::optional<DiscoveryTrace> discovery;
  std::string model;  // canonical source of the model driving the beliefs
  std::size_t n_params = 0;
  std::optional<double> mae;
  bool carried = false;  // reused from the previous window
  std::size_t diverged_realizations = 0;
};

struct MarketWindow {
  std::size_t index = 0;  // 1-based
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<TraderWindow> traders;
  bool fallback = false;
  double simulated_variance = 0.0;
  double historical_variance = 0.0;
};

struct MarketTrace {
  std::vector<double> historical;  // market units
  std::vector<MarketStep> steps;   // one per observation
  std::vector<std::size_t> boundaries;
  std::vector<MarketWindow> windows;
  double y_min = 0.0;  // market unit 0 and 1 in price terms
  double y_max = 1.0;
  double dt = 0.0;
  std::vector<std::string> log;

  std::vector<double> prices() const;
};

using ProposerFactory = std::function<std::unique_ptr<Proposer>(std::size_t trader)>;

/// Scripted proposer for every trader.
ProposerFactory scripted_factory(Thresholds thresholds = {});

/// Moving-window feedback run on `historical` prices. Window 1 traders fit
/// the historical first section; window i > 1 traders fit the simulated
/// prices of window i - 1.
MarketTrace run_market(std::span<const double> historical, const MarketConfig& config,
                       const DiscoveryConfig& discovery, const PromptTemplate& prompt,
                       const ProposerFactory& factory = scripted_factory());

double population_variance(std::span<const double> xs);

/// market_trace.csv, summary.json and market_chart.png.
void write_market_trace(const MarketTrace& trace, const std::filesystem::path& dir);

}  // namespace nst
