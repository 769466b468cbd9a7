#include "nst/market.hpp"

#include <cmath>
#include <fstream>
#include <future>
#include <string>

#include "json.hpp"
#include "nst/chart.hpp"
#include "nst/data.hpp"
#include "nst/engine.hpp"

namespace nst {

void MarketConfig::check() const {
  if (!(kyle_lambda > 0.0) || !std::isfinite(kyle_lambda))
    throw std::invalid_argument("kyle_lambda must be > 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw std::invalid_argument("noise_sigma must be >= 0");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw std::invalid_argument("kappa must be >= 0");
  if (n_traders < 1) throw std::invalid_argument("need at least one trader");
  if (n_realizations < 1) throw std::invalid_argument("need at least one realization");
  if (n_windows < 1) throw std::invalid_argument("need at least one window");
  if (dt && !(*dt > 0.0)) throw std::invalid_argument("market dt must be > 0");
}

double DemandComponents::fundamental_total() const {
  double s = 0.0;
  for (double f : fundamental) s += f;
  return s;
}

void DemandComponents::close() { total = fundamental_total() + noise; }

double fundamental_demand(double value, double price, double kappa) {
  return kappa * (value - price);
}

double step_price(double price, const DemandComponents& components, double lambda, double dt) {
  return price + lambda * (components.fundamental_total() * dt + components.noise);
}

namespace {

constexpr std::uint32_t kMarketStream = 7;
constexpr std::uint64_t kBeliefTag = 0x62656c6965660000ull;

}  // namespace

double market_noise(std::uint64_t seed, std::size_t step, double sigma, double dt) {
  if (sigma == 0.0) return 0.0;
  return sigma * std::sqrt(dt) *
         counter_normal(seed, static_cast<std::uint32_t>(step), 0, 0, kMarketStream);
}

std::vector<std::size_t> window_boundaries(std::size_t n, std::size_t k) {
  if (k < 1) throw MarketError("need at least one window");
  if (n < 2 * k) {
    throw MarketError("series of length " + std::to_string(n) + " is too short for " +
                      std::to_string(k) + " windows");
  }
  const std::size_t len = n / k;
  std::vector<std::size_t> b;
  for (std::size_t i = 0; i < k; ++i) b.push_back(i * len);
  b.push_back(n);
  return b;
}

std::vector<std::vector<double>> split_windows(std::span<const double> series, std::size_t k) {
  const auto b = window_boundaries(series.size(), k);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(series.begin() + b[i], series.begin() + b[i + 1]);
  return out;
}

std::vector<MarketStep> integrate_window(double p_start, std::span<const TraderBelief> beliefs,
                                         std::size_t n_steps, std::size_t first_step,
                                         std::size_t window, const MarketConfig& config, double dt) {
  const double kappa_r = config.kappa / static_cast<double>(config.n_realizations);
  std::size_t slots = 0;
  for (const auto& b : beliefs) slots += b.paths.size();

  std::vector<MarketStep> out;
  out.reserve(n_steps);
  double p = p_start;
  for (std::size_t j = 0; j < n_steps; ++j) {
    MarketStep s;
    s.step = first_step + j;
    s.window = window;
    s.demand.fundamental.reserve(slots);
    for (const auto& b : beliefs) {
      for (const auto& path : b.paths) {
        s.demand.fundamental.push_back(fundamental_demand(path.at(j), p, kappa_r));
      }
    }
    s.demand.noise = market_noise(config.seed, s.step, config.noise_sigma, dt);
    s.demand.close();
    p = step_price(p, s.demand, config.kyle_lambda, dt);
    s.price = p;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> MarketTrace::prices() const {
  std::vector<double> p;
  p.reserve(steps.size());
  for (const auto& s : steps) p.push_back(s.price);
  return p;
}

ProposerFactory scripted_factory(Thresholds thresholds) {
  return [thresholds](std::size_t) { return std::make_unique<ScriptedProposer>(thresholds); };
}

double population_variance(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return s / static_cast<double>(xs.size());
}

namespace {

// A fitted model with the scale of the window it was fitted on.
struct Belief {
  SdeModel model;
  double y_min = 0.0;
  double y_max = 1.0;
  std::size_t fit_len = 2;
  std::size_t n_params = 0;
  std::optional<double> mae;
};

std::optional<Belief> final_model(const DiscoveryTrace& trace, const NormalizedSeries& scale,
                                  std::size_t fit_len) {
  for (auto it = trace.rounds.rbegin(); it != trace.rounds.rend(); ++it) {
    if (it->failed) continue;
    return Belief{it->model, scale.y_min, scale.y_max, fit_len, it->model.params.size(), it->mae};
  }
  return std::nullopt;
}

TraderBelief realize(const Belief& b, double p_start, std::size_t n_steps, double t0,
                     std::uint64_t seed, std::size_t n_realizations, std::size_t& n_diverged) {
  const double range = b.y_max - b.y_min;
  const Grid grid{t0, n_steps, 1.0 / static_cast<double>(b.fit_len - 1)};
  const NoisePanel noise = generate_noise(seed, n_realizations, grid, kMaxEquations);
  const InitialState x0{(p_start - b.y_min) / range, CalibConfig{}.aux0};
  const PathEnsemble ens = simulate(b.model, b.model.initial_values(), x0, grid, noise);
  TraderBelief out;
  n_diverged = 0;
  for (std::size_t r = 0; r < ens.n_paths; ++r) {
    if (ens.diverged[r]) {
      ++n_diverged;
      continue;
    }
    std::vector<double> path;
    path.reserve(n_steps + 1);
    for (double v : ens.path(r)) path.push_back(b.y_min + v * range);
    out.paths.push_back(std::move(path));
  }
  return out;
}

}  // namespace

MarketTrace run_market(std::span<const double> historical, const MarketConfig& config,
                       const DiscoveryConfig& discovery, const PromptTemplate& prompt,
                       const ProposerFactory& factory) {
  config.check();
  const std::size_t n = historical.size();
  const std::size_t k = config.n_windows;
  MarketTrace trace;
  trace.boundaries = window_boundaries(n, k);
  const NormalizedSeries global = normalize(historical);
  trace.historical = global.values;
  trace.y_min = global.y_min;
  trace.y_max = global.y_max;
  trace.dt = config.dt.value_or(1.0 / static_cast<double>(n - 1));

  std::vector<double> price(n, 0.0);
  price[0] = trace.historical[0];
  MarketStep first;
  first.window = 1;
  first.price = price[0];
  trace.steps.push_back(first);

  std::vector<std::optional<Belief>> held(config.n_traders);
  for (std::size_t w = 1; w <= k; ++w) {
    MarketWindow win;
    win.index = w;
    win.begin = trace.boundaries[w - 1];
    win.end = trace.boundaries[w];
    win.traders.resize(config.n_traders);

    // Window 1 fits the history it simulates over; later windows fit the
    // previous window's simulated prices.
    std::vector<double> fit_data;
    if (w == 1) {
      fit_data.assign(trace.historical.begin() + win.begin, trace.historical.begin() + win.end);
    } else {
      fit_data.assign(price.begin() + trace.boundaries[w - 2], price.begin() + win.begin);
    }
    const double p_start = w == 1 ? price[0] : price[win.begin - 1];
    const std::size_t n_steps = w == 1 ? win.end - win.begin - 1 : win.end - win.begin;
    const std::size_t first_step = w == 1 ? 1 : win.begin;

    std::optional<NormalizedSeries> scale;
    try {
      scale = normalize(fit_data);
    } catch (const DataError& e) {
      trace.log.push_back("window " + std::to_string(w) + ": cannot normalize fit data: " + e.what());
    }

    std::vector<std::optional<Belief>> fresh(config.n_traders);
    if (scale) {
      std::vector<std::unique_ptr<Proposer>> proposers;
      for (std::size_t j = 0; j < config.n_traders; ++j) proposers.push_back(factory(j));
      std::vector<std::future<DiscoveryTrace>> jobs;
      for (std::size_t j = 0; j < config.n_traders; ++j) {
        DiscoveryConfig dc = discovery;
        dc.calib.seed = derive_seed(derive_seed(config.seed, w), j);
        if (discovery.out_dir) {
          dc.out_dir = *discovery.out_dir / ("window_" + std::to_string(w)) /
                       ("trader_" + std::to_string(j));
        }
        jobs.push_back(std::async(std::launch::async, [&, dc, j] {
          return run_discovery(scale->values, *proposers[j], prompt, dc);
        }));
      }
      for (std::size_t j = 0; j < config.n_traders; ++j) {
        try {
          DiscoveryTrace t = jobs[j].get();
          fresh[j] = final_model(t, *scale, fit_data.size());
          win.traders[j].discovery = std::move(t);
        } catch (const std::exception& e) {
          trace.log.push_back("window " + std::to_string(w) + " trader " + std::to_string(j) +
                              ": discovery failed: " + e.what());
        }
      }
    }

    bool any_fresh = false;
    for (const auto& f : fresh) any_fresh = any_fresh || f.has_value();
    if (!any_fresh) {
      win.fallback = true;
      trace.log.push_back("window " + std::to_string(w) +
                          ": all traders failed discovery, reusing previous models");
    }
    for (std::size_t j = 0; j < config.n_traders; ++j) {
      if (fresh[j]) {
        held[j] = std::move(fresh[j]);
      } else if (held[j]) {
        win.traders[j].carried = true;
      }
    }

    std::vector<TraderBelief> beliefs;
    for (std::size_t j = 0; j < config.n_traders; ++j) {
      if (!held[j]) continue;
      TraderWindow& tw = win.traders[j];
      tw.model = print_model(held[j]->model);
      tw.n_params = held[j]->n_params;
      tw.mae = held[j]->mae;
      try {
        beliefs.push_back(realize(*held[j], p_start, n_steps, w == 1 ? 0.0 : 1.0,
                                  derive_seed(kBeliefTag ^ config.seed, w * 1024 + j),
                                  config.n_realizations, tw.diverged_realizations));
      } catch (const std::exception& e) {
        trace.log.push_back("window " + std::to_string(w) + " trader " + std::to_string(j) +
                            ": simulation failed: " + e.what());
      }
    }
    if (beliefs.empty()) {
      throw MarketError("window " + std::to_string(w) + ": no trader has a usable model");
    }

    auto steps = integrate_window(p_start, beliefs, n_steps, first_step, w, config, trace.dt);
    for (auto& s : steps) {
      price[s.step] = s.price;
      trace.steps.push_back(std::move(s));
    }
    win.simulated_variance =
        population_variance(std::span<const double>(price).subspan(win.begin, win.end - win.begin));
    win.historical_variance = population_variance(
        std::span<const double>(trace.historical).subspan(win.begin, win.end - win.begin));
    trace.windows.push_back(std::move(win));
  }
  return trace;
}

void write_market_trace(const MarketTrace& trace, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "market_trace.csv");
    if (!f) throw std::runtime_error("cannot write " + (dir / "market_trace.csv").string());
    f << "step,window,P,Q_fund_total,Q_noise\n";
    for (const auto& s : trace.steps) {
      f << s.step << ',' << s.window << ',' << format_number(s.price) << ','
        << format_number(s.demand.fundamental_total()) << ',' << format_number(s.demand.noise)
        << '\n';
    }
  }
  const auto prices = trace.prices();
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : trace.windows) {
    nlohmann::json traders = nlohmann::json::array();
    for (std::size_t j = 0; j < w.traders.size(); ++j) {
      const auto& t = w.traders[j];
      traders.push_back({{"trader", j},
                         {"model", t.model},
                         {"n_params", t.n_params},
                         {"mae", t.mae ? nlohmann::json(*t.mae) : nlohmann::json(nullptr)},
                         {"carried", t.carried},
                         {"diverged_realizations", t.diverged_realizations}});
      if (t.discovery) {
        write_discovery_trace(*t.discovery, dir / ("window_" + std::to_string(w.index)) /
                                                ("trader_" + std::to_string(j)));
      }
    }
    windows.push_back({{"window", w.index},
                       {"begin", w.begin},
                       {"end", w.end},
                       {"fallback", w.fallback},
                       {"simulated_variance", w.simulated_variance},
                       {"historical_variance", w.historical_variance},
                       {"traders", traders}});
  }
  nlohmann::json summary = {{"steps", trace.steps.size()},
                            {"boundaries", trace.boundaries},
                            {"dt", trace.dt},
                            {"price_min", trace.y_min},
                            {"price_max", trace.y_max},
                            {"simulated_variance", population_variance(prices)},
                            {"historical_variance", population_variance(trace.historical)},
                            {"windows", windows},
                            {"log", trace.log}};
  {
    std::ofstream f(dir / "summary.json");
    if (!f) throw std::runtime_error("cannot write " + (dir / "summary.json").string());
    f << summary.dump(2) << '\n';
  }
  std::vector<std::size_t> cuts(trace.boundaries.begin() + 1, trace.boundaries.end() - 1);
  render_market_chart(trace.historical, prices, cuts, dir / "market_chart.png");
}

}  // namespace nst
