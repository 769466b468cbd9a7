#include "nst/experiment.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

#include "nst/chart.hpp"
#include "nst/data.hpp"

#ifndef NST_VERSION
#define NST_VERSION "0.1.0"
#endif

namespace nst {

using nlohmann::json;

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::calibrate: return "calibrate";
    case ExperimentKind::discover: return "discover";
    case ExperimentKind::market: return "market";
  }
  return "discover";
}

std::string_view to_string(ProposerKind kind) {
  return kind == ProposerKind::vlm ? "vlm" : "scripted";
}

ExperimentKind experiment_kind_from_string(std::string_view s) {
  if (s == "calibrate") return ExperimentKind::calibrate;
  if (s == "discover") return ExperimentKind::discover;
  if (s == "market") return ExperimentKind::market;
  throw ConfigError("unknown experiment kind '" + std::string(s) + "'");
}

ProposerKind proposer_kind_from_string(std::string_view s) {
  if (s == "scripted") return ProposerKind::scripted;
  if (s == "vlm") return ProposerKind::vlm;
  throw ConfigError("unknown proposer '" + std::string(s) + "'");
}

namespace {

std::string_view method_name(GradientMethod m) {
  switch (m) {
    case GradientMethod::automatic: return "automatic";
    case GradientMethod::dual: return "dual";
    case GradientMethod::finite_difference: return "finite_difference";
  }
  return "automatic";
}

GradientMethod method_from(std::string_view s) {
  if (s == "automatic") return GradientMethod::automatic;
  if (s == "dual") return GradientMethod::dual;
  if (s == "finite_difference") return GradientMethod::finite_difference;
  throw ConfigError("unknown gradient method '" + std::string(s) + "'");
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Reads known keys of one JSON object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  void get(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    double v = 0.0;
    get(key, v);
    out = v;
  }

  void get(const char* key, std::optional<std::string>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    std::string v;
    get(key, v);
    out = v;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json calib_json(const CalibConfig& c) {
  return {{"epochs", c.epochs},       {"lr0", c.lr0},
          {"lr_decay", c.lr_decay},   {"decay_every", c.decay_every},
          {"clip_threshold", c.clip_threshold}, {"grad_step", c.grad_step},
          {"seed", c.seed},           {"n_paths", c.n_paths},
          {"x0", optional_number(c.x0)}, {"dt", optional_number(c.dt)},
          {"aux0", c.aux0},           {"method", method_name(c.method)}};
}

void read_calib(const json& j, CalibConfig& c) {
  Reader r(j, "calib");
  r.get("epochs", c.epochs);
  r.get("lr0", c.lr0);
  r.get("lr_decay", c.lr_decay);
  r.get("decay_every", c.decay_every);
  r.get("clip_threshold", c.clip_threshold);
  r.get("grad_step", c.grad_step);
  r.get("seed", c.seed);
  r.get("n_paths", c.n_paths);
  r.get("x0", c.x0);
  r.get("dt", c.dt);
  r.get("aux0", c.aux0);
  std::string method(method_name(c.method));
  r.get("method", method);
  c.method = method_from(method);
  r.finish();
}

json market_json(const MarketConfig& m) {
  return {{"kyle_lambda", m.kyle_lambda}, {"noise_sigma", m.noise_sigma},
          {"kappa", m.kappa},             {"n_traders", m.n_traders},
          {"n_realizations", m.n_realizations}, {"n_windows", m.n_windows},
          {"seed", m.seed},               {"dt", optional_number(m.dt)}};
}

void read_market(const json& j, MarketConfig& m) {
  Reader r(j, "market");
  r.get("kyle_lambda", m.kyle_lambda);
  r.get("noise_sigma", m.noise_sigma);
  r.get("kappa", m.kappa);
  r.get("n_traders", m.n_traders);
  r.get("n_realizations", m.n_realizations);
  r.get("n_windows", m.n_windows);
  r.get("seed", m.seed);
  r.get("dt", m.dt);
  r.finish();
}

json vlm_json(const VlmConfig& v) {
  return {{"endpoint", v.endpoint},       {"model", v.model},
          {"temperature", v.temperature}, {"timeout_seconds", v.timeout_seconds},
          {"retries", v.retries},         {"api_key_env", v.api_key_env},
          {"max_tokens", v.max_tokens}};
}

void read_vlm(const json& j, VlmConfig& v) {
  Reader r(j, "vlm");
  r.get("endpoint", v.endpoint);
  r.get("model", v.model);
  r.get("temperature", v.temperature);
  r.get("timeout_seconds", v.timeout_seconds);
  r.get("retries", v.retries);
  r.get("api_key_env", v.api_key_env);
  r.get("max_tokens", v.max_tokens);
  r.finish();
}

json thresholds_json(const Thresholds& t) {
  return {{"reversion_slope", t.reversion_slope}, {"level_vol", t.level_vol},
          {"periodicity", t.periodicity},         {"kurtosis", t.kurtosis},
          {"negligible", t.negligible}};
}

void read_thresholds(const json& j, Thresholds& t) {
  Reader r(j, "thresholds");
  r.get("reversion_slope", t.reversion_slope);
  r.get("level_vol", t.level_vol);
  r.get("periodicity", t.periodicity);
  r.get("kurtosis", t.kurtosis);
  r.get("negligible", t.negligible);
  r.finish();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"data", c.data},
          {"model", c.model},
          {"proposer", to_string(c.proposer)},
          {"mode", to_string(c.mode)},
          {"domain", c.domain ? json(*c.domain) : json(nullptr)},
          {"rounds", c.rounds},
          {"trials", c.trials},
          {"calib", calib_json(c.calib)},
          {"loss", {{"weights", c.loss.weights}, {"l2_strength", c.loss.l2_strength}}},
          {"thresholds", thresholds_json(c.thresholds)},
          {"market", market_json(c.market)},
          {"vlm", vlm_json(c.vlm)},
          {"out_dir", c.out_dir.generic_string()}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "config");
  std::string s(to_string(c.kind));
  r.get("kind", s);
  c.kind = experiment_kind_from_string(s);
  r.get("data", c.data);
  r.get("model", c.model);
  s = to_string(c.proposer);
  r.get("proposer", s);
  c.proposer = proposer_kind_from_string(s);
  s = to_string(c.mode);
  r.get("mode", s);
  try {
    c.mode = prompt_mode_from_string(s);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config.mode: ") + e.what());
  }
  r.get("domain", c.domain);
  r.get("rounds", c.rounds);
  r.get("trials", c.trials);
  if (const json* x = r.child("calib")) read_calib(*x, c.calib);
  if (const json* x = r.child("loss")) {
    Reader lr(*x, "loss");
    lr.get("weights", c.loss.weights);
    lr.get("l2_strength", c.loss.l2_strength);
    lr.finish();
  }
  if (const json* x = r.child("thresholds")) read_thresholds(*x, c.thresholds);
  if (const json* x = r.child("market")) read_market(*x, c.market);
  if (const json* x = r.child("vlm")) read_vlm(*x, c.vlm);
  std::string out = c.out_dir.generic_string();
  r.get("out_dir", out);
  c.out_dir = out;
  r.finish();
  if (c.trials < 1) throw ConfigError("config.trials must be >= 1");
  if (c.rounds < 1) throw ConfigError("config.rounds must be >= 1");
  try {
    c.calib.check();
    c.loss.check();
    c.market.check();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

std::string serialize_config(const ExperimentConfig& config) { return to_json(config).dump(2) + "\n"; }

ExperimentConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

std::string config_hash(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.out_dir.clear();
  return sha256_hex(serialize_config(c));
}

std::string_view version_string() { return NST_VERSION; }

TrialSeeds trial_seeds(const ExperimentConfig& config, std::size_t trial) {
  return {config.calib.seed + trial, config.market.seed + trial};
}

void emit_report(const DiscoveryTrace& trace, const std::filesystem::path& dir) {
  write_discovery_trace(trace, dir);
}

void emit_report(const MarketTrace& trace, const std::filesystem::path& dir) {
  write_market_trace(trace, dir);
}

void emit_report(const CalibrationResult& result, const SdeModel& model,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream log;
  write_calibration_log(result, log);
  write_text(dir / "calibration.csv", log.str());
  write_text(dir / "model.sde", print_model(model) + "\n");
  json theta = json::object();
  for (std::size_t i = 0; i < model.params.size(); ++i) theta[model.params[i].name] = result.theta[i];
  const json doc = {{"theta", theta},
                    {"mae", result.mae},
                    {"mae_unweighted", result.mae_unweighted},
                    {"best_loss", result.best_loss},
                    {"fitted", result.fitted.as_array()},
                    {"target", result.target.as_array()},
                    {"n_diverged_epochs", result.n_diverged_epochs}};
  write_text(dir / "result.json", doc.dump(2) + "\n");
}

void write_manifest(const RunManifest& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json seeds = json::array();
  for (const auto& s : m.seeds) seeds.push_back({{"calibration", s.calibration}, {"market", s.market}});
  const json doc = {{"config_hash", m.config_hash},
                    {"seeds", seeds},
                    {"version", m.version},
                    {"kind", m.kind},
                    {"price_field", "close"},
                    {"wall_time_seconds", m.wall_time_seconds}};
  write_text(dir / "run_manifest.json", doc.dump(2) + "\n");
}

namespace {

std::unique_ptr<Proposer> make_proposer(const ExperimentConfig& c) {
  if (c.proposer == ProposerKind::vlm) return std::make_unique<VlmProposer>(c.vlm);
  return std::make_unique<ScriptedProposer>(c.thresholds);
}

json run_trial(const ExperimentConfig& c, std::size_t trial, const std::filesystem::path& dir) {
  const TrialSeeds seeds = trial_seeds(c, trial);
  CalibConfig cc = c.calib;
  cc.seed = seeds.calibration;
  const PromptTemplate prompt = PromptTemplate::defaults(c.mode, c.domain);
  const PriceSeries series = load_dataset(c.data);
  json out = {{"trial", trial}};

  switch (c.kind) {
    case ExperimentKind::calibrate: {
      const auto values = normalize(series.close).values;
      const SdeModel model = parse_model(c.model);
      const CalibrationResult res = calibrate(model, values, cc, c.loss);
      const SdeModel fitted = with_values(model, res.theta);
      emit_report(res, fitted, dir);
      render_fit_chart(values, fitted_ensemble(fitted, fit_setup(values, cc)), dir / "fit_chart.png");
      out["mae"] = res.mae;
      out["mae_unweighted"] = res.mae_unweighted;
      out["model"] = print_model(fitted);
      break;
    }
    case ExperimentKind::discover: {
      const auto values = normalize(series.close).values;
      const DiscoveryConfig dc{c.rounds, cc, c.loss, c.model, dir};
      auto proposer = make_proposer(c);
      const DiscoveryTrace trace = run_discovery(values, *proposer, prompt, dc);
      emit_report(trace, dir);
      const auto& first = trace.rounds.front();
      const auto& last = trace.rounds.back();
      out["initial_mae"] = first.mae ? json(*first.mae) : json(nullptr);
      out["final_mae"] = last.mae ? json(*last.mae) : json(nullptr);
      out["best_mae"] = last.best_mae;
      out["best_round"] = last.best_round;
      out["final_n_params"] = last.model.params.size();
      out["failures"] = trace.failures;
      out["final_model"] = print_model(last.model);
      break;
    }
    case ExperimentKind::market: {
      MarketConfig mc = c.market;
      mc.seed = seeds.market;
      const DiscoveryConfig dc{c.rounds, cc, c.loss, c.model, dir};
      const ProposerFactory factory = [&c](std::size_t) { return make_proposer(c); };
      const MarketTrace trace = run_market(series.close, mc, dc, prompt, factory);
      emit_report(trace, dir);
      const auto prices = trace.prices();
      out["simulated_variance"] = population_variance(prices);
      out["historical_variance"] = population_variance(trace.historical);
      std::size_t fallbacks = 0;
      for (const auto& w : trace.windows) fallbacks += w.fallback ? 1 : 0;
      out["fallback_windows"] = fallbacks;
      break;
    }
  }
  return out;
}

}  // namespace

json run_experiment(const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const auto& root = config.out_dir;
  std::filesystem::create_directories(root);
  write_text(root / "config.json", serialize_config(config));

  std::vector<std::future<json>> jobs;
  for (std::size_t t = 0; t < config.trials; ++t) {
    jobs.push_back(std::async(std::launch::async, [&config, &root, t] {
      return run_trial(config, t, root / ("trial_" + std::to_string(t)));
    }));
  }
  json trials = json::array();
  for (auto& j : jobs) trials.push_back(j.get());

  const json summary = {{"kind", to_string(config.kind)}, {"trials", trials}};
  write_text(root / "summary.json", summary.dump(2) + "\n");

  RunManifest m;
  m.config_hash = config_hash(config);
  for (std::size_t t = 0; t < config.trials; ++t) m.seeds.push_back(trial_seeds(config, t));
  m.version = std::string(version_string());
  m.kind = std::string(to_string(config.kind));
  m.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(m, root);
  return summary;
}

}  // namespace nst
