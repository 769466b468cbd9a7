#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "nst/data.hpp"
#include "nst/experiment.hpp"

using namespace nst;
namespace fs = std::filesystem;

namespace {

PriceSeries csv(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in, "t.csv");
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Every CSV/JSON file under dir keyed by relative path; the manifest's wall
// time is dropped.
std::map<std::string, std::string> outputs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (ext != ".csv" && ext != ".json") continue;
    auto text = slurp(e.path());
    if (e.path().filename() == "run_manifest.json") {
      auto j = nlohmann::json::parse(text);
      j.erase("wall_time_seconds");
      text = j.dump();
    }
    out[fs::relative(e.path(), dir).generic_string()] = text;
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("nst_test_io_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig small(ExperimentKind kind, const fs::path& out) {
  ExperimentConfig c;
  c.kind = kind;
  c.data = "synthetic:gbm:0.3,0.2,77,41";
  c.rounds = 2;
  c.calib.epochs = 8;
  c.calib.n_paths = 12;
  c.calib.seed = 5;
  c.market.n_traders = 2;
  c.market.n_realizations = 3;
  c.market.seed = 9;
  c.out_dir = out;
  return c;
}

}  // namespace

TEST_CASE("csv ingestion") {
  const auto s = csv("date,close\n2023-01-02,100\n2023-01-03,101.5\n2023-01-04,99\n");
  CHECK(s.close == std::vector<double>{100, 101.5, 99});
  CHECK(s.dates.front() == "2023-01-02");

  const auto sorted = csv("date,close\n2023-01-04,3\n2023-01-02,1\n2023-01-03,2\n");
  CHECK(sorted.close == std::vector<double>{1, 2, 3});

  const auto extra = csv("open,close,date\n1,10,2023-01-02\n1,11,2023-01-03\n");
  CHECK(extra.close == std::vector<double>{10, 11});

  try {
    csv("date,close\n2023-01-02,100\n2023-02-30,100\n");
    FAIL("expected a date error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(csv("date,close\n2023-01-02,0\n"), DataError);
  CHECK_THROWS_AS(csv("date,close\n2023-01-02,-4\n"), DataError);
  CHECK_THROWS_AS(csv("date,close\n2023-01-02,1\n2023-01-02,2\n"), DataError);
  CHECK_THROWS_AS(csv("date,price\n2023-01-02,1\n"), DataError);
  CHECK_THROWS_AS(csv("date,close\n2023-01-02\n"), DataError);
  CHECK_THROWS_AS(load_csv("/nonexistent/prices.csv"), DataError);

  std::ostringstream out;
  write_csv(s, out);
  CHECK(csv(out.str()).close == s.close);
}

TEST_CASE("normalization") {
  const std::vector<double> xs{100, 150, 200};
  const auto n = normalize(xs);
  CHECK(n.values == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(n.time(0) == 0.0);
  CHECK(n.time(2) == 1.0);
  CHECK_THROWS_AS(normalize(std::vector<double>{5, 5, 5}), DataError);
  CHECK_THROWS_AS(normalize(std::vector<double>{5}), DataError);

  const auto series = synthesize_gbm(0.1, 0.3, 4, Grid{0.0, 200, 0.005}, 123.0).close;
  const auto back = denormalize(normalize(series));
  for (std::size_t i = 0; i < series.size(); ++i) {
    CHECK(std::abs(back[i] - series[i]) <= 1e-12 * std::abs(series[i]));
  }
}

TEST_CASE("synthetic series") {
  const Grid grid{0.0, 100, 0.01};
  for (double v : synthesize_gbm(0.0, 0.0, 3, grid).close) CHECK(v == 1.0);
  CHECK(synthesize_gbm(0.05, 0.2, 8, grid).close == synthesize_gbm(0.05, 0.2, 8, grid).close);

  // Exact log-normal solution on the same Brownian path.
  const auto noise = generate_noise(8, 1, grid, kMaxEquations);
  double w = 0.0;
  for (std::size_t k = 0; k < grid.n_steps; ++k) w += noise.dw(0, k, 0);
  const double exact = std::exp((0.05 - 0.5 * 0.04) * 1.0 + 0.2 * w);
  const double euler = synthesize_gbm(0.05, 0.2, 8, grid).close.back();
  CHECK(std::abs(euler - exact) < 0.05 * exact);

  const auto a = load_dataset("synthetic:gbm:0.05,0.2,8");
  CHECK(a.close == synthesize_gbm(0.05, 0.2, 8, grid).close);
  CHECK(load_dataset("synthetic:ou:25,1,3,3,0.3,2,61").close.size() == 61);
  CHECK(is_synthetic("synthetic:gbm:0,0,1"));
  CHECK_THROWS_AS(load_dataset("synthetic:gbm:0.05,0.2"), DataError);
  CHECK_THROWS_AS(load_dataset("synthetic:heston:1,2,3"), DataError);
}

TEST_CASE("config round trip") {
  ExperimentConfig c;
  c.kind = ExperimentKind::market;
  c.domain = "S&P 500, 2023";
  c.calib.x0 = 0.25;
  c.market.dt = 0.004;
  c.calib.seed = 18446744073709551615ull;
  const auto text = serialize_config(c);
  CHECK(serialize_config(parse_config(text)) == text);
  CHECK(parse_config(text).calib.seed == c.calib.seed);

  const auto defaults = serialize_config(ExperimentConfig{});
  CHECK(serialize_config(parse_config("{}")) == defaults);
  CHECK(serialize_config(parse_config(defaults)) == defaults);

  CHECK_THROWS_AS(parse_config("{\"rounds\": 3, \"roudns\": 4}"), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"calib\": {\"epoch\": 4}}"), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"kind\": \"simulate\"}"), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"rounds\": \"five\"}"), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"market\": {\"kyle_lambda\": 0}}"), ConfigError);
  CHECK_THROWS_AS(parse_config("[1, 2"), ConfigError);
  CHECK(parse_config("{\"mode\": \"parsimonious\"}").mode == PromptMode::parsimonious);
}

TEST_CASE("config hash") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  ExperimentConfig a, b;
  b.out_dir = "elsewhere";
  CHECK(config_hash(a) == config_hash(b));
  b.calib.seed = 1;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(config_hash(a).size() == 64);
}

TEST_CASE("calibrate experiment layout") {
  const auto dir = scratch("calibrate");
  auto c = small(ExperimentKind::calibrate, dir);
  c.trials = 2;
  const auto summary = run_experiment(c);
  CHECK(summary["trials"].size() == 2);
  for (const char* f : {"calibration.csv", "model.sde", "result.json", "fit_chart.png"}) {
    CHECK(fs::exists(dir / "trial_1" / f));
  }
  const auto manifest = nlohmann::json::parse(slurp(dir / "run_manifest.json"));
  CHECK(manifest["config_hash"] == config_hash(c));
  CHECK(manifest["seeds"][1]["calibration"] == 6);
  CHECK(manifest["version"].get<std::string>().size() > 0);
  CHECK(manifest.contains("wall_time_seconds"));
  CHECK(load_config(dir / "config.json").calib.seed == 5);
  const auto result = nlohmann::json::parse(slurp(dir / "trial_0" / "result.json"));
  CHECK(result["theta"].contains("mu"));
  // Calibration log has one row per epoch plus the header.
  const auto log = slurp(dir / "trial_0" / "calibration.csv");
  CHECK(std::count(log.begin(), log.end(), '\n') == 9);
}

TEST_CASE("discover experiment layout and determinism") {
  const auto dir = scratch("discover");
  auto c = small(ExperimentKind::discover, dir);
  c.data = "synthetic:ou:25,1,3,3,0.3,2,61";
  c.trials = 2;
  c.mode = PromptMode::parsimonious;
  run_experiment(c);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(fs::exists(dir / "trial_0" / ("round_" + std::to_string(r)) / "model.sde"));
    CHECK(fs::exists(dir / "trial_0" / ("round_" + std::to_string(r)) / "chart.png"));
  }
  CHECK(fs::exists(dir / "trial_1" / "trace.json"));
  const auto first = outputs(dir);

  // Re-run from the persisted config.
  const auto persisted = load_config(dir / "config.json");
  fs::remove_all(dir);
  run_experiment(persisted);
  CHECK(outputs(dir) == first);
}

TEST_CASE("market experiment determinism") {
  const auto dir = scratch("market");
  auto c = small(ExperimentKind::market, dir);
  run_experiment(c);
  const auto csv_text = slurp(dir / "trial_0" / "market_trace.csv");
  CHECK(std::count(csv_text.begin(), csv_text.end(), '\n') == 42);
  CHECK(fs::exists(dir / "trial_0" / "summary.json"));
  CHECK(fs::exists(dir / "trial_0" / "market_chart.png"));
  const auto first = outputs(dir);
  const auto persisted = load_config(dir / "config.json");
  fs::remove_all(dir);
  run_experiment(persisted);
  CHECK(outputs(dir) == first);
  CHECK(slurp(dir / "trial_0" / "market_trace.csv") == csv_text);
}
