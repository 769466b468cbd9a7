#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "nst/chart.hpp"
#include "nst/data.hpp"
#include "nst/discovery.hpp"
#include "nst/prompts.hpp"

using namespace nst;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("nst_test_discovery_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

class BrokenProposer : public Proposer {
 public:
  bool throw_in_critique = false;
  Critique critique(const RoundContext&) override {
    if (throw_in_critique) throw ProposerError("connection refused");
    return {"looks fine", {}};
  }
  ModelProposal build(const Critique&, const RoundContext&) override {
    return {"this is not a model", "none"};
  }
};

std::vector<double> ou_seasonal_dataset(std::uint64_t seed, std::size_t n = 101) {
  const auto s = synthesize_ou_seasonal({}, seed, Grid{0.0, n - 1, 1.0 / static_cast<double>(n - 1)});
  return normalize(s.close).values;
}

DiscoveryConfig quick_config(std::size_t rounds) {
  DiscoveryConfig c;
  c.rounds = rounds;
  c.calib.n_paths = 20;
  c.calib.epochs = 30;
  c.calib.seed = 99;
  return c;
}

}  // namespace

TEST_CASE("prompt templates") {
  const auto std_t = PromptTemplate::defaults();
  const auto par = PromptTemplate::defaults(PromptMode::parsimonious, "Gold, 2023");
  const std::string brevity(prompt_asset("brevity"));
  CHECK(std_t.critic_text().find(brevity) == std::string::npos);
  CHECK(par.critic_text().find(brevity) != std::string::npos);
  CHECK(par.builder_text().find(brevity) != std::string::npos);
  CHECK(par.critic_text().find("Gold, 2023") != std::string::npos);
  CHECK(std_t.builder_text().find("jump(") != std::string::npos);
  CHECK(prompt_mode_from_string("parsimonious") == PromptMode::parsimonious);
  CHECK_THROWS(prompt_mode_from_string("terse"));
  CHECK_THROWS(prompt_asset("missing"));
}

TEST_CASE("diagnostics on synthetic oracles") {
  const std::size_t n = 200;
  const double dt = 1.0 / static_cast<double>(n - 1);
  std::vector<double> sine(n), flat(n, 0.5), line(n);
  for (std::size_t i = 0; i < n; ++i) {
    sine[i] = 0.5 + 0.4 * std::sin(2.0 * std::numbers::pi * 4.0 * static_cast<double>(i) * dt);
    line[i] = 0.1 + 0.8 * static_cast<double>(i) * dt;
  }
  const auto ds = residual_diagnostics(sine, flat, dt);
  CHECK(ds.periodicity_ratio > 100.0);
  CHECK(ds.dominant_frequency == doctest::Approx(4.0).epsilon(0.02));

  const auto dl = residual_diagnostics(line, line, dt);
  CHECK(dl.level_vol_correlation == 0.0);

  const auto ou_model = parse_model("dV = theta*(m - V) dt + sigma dW");
  const Grid grid{0.0, 500, 0.01};
  const auto ens = simulate(ou_model, std::vector<double>{5.0, 1.0, 0.3}, {1.5, 0.1}, grid,
                            generate_noise(3, 1, grid, 1));
  const auto ou = ens.path(0);
  const std::vector<double> ou_flat(ou.size(), 1.0);
  const auto d_ou = residual_diagnostics(ou, ou_flat, grid.dt);
  CHECK(d_ou.mean_reversion_slope < 0.0);

  const std::vector<double> short_y{0.1, 0.4, 0.2, 0.3, 0.5, 0.2, 0.6, 0.4, 0.3, 0.2};
  const std::vector<double> short_fit(short_y.size(), 0.3);
  CHECK(residual_diagnostics(short_y, short_fit, 0.1).periodicity_ratio == 1.0);
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
  CHECK(ols_slope(std::vector<double>{0, 1, 2}, std::vector<double>{1, 3, 5}) == doctest::Approx(2.0));
}

TEST_CASE("scripted proposer rule cascade") {
  const SdeModel gbm = with_values(parse_model(std::string(kDefaultStartModel)),
                                   std::vector<double>{0.05, 0.2});
  Diagnostics reverting;
  reverting.mean_reversion_slope = -0.3;
  reverting.level_mean = 0.4;
  const std::vector<SdeModel> history{gbm};
  const auto p = scripted_propose(history, reverting, PromptMode::standard);
  const auto m = parse_model(p.dsl_source);
  CHECK(has_family(m, TermFamily::mean_reversion));
  CHECK(m.params.size() == 4);
  CHECK(m.params[*m.param_index("theta")].initial == 0.0);
  CHECK(m.params[*m.param_index("m")].initial == 0.4);
  CHECK(m.params[*m.param_index("mu")].initial == 0.05);
  CHECK(scripted_propose(history, reverting, PromptMode::standard).dsl_source == p.dsl_source);

  Diagnostics constant_vol;
  constant_vol.level_vol_correlation = 0.8;
  constant_vol.level_mean = 0.25;
  const auto ou = parse_model("param sigma = 0.2\ndV = theta*(m - V) dt + sigma dW");
  const auto sq = parse_model(scripted_propose(std::vector<SdeModel>{ou}, constant_vol,
                                               PromptMode::standard).dsl_source);
  CHECK(has_family(sq, TermFamily::sqrt_diffusion));
  CHECK(sq.params[*sq.param_index("sigma")].initial == doctest::Approx(0.4));

  const auto full = parse_model(
      "param A = 0.1\ndV = mu*V + theta*(m - V) + A*sin(2*pi*f*t + phi) dt + sigma*sqrt(V)*(1 + b*t) dW"
      " + jump(lam, jm, js)");
  for (auto f : {TermFamily::mean_reversion, TermFamily::sqrt_diffusion, TermFamily::sinusoid,
                 TermFamily::jump, TermFamily::time_scaled_diffusion})
    CHECK(has_family(full, f));
  Diagnostics everything{-1.0, 50.0, 2.0, 0.9, 10.0, 0.5};
  const auto same = scripted_propose(std::vector<SdeModel>{full}, everything, PromptMode::standard);
  CHECK(same.rationale == "no change");
  CHECK(structurally_equal(parse_model(same.dsl_source), full));
}

TEST_CASE("complexity grows one term per round until exhausted") {
  Diagnostics everything{-1.0, 50.0, 2.0, 0.9, 10.0, 0.5};
  std::vector<SdeModel> history{parse_model(std::string(kDefaultStartModel))};
  std::size_t count = history.back().params.size();
  int added = 0;
  for (int i = 0; i < 10; ++i) {
    const auto p = scripted_propose(history, everything, PromptMode::standard);
    if (p.rationale == "no change") break;
    const auto m = parse_model(p.dsl_source);
    CHECK(m.params.size() > count);
    count = m.params.size();
    history.push_back(m);
    ++added;
  }
  CHECK(added == 4);  // mean reversion, sinusoid, jump, time scaling
  CHECK(count <= kMaxParams);
}

TEST_CASE("parsimonious mode removes negligible terms") {
  const auto m = parse_model(
      "param A = 0.00001\nparam mu = 0.2\ndV = mu*V + A*sin(2*pi*f*t + phi) dt + sigma*V dW");
  Diagnostics d{-1.0, 50.0, 2.0, 0.9, 10.0, 0.5};
  const auto p = scripted_propose(std::vector<SdeModel>{m}, d, PromptMode::parsimonious);
  const auto out = parse_model(p.dsl_source);
  CHECK_FALSE(has_family(out, TermFamily::sinusoid));
  CHECK(out.params.size() == 2);
  CHECK(p.rationale.find("removed") != std::string::npos);

  const auto timed = parse_model("param b = 0.0001\ndV = mu*V dt + sigma*V*(1 + b*t) dW");
  const auto q = parse_model(
      scripted_propose(std::vector<SdeModel>{timed}, d, PromptMode::parsimonious).dsl_source);
  CHECK_FALSE(has_family(q, TermFamily::time_scaled_diffusion));

  const auto jumpy = parse_model(
      "param jm = 0\nparam js = 0.0002\ndV = mu*V dt + sigma*V dW + jump(lam, jm, js)");
  const auto r = parse_model(
      scripted_propose(std::vector<SdeModel>{jumpy}, d, PromptMode::parsimonious).dsl_source);
  CHECK_FALSE(has_family(r, TermFamily::jump));

  // Standard mode ignores small parameters.
  const auto s = scripted_propose(std::vector<SdeModel>{m}, d, PromptMode::standard);
  CHECK(has_family(parse_model(s.dsl_source), TermFamily::sinusoid));
}

TEST_CASE("fit chart") {
  const std::vector<double> flat(50, 0.5);
  const auto model = parse_model("dV = a dt");
  const Grid grid{0.0, 49, 1.0 / 49.0};
  const auto ens = simulate(model, std::vector<double>{0.0}, {0.5, 0.1}, grid,
                            generate_noise(1, 3, grid, 1));
  const auto chart = draw_fit_chart(flat, ens);
  CHECK(chart.canvas.width() == 640);
  CHECK(chart.canvas.height() == 480);
  const PlotFrame f;
  const auto row = static_cast<std::size_t>(std::lround(f.py(0.5)));
  for (std::size_t x = static_cast<std::size_t>(f.left) + 1; x < static_cast<std::size_t>(f.right); ++x)
    CHECK(chart.canvas.at(x, row) == kBlack);

  const auto big = simulate(parse_model("dV = mu*V dt + sigma*V dW"), std::vector<double>{0.1, 0.2},
                            {0.5, 0.1}, grid, generate_noise(2, 100, grid, 1));
  const auto dir = scratch("chart");
  fs::create_directories(dir);
  CHECK(render_fit_chart(flat, big, dir / "a.png") == 10);
  render_fit_chart(flat, big, dir / "b.png");
  const auto a = slurp(dir / "a.png");
  CHECK(a.substr(1, 3) == "PNG");
  CHECK(a == slurp(dir / "b.png"));
  for (const auto& c : path_palette()) CHECK_FALSE(c == kBlack);
  CHECK_THROWS(render_fit_chart(flat, big, dir / "missing" / "x.png"));
}

TEST_CASE("rounds = 1 is the calibrated starting model") {
  const auto data = ou_seasonal_dataset(5);
  ScriptedProposer proposer;
  const auto cfg = quick_config(1);
  const auto trace = run_discovery(data, proposer, PromptTemplate::defaults(), cfg);
  REQUIRE(trace.rounds.size() == 1);
  const auto direct = calibrate(parse_model(std::string(kDefaultStartModel)), data, cfg.calib);
  CHECK(trace.rounds[0].calibration->theta == direct.theta);
  CHECK(*trace.rounds[0].mae == direct.mae);
  CHECK_FALSE(trace.rounds[0].failed);
}

TEST_CASE("failures carry the previous model forward") {
  const auto data = ou_seasonal_dataset(6);
  for (bool in_critique : {false, true}) {
    BrokenProposer proposer;
    proposer.throw_in_critique = in_critique;
    const auto trace = run_discovery(data, proposer, PromptTemplate::defaults(), quick_config(4));
    REQUIRE(trace.rounds.size() == 4);
    CHECK(trace.failures == 3);
    const auto start = parse_model(std::string(kDefaultStartModel));
    CHECK(trace.rounds.back().model.equations == start.equations);
    for (std::size_t i = 1; i < 4; ++i) {
      CHECK(trace.rounds[i].failed);
      CHECK_FALSE(trace.rounds[i].mae.has_value());
      CHECK(trace.rounds[i].best_mae == *trace.rounds[0].mae);
    }
  }
}

TEST_CASE("scripted discovery improves and is reproducible") {
  const auto data = ou_seasonal_dataset(7);
  ScriptedProposer proposer;
  const auto cfg = quick_config(5);
  const auto trace = run_discovery(data, proposer, PromptTemplate::defaults(), cfg);
  REQUIRE(trace.rounds.size() == 5);
  CHECK(trace.failures == 0);
  CHECK(*trace.rounds.back().mae <= *trace.rounds.front().mae);
  for (std::size_t i = 1; i < 5; ++i) CHECK(trace.rounds[i].best_mae <= trace.rounds[i - 1].best_mae);

  const auto dir1 = scratch("trace1");
  const auto dir2 = scratch("trace2");
  write_discovery_trace(trace, dir1);
  ScriptedProposer again;
  write_discovery_trace(run_discovery(data, again, PromptTemplate::defaults(), cfg), dir2);
  for (int i = 0; i < 5; ++i) {
    const auto r = "round_" + std::to_string(i);
    CHECK(fs::exists(dir1 / r / "model.sde"));
    CHECK(fs::exists(dir1 / r / "calibration.csv"));
    CHECK(slurp(dir1 / r / "model.sde") == slurp(dir2 / r / "model.sde"));
    CHECK(slurp(dir1 / r / "calibration.csv") == slurp(dir2 / r / "calibration.csv"));
  }
  CHECK(slurp(dir1 / "trace.json") == slurp(dir2 / "trace.json"));
}

TEST_CASE("discovery writes round charts when given an output directory") {
  const auto data = ou_seasonal_dataset(8);
  ScriptedProposer proposer;
  auto cfg = quick_config(2);
  cfg.out_dir = scratch("charts");
  run_discovery(data, proposer, PromptTemplate::defaults(), cfg);
  CHECK(fs::exists(*cfg.out_dir / "round_0" / "chart.png"));
  CHECK(fs::exists(*cfg.out_dir / "round_1" / "chart.png"));
}
