#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "nst/experiment.hpp"
#include "nst/model.hpp"

using namespace nst;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Flags shared by the experiment commands; set ones override the config file.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::string> model;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> proposer;
  std::optional<std::string> mode;
  std::optional<std::string> domain;
  std::optional<std::string> endpoint;
  std::optional<std::string> vlm_model;
  std::optional<std::size_t> windows;
  std::optional<std::size_t> traders;
  std::optional<std::size_t> realizations;
  std::optional<double> kyle_lambda;
  std::optional<double> noise_sigma;
  std::optional<double> kappa;

  ExperimentConfig apply(ExperimentKind kind) const {
    ExperimentConfig c = config ? load_config(*config) : ExperimentConfig{};
    c.kind = kind;
    if (data) c.data = *data;
    if (out) c.out_dir = *out;
    if (model) c.model = read_file(*model);
    if (trials) c.trials = *trials;
    if (rounds) c.rounds = *rounds;
    if (epochs) c.calib.epochs = *epochs;
    if (seed) c.calib.seed = c.market.seed = *seed;
    if (proposer) c.proposer = proposer_kind_from_string(*proposer);
    if (mode) c.mode = prompt_mode_from_string(*mode);
    if (domain) c.domain = *domain;
    if (endpoint) c.vlm.endpoint = *endpoint;
    if (vlm_model) c.vlm.model = *vlm_model;
    if (windows) c.market.n_windows = *windows;
    if (traders) c.market.n_traders = *traders;
    if (realizations) c.market.n_realizations = *realizations;
    if (kyle_lambda) c.market.kyle_lambda = *kyle_lambda;
    if (noise_sigma) c.market.noise_sigma = *noise_sigma;
    if (kappa) c.market.kappa = *kappa;
    return config_from_json(to_json(c));  // re-validate
  }
};

void common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--data", o.data, "CSV path or synthetic:gbm:mu,sigma,seed[,n] / synthetic:ou:...");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--trials", o.trials, "Independent seeded runs");
  cmd->add_option("--epochs", o.epochs, "Calibration epochs");
  cmd->add_option("--seed", o.seed, "Base seed");
}

void discovery_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--model", o.model, "Start model (.sde)")->check(CLI::ExistingFile);
  cmd->add_option("--rounds", o.rounds, "Critic/builder rounds");
  cmd->add_option("--proposer", o.proposer, "scripted or vlm")
      ->check(CLI::IsMember({"scripted", "vlm"}));
  cmd->add_option("--mode", o.mode, "standard or parsimonious")
      ->check(CLI::IsMember({"standard", "parsimonious"}));
  cmd->add_option("--domain", o.domain, "Domain line, e.g. \"S&P 500, 2023\"");
  cmd->add_option("--endpoint", o.endpoint, "Chat-completions URL for --proposer vlm");
  cmd->add_option("--vlm-model", o.vlm_model, "Model name sent to the endpoint");
}

int run(ExperimentKind kind, const Overrides& o) {
  const ExperimentConfig c = o.apply(kind);
  const auto summary = run_experiment(c);
  std::cout << summary.dump(2) << '\n';
  std::cerr << "wrote " << c.out_dir.string() << '\n';
  return 0;
}

int validate(const std::string& path) {
  const std::string source = read_file(path);
  SdeModel model;
  try {
    model = parse_model(source);
  } catch (const ParseError& e) {
    std::cout << path;
    if (e.pos().line > 0) std::cout << ':' << e.pos().line << ':' << e.pos().column;
    std::cout << ": error: " << e.detail()
              << " (at '" << e.token() << "')\n";
    return 1;
  }
  const auto report = validate_model(model);
  for (const auto& issue : report.issues) {
    std::cout << path;
    if (issue.pos.line > 0) std::cout << ':' << issue.pos.line << ':' << issue.pos.column;
    std::cout << ": " << (issue.severity == Severity::error ? "error" : "warning") << " [" << issue.code
              << "] " << issue.message << '\n';
  }
  if (!report.ok) return 1;
  std::cout << print_model(model) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neuro-symbolic trader toolkit: SDE discovery, calibration and market feedback"};
  app.set_version_flag("--version", std::string(version_string()));
  app.require_subcommand(1);

  Overrides cal, dis, mkt;
  auto* c = app.add_subcommand("calibrate", "Fit a model's parameters to a series");
  common(c, cal);
  c->add_option("--model", cal.model, "Model (.sde)")->check(CLI::ExistingFile);

  auto* d = app.add_subcommand("discover", "Critic/builder model discovery");
  common(d, dis);
  discovery_flags(d, dis);

  auto* m = app.add_subcommand("market", "Moving-window market with discovered traders");
  common(m, mkt);
  discovery_flags(m, mkt);
  m->add_option("--windows", mkt.windows, "Number of windows");
  m->add_option("--traders", mkt.traders, "Fundamental trader groups");
  m->add_option("--realizations", mkt.realizations, "Belief realizations per trader");
  m->add_option("--kyle-lambda", mkt.kyle_lambda, "Linear price impact");
  m->add_option("--noise-sigma", mkt.noise_sigma, "Noise trader scale");
  m->add_option("--kappa", mkt.kappa, "Demand sensitivity per trader group");

  std::string model_path;
  auto* v = app.add_subcommand("validate", "Parse and validate a model file");
  v->add_option("--model", model_path, "Model (.sde)")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*c) return run(ExperimentKind::calibrate, cal);
    if (*d) return run(ExperimentKind::discover, dis);
    if (*m) return run(ExperimentKind::market, mkt);
    if (*v) return validate(model_path);
  } catch (const std::exception& e) {
    std::cerr << "nst: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
