#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nst/calibrate.hpp"
#include "nst/diagnostics.hpp"
#include "nst/model.hpp"

namespace nst {

enum class PromptMode { standard, parsimonious };

std::string_view to_string(PromptMode mode);
PromptMode prompt_mode_from_string(std::string_view s);

struct PromptTemplate {
  std::string critic_instruction;
  std::string builder_instruction;
  PromptMode mode = PromptMode::standard;
  std::optional<std::string> domain_context;  // e.g. "S&P 500, 2023"

  /// Shipped critic/builder texts.
  static PromptTemplate defaults(PromptMode mode = PromptMode::standard,
                                 std::optional<std::string> domain = std::nullopt);

  /// Instruction plus domain line, plus the brevity clause in parsimonious
  /// mode.
  std::string critic_text() const;
  std::string builder_text() const;
};

/// Trigger levels for the scripted critic.
struct Thresholds {
  double reversion_slope = -0.05;
  double level_vol = 0.3;
  double periodicity = 3.0;
  double kurtosis = 4.0;
  double negligible = 1e-3;  // parsimonious removal
};

enum class TermFamily { mean_reversion, sqrt_diffusion, sinusoid, jump, time_scaled_diffusion };

std::string_view to_string(TermFamily family);
/// Detects a family on the first equation.
bool has_family(const SdeModel& model, TermFamily family);

struct Critique {
  std::string text;
  Diagnostics diagnostics;
};

struct ModelProposal {
  std::string dsl_source;
  std::string rationale;
};

/// Transport, extraction or reply-format failure of a proposer. The loop
/// records the round as failed and carries the previous model forward.
class ProposerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RoundContext {
  std::size_t round = 0;
  std::span<const double> dataset;
  std::span<const SdeModel> history;  // successfully calibrated models, oldest first
  std::span<const double> history_mae;
  const SdeModel* current = nullptr;  // best fit so far, calibrated values
  double current_mae = 0.0;
  Diagnostics diagnostics;
  std::vector<std::uint8_t> chart_png;  // fit of `current`, when requested
  const PromptTemplate* prompt = nullptr;
  std::optional<std::filesystem::path> trace_dir;
};

class Proposer {
 public:
  virtual ~Proposer() = default;
  virtual Critique critique(const RoundContext& ctx) = 0;
  virtual ModelProposal build(const Critique& critique, const RoundContext& ctx) = 0;
  virtual bool wants_chart() const { return false; }
};

/// Deterministic rule cascade: one term per call, families already present
/// in the current model or tried earlier in the history are skipped.
ModelProposal scripted_propose(const SdeModel& current, std::span<const SdeModel> history,
                               const Diagnostics& diagnostics, PromptMode mode,
                               const Thresholds& thresholds = {});
/// Uses history.back() as the current model.
ModelProposal scripted_propose(std::span<const SdeModel> history, const Diagnostics& diagnostics,
                               PromptMode mode, const Thresholds& thresholds = {});

std::string describe(const Diagnostics& d);

class ScriptedProposer : public Proposer {
 public:
  explicit ScriptedProposer(Thresholds thresholds = {}) : thresholds_(thresholds) {}
  Critique critique(const RoundContext& ctx) override;
  ModelProposal build(const Critique& critique, const RoundContext& ctx) override;

 private:
  Thresholds thresholds_;
};

/// Model with its parameter initial values replaced by theta.
SdeModel with_values(SdeModel model, std::span<const double> theta);

inline constexpr std::string_view kDefaultStartModel = "dV = mu*V dt + sigma*V dW";

struct DiscoveryConfig {
  std::size_t rounds = 5;
  CalibConfig calib;
  LossSpec loss;
  std::string start_model{kDefaultStartModel};
  std::optional<std::filesystem::path> out_dir;  // round_<i>/chart.png and exchanges
};

struct DiscoveryRound {
  std::size_t index = 0;
  SdeModel model;  // calibrated values (carried model on failure)
  Critique critique;
  std::optional<ModelProposal> proposal;
  std::optional<CalibrationResult> calibration;
  std::optional<double> mae;  // absent for failed rounds
  double best_mae = 0.0;
  std::size_t best_round = 0;
  bool failed = false;
  std::string failure;
};

struct DiscoveryTrace {
  std::vector<DiscoveryRound> rounds;
  std::size_t failures = 0;

  const DiscoveryRound& best() const { return rounds.at(rounds.back().best_round); }
};

/// Grid, common noise panel and initial state a calibration of `dataset`
/// under `config` uses.
struct FitSetup {
  Grid grid;
  NoisePanel noise;
  InitialState x0;
};
FitSetup fit_setup(std::span<const double> dataset, const CalibConfig& config);

/// Fitted paths of a calibrated model on the calibration noise.
PathEnsemble fitted_ensemble(const SdeModel& calibrated, const FitSetup& setup);

DiscoveryTrace run_discovery(std::span<const double> dataset, Proposer& proposer,
                             const PromptTemplate& prompt, const DiscoveryConfig& config);

/// round_<i>/model.sde, round_<i>/calibration.csv, round_<i>/critique.txt
/// and trace.json.
void write_discovery_trace(const DiscoveryTrace& trace, const std::filesystem::path& dir);

}  // namespace nst
