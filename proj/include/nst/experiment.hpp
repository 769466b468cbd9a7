#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nst/calibrate.hpp"
#include "nst/discovery.hpp"
#include "nst/llm_client.hpp"
#include "nst/market.hpp"

namespace nst {

enum class ExperimentKind { calibrate, discover, market };
enum class ProposerKind { scripted, vlm };

std::string_view to_string(ExperimentKind kind);
std::string_view to_string(ProposerKind kind);
ExperimentKind experiment_kind_from_string(std::string_view s);
ProposerKind proposer_kind_from_string(std::string_view s);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::discover;
  std::string data = "synthetic:gbm:0.05,0.2,1000";
  std::string model{kDefaultStartModel};  // calibrate model / discovery start model
  ProposerKind proposer = ProposerKind::scripted;
  PromptMode mode = PromptMode::standard;
  std::optional<std::string> domain;
  std::size_t rounds = 5;
  std::size_t trials = 1;
  CalibConfig calib;
  LossSpec loss;
  Thresholds thresholds;
  MarketConfig market;
  VlmConfig vlm;
  std::filesystem::path out_dir = "out";
};

/// Every field is written, keys sorted; missing keys take defaults, unknown
/// keys are a ConfigError.
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);
std::string serialize_config(const ExperimentConfig& config);
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// SHA-256 of the serialized config with the output directory cleared.
std::string config_hash(const ExperimentConfig& config);
std::string sha256_hex(std::string_view bytes);

/// Version string baked in at configure time (git describe when available).
std::string_view version_string();

struct TrialSeeds {
  std::uint64_t calibration = 0;
  std::uint64_t market = 0;
};
/// Trial t offsets both seeds by t.
TrialSeeds trial_seeds(const ExperimentConfig& config, std::size_t trial);

/// Module artifacts of one run.
void emit_report(const DiscoveryTrace& trace, const std::filesystem::path& dir);
void emit_report(const MarketTrace& trace, const std::filesystem::path& dir);
/// calibration.csv, model.sde and result.json.
void emit_report(const CalibrationResult& result, const SdeModel& model,
                 const std::filesystem::path& dir);

struct RunManifest {
  std::string config_hash;
  std::vector<TrialSeeds> seeds;
  std::string version;
  std::string kind;
  double wall_time_seconds = 0.0;
};
void write_manifest(const RunManifest& manifest, const std::filesystem::path& dir);

/// Runs all trials (concurrently) and writes config.json, trial_<t>/...,
/// summary.json and run_manifest.json under config.out_dir. Returns the
/// summary document.
nlohmann::json run_experiment(const ExperimentConfig& config);

}  // namespace nst
