#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nst/discovery.hpp"

namespace nst {

/// Chat-completion style endpoint. Requests are
///   {"model", "temperature", "messages": [{"role", "content": [parts]}]}
/// with text parts {"type": "text", "text"} and the chart as
/// {"type": "image_url", "image_url": {"url": "data:image/png;base64,..."}};
/// the reply text is read from choices[0].message.content.
struct VlmConfig {
  std::string endpoint = "http://127.0.0.1:8080/v1/chat/completions";
  std::string model = "default";
  double temperature = 0.0;
  double timeout_seconds = 60.0;
  std::size_t retries = 2;  // extra attempts after the first
  std::string api_key_env = "NST_VLM_API_KEY";
  std::size_t max_tokens = 2048;
};

class TransportError : public ProposerError {
 public:
  using ProposerError::ProposerError;
};

class ExtractionError : public ProposerError {
 public:
  using ProposerError::ProposerError;
};

class VlmCalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChatMessage {
  std::string role;  // system | user
  std::string text;
  std::vector<std::uint8_t> image_png;  // optional
};

/// Where an exchange is persisted: <dir>/exchange_<round>_<role>.json.
struct ExchangeSink {
  std::optional<std::filesystem::path> dir;
  std::size_t round = 0;
};

struct VlmExchange {
  std::string request_body;
  std::string response_body;
  std::string reply;  // extracted message text
  int status = 0;
  std::size_t attempts = 0;
  double latency_seconds = 0.0;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);

/// Serialized request body; identical inputs give identical bytes.
std::string build_request_body(const VlmConfig& config, std::span<const ChatMessage> messages);

/// Sends the request with retries. The exchange is written to the sink
/// before the reply is parsed. Throws TransportError on timeout, HTTP
/// errors after the retry budget, or an empty reply.
VlmExchange send_chat(const VlmConfig& config, std::span<const ChatMessage> messages,
                      const ExchangeSink& sink, const std::string& role);

/// Contents of the first ``` fenced block, or nullopt.
std::optional<std::string> extract_code_block(const std::string& reply);

/// "name = value" lines for names of the model; names not in the model are
/// ignored. Throws VlmCalibrationError when a model parameter is assigned
/// something that is not a number, or when no parameter is assigned.
std::vector<double> parse_parameter_reply(const std::string& reply, const SdeModel& model);

struct HistoryEntry {
  std::string source;
  double mae = 0.0;
};

Critique vlm_critique(std::span<const std::uint8_t> chart_png, std::span<const HistoryEntry> history,
                      const PromptTemplate& prompt, const VlmConfig& config,
                      const ExchangeSink& sink = {});
ModelProposal vlm_build(const Critique& critique, const std::string& current_source,
                        const PromptTemplate& prompt, const VlmConfig& config,
                        const ExchangeSink& sink = {});
std::vector<double> vlm_calibrate(std::span<const std::uint8_t> chart_png, const SdeModel& model,
                                  const PromptTemplate& prompt, const VlmConfig& config,
                                  const ExchangeSink& sink = {});

class VlmProposer : public Proposer {
 public:
  explicit VlmProposer(VlmConfig config) : config_(std::move(config)) {}
  Critique critique(const RoundContext& ctx) override;
  ModelProposal build(const Critique& critique, const RoundContext& ctx) override;
  bool wants_chart() const override { return true; }

 private:
  VlmConfig config_;
};

}  // namespace nst
