#include "nst/llm_client.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "nst/prompts.hpp"

namespace nst {

using nlohmann::json;

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string build_request_body(const VlmConfig& config, std::span<const ChatMessage> messages) {
  json msgs = json::array();
  for (const auto& m : messages) {
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", m.text}});
    if (!m.image_png.empty()) {
      content.push_back({{"type", "image_url"},
                         {"image_url", {{"url", "data:image/png;base64," + base64_encode(m.image_png)}}}});
    }
    msgs.push_back({{"role", m.role}, {"content", std::move(content)}});
  }
  json body{{"model", config.model},
            {"temperature", config.temperature},
            {"max_tokens", config.max_tokens},
            {"messages", std::move(msgs)}};
  return body.dump();
}

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw TransportError("endpoint must include a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

std::string extract_reply(const std::string& body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) return {};
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    std::string text;
    for (const auto& part : content)
      if (part.value("type", "") == "text") text += part.value("text", "");
    return text;
  } catch (const json::exception&) {
    return {};
  }
}

void persist(const ExchangeSink& sink, const std::string& role, const VlmExchange& ex,
             const std::string& error) {
  if (!sink.dir) return;
  std::filesystem::create_directories(*sink.dir);
  json request = json::parse(ex.request_body, nullptr, false);
  json record{{"role", role},
              {"round", sink.round},
              {"request", request.is_discarded() ? json(ex.request_body) : request},
              {"status", ex.status},
              {"attempts", ex.attempts},
              {"latency_seconds", ex.latency_seconds},
              {"response", ex.response_body}};
  if (!error.empty()) record["error"] = error;
  const auto path = *sink.dir / ("exchange_" + std::to_string(sink.round) + "_" + role + ".json");
  std::ofstream f(path);
  f << record.dump(2) << '\n';
}

}  // namespace

VlmExchange send_chat(const VlmConfig& config, std::span<const ChatMessage> messages,
                      const ExchangeSink& sink, const std::string& role) {
  VlmExchange ex;
  ex.request_body = build_request_body(config, messages);
  const Endpoint ep = split_endpoint(config.endpoint);

  httplib::Client client(ep.base);
  const auto timeout = std::chrono::duration<double>(config.timeout_seconds);
  const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  client.set_connection_timeout(micros);
  client.set_read_timeout(micros);
  client.set_write_timeout(micros);
  httplib::Headers headers;
  if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const auto start = std::chrono::steady_clock::now();
  std::string error;
  for (std::size_t attempt = 0; attempt <= config.retries; ++attempt) {
    ex.attempts = attempt + 1;
    auto res = client.Post(ep.path, headers, ex.request_body, "application/json");
    if (!res) {
      error = "request failed: " + httplib::to_string(res.error());
      ex.status = 0;
      continue;
    }
    ex.status = res->status;
    ex.response_body = res->body;
    if (res->status >= 200 && res->status < 300) {
      error.clear();
      break;
    }
    error = "HTTP status " + std::to_string(res->status);
  }
  ex.latency_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  persist(sink, role, ex, error);
  if (!error.empty()) throw TransportError(role + ": " + error);
  ex.reply = extract_reply(ex.response_body);
  if (ex.reply.empty()) throw TransportError(role + ": empty reply");
  return ex;
}

std::optional<std::string> extract_code_block(const std::string& reply) {
  const auto open = reply.find("```");
  if (open == std::string::npos) return std::nullopt;
  const auto body_start = reply.find('\n', open);
  if (body_start == std::string::npos) return std::nullopt;
  const auto close = reply.find("```", body_start);
  if (close == std::string::npos) return std::nullopt;
  return reply.substr(body_start + 1, close - body_start - 1);
}

std::vector<double> parse_parameter_reply(const std::string& reply, const SdeModel& model) {
  static const std::regex line_re(R"(^\s*(?:param\s+)?([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(\S+)\s*$)");
  std::vector<double> values = model.initial_values();
  std::size_t assigned = 0;
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    auto end = reply.find('\n', pos);
    if (end == std::string::npos) end = reply.size();
    std::string line = reply.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end + 1;
    std::smatch m;
    if (!std::regex_match(line, m, line_re)) continue;
    const auto index = model.param_index(m[1].str());
    if (!index) continue;
    const std::string text = m[2].str();
    double v = 0.0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size() || !std::isfinite(v)) {
      throw VlmCalibrationError("parameter " + m[1].str() + " assigned non-numeric value '" + text + "'");
    }
    values[*index] = v;
    ++assigned;
  }
  if (assigned == 0) throw VlmCalibrationError("reply assigns no model parameter");
  return values;
}

Critique vlm_critique(std::span<const std::uint8_t> chart_png, std::span<const HistoryEntry> history,
                      const PromptTemplate& prompt, const VlmConfig& config,
                      const ExchangeSink& sink) {
  std::string text = "Models so far:\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    text += "\nModel " + std::to_string(i) + " (moment MAE " + format_number(history[i].mae) + "):\n" +
            history[i].source + "\n";
  }
  text += "\nThe chart shows the fit of the last model listed.";
  const std::vector<ChatMessage> messages{
      {"system", prompt.critic_text(), {}},
      {"user", text, std::vector<std::uint8_t>(chart_png.begin(), chart_png.end())},
  };
  const auto ex = send_chat(config, messages, sink, "critic");
  return {ex.reply, {}};
}

ModelProposal vlm_build(const Critique& critique, const std::string& current_source,
                        const PromptTemplate& prompt, const VlmConfig& config,
                        const ExchangeSink& sink) {
  const std::string text = "Current model:\n" + current_source + "\n\nCritique:\n" + critique.text;
  const std::vector<ChatMessage> messages{
      {"system", prompt.builder_text(), {}},
      {"user", text, {}},
  };
  const auto ex = send_chat(config, messages, sink, "builder");
  auto block = extract_code_block(ex.reply);
  if (!block) throw ExtractionError("builder reply contains no fenced code block");
  return {*block, ex.reply};
}

std::vector<double> vlm_calibrate(std::span<const std::uint8_t> chart_png, const SdeModel& model,
                                  const PromptTemplate& prompt, const VlmConfig& config,
                                  const ExchangeSink& sink) {
  std::string system(prompt_asset("calibrate"));
  if (prompt.domain_context) {
    std::string line(prompt_asset("domain"));
    line.replace(line.find("{context}"), 9, *prompt.domain_context);
    system += "\n" + line;
  }
  const std::vector<ChatMessage> messages{
      {"system", system, {}},
      {"user", "Model:\n" + print_model(model),
       std::vector<std::uint8_t>(chart_png.begin(), chart_png.end())},
  };
  const auto ex = send_chat(config, messages, sink, "calibrate");
  return parse_parameter_reply(ex.reply, model);
}

Critique VlmProposer::critique(const RoundContext& ctx) {
  std::vector<HistoryEntry> history;
  for (std::size_t i = 0; i < ctx.history.size(); ++i)
    if (!structurally_equal(ctx.history[i], *ctx.current))
      history.push_back({print_model(ctx.history[i]), ctx.history_mae[i]});
  history.push_back({print_model(*ctx.current), ctx.current_mae});
  return vlm_critique(ctx.chart_png, history, *ctx.prompt, config_, {ctx.trace_dir, ctx.round});
}

ModelProposal VlmProposer::build(const Critique& critique, const RoundContext& ctx) {
  return vlm_build(critique, print_model(*ctx.current), *ctx.prompt, config_,
                   {ctx.trace_dir, ctx.round});
}

}  // namespace nst
