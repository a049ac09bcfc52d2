#pragma once

// Network-backed clients. Only compiled into the CLI when OpenSSL is found.

#include <cstdlib>
#include <string>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "vtb/common/error.hpp"
#include "vtb/datagen/audio.hpp"
#include "vtb/datagen/clients.hpp"

namespace vtb::cli {

// "https://host[:port]/path" -> {"https://host[:port]", "/path"}.
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("url needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

inline std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

namespace detail {

inline std::string post(const std::string& url, const std::string& key, const std::string& body,
                        const char* content_type = "application/json") {
  const auto [base, path] = split_url(url);
  httplib::Client cli(base);
  cli.set_connection_timeout(30);
  cli.set_read_timeout(120);
  httplib::Headers headers;
  if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
  auto res = cli.Post(path, headers, body, content_type);
  if (!res) throw ClientError("request to " + url + " failed: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw ClientError("HTTP " + std::to_string(res->status) + " from " + url);
  if (res->status != 200) throw ClientError("HTTP " + std::to_string(res->status) + " from " + url + ": " + res->body);
  return res->body;
}

}  // namespace detail

// OpenAI-compatible chat completions endpoint.
class HttpLlmClient final : public LlmClient {
 public:
  HttpLlmClient(std::string url, std::string model, std::string key)
      : url_(std::move(url)), model_(std::move(model)), key_(std::move(key)) {}

  std::string complete(const std::string& system, const std::string& user) override {
    nlohmann::json messages = nlohmann::json::array();
    if (!system.empty()) messages.push_back({{"role", "system"}, {"content", system}});
    messages.push_back({{"role", "user"}, {"content", user}});
    const nlohmann::json req = {{"model", model_}, {"messages", messages}, {"temperature", 0}};
    const auto body = detail::post(url_, key_, req.dump());
    try {
      return nlohmann::json::parse(body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ClientError(std::string("unexpected chat response: ") + e.what());
    }
  }

 private:
  std::string url_, model_, key_;
};

// POST {"model", "input", "voice", "response_format": "wav"}; expects 16 kHz mono PCM16.
class HttpTtsClient final : public TtsClient {
 public:
  HttpTtsClient(std::string url, std::string model, std::string key, std::uint64_t voice_seed)
      : url_(std::move(url)), model_(std::move(model)), key_(std::move(key)), voice_seed_(voice_seed) {}

  Waveform synth(const std::string& text) override {
    const nlohmann::json req = {{"model", model_},
                                {"input", text},
                                {"voice", std::to_string(voice_seed_)},
                                {"response_format", "wav"},
                                {"sample_rate", kSampleRate}};
    return decode_wav(detail::post(url_, key_, req.dump()), "TTS response");
  }

 private:
  std::string url_, model_, key_;
  std::uint64_t voice_seed_;
};

}  // namespace vtb::cli
