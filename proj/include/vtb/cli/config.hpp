#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "vtb/common/error.hpp"
#include "vtb/datagen/samples.hpp"
#include "vtb/mixture/mixture.hpp"
#include "vtb/model/config.hpp"
#include "vtb/model/optim.hpp"
#include "vtb/model/trainer.hpp"

namespace vtb::cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

enum class Backend { fake, command, http };

inline Backend parse_backend(const std::string& s) {
  if (s == "fake") return Backend::fake;
  if (s == "command") return Backend::command;
  if (s == "http") return Backend::http;
  throw ConfigError("unknown client backend '" + s + "'");
}

// command: shell command speaking the JSON-over-stdio protocol.
// http: OpenAI-compatible chat endpoint (llm, judge) or a TTS endpoint.
struct ClientSpec {
  Backend backend = Backend::fake;
  std::string command;
  std::string url;
  std::string model;
  std::uint64_t voice_seed = 0;
  int max_attempts = 4;
  int base_delay_ms = 500;
};

struct GenJob {
  std::string input;   // source corpus, relative to the config file
  std::string output;  // manifest, relative to data_root
  SpanPolicy span_policy;
};

struct RunConfig {
  fs::path config_dir;
  std::uint64_t seed = 0;
  fs::path data_root;
  fs::path output_dir;
  MixtureSpec mixture;
  ModelConfig model;
  nn::OptimizerConfig optimizer;
  std::int64_t checkpoint_every = 0;
  nn::AblationConfig ablation;
  ClientSpec llm, tts, judge;
  std::optional<GenJob> gen_asr_ast, gen_sqa, gen_mixed, gen_text;
  int max_new_tokens = 128;
  unsigned judge_concurrency = 4;

  fs::path resolve(const std::string& p) const {
    fs::path q(p);
    return q.is_relative() ? config_dir / q : q;
  }
};

namespace detail {

template <class F>
void opt(const json& j, const char* key, F&& f) {
  if (j.is_object() && j.contains(key) && !j.at(key).is_null()) f(j.at(key));
}

inline ClientSpec client_from_json(const json& j, const char* what) {
  ClientSpec c;
  if (!j.is_object()) throw ConfigError(std::string("clients.") + what + " must be an object");
  opt(j, "backend", [&](const json& v) { c.backend = parse_backend(v.get<std::string>()); });
  opt(j, "command", [&](const json& v) { c.command = v.get<std::string>(); });
  opt(j, "url", [&](const json& v) { c.url = v.get<std::string>(); });
  opt(j, "model", [&](const json& v) { c.model = v.get<std::string>(); });
  opt(j, "voice_seed", [&](const json& v) { c.voice_seed = v.get<std::uint64_t>(); });
  opt(j, "max_attempts", [&](const json& v) { c.max_attempts = v.get<int>(); });
  opt(j, "base_delay_ms", [&](const json& v) { c.base_delay_ms = v.get<int>(); });
  if (c.backend == Backend::command && c.command.empty())
    throw ConfigError(std::string("clients.") + what + ": command backend needs 'command'");
  if (c.backend == Backend::http && c.url.empty())
    throw ConfigError(std::string("clients.") + what + ": http backend needs 'url'");
  if (c.max_attempts < 1) throw ConfigError(std::string("clients.") + what + ": max_attempts must be >= 1");
  return c;
}

inline GenJob gen_from_json(const json& j, const char* what) {
  GenJob g;
  if (!j.contains("input") || !j.contains("output"))
    throw ConfigError(std::string("generation.") + what + " needs 'input' and 'output'");
  g.input = j.at("input").get<std::string>();
  g.output = j.at("output").get<std::string>();
  opt(j, "span_policy", [&](const json& v) {
    const auto s = v.get<std::string>();
    if (s == "uniform_span")
      g.span_policy.mode = SpanPolicy::Mode::uniform_span;
    else if (s == "full_only")
      g.span_policy.mode = SpanPolicy::Mode::full_only;
    else
      throw ConfigError("unknown span_policy '" + s + "'");
  });
  opt(j, "p_full", [&](const json& v) { g.span_policy.p_full = v.get<double>(); });
  try {
    g.span_policy.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("generation.") + what + ": " + e.what());
  }
  return g;
}

}  // namespace detail

// Paths inside the file are relative to the file's directory.
inline RunConfig parse_run_config(const json& j, const fs::path& config_dir) {
  RunConfig c;
  c.config_dir = config_dir;
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const int version = j.value("schema_version", -1);
    if (version != kSchemaVersion)
      throw ConfigError("unsupported schema_version " + std::to_string(version) + " (expected " +
                        std::to_string(kSchemaVersion) + ")");
    if (!j.contains("seed") || !j.at("seed").is_number_integer()) throw ConfigError("seed must be a 64-bit integer");
    c.seed = j.at("seed").is_number_unsigned() ? j.at("seed").get<std::uint64_t>()
                                               : static_cast<std::uint64_t>(j.at("seed").get<std::int64_t>());
    c.data_root = c.resolve(j.value("data_root", std::string(".")));
    c.output_dir = c.resolve(j.value("output_dir", std::string("out")));

    detail::opt(j, "mixture", [&](const json& m) {
      for (const auto& s : m.at("sources")) {
        SourceSpec src;
        src.name = s.at("name").get<std::string>();
        src.manifest = s.at("manifest").get<std::string>();
        src.weight = s.at("weight").get<double>();
        src.modality = parse_modality(s.value("modality", std::string("speech_related")));
        src.batch_size = s.value("batch_size", default_batch_size(src.modality));
        if (src.batch_size <= 0) throw ConfigError("source '" + src.name + "' needs a positive batch_size");
        c.mixture.sources.push_back(src);
      }
    });
    if (!c.mixture.sources.empty()) normalize_weights(c.mixture);

    detail::opt(j, "model", [&](const json& m) { c.model = model_config_from_json(m); });
    c.model.validate();

    detail::opt(j, "optimizer", [&](const json& o) {
      detail::opt(o, "peak_lr", [&](const json& v) { c.optimizer.peak_lr = v.get<double>(); });
      detail::opt(o, "warmup_steps", [&](const json& v) { c.optimizer.warmup_steps = v.get<std::int64_t>(); });
      detail::opt(o, "total_steps", [&](const json& v) { c.optimizer.total_steps = v.get<std::int64_t>(); });
      detail::opt(o, "weight_decay", [&](const json& v) { c.optimizer.weight_decay = v.get<double>(); });
      detail::opt(o, "min_lr", [&](const json& v) { c.optimizer.min_lr = v.get<double>(); });
      detail::opt(o, "grad_clip", [&](const json& v) { c.optimizer.grad_clip = v.get<double>(); });
      detail::opt(o, "checkpoint_every", [&](const json& v) { c.checkpoint_every = v.get<std::int64_t>(); });
    });
    c.optimizer.validate();

    detail::opt(j, "ablation", [&](const json& a) {
      c.ablation.mode = nn::parse_ablation(a.value("mode", std::string("joint")));
      c.ablation.stage1_steps = a.value("stage1_steps", std::int64_t{0});
    });
    if (c.ablation.mode == nn::AblationMode::two_stage &&
        (c.ablation.stage1_steps <= 0 || c.ablation.stage1_steps >= c.optimizer.total_steps))
      throw ConfigError("two_stage ablation needs 0 < stage1_steps < total_steps");

    detail::opt(j, "clients", [&](const json& cl) {
      detail::opt(cl, "llm", [&](const json& v) { c.llm = detail::client_from_json(v, "llm"); });
      detail::opt(cl, "tts", [&](const json& v) { c.tts = detail::client_from_json(v, "tts"); });
      detail::opt(cl, "judge", [&](const json& v) { c.judge = detail::client_from_json(v, "judge"); });
    });

    detail::opt(j, "generation", [&](const json& g) {
      detail::opt(g, "asr_ast", [&](const json& v) { c.gen_asr_ast = detail::gen_from_json(v, "asr_ast"); });
      detail::opt(g, "sqa", [&](const json& v) { c.gen_sqa = detail::gen_from_json(v, "sqa"); });
      detail::opt(g, "mixed", [&](const json& v) { c.gen_mixed = detail::gen_from_json(v, "mixed"); });
      detail::opt(g, "text", [&](const json& v) { c.gen_text = detail::gen_from_json(v, "text"); });
    });
    detail::opt(j, "decode", [&](const json& d) { c.max_new_tokens = d.value("max_new_tokens", c.max_new_tokens); });
    if (c.max_new_tokens < 0) throw ConfigError("decode.max_new_tokens must be >= 0");
    detail::opt(j, "eval", [&](const json& e) { c.judge_concurrency = e.value("judge_concurrency", 4u); });
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, fs::absolute(path).parent_path());
}

inline void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ConfigError(what + " does not exist: " + p.string());
}

// Training-time validation: every manifest must already be on disk.
inline void validate_for_training(const RunConfig& c) {
  if (c.mixture.sources.empty()) throw ConfigError("mixture.sources is empty");
  for (const auto& s : nn::ablate_mixture(c.mixture, c.ablation).sources)
    require_exists(c.data_root / s.manifest, "manifest for source '" + s.name + "'");
}

}  // namespace vtb::cli
