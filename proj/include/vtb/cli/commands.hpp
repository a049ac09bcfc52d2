#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "vtb/cli/config.hpp"
#include "vtb/common/error.hpp"
#include "vtb/datagen/clients.hpp"
#include "vtb/datagen/pipeline.hpp"
#include "vtb/datagen/synthetic.hpp"
#include "vtb/evalkit/run_eval.hpp"
#include "vtb/mixture/mixture.hpp"
#include "vtb/model/checkpoint.hpp"
#include "vtb/model/inference.hpp"
#include "vtb/model/merge.hpp"
#include "vtb/model/trainer.hpp"

#ifdef VTB_WITH_HTTP
#include "vtb/cli/http_clients.hpp"
#endif

namespace vtb::cli {

struct Options {
  fs::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> steps;
  std::optional<fs::path> out;
  std::optional<std::string> task;
  std::optional<fs::path> manifest;
  std::optional<fs::path> checkpoint;
  std::int64_t stop_after = -1;
  bool quiet = false;
};

inline RunConfig load_with_overrides(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  RunConfig c = load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.steps) {
    if (*o.steps <= 0) throw UsageError("--steps must be positive");
    c.optimizer.total_steps = *o.steps;
    c.optimizer.warmup_steps = std::min(c.optimizer.warmup_steps, *o.steps);
  }
  if (o.out) c.output_dir = fs::absolute(*o.out);
  return c;
}

// ------------------------------------------------------------------ clients

inline RetryPolicy retry_of(const ClientSpec& s) {
  return {s.max_attempts, std::chrono::milliseconds(s.base_delay_ms)};
}

inline std::shared_ptr<LlmClient> make_llm(const ClientSpec& s, const char* key_env) {
  std::shared_ptr<LlmClient> base;
  switch (s.backend) {
    case Backend::fake: return std::make_shared<FakeLlmClient>();
    case Backend::command: base = std::make_shared<CommandLlmClient>(s.command); break;
    case Backend::http:
#ifdef VTB_WITH_HTTP
      base = std::make_shared<HttpLlmClient>(s.url, s.model, env_or_empty(key_env));
      break;
#else
      (void)key_env;
      throw ConfigError("this build has no HTTP support");
#endif
  }
  return base;
}

inline std::shared_ptr<TtsClient> make_tts(const ClientSpec& s) {
  switch (s.backend) {
    case Backend::fake: return std::make_shared<FakeTtsClient>(s.voice_seed);
    case Backend::command: return std::make_shared<CommandTtsClient>(s.command, s.voice_seed);
    case Backend::http:
#ifdef VTB_WITH_HTTP
      return std::make_shared<HttpTtsClient>(s.url, s.model, env_or_empty("VTB_TTS_API_KEY"), s.voice_seed);
#else
      throw ConfigError("this build has no HTTP support");
#endif
  }
  return nullptr;
}

// Retries transient failures on every synthesis call.
class RetryingTtsClient final : public TtsClient {
 public:
  RetryingTtsClient(std::shared_ptr<TtsClient> inner, RetryPolicy p) : inner_(std::move(inner)), policy_(p) {}

  Waveform synth(const std::string& text) override {
    for (int attempt = 1;; ++attempt) {
      try {
        return inner_->synth(text);
      } catch (const ClientError& e) {
        if (attempt >= policy_.max_attempts)
          throw ClientError("giving up after " + std::to_string(attempt) + " attempts: " + e.what());
        std::this_thread::sleep_for(policy_.base_delay * (1LL << (attempt - 1)));
      }
    }
  }

 private:
  std::shared_ptr<TtsClient> inner_;
  RetryPolicy policy_;
};

// ------------------------------------------------------------------ gen

enum class GenKind { sqa, mixed, asr_ast, text };

inline GenKind parse_gen_kind(const std::string& s) {
  if (s == "sqa") return GenKind::sqa;
  if (s == "mixed") return GenKind::mixed;
  if (s == "asr-ast") return GenKind::asr_ast;
  if (s == "text") return GenKind::text;
  throw UsageError("unknown gen kind '" + s + "' (expected sqa, mixed, asr-ast or text)");
}

inline const char* gen_kind_name(GenKind k) {
  switch (k) {
    case GenKind::sqa: return "sqa";
    case GenKind::mixed: return "mixed";
    case GenKind::asr_ast: return "asr-ast";
    case GenKind::text: return "text";
  }
  return "";
}

inline int cmd_gen(GenKind kind, const Options& o, std::ostream& out) {
  const RunConfig c = load_with_overrides(o);
  const std::optional<GenJob>* job = nullptr;
  switch (kind) {
    case GenKind::sqa: job = &c.gen_sqa; break;
    case GenKind::mixed: job = &c.gen_mixed; break;
    case GenKind::asr_ast: job = &c.gen_asr_ast; break;
    case GenKind::text: job = &c.gen_text; break;
  }
  if (!job->has_value()) throw ConfigError(std::string("config has no generation section for ") + gen_kind_name(kind));
  const auto input = c.resolve((*job)->input);
  require_exists(input, "source corpus");
  const auto manifest = c.data_root / (*job)->output;
  if (fs::exists(manifest) && fs::equivalent(manifest, input)) throw ConfigError("output would overwrite the input corpus");
  fs::create_directories(manifest.parent_path());

  AudioStore store(manifest.parent_path());
  GenResult result;
  auto tts = [&] { return std::make_shared<RetryingTtsClient>(make_tts(c.tts), retry_of(c.tts)); };
  switch (kind) {
    case GenKind::sqa: {
      auto llm = std::make_shared<RetryingLlmClient>(make_llm(c.llm, "VTB_LLM_API_KEY"), retry_of(c.llm));
      result = generate_sqa(input, *llm, *tts(), store);
      break;
    }
    case GenKind::mixed: result = generate_mixed(input, *tts(), store, (*job)->span_policy, c.seed); break;
    case GenKind::asr_ast: result = generate_asr_ast(input, *tts(), store); break;
    case GenKind::text: result = generate_text(input); break;
  }
  write_manifest(result.entries, manifest);
  auto report = result.report.to_json();
  report["manifest"] = manifest.string();
  fs::create_directories(c.output_dir);
  const auto report_path = c.output_dir / (std::string("gen_") + gen_kind_name(kind) + "_report.json");
  std::ofstream(report_path, std::ios::trunc) << report.dump(2) << "\n";
  out << report.dump() << "\n";
  return 0;
}

// ------------------------------------------------------------------ train

inline int cmd_train(const Options& o, std::ostream& out) {
  const RunConfig c = load_with_overrides(o);
  validate_for_training(c);
  const auto tok = Tokenizer(MarkerTable::builtin());
  const auto mixture = nn::ablate_mixture(c.mixture, c.ablation);
  auto sampler = MixtureSampler::from_spec(mixture, c.data_root, tok, splitmix64(c.seed ^ 0x5A4D'504CULL));
  if (!o.quiet) {
    nlohmann::json probs;
    const auto p = normalize_weights(mixture);
    for (std::size_t i = 0; i < p.size(); ++i) probs[mixture.sources[i].name] = p[i];
    out << nlohmann::json{{"mixture", probs}}.dump() << "\n";
  }

  nn::TrainerOptions topts;
  topts.optimizer = c.optimizer;
  topts.ablation = c.ablation;
  topts.checkpoint_every = c.checkpoint_every;
  topts.output_dir = c.output_dir;
  topts.stop_after = o.stop_after;

  std::unique_ptr<nn::MultimodalModel<float>> model;
  std::optional<nn::LoadedCheckpoint> resumed;
  if (auto latest = nn::latest_checkpoint(c.output_dir)) {
    resumed = nn::load_checkpoint(*latest);
    model = std::move(resumed->model);
    if (!o.quiet) out << "resuming from " << latest->string() << " at step " << resumed->state.step << "\n";
  } else {
    ModelConfig mc = c.model;
    mc.lora = nn::ablate_lora(mc.lora, c.ablation);
    model = std::make_unique<nn::MultimodalModel<float>>(mc, c.seed, mc.lora.rank > 0);
    // Truncate any log left behind by a run without checkpoints.
    nn::truncate_metrics(c.output_dir / "metrics.jsonl", 0);
  }
  nn::Trainer trainer(*model, sampler, topts);
  if (resumed) trainer.resume(*resumed);
  if (!o.quiet) {
    trainer.on_step = [&](const nn::StepRecord& r) {
      if (r.step % 50 == 0) out << r.to_json().dump() << "\n" << std::flush;
    };
  }
  trainer.run(c.optimizer.total_steps);
  out << nlohmann::json{{"steps", trainer.step()},
                        {"output_dir", c.output_dir.string()},
                        {"trainable_parameters", model->trainable_count()}}
             .dump()
      << "\n";
  return 0;
}

// ------------------------------------------------------------------ eval

inline int cmd_eval(const Options& o, std::ostream& out) {
  if (!o.task) throw UsageError("--task is required");
  const auto task = [&] {
    try {
      return eval::parse_task(*o.task);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }();
  if (!o.checkpoint) throw UsageError("--checkpoint is required");
  if (!o.manifest) throw UsageError("--manifest is required");
  Options o2 = o;
  o2.out.reset();
  const RunConfig c = load_with_overrides(o2);
  auto ck = nn::load_checkpoint(*o.checkpoint);
  const auto entries = read_manifest(*o.manifest);
  const auto tok = Tokenizer(MarkerTable::builtin());
  nn::MelStore<float> mels(*ck.model, fs::absolute(*o.manifest).parent_path());
  auto resolver = mels.resolver();
  const int budget = c.max_new_tokens;
  eval::Generator gen = [&](const Conversation& prompt) {
    return nn::generate_reply(*ck.model, tok, prompt, resolver, budget);
  };
  std::shared_ptr<LlmClient> judge;
  eval::EvalOptions eopts;
  if (task == eval::Task::sqa) {
    judge = make_llm(c.judge, "VTB_JUDGE_API_KEY");
    eopts.judge = judge.get();
    eopts.judge_retry = retry_of(c.judge);
    eopts.judge_concurrency = c.judge_concurrency;
  }
  const auto report = eval::run_eval(entries, task, gen, eopts);
  const fs::path path = o.out ? fs::absolute(*o.out) : c.output_dir / (std::string("eval_") + eval::task_name(task) + ".jsonl");
  report.write(path);
  out << report.headline() << "\n";
  return 0;
}

// ------------------------------------------------------------------ merge

inline int cmd_merge(const Options& o, std::ostream& out) {
  if (!o.checkpoint) throw UsageError("--checkpoint is required");
  auto ck = nn::load_checkpoint(*o.checkpoint);
  if (!ck.model->has_lora()) throw UsageError("checkpoint has no LoRA factors (already merged?)");
  fs::path dest;
  std::uint64_t seed = o.seed.value_or(0);
  if (o.out) {
    dest = *o.out;
  } else {
    if (o.config.empty()) throw UsageError("merge needs --out or --config");
    const auto c = load_with_overrides(o);
    dest = c.output_dir / "merged.vtbc";
    if (!o.seed) seed = c.seed;
  }
  if (fs::exists(dest) && fs::equivalent(dest, *o.checkpoint)) throw UsageError("refusing to overwrite the input checkpoint");
  auto [merged, check] = nn::merge_with_check(*ck.model, seed);
  if (!check.passed)
    throw NumericError("merge self-check failed: max |dlogit| = " + std::to_string(check.max_abs_diff));
  nn::CheckpointState st = ck.state;
  st.meta["merge_self_check"] = check.to_json();
  st.meta["merged_from"] = fs::absolute(*o.checkpoint).string();
  nn::save_checkpoint(dest, *merged, st);
  out << nlohmann::json{{"output", dest.string()}, {"self_check", check.to_json()}}.dump() << "\n";
  return 0;
}

// ------------------------------------------------------------------ chat

// "@path.wav" tokens become speech segments; the words between them form text
// segments, in typed order.
inline std::vector<ContentSegment> parse_chat_line(const std::string& line, const fs::path& base = fs::current_path()) {
  std::vector<ContentSegment> segs;
  std::string text;
  auto flush = [&] {
    if (!text.empty()) segs.push_back(ContentSegment::make_text(text));
    text.clear();
  };
  std::istringstream words(line);
  std::string w;
  while (words >> w) {
    if (w.size() > 1 && w[0] == '@') {
      fs::path p = w.substr(1);
      if (p.is_relative()) p = base / p;
      const Waveform wave = read_wav(p);
      if (wave.empty()) throw IoError("audio file " + p.string() + " is empty");
      flush();
      segs.push_back(ContentSegment::make_speech({fs::absolute(p).string(), static_cast<std::int64_t>(wave.size()), {}}));
    } else {
      if (!text.empty()) text += ' ';
      text += w;
    }
  }
  flush();
  return segs;
}

class ChatSession {
 public:
  ChatSession(const nn::MultimodalModel<float>& model, int max_new_tokens)
      : model_(model), tok_(MarkerTable::builtin()), mels_(model, fs::path()), budget_(max_new_tokens) {}

  // Appends the user turn and the model's reply to the history.
  std::string respond(const std::vector<ContentSegment>& segments) {
    if (segments.empty()) throw InvalidArgument("empty turn");
    Conversation next = history_;
    next.turns.push_back(user_turn(segments));
    const auto reply = nn::generate_reply(model_, tok_, next, mels_.resolver(), budget_);
    next.turns.push_back(model_turn(reply));
    history_ = std::move(next);
    return reply;
  }

  RenderedChat render_prompt(const std::vector<ContentSegment>& segments) const {
    Conversation next = history_;
    next.turns.push_back(user_turn(segments));
    return render_generation_prompt(next, tok_);
  }

  void reset() { history_.turns.clear(); }
  const Conversation& history() const { return history_; }

 private:
  const nn::MultimodalModel<float>& model_;
  Tokenizer tok_;
  nn::MelStore<float> mels_;
  int budget_;
  Conversation history_;
};

inline int cmd_chat(const Options& o, std::istream& in, std::ostream& out, std::ostream& err) {
  if (!o.checkpoint) throw UsageError("--checkpoint is required");
  auto ck = nn::load_checkpoint(*o.checkpoint);
  int budget = 128;
  if (!o.config.empty()) budget = load_with_overrides(o).max_new_tokens;
  ChatSession chat(*ck.model, budget);
  out << "type a message; @file.wav attaches audio, /reset clears history, /quit exits\n";
  std::string line;
  while (out << "user> " << std::flush, std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t == "/quit") break;
    if (t == "/reset") {
      chat.reset();
      out << "(history cleared)\n";
      continue;
    }
    try {
      const auto segs = parse_chat_line(t);
      out << "model> " << chat.respond(segs) << "\n";
    } catch (const Error& e) {
      err << nlohmann::json{{"error", e.kind()}, {"message", e.what()}}.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
    }
  }
  return 0;
}

// ------------------------------------------------------------------ demo data

// Seeded source corpora plus a runnable config in `dir`.
inline int cmd_demo_data(const fs::path& dir, std::uint64_t seed, std::ostream& out) {
  const auto corpus = dir / "corpus";
  write_demo_corpora(corpus, {8, seed});
  const nlohmann::json cfg = {
      {"schema_version", kSchemaVersion},
      {"seed", seed},
      {"data_root", "data"},
      {"output_dir", "run"},
      {"mixture",
       {{"sources",
         {{{"name", "text"}, {"manifest", "text.jsonl"}, {"weight", 0.25}, {"modality", "text_only"}},
          {{"name", "asr_ast"}, {"manifest", "asr_ast.jsonl"}, {"weight", 0.25}, {"modality", "speech_related"}},
          {{"name", "sqa"}, {"manifest", "sqa.jsonl"}, {"weight", 0.25}, {"modality", "speech_related"}},
          {{"name", "mixed"}, {"manifest", "mixed.jsonl"}, {"weight", 0.25}, {"modality", "speech_related"}}}}}},
      {"model", to_json(ModelConfig{})},
      {"optimizer",
       // Desk-scale memorization settings, not the full-size recipe.
       {{"peak_lr", 3e-4},
        {"warmup_steps", 100},
        {"total_steps", 1200},
        {"weight_decay", 0.0},
        {"min_lr", 1e-5},
        {"grad_clip", 1.0},
        {"checkpoint_every", 100}}},
      {"ablation", {{"mode", "joint"}}},
      {"clients", {{"llm", {{"backend", "fake"}}}, {"tts", {{"backend", "fake"}}}, {"judge", {{"backend", "fake"}}}}},
      {"generation",
       {{"asr_ast", {{"input", "corpus/asr_ast.jsonl"}, {"output", "asr_ast.jsonl"}}},
        {"sqa", {{"input", "corpus/sqa.jsonl"}, {"output", "sqa.jsonl"}}},
        {"mixed", {{"input", "corpus/mixed.jsonl"}, {"output", "mixed.jsonl"}, {"span_policy", "uniform_span"}}},
        {"text", {{"input", "corpus/text.jsonl"}, {"output", "text.jsonl"}}}}},
      {"decode", {{"max_new_tokens", 64}}}};
  fs::create_directories(dir);
  std::ofstream(dir / "config.json", std::ios::trunc) << cfg.dump(2) << "\n";
  out << (dir / "config.json").string() << "\n";
  return 0;
}

inline std::string error_record(const std::exception& e) {
  if (const auto* ve = dynamic_cast<const Error*>(&e))
    return nlohmann::json{{"error", ve->kind()}, {"message", ve->what()}}.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  return nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace vtb::cli
