#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtb/common/rng.hpp"
#include "vtb/datagen/samples.hpp"

namespace vtb {

struct GenReport {
  std::string kind;
  std::size_t inputs = 0;
  std::size_t count = 0;
  std::size_t rejections = 0;
  std::map<std::string, std::size_t> rejection_reasons;
  double audio_hours = 0.0;

  Json to_json() const {
    return {{"kind", kind},
            {"inputs", inputs},
            {"count", count},
            {"rejections", rejections},
            {"rejection_reasons", rejection_reasons},
            {"audio_hours", audio_hours}};
  }
};

struct GenResult {
  std::vector<ManifestEntry> entries;
  GenReport report;
};

inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON line");
    rows.push_back(std::move(j));
  }
  return rows;
}

inline void write_jsonl(const std::vector<Json>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : rows) out << dump_json_line(r) << '\n';
}

namespace detail {

inline std::string require_string(const Json& row, const char* key) {
  auto it = row.find(key);
  if (it == row.end() || !it->is_string()) throw FormatError(std::string("corpus row lacks string field '") + key + "'");
  return it->get<std::string>();
}

// Existing clip referenced by the corpus (relative to the corpus file), or a
// fresh TTS rendering of `speech_text` stored next to the manifest.
inline AudioRef corpus_audio(const Json& row, const std::filesystem::path& corpus_path, const std::string& speech_text,
                             const std::string& source, const std::string& id, TtsClient& tts, AudioStore& store) {
  if (auto it = row.find("audio"); it != row.end() && it->is_string()) {
    std::filesystem::path p = it->get<std::string>();
    if (p.is_relative()) p = corpus_path.parent_path() / p;
    const auto wave = read_wav(p);
    if (wave.empty()) throw FormatError("sample " + id + ": empty audio " + p.string());
    const auto rel = std::filesystem::relative(std::filesystem::absolute(p), std::filesystem::absolute(store.root()));
    return {rel.generic_string(), static_cast<std::int64_t>(wave.size()), speech_text};
  }
  try {
    return store.save(source, id, tts.synth(speech_text), speech_text);
  } catch (const std::exception& ex) {
    throw ClientError("sample " + id + ": TTS failed: " + ex.what());
  }
}

inline void finish_report(GenResult& r) {
  r.report.count = r.entries.size();
  double secs = 0.0;
  for (const auto& e : r.entries) secs += e.total_audio_seconds;
  r.report.audio_hours = secs / 3600.0;
}

}  // namespace detail

// Rows: {id, text, task: asr|ast, src_lang, tgt_lang, audio? | speech_text?}.
inline GenResult generate_asr_ast(const std::filesystem::path& corpus, TtsClient& tts, AudioStore& store) {
  GenResult r;
  r.report.kind = "asr-ast";
  for (const auto& row : read_jsonl(corpus)) {
    ++r.report.inputs;
    const auto id = detail::require_string(row, "id");
    const auto task_name = detail::require_string(row, "task");
    if (task_name != "asr" && task_name != "ast") throw FormatError("sample " + id + ": task must be asr or ast");
    const auto task = task_name == "asr" ? SpeechTask::asr : SpeechTask::ast;
    const auto text = detail::require_string(row, "text");
    const auto src = detail::require_string(row, "src_lang");
    const auto tgt = detail::require_string(row, "tgt_lang");
    language_name(src);
    language_name(tgt);
    std::string speech_text = row.value("speech_text", task == SpeechTask::asr ? text : std::string());
    if (speech_text.empty() && !row.contains("audio"))
      throw FormatError("sample " + id + ": AST rows need audio or speech_text");
    auto audio = detail::corpus_audio(row, corpus, speech_text, "asr_ast", id, tts, store);
    r.entries.push_back(make_asr_ast_sample(id, std::move(audio), text, task, src, tgt));
  }
  detail::finish_report(r);
  return r;
}

// Rows: {id, transcript, audio?}. One transcript per LLM prompt.
inline GenResult generate_sqa(const std::filesystem::path& corpus, LlmClient& llm, TtsClient& tts, AudioStore& store) {
  GenResult r;
  r.report.kind = "sqa";
  for (const auto& row : read_jsonl(corpus)) {
    ++r.report.inputs;
    const auto id = detail::require_string(row, "id");
    const auto transcript = detail::require_string(row, "transcript");
    const auto parsed = parse_sqa_response(llm.complete("", make_sqa_prompt(transcript)));
    if (!parsed.accepted()) {
      ++r.report.rejections;
      ++r.report.rejection_reasons[parsed.rejection];
      continue;
    }
    auto audio = detail::corpus_audio(row, corpus, transcript, "sqa", id, tts, store);
    r.entries.push_back(build_sqa_sample(id, std::move(audio), *parsed.qa));
  }
  detail::finish_report(r);
  return r;
}

// Rows: {id, instruction, response}. Sample i draws from derive_rng(seed, id).
inline GenResult generate_mixed(const std::filesystem::path& corpus, TtsClient& tts, AudioStore& store,
                                const SpanPolicy& policy, std::uint64_t seed) {
  GenResult r;
  r.report.kind = "mixed";
  for (const auto& row : read_jsonl(corpus)) {
    ++r.report.inputs;
    TextSftSample s{detail::require_string(row, "id"), detail::require_string(row, "instruction"),
                    detail::require_string(row, "response")};
    if (trim(s.instruction).empty()) {
      ++r.report.rejections;
      ++r.report.rejection_reasons["empty_instruction"];
      continue;
    }
    auto rng = derive_rng(seed, s.id);
    r.entries.push_back(build_mixed_sample(s, tts, store, policy, rng));
  }
  detail::finish_report(r);
  return r;
}

// Rows: {id, turns: [{role, text}]}. Text-only multi-turn conversations.
inline GenResult generate_text(const std::filesystem::path& corpus) {
  GenResult r;
  r.report.kind = "text";
  for (const auto& row : read_jsonl(corpus)) {
    ++r.report.inputs;
    ManifestEntry e;
    e.id = detail::require_string(row, "id");
    e.source = "text";
    for (const auto& t : row.at("turns")) {
      e.conversation.turns.push_back(
          {parse_role(t.at("role").get<std::string>()), {ContentSegment::make_text(t.at("text").get<std::string>())}});
    }
    if (e.conversation.turns.empty()) throw FormatError("sample " + e.id + ": no turns");
    e.meta = {{"task", "text"}};
    r.entries.push_back(std::move(e));
  }
  detail::finish_report(r);
  return r;
}

}  // namespace vtb
