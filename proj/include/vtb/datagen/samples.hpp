#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vtb/common/error.hpp"
#include "vtb/common/rng.hpp"
#include "vtb/datagen/audio.hpp"
#include "vtb/datagen/clients.hpp"
#include "vtb/datagen/manifest.hpp"
#include "vtb/textproc/text.hpp"

namespace vtb {

// ---------------------------------------------------------------------------
// Audio persistence

// Writes clips under <root>/audio/<source>/ and hands back manifest-relative refs.
class AudioStore {
 public:
  explicit AudioStore(std::filesystem::path root) : root_(std::move(root)) {}

  AudioRef save(const std::string& source, const std::string& id, const Waveform& wave, std::string transcript = {}) {
    if (wave.empty()) throw InvalidArgument("sample " + id + ": empty waveform");
    const auto rel = std::filesystem::path("audio") / safe(source) / (safe(id) + ".wav");
    write_wav(root_ / rel, wave);
    return {rel.generic_string(), static_cast<std::int64_t>(wave.size()), std::move(transcript)};
  }

  const std::filesystem::path& root() const { return root_; }

 private:
  static std::string safe(const std::string& s) {
    std::string out;
    for (unsigned char c : s) out.push_back(std::isalnum(c) || c == '-' || c == '_' || c == '.' ? static_cast<char>(c) : '_');
    return out.empty() ? "_" : out;
  }

  std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// ASR / AST

enum class SpeechTask { asr, ast };

inline const std::map<std::string, std::string>& default_languages() {
  static const std::map<std::string, std::string> langs = {
      {"en", "English"}, {"de", "German"}, {"es", "Spanish"}, {"fr", "French"}};
  return langs;
}

inline std::string language_name(const std::string& code,
                                 const std::map<std::string, std::string>& langs = default_languages()) {
  auto it = langs.find(code);
  if (it == langs.end()) throw InvalidArgument("unknown language code '" + code + "'");
  return it->second;
}

inline std::string speech_task_instruction(SpeechTask task, const std::string& src_lang, const std::string& tgt_lang,
                                           const std::map<std::string, std::string>& langs = default_languages()) {
  if (task == SpeechTask::asr) {
    return "Transcribe the content to " + language_name(src_lang, langs) + ", with punctuations and capitalizations.";
  }
  return "Translate the " + language_name(src_lang, langs) + " content to " + language_name(tgt_lang, langs) +
         ", with punctuations and capitalizations.";
}

inline ManifestEntry make_asr_ast_sample(const std::string& id, AudioRef audio, const std::string& target_text,
                                         SpeechTask task, const std::string& src_lang, const std::string& tgt_lang,
                                         const std::map<std::string, std::string>& langs = default_languages()) {
  if (trim(target_text).empty()) throw InvalidArgument("sample " + id + ": empty transcript/translation");
  if (task == SpeechTask::asr && src_lang != tgt_lang)
    throw InvalidArgument("sample " + id + ": ASR source and target language differ");
  if (task == SpeechTask::ast && src_lang == tgt_lang)
    throw InvalidArgument("sample " + id + ": AST needs distinct languages");
  ManifestEntry e;
  e.id = id;
  e.source = "asr_ast";
  const auto instruction = speech_task_instruction(task, src_lang, tgt_lang, langs);
  e.conversation.turns.push_back(
      user_turn({ContentSegment::make_speech(std::move(audio)), ContentSegment::make_text(instruction)}));
  e.conversation.turns.push_back(model_turn(target_text));
  e.total_audio_seconds = sum_audio_seconds(e.conversation);
  e.meta = {{"task", task == SpeechTask::asr ? "asr" : "ast"}, {"src_lang", src_lang}, {"tgt_lang", tgt_lang}};
  return e;
}

// ---------------------------------------------------------------------------
// Speech-based QA

struct QAPair {
  std::string question;
  std::string answer;
};

inline std::string make_sqa_prompt(const std::string& transcript) {
  if (trim(transcript).empty()) throw InvalidArgument("empty transcript");
  return "I will provide you with several sentences. Please generate **one** question that is closely related to "
         "the content of these sentences, along with a corresponding answer. Ensure that your answer is **accurate** "
         "and clearly stated. Write your output in a single line in json format:\n\n"
         "{\"question\": \"xxx\", \"answer\": \"xxx\"}\n\n"
         "If the question and answer contain a double quote, insert backslash before it to ensure the output can be "
         "loaded by python library `json.loads()`. Do not add unnecessary backslash for symbols like dollar $, "
         "ampersand &, etc.\n"
         "However, if the sentences are meaningless, please return **none** in those fields.\n\n"
         "Here are the sentences:\n\n" +
         transcript;
}

// Drops markdown fences and surrounding prose: the span from the first '{' to
// the last '}'.
inline std::optional<std::string> extract_json_object(const std::string& raw) {
  const auto b = raw.find('{');
  const auto e = raw.rfind('}');
  if (b == std::string::npos || e == std::string::npos || e < b) return std::nullopt;
  return raw.substr(b, e - b + 1);
}

// Removes backslashes that do not start a valid JSON escape.
inline std::string repair_invalid_escapes(const std::string& s) {
  static const std::string kValid = "\"\\/bfnrtu";
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (i + 1 < s.size() && kValid.find(s[i + 1]) != std::string::npos) {
      out.push_back(s[i]);
      out.push_back(s[++i]);
    }
  }
  return out;
}

struct SqaParseResult {
  std::optional<QAPair> qa;
  std::string rejection;  // empty when accepted
  bool repaired = false;

  bool accepted() const { return qa.has_value(); }
};

namespace detail {

inline bool is_none(const std::string& s) {
  auto t = trim(s);
  for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return t == "none";
}

}  // namespace detail

inline SqaParseResult parse_sqa_response(const std::string& raw) {
  SqaParseResult r;
  const auto body = extract_json_object(raw);
  if (!body) {
    r.rejection = "no_json_object";
    return r;
  }
  auto obj = nlohmann::json::parse(*body, nullptr, false);
  if (obj.is_discarded()) {
    obj = nlohmann::json::parse(repair_invalid_escapes(*body), nullptr, false);
    r.repaired = true;
    if (obj.is_discarded()) {
      r.rejection = "unparseable";
      return r;
    }
  }
  if (!obj.is_object() || !obj.contains("question") || !obj.contains("answer") || !obj["question"].is_string() ||
      !obj["answer"].is_string()) {
    r.rejection = "missing_fields";
    return r;
  }
  QAPair qa{trim(obj["question"].get<std::string>()), trim(obj["answer"].get<std::string>())};
  if (detail::is_none(qa.question) || detail::is_none(qa.answer)) {
    r.rejection = "none_fields";
    return r;
  }
  if (qa.question.empty() || qa.answer.empty()) {
    r.rejection = "empty_fields";
    return r;
  }
  r.qa = std::move(qa);
  return r;
}

inline ManifestEntry build_sqa_sample(const std::string& id, AudioRef context, const QAPair& qa) {
  QAPair clean{trim(qa.question), trim(qa.answer)};
  if (clean.question.empty() || clean.answer.empty() || detail::is_none(clean.question) ||
      detail::is_none(clean.answer))
    throw InvalidArgument("sample " + id + ": invalid QA pair");
  ManifestEntry e;
  e.id = id;
  e.source = "sqa";
  Json meta = {{"task", "sqa"}};
  if (!context.transcript.empty()) meta["context"] = context.transcript;
  e.conversation.turns.push_back(
      user_turn({ContentSegment::make_speech(std::move(context)), ContentSegment::make_text(clean.question)}));
  e.conversation.turns.push_back(model_turn(clean.answer));
  e.total_audio_seconds = sum_audio_seconds(e.conversation);
  e.meta = std::move(meta);
  return e;
}

// ---------------------------------------------------------------------------
// Mixed-modal interleaving

struct SpanPolicy {
  enum class Mode { uniform_span, full_only };
  Mode mode = Mode::uniform_span;
  double p_full = 0.0;

  void validate() const {
    if (!(p_full >= 0.0 && p_full <= 1.0)) throw InvalidArgument("p_full must lie in [0, 1]");
  }
};

// Half-open sentence range [start, end). Under uniform_span every contiguous
// span is equally likely, after forcing (0, n) with probability p_full.
inline std::pair<std::size_t, std::size_t> select_speech_span(std::size_t n_sentences, const SpanPolicy& policy,
                                                              Rng& rng) {
  policy.validate();
  if (n_sentences == 0) throw InvalidArgument("select_speech_span: no sentences");
  if (policy.mode == SpanPolicy::Mode::full_only) return {0, n_sentences};
  if (policy.p_full > 0.0 && uniform_unit(rng) < policy.p_full) return {0, n_sentences};
  // Spans ordered by start; start s owns (n - s) spans.
  std::uint64_t k = uniform_index(rng, n_sentences * (n_sentences + 1) / 2);
  std::size_t start = 0;
  while (k >= n_sentences - start) {
    k -= n_sentences - start;
    ++start;
  }
  return {start, start + 1 + static_cast<std::size_t>(k)};
}

struct TextSftSample {
  std::string id;
  std::string instruction;
  std::string response;
};

// The speech segment covers the chosen sentences; text outside the span is
// kept byte-for-byte, including the whitespace that separated it.
inline ManifestEntry build_mixed_sample(const TextSftSample& sample, TtsClient& tts, AudioStore& store,
                                        const SpanPolicy& policy, Rng& rng, const std::string& source = "mixed") {
  static const SentenceSplitter splitter;
  const auto& text = sample.instruction;
  const auto spans = splitter.spans(text);
  if (spans.empty()) throw InvalidArgument("sample " + sample.id + ": instruction has no sentences");
  const auto [s, e] = select_speech_span(spans.size(), policy, rng);
  const std::size_t b = s == 0 ? 0 : spans[s].first;
  const std::size_t f = e == spans.size() ? text.size() : spans[e - 1].second;
  const std::string prefix = text.substr(0, b);
  const std::string spoken = text.substr(b, f - b);
  const std::string suffix = text.substr(f);

  AudioRef ref;
  try {
    ref = store.save(source, sample.id, tts.synth(spoken), spoken);
  } catch (const std::exception& ex) {
    throw ClientError("sample " + sample.id + ": TTS failed: " + ex.what());
  }

  std::vector<ContentSegment> segs;
  if (!prefix.empty()) segs.push_back(ContentSegment::make_text(prefix));
  segs.push_back(ContentSegment::make_speech(std::move(ref)));
  if (!suffix.empty()) segs.push_back(ContentSegment::make_text(suffix));

  ManifestEntry entry;
  entry.id = sample.id;
  entry.source = source;
  entry.conversation.turns.push_back(user_turn(std::move(segs)));
  entry.conversation.turns.push_back(model_turn(sample.response));
  entry.total_audio_seconds = sum_audio_seconds(entry.conversation);
  entry.meta = {{"task", "mixed"}, {"span", {s, e}}, {"n_sentences", spans.size()}};
  return entry;
}

// Reassembles the instruction from a mixed-modal user turn: text segments plus
// the TTS input text of speech segments.
inline std::string reconstruct_user_text(const Turn& t) {
  std::string out;
  for (const auto& seg : t.segments) out += seg.is_text() ? seg.text : seg.audio.transcript;
  return out;
}

}  // namespace vtb
