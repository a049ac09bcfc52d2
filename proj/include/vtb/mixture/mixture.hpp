#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vtb/common/error.hpp"
#include "vtb/common/rng.hpp"
#include "vtb/datagen/audio.hpp"
#include "vtb/datagen/manifest.hpp"
#include "vtb/textproc/chat_template.hpp"

namespace vtb {

enum class Modality { text_only, speech_related };

inline const char* modality_name(Modality m) { return m == Modality::text_only ? "text_only" : "speech_related"; }

inline Modality parse_modality(const std::string& s) {
  if (s == "text_only") return Modality::text_only;
  if (s == "speech_related") return Modality::speech_related;
  throw ConfigError("unknown modality '" + s + "'");
}

inline int default_batch_size(Modality m) { return m == Modality::speech_related ? 4 : 1; }

struct SourceSpec {
  std::string name;
  std::string manifest;
  double weight = 0.0;
  Modality modality = Modality::speech_related;
  int batch_size = 4;
};

struct MixtureSpec {
  std::vector<SourceSpec> sources;
};

// Sampling ratios of the published joint speech-text mixture; they sum to 1.0001.
inline MixtureSpec reference_mixture() {
  return {{{"text", "text.jsonl", 0.1500, Modality::text_only, 1},
           {"asr_ast", "asr_ast.jsonl", 0.7556, Modality::speech_related, 4},
           {"sqa", "sqa.jsonl", 0.0378, Modality::speech_related, 4},
           {"mixed_alpaca", "mixed_alpaca.jsonl", 0.0189, Modality::speech_related, 4},
           {"mixed_magpie", "mixed_magpie.jsonl", 0.0378, Modality::speech_related, 4}}};
}

inline std::vector<double> normalize_weights(const MixtureSpec& spec) {
  std::vector<double> p;
  double total = 0.0;
  for (const auto& s : spec.sources) {
    if (!(s.weight >= 0.0) || !std::isfinite(s.weight)) throw ConfigError("source '" + s.name + "' has an invalid weight");
    p.push_back(s.weight);
    total += s.weight;
  }
  if (!(total > 0.0)) throw ConfigError("mixture needs at least one positive weight");
  for (auto& x : p) x /= total;
  return p;
}

// Categorical draw by inverse CDF; zero-probability entries are never chosen.
inline std::size_t sample_source(std::span<const double> probs, Rng& rng) {
  const double u = uniform_unit(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

using IdMatrix = Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SpeechInput {
  std::size_t position = 0;
  std::string path;
  std::shared_ptr<const Waveform> wave;
};

struct Batch {
  std::string source;
  IdMatrix ids;
  MaskMatrix loss_mask;
  MaskMatrix attention_mask;
  std::vector<std::vector<SpeechInput>> speech;  // per row, in slot order
  std::vector<std::string> sample_ids;

  std::size_t rows() const { return static_cast<std::size_t>(ids.rows()); }

  std::size_t row_length(std::size_t r) const {
    return static_cast<std::size_t>(attention_mask.row(static_cast<Eigen::Index>(r)).template cast<int>().sum());
  }
};

struct RenderedSample {
  std::string id;
  RenderedChat chat;
  LossMask mask;
  std::vector<SpeechInput> speech;
};

inline Batch collate(std::span<const RenderedSample> samples, TokenId pad_id, std::string source = {}) {
  if (samples.empty()) throw InvalidArgument("collate needs at least one sample");
  std::size_t width = 0;
  for (const auto& s : samples) width = std::max(width, s.chat.ids.size());
  Batch b;
  b.source = std::move(source);
  const auto rows = static_cast<Eigen::Index>(samples.size());
  const auto cols = static_cast<Eigen::Index>(width);
  b.ids = IdMatrix::Constant(rows, cols, pad_id);
  b.loss_mask = MaskMatrix::Zero(rows, cols);
  b.attention_mask = MaskMatrix::Zero(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& s = samples[static_cast<std::size_t>(r)];
    if (s.mask.size() != s.chat.ids.size()) throw InvalidArgument("loss mask length mismatch");
    for (std::size_t c = 0; c < s.chat.ids.size(); ++c) {
      b.ids(r, static_cast<Eigen::Index>(c)) = s.chat.ids[c];
      b.loss_mask(r, static_cast<Eigen::Index>(c)) = s.mask[c];
      b.attention_mask(r, static_cast<Eigen::Index>(c)) = 1;
    }
    b.speech.push_back(s.speech);
    b.sample_ids.push_back(s.id);
  }
  return b;
}

// Owns the RNG. Each step picks one source by weight, then batch_size entries
// uniformly with replacement from it.
class MixtureSampler {
 public:
  struct Source {
    SourceSpec spec;
    std::filesystem::path manifest_path;
    std::vector<ManifestEntry> entries;
  };

  MixtureSampler(std::vector<Source> sources, const Tokenizer& tok, std::uint64_t seed,
                 std::shared_ptr<AudioCache> audio = std::make_shared<AudioCache>())
      : sources_(std::move(sources)), tok_(tok), rng_(splitmix64(seed)), audio_(std::move(audio)) {
    MixtureSpec spec;
    for (const auto& s : sources_) {
      if (s.spec.batch_size <= 0) throw ConfigError("source '" + s.spec.name + "' needs a positive batch size");
      spec.sources.push_back(s.spec);
    }
    probs_ = normalize_weights(spec);
  }

  static MixtureSampler from_spec(const MixtureSpec& spec, const std::filesystem::path& data_root, const Tokenizer& tok,
                                  std::uint64_t seed) {
    std::vector<Source> sources;
    for (const auto& s : spec.sources) {
      const auto path = data_root / s.manifest;
      sources.push_back({s, path, read_manifest(path)});
    }
    return MixtureSampler(std::move(sources), tok, seed);
  }

  const std::vector<double>& probabilities() const { return probs_; }
  const std::vector<Source>& sources() const { return sources_; }

  std::size_t draw_source() { return sample_source(probs_, rng_); }

  RenderedSample render(const Source& src, const ManifestEntry& e) const {
    RenderedSample s;
    s.id = e.id;
    s.chat = render_chat(e.conversation, tok_);
    s.mask = build_loss_mask(s.chat);
    for (const auto& slot : s.chat.speech_slots) {
      const auto path = resolve_audio_path(src.manifest_path, slot.audio.path);
      s.speech.push_back({slot.position, path.string(), audio_->get(path)});
    }
    return s;
  }

  Batch next_batch() {
    const auto& src = sources_[draw_source()];
    if (src.entries.empty()) throw InvalidArgument("source '" + src.spec.name + "' has an empty manifest");
    std::vector<RenderedSample> rows;
    for (int i = 0; i < src.spec.batch_size; ++i)
      rows.push_back(render(src, src.entries[uniform_index(rng_, src.entries.size())]));
    return collate(rows, tok_.pad_id(), src.spec.name);
  }

  std::string rng_state() const { return vtb::rng_state(rng_); }
  void set_rng_state(const std::string& s) { vtb::set_rng_state(rng_, s); }

 private:
  std::vector<Source> sources_;
  Tokenizer tok_;
  Rng rng_;
  std::shared_ptr<AudioCache> audio_;
  std::vector<double> probs_;
};

}  // namespace vtb
