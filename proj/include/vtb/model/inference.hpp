#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vtb/datagen/audio.hpp"
#include "vtb/model/network.hpp"
#include "vtb/textproc/chat_template.hpp"

namespace vtb::nn {

// Maps a speech segment's audio reference to its log-mel features.
template <class T>
using MelResolver = std::function<const Matrix<T>&(const AudioRef&)>;

// Resolves audio paths against a base directory and memoizes features.
template <class T>
class MelStore {
 public:
  MelStore(const MultimodalModel<T>& model, std::filesystem::path base,
           std::shared_ptr<AudioCache> audio = std::make_shared<AudioCache>())
      : model_(model), base_(std::move(base)), audio_(std::move(audio)) {}

  const Matrix<T>& operator()(const AudioRef& ref) {
    std::filesystem::path p(ref.path);
    if (p.is_relative()) p = base_ / p;
    const auto key = p.lexically_normal().string();
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, model_.features(*audio_->get(p))).first;
    return it->second;
  }

  MelResolver<T> resolver() {
    return [this](const AudioRef& r) -> const Matrix<T>& { return (*this)(r); };
  }

 private:
  const MultimodalModel<T>& model_;
  std::filesystem::path base_;
  std::shared_ptr<AudioCache> audio_;
  std::map<std::string, Matrix<T>> cache_;
};

// Greedy continuation of `history` (which should end with a user turn) up to
// the model's <end_of_turn>.
template <class T>
TokenSeq generate_reply_ids(const MultimodalModel<T>& model, const Tokenizer& tok, const Conversation& history,
                            const MelResolver<T>& mels, int max_new_tokens) {
  const RenderedChat rc = render_generation_prompt(history, tok);
  std::vector<std::size_t> slots;
  std::vector<const Matrix<T>*> feats;
  for (const auto& s : rc.speech_slots) {
    slots.push_back(s.position);
    feats.push_back(&mels(s.audio));
  }
  const Matrix<T> prefix = assemble_values(model, rc.ids, slots, feats);
  return greedy_decode(model, prefix, max_new_tokens, tok.end_of_turn_id());
}

template <class T>
std::string generate_reply(const MultimodalModel<T>& model, const Tokenizer& tok, const Conversation& history,
                           const MelResolver<T>& mels, int max_new_tokens) {
  return tok.detokenize(generate_reply_ids(model, tok, history, mels, max_new_tokens));
}

// Conversation up to (not including) its final model turn, plus that turn's text.
inline std::pair<Conversation, std::string> split_last_response(const Conversation& conv) {
  if (conv.turns.empty() || conv.turns.back().role != Role::model)
    throw StructuralError("conversation does not end with a model turn");
  Conversation prompt = conv;
  const std::string reference = turn_text(prompt.turns.back());
  prompt.turns.pop_back();
  return {std::move(prompt), reference};
}

}  // namespace vtb::nn
