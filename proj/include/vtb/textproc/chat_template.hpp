#pragma once

#include <cstdint>
#include <vector>

#include "vtb/textproc/conversation.hpp"
#include "vtb/textproc/tokenizer.hpp"

namespace vtb {

struct SpeechSlot {
  std::size_t position = 0;
  AudioRef audio;
};

// [begin, end) over token positions holding a turn's content. The turn's
// <end_of_turn> marker sits at `end`.
struct RoleSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  Role role = Role::user;
};

struct RenderedChat {
  TokenSeq ids;
  std::vector<SpeechSlot> speech_slots;
  std::vector<RoleSpan> role_spans;
};

using LossMask = std::vector<std::uint8_t>;

namespace detail {

inline void append_turn_header(const Tokenizer& tok, Role role, TokenSeq& ids) {
  ids.push_back(tok.start_of_turn_id());
  for (TokenId id : tok.encode_plain(role_name(role))) ids.push_back(id);
  ids.push_back('\n');
}

}  // namespace detail

// Gemma turn grammar:
//   <start_of_turn>user\n ... <end_of_turn>\n<start_of_turn>model\n ... <end_of_turn>\n
// Segment text is byte-encoded, so marker strings typed by a user stay text.
inline RenderedChat render_chat(const Conversation& conv, const Tokenizer& tok) {
  validate_conversation(conv);
  RenderedChat rc;
  for (const auto& turn : conv.turns) {
    detail::append_turn_header(tok, turn.role, rc.ids);
    RoleSpan span{rc.ids.size(), rc.ids.size(), turn.role};
    for (const auto& seg : turn.segments) {
      if (seg.is_speech()) {
        rc.speech_slots.push_back({rc.ids.size(), seg.audio});
        rc.ids.push_back(tok.speech_id());
      } else {
        for (TokenId id : tok.encode_plain(seg.text)) rc.ids.push_back(id);
      }
    }
    span.end = rc.ids.size();
    rc.role_spans.push_back(span);
    rc.ids.push_back(tok.end_of_turn_id());
    rc.ids.push_back('\n');
  }
  return rc;
}

// History plus the opening of a model turn, ready for generation.
inline RenderedChat render_generation_prompt(const Conversation& conv, const Tokenizer& tok) {
  RenderedChat rc = render_chat(conv, tok);
  detail::append_turn_header(tok, Role::model, rc.ids);
  return rc;
}

// Ones over model-turn content and each model turn's <end_of_turn>.
inline LossMask build_loss_mask(const RenderedChat& rc) {
  LossMask mask(rc.ids.size(), 0);
  for (const auto& span : rc.role_spans) {
    if (span.role != Role::model) continue;
    if (span.end >= rc.ids.size() || span.begin > span.end) throw StructuralError("malformed role span");
    for (std::size_t i = span.begin; i <= span.end; ++i) mask[i] = 1;
  }
  for (const auto& slot : rc.speech_slots) mask.at(slot.position) = 0;
  return mask;
}

}  // namespace vtb
