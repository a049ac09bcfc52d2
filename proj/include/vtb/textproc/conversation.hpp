#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vtb/common/error.hpp"

namespace vtb {

enum class Role { user, model };

inline const char* role_name(Role r) { return r == Role::user ? "user" : "model"; }

inline Role parse_role(const std::string& s) {
  if (s == "user") return Role::user;
  if (s == "model") return Role::model;
  throw FormatError("unknown role '" + s + "'");
}

// Reference to a mono 16 kHz clip. `transcript` is the text a TTS backend was
// given to produce the clip, when known.
struct AudioRef {
  std::string path;
  std::int64_t samples = 0;
  std::string transcript;

  double seconds(double sample_rate = 16000.0) const { return static_cast<double>(samples) / sample_rate; }
  bool operator==(const AudioRef&) const = default;
};

struct ContentSegment {
  enum class Kind { text, speech };

  Kind kind = Kind::text;
  std::string text;
  AudioRef audio;

  static ContentSegment make_text(std::string t) { return {Kind::text, std::move(t), {}}; }
  static ContentSegment make_speech(AudioRef a) { return {Kind::speech, {}, std::move(a)}; }

  bool is_text() const { return kind == Kind::text; }
  bool is_speech() const { return kind == Kind::speech; }
  bool operator==(const ContentSegment&) const = default;
};

struct Turn {
  Role role = Role::user;
  std::vector<ContentSegment> segments;

  bool operator==(const Turn&) const = default;
};

struct Conversation {
  std::vector<Turn> turns;

  bool operator==(const Conversation&) const = default;
};

inline Turn user_turn(std::vector<ContentSegment> segs) { return {Role::user, std::move(segs)}; }
inline Turn model_turn(std::string text) { return {Role::model, {ContentSegment::make_text(std::move(text))}}; }

// Concatenated text of a turn; speech segments contribute nothing.
inline std::string turn_text(const Turn& t) {
  std::string out;
  for (const auto& s : t.segments)
    if (s.is_text()) out += s.text;
  return out;
}

inline void validate_conversation(const Conversation& conv) {
  for (std::size_t i = 0; i < conv.turns.size(); ++i) {
    for (const auto& seg : conv.turns[i].segments) {
      if (seg.is_speech()) {
        if (conv.turns[i].role == Role::model)
          throw StructuralError("model turn " + std::to_string(i) + " contains a speech segment");
        if (seg.audio.samples <= 0)
          throw StructuralError("speech segment in turn " + std::to_string(i) + " has no samples");
      }
    }
  }
}

}  // namespace vtb
