#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtb/common/error.hpp"
#include "vtb/datagen/audio.hpp"
#include "vtb/textproc/conversation.hpp"

namespace vtb {

using Json = nlohmann::json;

// One training or evaluation sample; serialized as one JSONL line. `meta`
// carries task-specific extras (task/language codes, SQA context, IF
// constraints) and is omitted when null.
struct ManifestEntry {
  std::string id;
  std::string source;
  Conversation conversation;
  double total_audio_seconds = 0.0;
  Json meta;

  bool operator==(const ManifestEntry&) const = default;
};

inline double sum_audio_seconds(const Conversation& c) {
  double s = 0.0;
  for (const auto& t : c.turns)
    for (const auto& seg : t.segments)
      if (seg.is_speech()) s += seg.audio.seconds();
  return s;
}

inline std::size_t count_speech_segments(const Conversation& c) {
  std::size_t n = 0;
  for (const auto& t : c.turns)
    for (const auto& seg : t.segments) n += seg.is_speech();
  return n;
}

inline Json entry_to_json(const ManifestEntry& e) {
  Json turns = Json::array();
  for (const auto& t : e.conversation.turns) {
    Json segs = Json::array();
    for (const auto& s : t.segments) {
      if (s.is_text()) {
        segs.push_back({{"kind", "text"}, {"text", s.text}});
      } else {
        Json audio = {{"path", s.audio.path}, {"samples", s.audio.samples}};
        if (!s.audio.transcript.empty()) audio["transcript"] = s.audio.transcript;
        segs.push_back({{"kind", "speech"}, {"audio", audio}});
      }
    }
    turns.push_back({{"role", role_name(t.role)}, {"segments", segs}});
  }
  Json j = {{"id", e.id}, {"source", e.source}, {"turns", turns}, {"total_audio_seconds", e.total_audio_seconds}};
  if (!e.meta.is_null()) j["meta"] = e.meta;
  return j;
}

inline ManifestEntry entry_from_json(const Json& j) {
  ManifestEntry e;
  e.id = j.at("id").get<std::string>();
  e.source = j.at("source").get<std::string>();
  e.total_audio_seconds = j.at("total_audio_seconds").get<double>();
  for (const auto& tj : j.at("turns")) {
    Turn t;
    t.role = parse_role(tj.at("role").get<std::string>());
    for (const auto& sj : tj.at("segments")) {
      const auto kind = sj.at("kind").get<std::string>();
      if (kind == "text") {
        t.segments.push_back(ContentSegment::make_text(sj.at("text").get<std::string>()));
      } else if (kind == "speech") {
        const auto& a = sj.at("audio");
        AudioRef ref{a.at("path").get<std::string>(), a.at("samples").get<std::int64_t>(),
                     a.value("transcript", std::string())};
        if (ref.samples <= 0) throw FormatError("speech segment with non-positive sample count");
        t.segments.push_back(ContentSegment::make_speech(std::move(ref)));
      } else {
        throw FormatError("unknown segment kind '" + kind + "'");
      }
    }
    e.conversation.turns.push_back(std::move(t));
  }
  if (auto it = j.find("meta"); it != j.end()) e.meta = *it;
  validate_conversation(e.conversation);
  return e;
}

inline std::string dump_json_line(const Json& j) {
  return j.dump(-1, ' ', false, Json::error_handler_t::replace);
}

inline std::filesystem::path resolve_audio_path(const std::filesystem::path& manifest_path, const std::string& audio) {
  std::filesystem::path p(audio);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

// Entries are sorted by id before writing; the file is replaced atomically.
inline void write_manifest(std::vector<ManifestEntry> entries, const std::filesystem::path& path) {
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < entries.size(); ++i)
    if (entries[i].id == entries[i - 1].id) throw InvalidArgument("duplicate manifest id '" + entries[i].id + "'");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const auto& e : entries) out << dump_json_line(entry_to_json(e)) << '\n';
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct ManifestReadOptions {
  bool check_audio = true;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path, ManifestReadOptions opts = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = path.string() + ":" + std::to_string(lineno);
    ManifestEntry e;
    try {
      e = entry_from_json(Json::parse(line));
    } catch (const Json::exception& ex) {
      throw FormatError(where + ": malformed manifest line: " + ex.what());
    } catch (const Error& ex) {
      throw FormatError(where + ": " + ex.what());
    }
    if (!ids.insert(e.id).second) throw FormatError(where + ": duplicate id '" + e.id + "'");
    const double expect = sum_audio_seconds(e.conversation);
    const double tol = 1e-3 * static_cast<double>(std::max<std::size_t>(1, count_speech_segments(e.conversation)));
    if (std::abs(expect - e.total_audio_seconds) > tol)
      throw FormatError(where + ": total_audio_seconds disagrees with segment durations");
    if (opts.check_audio) {
      for (const auto& t : e.conversation.turns)
        for (const auto& s : t.segments)
          if (s.is_speech() && !std::filesystem::exists(resolve_audio_path(path, s.audio.path)))
            throw IoError(where + ": missing audio " + s.audio.path);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace vtb
