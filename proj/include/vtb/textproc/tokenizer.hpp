#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vtb/common/error.hpp"

namespace vtb {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Plain-text list of reserved markers; '#' lines and blank lines are ignored.
inline std::vector<std::string> read_line_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t");
    out.push_back(line.substr(first, last - first + 1));
  }
  return out;
}

struct MarkerTable {
  std::vector<std::string> markers;

  static MarkerTable builtin() {
    return {{"<pad>", "<bos>", "<eos>", "<start_of_turn>", "<end_of_turn>", "<speech>"}};
  }

  static MarkerTable load(const std::string& path) { return {read_line_table(path)}; }
};

// Byte-level tokenizer: ids 0..255 are bytes, reserved markers follow.
// tokenize() matches marker strings atomically; encode_plain() never does.
class Tokenizer {
 public:
  static constexpr TokenId kByteCount = 256;

  explicit Tokenizer(MarkerTable table = MarkerTable::builtin()) : markers_(std::move(table.markers)) {
    for (std::size_t i = 0; i < markers_.size(); ++i) {
      const auto& m = markers_[i];
      if (m.empty()) throw FormatError("empty reserved marker");
      if (!index_.emplace(m, kByteCount + static_cast<TokenId>(i)).second)
        throw FormatError("duplicate reserved marker " + m);
    }
    pad_ = require("<pad>");
    bos_ = require("<bos>");
    eos_ = require("<eos>");
    start_of_turn_ = require("<start_of_turn>");
    end_of_turn_ = require("<end_of_turn>");
    speech_ = require("<speech>");
  }

  TokenId vocab_size() const { return kByteCount + static_cast<TokenId>(markers_.size()); }

  TokenId pad_id() const { return pad_; }
  TokenId bos_id() const { return bos_; }
  TokenId eos_id() const { return eos_; }
  TokenId start_of_turn_id() const { return start_of_turn_; }
  TokenId end_of_turn_id() const { return end_of_turn_; }
  TokenId speech_id() const { return speech_; }

  bool is_special(TokenId id) const { return id >= kByteCount && id < vocab_size(); }

  TokenId marker_id(std::string_view marker) const {
    auto it = index_.find(std::string(marker));
    if (it == index_.end()) throw InvalidArgument("unknown marker " + std::string(marker));
    return it->second;
  }

  const std::string& marker_text(TokenId id) const {
    if (!is_special(id)) throw InvalidArgument("not a reserved id: " + std::to_string(id));
    return markers_[static_cast<std::size_t>(id - kByteCount)];
  }

  TokenSeq tokenize(std::string_view text) const {
    TokenSeq out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
      std::size_t best_len = 0;
      TokenId best = -1;
      for (std::size_t m = 0; m < markers_.size(); ++m) {
        const auto& mk = markers_[m];
        if (mk.size() > best_len && text.substr(i, mk.size()) == mk) {
          best_len = mk.size();
          best = kByteCount + static_cast<TokenId>(m);
        }
      }
      if (best_len > 0) {
        out.push_back(best);
        i += best_len;
      } else {
        out.push_back(static_cast<unsigned char>(text[i]));
        ++i;
      }
    }
    return out;
  }

  TokenSeq encode_plain(std::string_view text) const {
    TokenSeq out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(c);
    return out;
  }

  std::string detokenize(std::span<const TokenId> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
      if (id >= 0 && id < kByteCount) {
        out.push_back(static_cast<char>(id));
      } else if (is_special(id)) {
        out += markers_[static_cast<std::size_t>(id - kByteCount)];
      } else {
        throw InvalidArgument("token id out of range: " + std::to_string(id));
      }
    }
    return out;
  }

 private:
  TokenId require(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw FormatError("marker table lacks " + name);
    return it->second;
  }

  std::vector<std::string> markers_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_, bos_, eos_, start_of_turn_, end_of_turn_, speech_;
};

}  // namespace vtb
