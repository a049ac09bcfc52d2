#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vtb/textproc/tokenizer.hpp"

namespace vtb {

namespace detail {

inline bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Non-ASCII bytes count as word characters so UTF-8 text survives normalization.
inline bool is_word_byte(unsigned char c) { return c >= 0x80 || std::isalnum(c); }

}  // namespace detail

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && detail::is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && detail::is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && detail::is_space(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !detail::is_space(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  for (const auto& w : split_words(s)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

// Evaluation normalizer: ASCII lowercase, ASCII punctuation becomes a space
// except apostrophes between two word characters, whitespace collapsed.
// Numerals are left as digits.
inline std::string normalize_text(std::string_view text) {
  std::string tmp;
  tmp.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '\'') {
      const bool left = i > 0 && detail::is_word_byte(static_cast<unsigned char>(text[i - 1]));
      const bool right = i + 1 < text.size() && detail::is_word_byte(static_cast<unsigned char>(text[i + 1]));
      tmp.push_back(left && right ? '\'' : ' ');
    } else if (c < 0x80 && std::ispunct(c)) {
      tmp.push_back(' ');
    } else {
      tmp.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  return collapse_whitespace(tmp);
}

class SentenceSplitter {
 public:
  SentenceSplitter() : SentenceSplitter(builtin_abbreviations()) {}
  explicit SentenceSplitter(const std::vector<std::string>& abbreviations)
      : abbreviations_(abbreviations.begin(), abbreviations.end()) {}

  static SentenceSplitter from_file(const std::string& path) { return SentenceSplitter(read_line_table(path)); }

  static std::vector<std::string> builtin_abbreviations() {
    return {"Mr.",  "Mrs.", "Ms.",  "Dr.",  "Prof.", "Sr.",  "Jr.",  "St.",  "Mt.",   "Gen.", "Gov.",
            "Sen.", "Rep.", "Capt.", "Lt.",  "Col.",  "Sgt.", "vs.",  "etc.", "e.g.",  "i.e.", "Inc.",
            "Ltd.", "Co.",  "Corp.", "Fig.", "No.",   "Vol.", "Jan.", "Feb.", "Mar.",  "Apr.", "Jun.",
            "Jul.", "Aug.", "Sep.", "Sept.", "Oct.", "Nov.",  "Dec.", "U.S.", "U.K.",  "a.m.", "p.m."};
  }

  // Byte ranges [begin, end) of each sentence in `text`, trimmed. Gaps between
  // consecutive ranges are whitespace only.
  std::vector<std::pair<std::size_t, std::size_t>> spans(std::string_view text) const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::size_t n = text.size();
    auto space = [&](std::size_t k) { return detail::is_space(static_cast<unsigned char>(text[k])); };
    std::size_t start = 0;
    while (start < n && space(start)) ++start;
    std::size_t i = start;
    while (i < n) {
      const char c = text[i];
      if (c != '.' && c != '!' && c != '?') {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < n && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
      while (j < n && (text[j] == '"' || text[j] == '\'' || text[j] == ')' || text[j] == ']')) ++j;
      std::size_t k = j;
      while (k < n && space(k)) ++k;
      const bool boundary = k > j && k < n && std::isupper(static_cast<unsigned char>(text[k]));
      if (boundary && !(j == i + 1 && c == '.' && is_abbreviation(text, i))) {
        out.emplace_back(start, j);
        start = k;
        i = k;
      } else {
        i = j;
      }
    }
    if (start < n) {
      std::size_t e = n;
      while (e > start && space(e - 1)) --e;
      out.emplace_back(start, e);
    }
    return out;
  }

  std::vector<std::string> split(std::string_view text) const {
    std::vector<std::string> out;
    for (auto [b, e] : spans(text)) out.push_back(collapse_whitespace(text.substr(b, e - b)));
    return out;
  }

 private:
  // The whitespace-delimited token ending at the '.' at `dot`.
  bool is_abbreviation(std::string_view text, std::size_t dot) const {
    std::size_t b = dot;
    while (b > 0 && !detail::is_space(static_cast<unsigned char>(text[b - 1]))) --b;
    return abbreviations_.count(std::string(text.substr(b, dot + 1 - b))) > 0;
  }

  std::unordered_set<std::string> abbreviations_;
};

inline std::vector<std::string> split_sentences(std::string_view text) {
  static const SentenceSplitter splitter;
  return splitter.split(text);
}

}  // namespace vtb
