#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtb/common/error.hpp"
#include "vtb/textproc/text.hpp"

namespace vtb::eval {

// {"id": "...", ...args}; e.g. {"id": "contains_keyword", "keyword": "hello"}.
struct Constraint {
  std::string id;
  nlohmann::json args = nlohmann::json::object();
};

inline Constraint constraint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("id") || !j.at("id").is_string())
    throw InvalidArgument("constraint needs a string 'id'");
  Constraint c;
  c.id = j.at("id").get<std::string>();
  c.args = j;
  c.args.erase("id");
  return c;
}

namespace detail {

inline std::string lower_ascii(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline std::string upper_ascii(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  return s;
}

inline long long int_arg(const Constraint& c, const char* key) {
  if (!c.args.contains(key) || !c.args.at(key).is_number_integer())
    throw InvalidArgument("constraint '" + c.id + "' needs integer '" + key + "'");
  return c.args.at(key).get<long long>();
}

inline std::string string_arg(const Constraint& c, const char* key) {
  if (!c.args.contains(key) || !c.args.at(key).is_string() || c.args.at(key).get<std::string>().empty())
    throw InvalidArgument("constraint '" + c.id + "' needs non-empty string '" + key + "'");
  return c.args.at(key).get<std::string>();
}

inline long long word_count(const std::string& s) { return static_cast<long long>(split_words(s).size()); }

}  // namespace detail

using Verifier = std::function<bool(const std::string& response, const Constraint&)>;

inline const std::map<std::string, Verifier>& verifier_registry() {
  static const std::map<std::string, Verifier> reg = {
      {"lowercase", [](const std::string& r, const Constraint&) { return r == detail::lower_ascii(r); }},
      {"uppercase", [](const std::string& r, const Constraint&) { return r == detail::upper_ascii(r); }},
      {"exact_word_count",
       [](const std::string& r, const Constraint& c) { return detail::word_count(r) == detail::int_arg(c, "n"); }},
      {"min_word_count",
       [](const std::string& r, const Constraint& c) { return detail::word_count(r) >= detail::int_arg(c, "n"); }},
      {"max_word_count",
       [](const std::string& r, const Constraint& c) { return detail::word_count(r) <= detail::int_arg(c, "n"); }},
      {"contains_keyword",
       [](const std::string& r, const Constraint& c) {
         return detail::lower_ascii(r).find(detail::lower_ascii(detail::string_arg(c, "keyword"))) != std::string::npos;
       }},
      {"excludes_keyword",
       [](const std::string& r, const Constraint& c) {
         return detail::lower_ascii(r).find(detail::lower_ascii(detail::string_arg(c, "keyword"))) == std::string::npos;
       }},
      {"wrapped_in_quotes",
       [](const std::string& r, const Constraint&) {
         const auto t = trim(r);
         return t.size() >= 2 && t.front() == '"' && t.back() == '"';
       }},
  };
  return reg;
}

inline bool verify(const std::string& response, const Constraint& c) {
  const auto& reg = verifier_registry();
  auto it = reg.find(c.id);
  if (it == reg.end()) throw InvalidArgument("unknown constraint id '" + c.id + "'");
  return it->second(response, c);
}

// Prompt-level strictness: 1 only if every constraint holds.
inline bool follows_all(const std::string& response, std::span<const Constraint> constraints) {
  bool ok = true;
  for (const auto& c : constraints) ok = verify(response, c) && ok;  // validate every id
  return ok;
}

struct IfevalItem {
  std::string response;
  std::vector<Constraint> constraints;
};

inline double strict_accuracy(std::span<const IfevalItem> items) {
  if (items.empty()) throw InvalidArgument("strict_accuracy of an empty item list is undefined");
  std::size_t pass = 0;
  for (const auto& it : items) pass += follows_all(it.response, it.constraints) ? 1 : 0;
  return static_cast<double>(pass) / static_cast<double>(items.size());
}

}  // namespace vtb::eval
