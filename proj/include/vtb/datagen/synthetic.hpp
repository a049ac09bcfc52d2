#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vtb/common/rng.hpp"
#include "vtb/datagen/pipeline.hpp"

namespace vtb {

// Small seeded source corpora for demos and end-to-end tests. Texts are short
// so a desk-scale model can memorize them quickly.
struct DemoCorpusOptions {
  std::size_t per_kind = 8;
  std::uint64_t seed = 7;
};

struct DemoCorpusPaths {
  std::filesystem::path asr_ast, sqa, mixed, text;
};

namespace detail {

inline const std::array<const char*, 12>& demo_names() {
  static const std::array<const char*, 12> v = {"Anna", "Ben", "Carla", "David", "Elena", "Felix",
                                                "Greta", "Hugo", "Iris", "Jonas", "Klara", "Lukas"};
  return v;
}
inline const std::array<const char*, 12>& demo_things() {
  static const std::array<const char*, 12> v = {"boat", "lamp", "kite", "book", "cake", "drum",
                                                "ship", "bell", "coat", "door", "rose", "fish"};
  return v;
}
inline const std::array<const char*, 8>& demo_colors() {
  static const std::array<const char*, 8> v = {"red", "blue", "green", "black", "white", "pink", "gray", "gold"};
  return v;
}
// Word-for-word stand-ins used as "translations".
inline std::string demo_translate(const std::string& w) {
  static const std::map<std::string, std::string> dict = {
      {"red", "rot"},     {"blue", "blau"},  {"green", "gruen"}, {"black", "schwarz"}, {"white", "weiss"},
      {"pink", "rosa"},   {"gray", "grau"},  {"gold", "golden"}, {"boat", "Boot"},     {"lamp", "Lampe"},
      {"kite", "Drachen"}, {"book", "Buch"}, {"cake", "Kuchen"}, {"drum", "Trommel"},  {"ship", "Schiff"},
      {"bell", "Glocke"}, {"coat", "Mantel"}, {"door", "Tuer"},  {"rose", "Rose"},     {"fish", "Fisch"}};
  auto it = dict.find(w);
  return it == dict.end() ? w : it->second;
}

template <class A>
std::string pick(const A& arr, Rng& rng) {
  return arr[static_cast<std::size_t>(uniform_index(rng, arr.size()))];
}

}  // namespace detail

inline DemoCorpusPaths write_demo_corpora(const std::filesystem::path& dir, const DemoCorpusOptions& opts = {}) {
  using detail::pick;
  std::filesystem::create_directories(dir);
  DemoCorpusPaths p{dir / "asr_ast.jsonl", dir / "sqa.jsonl", dir / "mixed.jsonl", dir / "text.jsonl"};
  auto rng = derive_rng(opts.seed, "demo-corpus");
  std::vector<Json> asr, sqa, mixed, text;
  for (std::size_t i = 0; i < opts.per_kind; ++i) {
    const auto idx = std::to_string(i);
    const auto name = pick(detail::demo_names(), rng);
    const auto thing = pick(detail::demo_things(), rng);
    const auto color = pick(detail::demo_colors(), rng);
    const std::string spoken = name + " has a " + color + " " + thing + ".";
    if (i % 2 == 0) {
      asr.push_back({{"id", "asr-" + idx}, {"task", "asr"}, {"text", spoken}, {"src_lang", "en"}, {"tgt_lang", "en"}});
    } else {
      const std::string german = name + " hat " + detail::demo_translate(color) + " " + detail::demo_translate(thing) + ".";
      asr.push_back({{"id", "ast-" + idx},
                     {"task", "ast"},
                     {"text", german},
                     {"speech_text", spoken},
                     {"src_lang", "en"},
                     {"tgt_lang", "de"}});
    }

    const auto other = pick(detail::demo_things(), rng);
    sqa.push_back({{"id", "sqa-" + idx}, {"transcript", name + " sold the " + other + ". It was " + color + "."}});

    const auto n2 = pick(detail::demo_names(), rng);
    mixed.push_back({{"id", "mixed-" + idx},
                     {"instruction", "Here is a note. " + n2 + " found a " + thing + ". Who found it?"},
                     {"response", n2 + "."}});

    text.push_back({{"id", "text-" + idx},
                    {"turns",
                     {{{"role", "user"}, {"text", "Name a " + color + " thing " + std::to_string(i) + "."}},
                      {{"role", "model"}, {"text", "A " + color + " " + other + "."}}}}});
  }
  write_jsonl(asr, p.asr_ast);
  write_jsonl(sqa, p.sqa);
  write_jsonl(mixed, p.mixed);
  write_jsonl(text, p.text);
  return p;
}

}  // namespace vtb
