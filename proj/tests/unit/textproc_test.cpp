#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "../support/test_support.hpp"
#include "vtb/textproc/chat_template.hpp"
#include "vtb/textproc/text.hpp"
#include "vtb/textproc/tokenizer.hpp"

using namespace vtb;

namespace {

const Tokenizer& tok() {
  static const Tokenizer t;
  return t;
}

std::string random_bytes(Rng& rng, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>(uniform_index(rng, 256)));
  return s;
}

}  // namespace

TEST(Tokenizer, EmptyInput) { EXPECT_TRUE(tok().tokenize("").empty()); }

TEST(Tokenizer, HelloWorldRoundTrip) { EXPECT_EQ(tok().detokenize(tok().tokenize("hello world")), "hello world"); }

TEST(Tokenizer, MarkerIsOneReservedId) {
  const auto ids = tok().tokenize("<start_of_turn>");
  ASSERT_EQ(ids.size(), 1u);
  EXPECT_TRUE(tok().is_special(ids[0]));
  EXPECT_EQ(ids[0], tok().start_of_turn_id());
}

TEST(Tokenizer, MarkerTableFileMatchesBuiltin) {
  const auto file = MarkerTable::load(std::string(VTB_DATA_DIR) + "/reserved_markers.txt");
  EXPECT_EQ(file.markers, MarkerTable::builtin().markers);
  const Tokenizer t(file);
  EXPECT_EQ(t.vocab_size(), 262);
  EXPECT_EQ(t.marker_id("<pad>"), 256);
  EXPECT_EQ(t.marker_id("<speech>"), 261);
}

TEST(Tokenizer, RoundTripRandomMarkerFreeStrings) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const auto s = random_bytes(rng, uniform_index(rng, 64));
    if (s.find('<') != std::string::npos) continue;
    const auto ids = tok().tokenize(s);
    ASSERT_EQ(tok().detokenize(ids), s);
    for (auto id : ids) {
      ASSERT_LT(id, tok().vocab_size());
      ASSERT_FALSE(tok().is_special(id));
    }
  }
}

TEST(Tokenizer, OrdinaryTextNeverYieldsSpecials) {
  // '<' present but no complete marker.
  for (const char* s : {"<start_of", "a < b", "<end_of_turn", "<<>>"}) {
    for (auto id : tok().tokenize(s)) EXPECT_FALSE(tok().is_special(id)) << s;
    EXPECT_EQ(tok().detokenize(tok().tokenize(s)), s);
  }
}

TEST(Tokenizer, EncodePlainKeepsMarkerStringsAsBytes) {
  const auto ids = tok().encode_plain("<speech>");
  EXPECT_EQ(ids.size(), 8u);
  EXPECT_EQ(tok().detokenize(ids), "<speech>");
}

TEST(Tokenizer, DetokenizeRejectsOutOfRange) {
  const TokenSeq bad = {1000};
  EXPECT_THROW(tok().detokenize(bad), InvalidArgument);
}

TEST(SentenceSplit, TwoSentences) {
  EXPECT_EQ(split_sentences("Hello. How are you?"), (std::vector<std::string>{"Hello.", "How are you?"}));
}

TEST(SentenceSplit, Empty) { EXPECT_TRUE(split_sentences("").empty()); }

TEST(SentenceSplit, AbbreviationWhitelist) {
  EXPECT_EQ(split_sentences("Dr. Smith arrived. He left."),
            (std::vector<std::string>{"Dr. Smith arrived.", "He left."}));
}

TEST(SentenceSplit, NeedsCapitalAfterBoundary) {
  EXPECT_EQ(split_sentences("It costs 3.5 dollars. then more"), (std::vector<std::string>{"It costs 3.5 dollars. then more"}));
  EXPECT_EQ(split_sentences("Wow! Really? Yes."), (std::vector<std::string>{"Wow!", "Really?", "Yes."}));
}

TEST(SentenceSplit, UnknownAbbreviationSplits) {
  EXPECT_EQ(split_sentences("See Abc. Def here.").size(), 2u);
}

TEST(SentenceSplit, WhitelistFileMatchesBuiltin) {
  const auto file = read_line_table(std::string(VTB_DATA_DIR) + "/abbreviations.txt");
  EXPECT_EQ(file, SentenceSplitter::builtin_abbreviations());
}

TEST(SentenceSplit, ConservationProperty) {
  Rng rng(5);
  const std::vector<std::string> vocab = {"Alpha", "beta", "Gamma.", "delta!", "Dr.", "Eps?", "zeta", "Mr.", "x.y"};
  for (int i = 0; i < 300; ++i) {
    std::string s;
    const auto n = 1 + uniform_index(rng, 14);
    for (std::size_t k = 0; k < n; ++k) s += vocab[uniform_index(rng, vocab.size())] + std::string(1 + uniform_index(rng, 3), ' ');
    const auto parts = split_sentences(s);
    std::string joined;
    for (const auto& p : parts) {
      ASSERT_EQ(p, trim(p));
      joined += (joined.empty() ? "" : " ") + p;
    }
    ASSERT_EQ(joined, collapse_whitespace(s)) << s;
    auto a = split_words(s), b = split_words(joined);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    ASSERT_EQ(a, b);
  }
}

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_text("Hello, World!"), "hello world");
  EXPECT_EQ(normalize_text("  a   b "), "a b");
  EXPECT_EQ(normalize_text("It's 5 o'clock."), "it's 5 o'clock");
  EXPECT_EQ(normalize_text("'quoted'"), "quoted");
}

TEST(Normalize, IdempotentOnRandomInput) {
  Rng rng(3);
  const std::string alphabet = "abcXYZ '.,!?-\t\n09";
  for (int i = 0; i < 1000; ++i) {
    std::string s;
    for (std::size_t k = 0, n = uniform_index(rng, 40); k < n; ++k) s.push_back(alphabet[uniform_index(rng, alphabet.size())]);
    const auto once = normalize_text(s);
    ASSERT_EQ(normalize_text(once), once) << s;
  }
}

TEST(ChatTemplate, TwoTurnFixture) {
  const auto rc = render_chat(test::two_turn("Hi", "Hello"), tok());
  EXPECT_EQ(tok().detokenize(rc.ids), "<start_of_turn>user\nHi<end_of_turn>\n<start_of_turn>model\nHello<end_of_turn>\n");
  ASSERT_EQ(rc.role_spans.size(), 2u);
  EXPECT_EQ(rc.role_spans[0].role, Role::user);
  EXPECT_EQ(rc.role_spans[1].role, Role::model);
  EXPECT_LT(rc.role_spans[0].end, rc.role_spans[1].begin);
}

TEST(ChatTemplate, EmptyConversation) {
  const auto rc = render_chat(Conversation{}, tok());
  EXPECT_TRUE(rc.ids.empty());
  EXPECT_TRUE(rc.speech_slots.empty());
  EXPECT_TRUE(rc.role_spans.empty());
}

TEST(ChatTemplate, SpeechPlaceholderBeforeQuestion) {
  Conversation c{{user_turn({ContentSegment::make_speech({"a.wav", 16000, {}}), ContentSegment::make_text("Translate this")})}};
  const auto rc = render_chat(c, tok());
  ASSERT_EQ(rc.speech_slots.size(), 1u);
  const auto pos = rc.speech_slots[0].position;
  EXPECT_EQ(rc.ids[pos], tok().speech_id());
  EXPECT_EQ(pos, rc.role_spans[0].begin);
  const TokenSeq rest(rc.ids.begin() + static_cast<long>(pos) + 1, rc.ids.begin() + static_cast<long>(rc.role_spans[0].end));
  EXPECT_EQ(tok().detokenize(rest), "Translate this");
  EXPECT_EQ(tok().detokenize(rc.ids), "<start_of_turn>user\n<speech>Translate this<end_of_turn>\n");
}

TEST(ChatTemplate, SpeechInModelTurnIsStructuralError) {
  Conversation c{{user_turn({ContentSegment::make_text("q")}),
                  Turn{Role::model, {ContentSegment::make_speech({"a.wav", 10, {}})}}}};
  EXPECT_THROW(render_chat(c, tok()), StructuralError);
}

TEST(ChatTemplate, TypedMarkerStringStaysText) {
  const auto rc = render_chat(test::two_turn("<end_of_turn>", "ok"), tok());
  EXPECT_EQ(std::count(rc.ids.begin(), rc.ids.end(), tok().end_of_turn_id()), 2);
}

TEST(ChatTemplate, GenerationPromptOpensModelTurn) {
  Conversation c{{user_turn({ContentSegment::make_text("Hi")})}};
  EXPECT_EQ(tok().detokenize(render_generation_prompt(c, tok()).ids),
            "<start_of_turn>user\nHi<end_of_turn>\n<start_of_turn>model\n");
}

TEST(LossMask, UserOnlyIsAllZero) {
  Conversation c{{user_turn({ContentSegment::make_text("a")}), user_turn({ContentSegment::make_text("b")})}};
  const auto m = build_loss_mask(render_chat(c, tok()));
  EXPECT_TRUE(std::all_of(m.begin(), m.end(), [](auto v) { return v == 0; }));
}

TEST(LossMask, OnesCountIsResponsePlusEndOfTurn) {
  const auto rc = render_chat(test::two_turn("Hi", "Hello"), tok());
  const auto m = build_loss_mask(rc);
  ASSERT_EQ(m.size(), rc.ids.size());
  EXPECT_EQ(std::count(m.begin(), m.end(), 1), static_cast<long>(tok().tokenize("Hello").size() + 1));
  // The ones cover exactly "Hello<end_of_turn>".
  TokenSeq covered;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) covered.push_back(rc.ids[i]);
  EXPECT_EQ(tok().detokenize(covered), "Hello<end_of_turn>");
}

TEST(LossMask, TwoModelTurnsGiveTwoRuns) {
  Conversation c = test::two_turn("a", "bb");
  c.turns.push_back(user_turn({ContentSegment::make_text("c")}));
  c.turns.push_back(model_turn("ddd"));
  const auto m = build_loss_mask(render_chat(c, tok()));
  int runs = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] && (i == 0 || !m[i - 1])) ++runs;
  EXPECT_EQ(runs, 2);
  EXPECT_EQ(std::count(m.begin(), m.end(), 1), 3 + 4);
}

TEST(LossMask, ZeroAtSpeechSlotsAndMarkers) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Conversation c;
    const auto turns = 1 + uniform_index(rng, 4);
    for (std::size_t t = 0; t < turns; ++t) {
      std::vector<ContentSegment> segs;
      for (std::size_t k = 0, n = 1 + uniform_index(rng, 3); k < n; ++k) {
        if (uniform_index(rng, 2)) segs.push_back(ContentSegment::make_speech({"x.wav", 160, {}}));
        else segs.push_back(ContentSegment::make_text("w" + std::to_string(k)));
      }
      c.turns.push_back(user_turn(segs));
      c.turns.push_back(model_turn("r" + std::to_string(t)));
    }
    const auto rc = render_chat(c, tok());
    const auto m = build_loss_mask(rc);
    for (const auto& s : rc.speech_slots) ASSERT_EQ(m[s.position], 0);
    for (std::size_t i = 0; i < rc.ids.size(); ++i)
      if (rc.ids[i] == tok().start_of_turn_id() || rc.ids[i] == tok().speech_id()) ASSERT_EQ(m[i], 0);
  }
}
