#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>

#include "../support/model_fixtures.hpp"
#include "../support/test_support.hpp"
#include "vtb/model/checkpoint.hpp"
#include "vtb/model/inference.hpp"
#include "vtb/model/merge.hpp"

using namespace vtb;
using namespace vtb::nn;
using test::TempDir;

namespace {

ModelConfig tiny_cfg() { return ModelConfig::tiny(); }

template <class T>
Matrix<T> logits_of(const MultimodalModel<T>& m, const Matrix<T>& x) {
  Graph<T> g(false);
  return g.value(m.lm_forward(g, g.constant(x)));
}

Waveform tone(double seconds) {
  Waveform w(static_cast<std::size_t>(seconds * 16000 + 0.5));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(0.3 * std::sin(0.05 * static_cast<double>(i)));
  return w;
}

}  // namespace

TEST(Config, DefaultsAreDeskScale) {
  const ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(c.frame_seconds(), 0.080);
  EXPECT_EQ(c.lm.layers, 4);
  EXPECT_EQ(c.lm.width, 256);
  EXPECT_EQ(c.adapter.layers, 2);
  EXPECT_EQ(c.adapter.conv_kernel, 9);
  EXPECT_EQ(c.lora.rank, 32);
  EXPECT_EQ(model_config_from_json(to_json(c)).lm.ff_hidden, c.lm.ff_hidden);
}

TEST(Config, Invariants) {
  ModelConfig c;
  c.adapter.width = 128;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig();
  c.encoder.stride_2 = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig();
  c.lora.rank = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Speech, FrameCountOracle) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  // Centered STFT frames: 1 + N / hop, then an 8x downsample.
  for (double sec : {0.5, 1.0, 1.6, 3.2, 0.33}) {
    const auto n = static_cast<std::size_t>(sec * 16000 + 0.5);
    const auto expect = (1 + n / 160) / 8;
    Graph<float> g(false);
    const auto mel = m.features(tone(sec));
    EXPECT_EQ(static_cast<std::size_t>(mel.rows()), 1 + n / 160);
    const auto& enc = g.value(m.encode_speech(g, mel));
    EXPECT_EQ(static_cast<std::size_t>(enc.rows()), expect) << sec;
    EXPECT_EQ(m.frame_count(n), expect);
  }
  EXPECT_EQ(m.frame_count(25600), 20u);
}

TEST(Speech, AdapterKeepsFramesAndReachesLmWidth) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  Graph<float> g(false);
  Var enc = m.encode_speech(g, m.features(tone(1.6)));
  const auto& adp = g.value(m.adapt(g, enc));
  EXPECT_EQ(adp.rows(), 20);
  EXPECT_EQ(adp.cols(), m.config().lm.width);
  EXPECT_EQ(g.value(enc).cols(), m.config().encoder.width);
}

TEST(Speech, SilenceIsFinite) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  Graph<float> g(false);
  const auto mel = m.features(Waveform(16000, 0.0f));
  EXPECT_TRUE(mel.allFinite());
  EXPECT_TRUE(g.value(m.speech_features(g, mel)).allFinite());
}

TEST(Speech, DoublingDurationDoublesFrames) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  for (std::size_t n : {8000u, 12345u, 40000u}) {
    const auto a = static_cast<long>(m.frame_count(n)), b = static_cast<long>(m.frame_count(2 * n));
    EXPECT_LE(std::abs(b - 2 * a), 1);
  }
}

TEST(Speech, RejectsBadWaveforms) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  EXPECT_THROW(m.features(Waveform{}), InvalidArgument);
  EXPECT_THROW(m.features(Waveform{0.f, std::nanf("")}), InvalidArgument);
}

TEST(Text, EmbeddingShapes) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  Graph<float> g(false);
  EXPECT_EQ(g.value(m.embed_text(g, TokenSeq{})).rows(), 0);
  const TokenSeq ids = {5, 9, 5, 1, 2, 3, 4};
  const auto& e = g.value(m.embed_text(g, ids));
  EXPECT_EQ(e.rows(), 7);
  EXPECT_EQ(e.cols(), 16);
  EXPECT_EQ(e.row(0), e.row(2));
  const TokenSeq bad = {999};
  EXPECT_ANY_THROW(m.embed_text(g, bad));
}

TEST(Assemble, OneSlotLength) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  Graph<float> g(false);
  const TokenSeq ids = {1, 2, 261, 3, 4, 5, 6, 7, 8, 9};
  const std::vector<std::size_t> slots = {2};
  Rng rng(1);
  std::vector<Var> speech = {g.constant(test::random_matrix<float>(rng, 20, 16))};
  const auto& x = g.value(m.assemble(g, ids, slots, speech));
  EXPECT_EQ(x.rows(), 29);
  // Bookkeeping oracle: rows 2..21 are the speech block, in place of the placeholder.
  EXPECT_EQ(x.middleRows(2, 20), g.value(speech[0]));
  const TokenSeq after = {3};
  EXPECT_EQ(x.row(22), g.value(m.embed_text(g, after)).row(0));
}

TEST(Assemble, ZeroSlotsEqualsEmbedding) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  Graph<float> g(false);
  const TokenSeq ids = {10, 20, 30};
  EXPECT_EQ(g.value(m.assemble(g, ids, {}, {})), g.value(m.embed_text(g, ids)));
}

TEST(Assemble, RandomLayoutsLengthAndOrder) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    Graph<float> g(false);
    TokenSeq ids;
    std::vector<std::size_t> slots;
    std::vector<Var> speech;
    std::size_t total = 0;
    for (std::size_t k = 0, n = 1 + uniform_index(rng, 12); k < n; ++k) {
      if (uniform_index(rng, 3) == 0) {
        slots.push_back(ids.size());
        ids.push_back(261);
        const auto f = 1 + static_cast<Eigen::Index>(uniform_index(rng, 6));
        speech.push_back(g.constant(Matrix<float>::Constant(f, 16, static_cast<float>(slots.size()))));
        total += static_cast<std::size_t>(f);
      } else {
        ids.push_back(static_cast<TokenId>(uniform_index(rng, 256)));
        ++total;
      }
    }
    const auto& x = g.value(m.assemble(g, ids, slots, speech));
    ASSERT_EQ(static_cast<std::size_t>(x.rows()), total);
    // Blocks appear in slot order.
    float last = 0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const float v = x(r, 0);
      if (v >= 1 && v == std::round(v) && (x.row(r).array() == v).all()) {
        ASSERT_GE(v, last);
        last = v;
      }
    }
    std::vector<std::size_t> frames;
    for (auto v : speech) frames.push_back(static_cast<std::size_t>(g.value(v).rows()));
    const auto layout = assembled_layout(ids, LossMask(ids.size(), 1), slots, frames);
    ASSERT_EQ(layout.ids.size(), total);
    for (std::size_t i = 0; i < total; ++i) {
      if (layout.ids[i] < 0) {
        ASSERT_EQ(layout.mask[i], 0);
      }
    }
  }
}

TEST(Assemble, SlotMismatchErrors) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  Graph<float> g(false);
  const TokenSeq ids = {1, 261};
  const std::vector<std::size_t> slots = {1};
  EXPECT_THROW(m.assemble(g, ids, slots, {}), InvalidArgument);
}

TEST(Forward, DeterministicAndCausal) {
  MultimodalModel<float> m(tiny_cfg(), 3);
  Rng rng(3);
  auto x = test::random_matrix<float>(rng, 12, 16);
  const auto a = logits_of(m, x);
  EXPECT_EQ(a, logits_of(m, x));
  EXPECT_EQ(a.cols(), 262);
  x.row(7).array() += 1.0f;
  const auto b = logits_of(m, x);
  EXPECT_EQ(a.topRows(7), b.topRows(7));
  EXPECT_NE(a.row(7), b.row(7));
}

TEST(Forward, RankZeroEqualsFrozenBase) {
  MultimodalModel<float> base(tiny_cfg(), 4, false);
  auto cfg = tiny_cfg();
  cfg.lora.rank = 0;
  MultimodalModel<float> r0(cfg, 4, true);
  EXPECT_FALSE(r0.has_lora());
  MultimodalModel<float> adapted(tiny_cfg(), 4, true);
  Rng rng(4);
  const auto x = test::random_matrix<float>(rng, 9, 16);
  EXPECT_EQ(logits_of(base, x), logits_of(r0, x));
  // B = 0 at init: exact identity.
  EXPECT_EQ(logits_of(base, x), logits_of(adapted, x));
}

TEST(Forward, NonFiniteReportsLayer) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  m.params().at("lm.layers.1.ffn.down.weight").value.setConstant(std::numeric_limits<float>::infinity());
  Rng rng(1);
  try {
    logits_of(m, test::random_matrix<float>(rng, 3, 16));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(Loss, UniformLogitsGiveLogV) {
  MultimodalModel<double> m(tiny_cfg(), 1);
  Graph<double> g(false);
  Var logits = g.constant(Matrix<double>::Zero(6, 262));
  ShiftedTargets t;
  t.targets = {1, 2, 3, 4, 5, 0};
  t.mask = {1, 0, 1, 1, 0, 0};
  t.count = 3;
  EXPECT_NEAR(g.value(m.loss(g, logits, t))(0, 0), std::log(262.0), 1e-12);
}

TEST(Loss, LargeMarginGoesToZero) {
  MultimodalModel<double> m(tiny_cfg(), 1);
  Graph<double> g(false);
  Matrix<double> l = Matrix<double>::Zero(2, 262);
  l(0, 7) = 60;
  l(1, 9) = 60;
  ShiftedTargets t{{7, 9}, {1, 1}, 2};
  EXPECT_LT(g.value(m.loss(g, g.constant(l), t))(0, 0), 1e-20);
}

TEST(Loss, InvariantToMaskedRelabeling) {
  MultimodalModel<float> m(tiny_cfg(), 5);
  Rng rng(5);
  auto sr = test::speech_row<float>(m, rng);
  const auto base = accumulate_batch_gradients(m, {sr.row}, false).loss;
  // Target relabeling at mask=0 positions.
  std::vector<std::size_t> frames = {static_cast<std::size_t>(sr.mel.rows() / 8)};
  auto targets = shift_targets(assembled_layout(sr.row.ids, sr.row.mask, sr.row.slot_positions, frames));
  Graph<float> g(false);
  auto fw = forward_sequence(m, g, sr.row);
  const double l0 = g.value(m.loss(g, fw.logits, targets))(0, 0);
  for (int t = 0; t < 20; ++t) {
    auto perturbed = targets;
    for (std::size_t i = 0; i < perturbed.targets.size(); ++i)
      if (!perturbed.mask[i]) perturbed.targets[i] = static_cast<TokenId>(uniform_index(rng, 262));
    EXPECT_EQ(g.value(m.loss(g, fw.logits, perturbed))(0, 0), l0);
  }
  EXPECT_NEAR(l0, base, 1e-5);
}

TEST(Loss, AllUserConversationRaises) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  const Tokenizer tok;
  Conversation c{{user_turn({ContentSegment::make_text("a")})}};
  const auto rc = render_chat(c, tok);
  SequenceInput<float> in{rc.ids, build_loss_mask(rc), {}, {}};
  EXPECT_THROW(accumulate_batch_gradients(m, {in}), EmptyLossMask);
}

TEST(Lora, TargetsAttentionAndFeedForwardOnly) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  const auto names = m.lora_target_names();
  EXPECT_EQ(names.size(), 2u * 7u);
  for (const auto& n : names) {
    EXPECT_EQ(n.rfind("lm.layers.", 0), 0u) << n;
    EXPECT_TRUE(m.params().find(n + ".lora_a") && m.params().find(n + ".lora_b")) << n;
    EXPECT_TRUE(m.params().at(n + ".lora_b").value.isZero());
  }
  EXPECT_FALSE(m.params().find("lm.embed.lora_a"));
  EXPECT_FALSE(m.params().find("lm.head.lora_a"));
}

TEST(Lora, TrainableCountClosedForm) {
  for (const auto& cfg : {ModelConfig::tiny(), ModelConfig{}}) {
    MultimodalModel<float> m(cfg, 1);
    std::size_t enc = 0, adp = 0;
    for (auto* p : m.params().all()) {
      if (p->name.rfind("encoder.", 0) == 0) enc += static_cast<std::size_t>(p->size());
      if (p->name.rfind("adapter.", 0) == 0) adp += static_cast<std::size_t>(p->size());
    }
    const std::size_t r = static_cast<std::size_t>(cfg.lora.rank), w = static_cast<std::size_t>(cfg.lm.width),
                      f = static_cast<std::size_t>(cfg.lm.ff_hidden), layers = static_cast<std::size_t>(cfg.lm.layers);
    // q,k,v,o: r(w+w) each; gate, up: r(w+f); down: r(f+w).
    const std::size_t lora = layers * (4 * r * 2 * w + 3 * r * (w + f));
    EXPECT_EQ(m.trainable_count(), enc + adp + lora);
  }
}

TEST(Lora, BaseLmNeverTrainable) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  for (auto* p : m.trainable_parameters()) {
    const bool ok = p->name.rfind("encoder.", 0) == 0 || p->name.rfind("adapter.", 0) == 0 ||
                    p->name.find(".lora_") != std::string::npos;
    EXPECT_TRUE(ok) << p->name;
  }
  EXPECT_FALSE(m.params().at("lm.embed").trainable);
  EXPECT_FALSE(m.params().at("lm.layers.0.attn.q.weight").trainable);
}

TEST(Merge, ZeroBLeavesWeightsUnchangedAndIsIdempotent) {
  MultimodalModel<float> m(tiny_cfg(), 1);
  auto base = m.params().at("lm.layers.0.ffn.up.weight").value;
  m.merge_lora();
  EXPECT_FALSE(m.has_lora());
  EXPECT_EQ(m.params().at("lm.layers.0.ffn.up.weight").value, base);
  EXPECT_FALSE(m.params().find("lm.layers.0.ffn.up.lora_a"));
  const auto n = m.params().size();
  m.merge_lora();
  EXPECT_EQ(m.params().size(), n);
}

TEST(Merge, FormulaAndLogitEquivalence) {
  MultimodalModel<float> m(tiny_cfg(), 2);
  Rng rng(2);
  test::randomize_lora_b(m, rng, 0.05);
  const auto& w = m.params().at("lm.layers.1.attn.v.weight").value;
  const auto& a = m.params().at("lm.layers.1.attn.v.lora_a").value;
  const auto& b = m.params().at("lm.layers.1.attn.v.lora_b").value;
  const Matrix<float> expect = w + 2.0f * (b * a);  // alpha / r = 8 / 4
  auto [merged, check] = merge_with_check(m, 7);
  EXPECT_TRUE(merged->params().at("lm.layers.1.attn.v.weight").value.isApprox(expect, 1e-6f));
  EXPECT_TRUE(check.passed);
  EXPECT_LT(check.max_abs_diff, 1e-5);
  EXPECT_TRUE(m.has_lora());
  EXPECT_THROW(merge_with_check(*merged, 7), UsageError);
}

TEST(GradCheck, TinyDoubleModel) {
  MultimodalModel<double> m(tiny_cfg(), 11);
  Rng rng(11);
  test::randomize_lora_b(m, rng);
  auto a = test::speech_row<double>(m, rng, 41);
  auto b = test::speech_row<double>(m, rng, 25, "Why?", "Because.");
  const auto res = test::gradient_check(m, {a.row, b.row}, 30, 5);
  EXPECT_EQ(res.failed, 0u) << "worst " << res.worst_rel << " at " << res.worst_name;
}

TEST(Optimizer, Schedule) {
  OptimizerConfig c;
  EXPECT_LT(learning_rate(c, 0), learning_rate(c, 2500));
  EXPECT_DOUBLE_EQ(learning_rate(c, 2499), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate(c, 2500), 1e-4);
  EXPECT_NEAR(learning_rate(c, 100000), 0.0, 1e-18);
  const auto mid = 2500 + (100000 - 2500) / 2;
  EXPECT_NEAR(learning_rate(c, mid), 0.5e-4, 1e-12);
  for (std::int64_t s = 2500; s < 100000; s += 977) EXPECT_GE(learning_rate(c, s), learning_rate(c, s + 977));
  c.total_steps = 10;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Optimizer, ClipAndFrozenGuard) {
  OptimizerConfig c;
  c.grad_clip = 1.0;
  Adam<double> adam(c);
  Parameter<double> p{"x", Matrix<double>::Zero(1, 2), Matrix<double>(1, 2), true};
  p.grad << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(adam.clip({&p}), 5.0);
  EXPECT_NEAR(p.grad.norm(), 1.0, 1e-12);
  adam.step({&p}, 0.1);
  // First Adam step moves each coordinate by ~lr.
  EXPECT_NEAR(p.value(0, 0), -0.1, 1e-6);
  Parameter<double> frozen{"f", Matrix<double>::Zero(1, 1), Matrix<double>::Zero(1, 1), false};
  EXPECT_THROW(adam.step({&frozen}, 0.1), InvalidArgument);
}

TEST(Checkpoint, RoundTripBitwise) {
  TempDir dir;
  MultimodalModel<float> m(tiny_cfg(), 9);
  Rng rng(9);
  test::randomize_lora_b(m, rng);
  save_checkpoint(dir / "c.vtbc", m, {12, "state", {{"k", 1}}});
  auto ck = load_checkpoint(dir / "c.vtbc");
  EXPECT_EQ(ck.state.step, 12);
  EXPECT_EQ(ck.state.sampler_rng, "state");
  EXPECT_EQ(ck.state.meta.at("k"), 1);
  EXPECT_TRUE(ck.model->has_lora());
  for (auto* p : m.params().all()) {
    const auto& q = ck.model->params().at(p->name).value;
    ASSERT_EQ(std::memcmp(q.data(), p->value.data(), sizeof(float) * static_cast<std::size_t>(q.size())), 0) << p->name;
  }
  auto sr = test::speech_row<float>(m, rng);
  Graph<float> g1(false), g2(false);
  const auto a = g1.value(forward_sequence(m, g1, sr.row).logits);
  const auto b = g2.value(forward_sequence(*ck.model, g2, sr.row).logits);
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())), 0);
  const auto bytes = test::read_file(dir / "c.vtbc");
  EXPECT_EQ(bytes.substr(0, 4), "VTBC");
}

TEST(Checkpoint, RejectsGarbage) {
  TempDir dir;
  test::write_file(dir / "bad.vtbc", "NOPE....");
  EXPECT_THROW(load_checkpoint(dir / "bad.vtbc"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.vtbc"), IoError);
}

TEST(Decode, DeterministicAndBudget) {
  MultimodalModel<float> m(tiny_cfg(), 6);
  Rng rng(6);
  const auto prefix = test::random_matrix<float>(rng, 5, 16);
  EXPECT_TRUE(greedy_decode(m, prefix, 0, 260).empty());
  const auto a = greedy_decode(m, prefix, 8, -1);
  EXPECT_EQ(a.size(), 8u);
  EXPECT_EQ(a, greedy_decode(m, prefix, 8, -1));
  // Each emitted id is the argmax of the re-run forward pass.
  Matrix<float> x = prefix;
  for (TokenId id : a) {
    Eigen::Index best;
    logits_of(m, x).row(x.rows() - 1).maxCoeff(&best);
    ASSERT_EQ(best, id);
    Graph<float> g(false);
    const TokenSeq one = {id};
    x.conservativeResize(x.rows() + 1, Eigen::NoChange);
    x.row(x.rows() - 1) = g.value(m.embed_text(g, one)).row(0);
  }
}

TEST(Decode, StopTokenIsNotEmitted) {
  MultimodalModel<float> m(tiny_cfg(), 6);
  Rng rng(7);
  const auto prefix = test::random_matrix<float>(rng, 4, 16);
  const auto free = greedy_decode(m, prefix, 6, -1);
  ASSERT_EQ(free.size(), 6u);
  EXPECT_TRUE(greedy_decode(m, prefix, 6, free[0]).empty());
  const auto cut = std::find(free.begin(), free.end(), free[3]) - free.begin();
  EXPECT_EQ(greedy_decode(m, prefix, 6, free[3]), TokenSeq(free.begin(), free.begin() + cut));
}

TEST(Decode, ReplyForTextPrompt) {
  MultimodalModel<float> m(tiny_cfg(), 6);
  const Tokenizer tok;
  Conversation c{{user_turn({ContentSegment::make_text("hi")})}};
  MelStore<float> mels(m, ".");
  const auto ids = generate_reply_ids(m, tok, c, mels.resolver(), 5);
  EXPECT_LE(ids.size(), 5u);
  for (auto id : ids) EXPECT_NE(id, tok.end_of_turn_id());
}
