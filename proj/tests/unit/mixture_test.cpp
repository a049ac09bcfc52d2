#include <gtest/gtest.h>

#include <numeric>

#include "../support/test_support.hpp"
#include "vtb/datagen/samples.hpp"
#include "vtb/mixture/mixture.hpp"

using namespace vtb;
using test::TempDir;
namespace fs = std::filesystem;

namespace {

// Text-only sources with `n` entries each; speech sources point at one shared clip.
MixtureSampler make_sampler(const MixtureSpec& spec, const fs::path& dir, std::uint64_t seed, std::size_t n = 5) {
  write_wav(dir / "clip.wav", Waveform(1600, 0.1f));
  std::vector<MixtureSampler::Source> sources;
  for (const auto& s : spec.sources) {
    MixtureSampler::Source src{s, dir / (s.name + ".jsonl"), {}};
    for (std::size_t i = 0; i < n; ++i) {
      const auto id = s.name + "-" + std::to_string(i);
      if (s.modality == Modality::text_only) {
        ManifestEntry e;
        e.id = id;
        e.source = s.name;
        e.conversation = test::two_turn("q" + std::to_string(i), std::string(i + 1, 'a'));
        src.entries.push_back(e);
      } else {
        src.entries.push_back(build_sqa_sample(id, {"clip.wav", 1600, {}}, {"Q" + std::to_string(i) + "?", "A."}));
      }
    }
    sources.push_back(std::move(src));
  }
  return MixtureSampler(std::move(sources), Tokenizer(), seed);
}

RenderedSample rendered(std::size_t len, std::size_t ones) {
  RenderedSample s;
  s.chat.ids.assign(len, 'x');
  s.mask.assign(len, 0);
  for (std::size_t i = 0; i < ones; ++i) s.mask[len - 1 - i] = 1;
  return s;
}

}  // namespace

TEST(Weights, ReferenceRatiosNormalized) {
  const auto p = normalize_weights(reference_mixture());
  const std::vector<double> raw = {0.1500, 0.7556, 0.0378, 0.0189, 0.0378};
  ASSERT_EQ(p.size(), raw.size());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], raw[i] / 1.0001, 1e-15);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
}

TEST(Weights, SingleAndProportional) {
  MixtureSpec one{{{"a", "a", 7.0}}};
  EXPECT_EQ(normalize_weights(one), std::vector<double>{1.0});
  MixtureSpec three{{{"a", "a", 1.0}, {"b", "b", 1.0}, {"c", "c", 2.0}}};
  EXPECT_EQ(normalize_weights(three), (std::vector<double>{0.25, 0.25, 0.5}));
  MixtureSpec zero{{{"a", "a", 0.0}}};
  EXPECT_THROW(normalize_weights(zero), ConfigError);
  MixtureSpec neg{{{"a", "a", -1.0}, {"b", "b", 2.0}}};
  EXPECT_THROW(normalize_weights(neg), ConfigError);
}

TEST(SampleSource, ZeroWeightNeverDrawn) {
  const std::vector<double> p = {0.5, 0.0, 0.5};
  Rng rng(1);
  for (int i = 0; i < 1000000; ++i) ASSERT_NE(sample_source(p, rng), 1u);
}

TEST(SampleSource, SingleSourceAlwaysDrawn) {
  const std::vector<double> p = {1.0};
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(sample_source(p, rng), 0u);
}

TEST(SampleSource, ReferenceFrequencies) {
  const auto p = normalize_weights(reference_mixture());
  Rng rng(3);
  std::vector<int> counts(p.size(), 0);
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) ++counts[sample_source(p, rng)];
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(static_cast<double>(counts[i]) / kDraws, p[i], 0.005);
}

TEST(Batches, RowsByModalityAndHomogeneity) {
  TempDir dir;
  auto spec = reference_mixture();
  auto sampler = make_sampler(spec, dir.path(), 5);
  for (int i = 0; i < 300; ++i) {
    const auto b = sampler.next_batch();
    const auto& src = *std::find_if(spec.sources.begin(), spec.sources.end(), [&](auto& s) { return s.name == b.source; });
    ASSERT_EQ(b.rows(), src.modality == Modality::text_only ? 1u : 4u);
    for (const auto& id : b.sample_ids) ASSERT_EQ(id.rfind(b.source + "-", 0), 0u);
    for (std::size_t r = 0; r < b.rows(); ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      std::size_t slots = 0;
      for (Eigen::Index c = 0; c < b.ids.cols(); ++c) slots += b.ids(ri, c) == Tokenizer().speech_id();
      ASSERT_EQ(slots, b.speech[r].size());
      for (const auto& sp : b.speech[r]) ASSERT_TRUE(sp.wave && !sp.wave->empty());
    }
  }
}

TEST(Batches, ReplayDeterminism) {
  TempDir dir;
  auto a = make_sampler(reference_mixture(), dir.path(), 17);
  auto b = make_sampler(reference_mixture(), dir.path(), 17);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_batch(), y = b.next_batch();
    ASSERT_EQ(x.source, y.source);
    ASSERT_EQ(x.sample_ids, y.sample_ids);
    ASSERT_EQ(x.ids, y.ids);
  }
}

TEST(Batches, RngStateRestores) {
  TempDir dir;
  auto a = make_sampler(reference_mixture(), dir.path(), 21);
  for (int i = 0; i < 10; ++i) a.next_batch();
  const auto state = a.rng_state();
  const auto expect = a.next_batch();
  auto b = make_sampler(reference_mixture(), dir.path(), 999);
  b.set_rng_state(state);
  EXPECT_EQ(b.next_batch().sample_ids, expect.sample_ids);
}

TEST(Batches, EmptyManifestErrors) {
  MixtureSpec spec{{{"t", "t.jsonl", 1.0, Modality::text_only, 1}}};
  MixtureSampler s({{spec.sources[0], "t.jsonl", {}}}, Tokenizer(), 1);
  EXPECT_THROW(s.next_batch(), InvalidArgument);
}

TEST(Collate, PadsToLongest) {
  const std::vector<RenderedSample> rs = {rendered(3, 1), rendered(5, 2)};
  const auto b = collate(rs, 256);
  ASSERT_EQ(b.ids.cols(), 5);
  EXPECT_EQ(b.ids(0, 3), 256);
  EXPECT_EQ(b.ids(0, 4), 256);
  EXPECT_EQ(b.attention_mask(0, 3), 0);
  EXPECT_EQ(b.attention_mask(0, 2), 1);
  EXPECT_EQ(b.row_length(0), 3u);
  EXPECT_EQ(b.row_length(1), 5u);
  EXPECT_EQ(b.loss_mask.cast<int>().sum(), 3);
}

TEST(Collate, SingleSampleNoPadding) {
  const std::vector<RenderedSample> rs = {rendered(4, 2)};
  const auto b = collate(rs, 256);
  EXPECT_EQ(b.ids.cols(), 4);
  EXPECT_EQ(b.attention_mask.cast<int>().sum(), 4);
  EXPECT_THROW(collate(std::span<const RenderedSample>{}, 256), InvalidArgument);
}

TEST(Collate, MaskConservedRandomized) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    std::vector<RenderedSample> rs;
    int ones = 0;
    for (std::size_t k = 0, n = 1 + uniform_index(rng, 6); k < n; ++k) {
      const auto len = 1 + uniform_index(rng, 20);
      const auto o = uniform_index(rng, len + 1);
      ones += static_cast<int>(o);
      rs.push_back(rendered(len, o));
    }
    const auto b = collate(rs, 256);
    ASSERT_EQ(b.loss_mask.cast<int>().sum(), ones);
    ASSERT_EQ(b.loss_mask.cast<int>().cwiseProduct(b.attention_mask.cast<int>()).sum(), ones);
  }
}
