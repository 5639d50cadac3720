#include <gtest/gtest.h>

#include <cmath>

#include "stemvq/checkpoint.hpp"
#include "stemvq/separation.hpp"
#include "test_support.hpp"

using namespace stemvq;

namespace {

struct Pairs {
  std::vector<Checkpoint> se, me;
};

Pairs random_pairs(const ModelConfig& cfg, std::uint64_t seed = 1) {
  Pairs p;
  for (std::size_t s = 0; s < kStemCount; ++s) {
    const std::string stem(kStemNames[s]);
    p.se.push_back(make_checkpoint(build_vqvae<float>(cfg, seed + s), stem, "SE", 10));
    p.me.push_back(make_checkpoint(build_encoder<float>(cfg, seed + 100 + s), stem, 5));
  }
  return p;
}

StereoTrack noise_track(Rng& rng, std::size_t n, std::size_t rate = 8000) {
  StereoTrack t;
  t.sample_rate = rate;
  for (std::size_t i = 0; i < n; ++i) {
    t.left.push_back(static_cast<float>(0.3 * rng.normal()));
    t.right.push_back(static_cast<float>(0.3 * std::sin(0.05 * static_cast<double>(i))));
  }
  return t;
}

bool finite(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

class SeparatorTest : public ::testing::Test {
 protected:
  ModelConfig cfg = test_support::tiny_config();
  Pairs pairs = random_pairs(cfg);
};

TEST_F(SeparatorTest, FourValidPairsAssemble) {
  auto sep = assemble_separator(pairs.se, pairs.me);
  EXPECT_EQ(sep.chunk_len, cfg.chunk_len);
  for (std::size_t s = 0; s < kStemCount; ++s) EXPECT_EQ(sep.stems[s].stem, kStemNames[s]);
}

TEST_F(SeparatorTest, OrderOfCheckpointsDoesNotMatter) {
  auto se = pairs.se;
  std::reverse(se.begin(), se.end());
  auto a = assemble_separator(pairs.se, pairs.me), b = assemble_separator(se, pairs.me);
  Rng rng(3);
  auto x = noise_track(rng, cfg.chunk_len).left;
  EXPECT_EQ(separate_chunk(a, "vocals", x), separate_chunk(b, "vocals", x));
}

TEST_F(SeparatorTest, LatentDimMismatchNamesStem) {
  auto other = cfg;
  other.latent_dim = 4;
  pairs.me[2] = make_checkpoint(build_encoder<float>(other, 9), "vocals", 1);
  try {
    assemble_separator(pairs.se, pairs.me);
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("vocals"), std::string::npos);
  }
}

TEST_F(SeparatorTest, DuplicateStemRejected) {
  pairs.se[3] = pairs.se[0];
  EXPECT_THROW(assemble_separator(pairs.se, pairs.me), PreconditionError);
}

TEST_F(SeparatorTest, MissingStemNamed) {
  pairs.me.pop_back();
  try {
    assemble_separator(pairs.se, pairs.me);
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("other"), std::string::npos);
  }
}

TEST_F(SeparatorTest, OverlapMustBeBelowChunk) {
  EXPECT_THROW(assemble_separator(pairs.se, pairs.me, {cfg.chunk_len}), PreconditionError);
  EXPECT_NO_THROW(assemble_separator(pairs.se, pairs.me, {cfg.chunk_len - 8}));
}

TEST_F(SeparatorTest, LoadFromDirectoryReportsFirstMissing) {
  test_support::TempDir dir("sep");
  try {
    load_separator(dir.path());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("drums"), std::string::npos);
  }
  for (std::size_t s = 0; s < kStemCount; ++s) {
    save_checkpoint(pairs.se[s], dir / (std::string(kStemNames[s]) + ".se.svq"));
    save_checkpoint(pairs.me[s], dir / (std::string(kStemNames[s]) + ".me.svq"));
  }
  auto sep = load_separator(dir.path());
  Rng rng(4);
  auto x = noise_track(rng, cfg.chunk_len).left;
  EXPECT_EQ(separate_chunk(sep, "bass", x), separate_chunk(assemble_separator(pairs.se, pairs.me), "bass", x));
}

TEST_F(SeparatorTest, ChunkIsDeterministicAndFinite) {
  auto sep = assemble_separator(pairs.se, pairs.me);
  Rng rng(5);
  auto x = noise_track(rng, cfg.chunk_len).left;
  auto a = separate_chunk(sep, "drums", x);
  EXPECT_EQ(a.size(), cfg.chunk_len);
  EXPECT_TRUE(finite(a));
  EXPECT_EQ(a, separate_chunk(sep, "drums", x));
  auto z = separate_chunk(sep, "drums", std::vector<float>(cfg.chunk_len, 0.0f));
  EXPECT_TRUE(finite(z));
  EXPECT_THROW(separate_chunk(sep, "drums", std::vector<float>(cfg.chunk_len + 1, 0.1f)), PreconditionError);
}

TEST_F(SeparatorTest, ChunkRunsMixtureEncoderThroughStemDecoder) {
  auto sep = assemble_separator(pairs.se, pairs.me);
  Rng rng(6);
  auto x = noise_track(rng, cfg.chunk_len).left;
  auto se_model = restore_vqvae(pairs.se[1], false);
  auto me = restore_encoder(pairs.me[1], false);
  NoGradGuard guard;
  auto q = quantize(se_model.codebook, encode(me, audio_tensor<float>(x)));
  auto y = decode(se_model.decoder, q.quantized);
  EXPECT_EQ(separate_chunk(sep, "bass", x), std::vector<float>(y.data().begin(), y.data().end()));
}

TEST_F(SeparatorTest, LengthPreservedForRandomLengths) {
  Rng rng(7);
  for (std::size_t overlap : {std::size_t{0}, std::size_t{64}}) {
    auto sep = assemble_separator(pairs.se, pairs.me, {overlap});
    for (int i = 0; i < 100; ++i) {
      const std::size_t n = 1 + rng.below(5 * cfg.chunk_len);
      auto signal = noise_track(rng, n).left;
      auto y = separate_channel(sep, kStemNames[i % 4], signal);
      ASSERT_EQ(y.size(), n);
      ASSERT_TRUE(finite(y));
    }
  }
}

TEST_F(SeparatorTest, ShortInputPaddedOnceAndTrimmed) {
  auto sep = assemble_separator(pairs.se, pairs.me);
  Rng rng(8);
  auto x = noise_track(rng, 100).left;
  std::vector<float> padded(cfg.chunk_len, 0.0f);
  std::copy(x.begin(), x.end(), padded.begin());
  auto full = separate_chunk(sep, "other", padded);
  auto y = separate_channel(sep, "other", x);
  EXPECT_EQ(y, std::vector<float>(full.begin(), full.begin() + 100));
}

TEST_F(SeparatorTest, TwoChunksConcatenateWithoutOverlap) {
  auto sep = assemble_separator(pairs.se, pairs.me);
  Rng rng(9);
  auto x = noise_track(rng, 2 * cfg.chunk_len).left;
  auto first = separate_chunk(sep, "vocals", std::span<const float>(x).subspan(0, cfg.chunk_len));
  auto second = separate_chunk(sep, "vocals", std::span<const float>(x).subspan(cfg.chunk_len, cfg.chunk_len));
  first.insert(first.end(), second.begin(), second.end());
  EXPECT_EQ(separate_channel(sep, "vocals", x), first);
}

TEST_F(SeparatorTest, ZeroInputGivesZeroRegardlessOfOverlap) {
  StereoTrack zero = StereoTrack::silent(3 * cfg.chunk_len + 17, 8000);
  auto a = separate_track(assemble_separator(pairs.se, pairs.me, {0}), zero);
  auto b = separate_track(assemble_separator(pairs.se, pairs.me, {5 * cfg.hop_length()}), zero);
  for (std::size_t s = 0; s < kStemCount; ++s) {
    EXPECT_EQ(a.stems[s].left, b.stems[s].left);
    EXPECT_TRUE(std::all_of(a.stems[s].left.begin(), a.stems[s].left.end(), [](float v) { return v == 0.0f; }));
  }
}

TEST_F(SeparatorTest, ChannelSwapSwapsOutputs) {
  auto sep = assemble_separator(pairs.se, pairs.me, {32});
  Rng rng(10);
  auto mix = noise_track(rng, 700);
  auto swapped = mix;
  std::swap(swapped.left, swapped.right);
  auto a = separate_track(sep, mix), b = separate_track(sep, swapped);
  for (std::size_t s = 0; s < kStemCount; ++s) {
    EXPECT_EQ(a.stems[s].left, b.stems[s].right);
    EXPECT_EQ(a.stems[s].right, b.stems[s].left);
    EXPECT_EQ(a.stems[s].length(), mix.length());
    EXPECT_EQ(a.stems[s].sample_rate, mix.sample_rate);
  }
}

TEST(FullScaleSeparation, OneChunkPerChannel) {
  const auto cfg = full_scale_config();
  Pairs pairs;
  for (std::size_t s = 0; s < kStemCount; ++s) {
    const std::string stem(kStemNames[s]);
    pairs.se.push_back(make_checkpoint(build_vqvae<float>(cfg, s), stem, "SE", 0));
    pairs.me.push_back(make_checkpoint(build_encoder<float>(cfg, 10 + s), stem, 0));
  }
  auto sep = assemble_separator(pairs.se, pairs.me);
  EXPECT_EQ(sep.chunk_len, 393216u);
  Rng rng(11);
  auto x = noise_track(rng, 393216, 44100).left;
  // A single chunk: the channel result is exactly the chunk result.
  EXPECT_EQ(separate_channel(sep, "vocals", x), separate_chunk(sep, "vocals", x));
}
