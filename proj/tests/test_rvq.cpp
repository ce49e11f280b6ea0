#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "semtok/binary_io.hpp"
#include "semtok/rvq.hpp"
#include "test_util.hpp"

namespace semtok {
namespace {

std::vector<Codebook> zero_tail_codebooks(int n_q, int c, int dim, const std::vector<float>& v, int slot) {
  std::vector<Codebook> cbs;
  for (int d = 1; d <= n_q; ++d) {
    Codebook cb(d, c, dim);
    for (int i = 1; i < c; ++i)
      for (int k = 0; k < dim; ++k) cb.row(i)[k] = static_cast<float>(i + d + k);
    if (d == 1) std::copy(v.begin(), v.end(), cb.row(slot).begin());
    cbs.push_back(std::move(cb));
  }
  return cbs;
}

std::vector<Codebook> random_codebooks(int n_q, int c, int dim, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Codebook> cbs;
  for (int d = 1; d <= n_q; ++d) {
    std::vector<float> data(static_cast<std::size_t>(c) * dim);
    for (auto& x : data) x = static_cast<float>(rng.normal() / d);
    cbs.emplace_back(d, c, dim, std::move(data));
  }
  return cbs;
}

// Independent re-statement of the residual recursion with an exhaustive search.
std::vector<int> oracle_encode(const std::vector<double>& z, const std::vector<Codebook>& cbs) {
  std::vector<double> r = z;
  std::vector<int> out;
  for (const auto& cb : cbs) {
    int best = -1;
    double best_d = std::numeric_limits<double>::max();
    for (int i = 0; i < cb.size(); ++i) {
      double dist = 0;
      for (int k = 0; k < cb.dim(); ++k) dist += (r[k] - cb.row(i)[k]) * (r[k] - cb.row(i)[k]);
      if (dist < best_d) best_d = dist, best = i;
    }
    out.push_back(best);
    for (int k = 0; k < cb.dim(); ++k) r[k] -= cb.row(best)[k];
  }
  return out;
}

TEST(RvqEncode, ExactFirstStageCodewordLeavesZeroResidual) {
  const std::vector<float> v = {0.5f, -1.25f, 3.0f, 2.0f};
  const auto cbs = zero_tail_codebooks(8, 16, 4, v, 5);
  LatentFeature z{0, v};
  const auto col = rvq_encode(z, cbs);
  EXPECT_EQ(col.tokens, (std::vector<Token>{5, 0, 0, 0, 0, 0, 0, 0}));
  const auto back = rvq_decode(col, cbs, 8);
  EXPECT_EQ(back.values, v);
}

TEST(RvqEncode, ZeroVectorMapsToIndexZero) {
  const auto cbs = zero_tail_codebooks(8, 16, 4, {0, 0, 0, 0}, 0);
  const auto col = rvq_encode(LatentFeature{3, {0, 0, 0, 0}}, cbs);
  EXPECT_EQ(col.frame_index, 3u);
  EXPECT_EQ(col.tokens, std::vector<Token>(8, 0));
}

TEST(RvqEncode, MatchesExhaustiveRecursionOracle) {
  const auto cbs = random_codebooks(3, 4, 2, 11);
  CounterRng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> z = {rng.normal(), rng.normal()};
    LatentFeature f{0, {static_cast<float>(z[0]), static_cast<float>(z[1])}};
    std::vector<double> zf = {f.values[0], f.values[1]};
    const auto col = rvq_encode(f, cbs);
    const auto want = oracle_encode(zf, cbs);
    ASSERT_EQ(col.tokens.size(), 3u);
    for (int d = 0; d < 3; ++d) EXPECT_EQ(col.tokens[d], want[d]) << "trial " << trial;
  }
}

TEST(RvqEncode, TiesGoToLowestIndex) {
  Codebook cb(1, 4, 1, {1.0f, -1.0f, 1.0f, -1.0f});
  std::vector<Codebook> cbs = {cb};
  EXPECT_EQ(rvq_encode(LatentFeature{0, {0.0f}}, cbs).tokens[0], 0);
  EXPECT_EQ(rvq_encode(LatentFeature{0, {-0.5f}}, cbs).tokens[0], 1);
}

TEST(RvqEncode, RejectsDimensionMismatchAndEmptyList) {
  const auto cbs = random_codebooks(2, 4, 3, 1);
  EXPECT_THROW(rvq_encode(LatentFeature{0, {1.0f, 2.0f}}, cbs), std::invalid_argument);
  EXPECT_THROW(rvq_encode(LatentFeature{0, {1.0f}}, std::span<const Codebook>{}), std::invalid_argument);
}

TEST(RvqDecode, DepthLimitRange) {
  const auto cbs = random_codebooks(4, 8, 2, 3);
  TokenColumn col{0, {1, 2, 3, 4}};
  EXPECT_THROW(rvq_decode(col, cbs, 0), std::out_of_range);
  EXPECT_THROW(rvq_decode(col, cbs, 5), std::out_of_range);
  TokenColumn bad{0, {1, 8, 3, 4}};
  EXPECT_THROW(rvq_decode(bad, cbs, 4), std::out_of_range);
}

TEST(RvqDecode, SumsSelectedCodewords) {
  const auto cbs = random_codebooks(4, 8, 3, 5);
  TokenColumn col{0, {7, 0, 3, 5}};
  for (int limit = 1; limit <= 4; ++limit) {
    const auto z = rvq_decode(col, cbs, limit);
    for (int k = 0; k < 3; ++k) {
      double want = 0;
      for (int d = 0; d < limit; ++d) want += cbs[d].row(col.tokens[d])[k];
      EXPECT_NEAR(z.values[k], want, 1e-6);
    }
  }
}

TEST(RvqDecode, ErrorNonIncreasingWithDepthOnTrainedCodec) {
  CodecConfig cfg;
  cfg.codebook_size = 32;
  cfg.feature_dim = 8;
  const auto corpus = synth_features(2000, cfg, 4);
  testing::WarningCapture quiet;
  const auto cbs = train_codebooks(corpus, cfg, 8);
  const auto frames = synth_features(1000, cfg, 77);
  for (const auto& z : frames) {
    const auto col = rvq_encode(z, cbs);
    for (Token t : col.tokens) ASSERT_TRUE(t >= 0 && t < cfg.codebook_size);
    const auto e = residual_energies(z, col, cbs);
    ASSERT_EQ(e.size(), 8u);
    for (std::size_t d = 1; d < e.size(); ++d) ASSERT_LE(e[d], e[d - 1] + 1e-9) << "frame " << z.frame_index;
  }
}

TEST(RvqTrain, ResidualStagesKeepAZeroCodeword) {
  CodecConfig cfg;
  cfg.codebook_size = 16;
  cfg.feature_dim = 4;
  cfg.n_q = 4;
  const auto corpus = synth_features(500, cfg, 9);
  const auto cbs = train_codebooks(corpus, cfg, 3);
  bool first_has_zero = true;
  for (int j = 0; j < cfg.feature_dim; ++j) first_has_zero = first_has_zero && cbs[0].row(0)[j] == 0.0f;
  EXPECT_FALSE(first_has_zero);
  for (int d = 1; d < cfg.n_q; ++d)
    for (int j = 0; j < cfg.feature_dim; ++j) EXPECT_EQ(cbs[d].row(0)[j], 0.0f) << "depth " << d + 1;
}

TEST(RvqTrain, DistinctCorpusOfCodebookSizeIsReproduced) {
  CodecConfig cfg;
  cfg.n_q = 1;
  cfg.codebook_size = 8;
  cfg.feature_dim = 2;
  std::vector<LatentFeature> corpus;
  for (int i = 0; i < 8; ++i) corpus.push_back({static_cast<std::uint32_t>(i), {float(i * 3), float(i % 3)}});
  TrainReport rep;
  const auto cbs = train_codebooks(corpus, cfg, 1, {}, &rep);
  std::set<std::pair<float, float>> want, got;
  for (const auto& z : corpus) want.insert({z.values[0], z.values[1]});
  for (int i = 0; i < 8; ++i) got.insert({cbs[0].row(i)[0], cbs[0].row(i)[1]});
  EXPECT_EQ(got, want);
  EXPECT_EQ(rep.residual_energy.at(0), 0.0);
  EXPECT_FALSE(rep.sampled_with_replacement);
}

TEST(RvqTrain, SecondStageLowersResidualEnergy) {
  CodecConfig cfg;
  cfg.n_q = 2;
  cfg.codebook_size = 16;
  cfg.feature_dim = 4;
  CounterRng rng(5);
  std::vector<LatentFeature> corpus(500);
  for (auto& z : corpus)
    for (int k = 0; k < 4; ++k) z.values.push_back(static_cast<float>(rng.normal()));
  TrainReport rep;
  train_codebooks(corpus, cfg, 2, {}, &rep);
  ASSERT_EQ(rep.residual_energy.size(), 2u);
  EXPECT_LT(rep.residual_energy[1], rep.residual_energy[0]);
}

TEST(RvqTrain, DeterministicGivenSeed) {
  CodecConfig cfg;
  cfg.n_q = 3;
  cfg.codebook_size = 16;
  cfg.feature_dim = 4;
  const auto corpus = synth_features(300, cfg, 2);
  const auto a = train_codebooks(corpus, cfg, 42);
  const auto b = train_codebooks(corpus, cfg, 42);
  EXPECT_EQ(serialize_codebooks(cfg, a), serialize_codebooks(cfg, b));
  for (const auto& cb : a)
    for (float v : cb.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(RvqTrain, SmallCorpusSamplesWithReplacementAndWarns) {
  CodecConfig cfg;
  cfg.n_q = 2;
  cfg.codebook_size = 16;
  cfg.feature_dim = 2;
  const auto corpus = synth_features(5, cfg, 2);
  testing::WarningCapture cap;
  TrainReport rep;
  const auto cbs = train_codebooks(corpus, cfg, 3, {}, &rep);
  EXPECT_TRUE(rep.sampled_with_replacement);
  ASSERT_FALSE(cap.messages.empty());
  EXPECT_NE(cap.messages[0].find("smaller than codebook size"), std::string::npos);
  EXPECT_EQ(cbs.size(), 2u);
  EXPECT_THROW(train_codebooks(std::span<const LatentFeature>{}, cfg, 3), std::invalid_argument);
}

TEST(SynthFeatures, ShapeDeterminismAndDutyCycle) {
  CodecConfig cfg;
  const auto one = synth_features(1, cfg, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].values.size(), 16u);
  const auto a = synth_features(10000, cfg, 9);
  const auto b = synth_features(10000, cfg, 9);
  EXPECT_EQ(serialize_features(a), serialize_features(b));
  // Silence frames carry gain 0.05, so their energy sits far below any voiced frame.
  std::size_t low = 0;
  for (const auto& z : a) {
    double e = 0;
    for (float v : z.values) e += double(v) * v;
    low += e / z.values.size() < 0.05;
  }
  const double frac = double(low) / a.size();
  EXPECT_GE(frac, 0.45);
  EXPECT_LE(frac, 0.55);
}

TEST(CodebookFormat, GoldenHeaderAndRoundTrip) {
  CodecConfig cfg;
  cfg.n_q = 1;
  cfg.codebook_size = 2;
  cfg.feature_dim = 1;
  std::vector<Codebook> cbs = {Codebook(1, 2, 1, {1.0f, -2.0f})};
  const auto bytes = serialize_codebooks(cfg, cbs);
  const std::vector<std::uint8_t> golden = {
      'R', 'V', 'Q', '1',                          //
      1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0,          // n_q, C, D
      1, 0, 0, 0, 0xD4, 0x30, 0, 0,                // bits_per_token, frame rate in mHz (12500)
      0, 0, 0x80, 0x3F, 0, 0, 0, 0xC0};            // 1.0f, -2.0f
  EXPECT_EQ(bytes, golden);
  CodecConfig back;
  const auto parsed = parse_codebooks(bytes, &back);
  EXPECT_EQ(back, cfg);
  EXPECT_EQ(parsed, cbs);
}

TEST(CodebookFormat, RejectsCorruptFiles) {
  CodecConfig cfg;
  cfg.n_q = 1;
  cfg.codebook_size = 2;
  cfg.feature_dim = 1;
  auto bytes = serialize_codebooks(cfg, std::vector<Codebook>{Codebook(1, 2, 1)});
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_codebooks(bad_magic, nullptr), FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(parse_codebooks(truncated, nullptr), FormatError);
  auto bad_bits = bytes;
  bad_bits[16] = 7;
  EXPECT_THROW(parse_codebooks(bad_bits, nullptr), FormatError);
}

TEST(FeatureFormat, GoldenBytes) {
  const std::vector<LatentFeature> f = {{0, {1.0f}}, {1, {-2.0f}}};
  const std::vector<std::uint8_t> golden = {'F', 'T', 'R', '1', 2, 0, 0, 0, 1, 0, 0, 0,
                                            0, 0, 0x80, 0x3F, 0, 0, 0, 0xC0};
  EXPECT_EQ(serialize_features(f), golden);
  const auto back = parse_features(golden);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].values, std::vector<float>{-2.0f});
}

TEST(FeatureFormat, RoundTrip) {
  CodecConfig cfg;
  cfg.feature_dim = 3;
  const auto f = synth_features(7, cfg, 1);
  const auto bytes = serialize_features(f);
  EXPECT_EQ(bytes.size(), 12u + 7 * 3 * 4);
  const auto back = parse_features(bytes);
  ASSERT_EQ(back.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(back[i].values, f[i].values);
  auto bad = bytes;
  bad.resize(bad.size() - 4);
  EXPECT_THROW(parse_features(bad), FormatError);
}

}  // namespace
}  // namespace semtok
