#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "semtok/binary_io.hpp"
#include "semtok/channel.hpp"
#include "semtok/concealment.hpp"
#include "semtok/token_source.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace semtok {
namespace {

using testing::markov_source;
using testing::OracleCounts;
using testing::oracle_steps;
using testing::random_columns;

ModelInputs to_inputs(std::uint32_t step, const std::vector<Token>& v) { return ModelInputs{step, v}; }

TEST(ModelInputs, DelayLayoutExample) {
  const std::vector<TokenColumn> cols = {{0, {10, 11, 12}}, {1, {20, 21, 22}}};
  const auto v = build_model_inputs(cols, 3);
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[0].streams, (std::vector<Token>{kPad, 10, 0, 0}));
  EXPECT_EQ(v[1].streams, (std::vector<Token>{kPad, 20, 11, 12}));
  EXPECT_EQ(v[2].streams, (std::vector<Token>{kPad, kPad, 21, 22}));
  EXPECT_FALSE(is_token_position(v[0], 0));
  EXPECT_TRUE(is_token_position(v[0], 1));
  EXPECT_FALSE(is_token_position(v[0], 2));
  EXPECT_TRUE(is_token_position(v[1], 3));
  EXPECT_FALSE(is_token_position(v[2], 1));
  EXPECT_TRUE(is_token_position(v[2], 2));
}

TEST(ModelInputs, UndoDelayRoundTrip) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto cols = random_columns(1 + s % 9, 1 + s % 8, 64, s);
    const int n_q = static_cast<int>(cols[0].tokens.size());
    EXPECT_EQ(undo_delay(build_model_inputs(cols, n_q), n_q), cols);
  }
}

TEST(ModelInputs, RejectsBadColumns) {
  auto cols = random_columns(3, 4, 8, 1);
  EXPECT_THROW(build_model_inputs(cols, 3), std::invalid_argument);
  cols[2].frame_index = 7;
  EXPECT_THROW(build_model_inputs(cols, 4), std::invalid_argument);
}

TEST(Predictors, DistributionsAreValid) {
  const int n_q = 4, c = 16;
  const auto corpus = random_columns(500, n_q, c, 3);
  CountModel m0(0, 0.1, n_q, c), m2(2, 0.1, n_q, c), m5(5, 0.3, n_q, c);
  m0.train(corpus);
  m2.train(corpus);
  m5.train(corpus);
  const UniformPredictor uni;
  const RepeatLastPredictor rep;
  const std::vector<const Predictor*> preds = {&uni, &rep, &m0, &m2, &m5};
  const auto steps = build_model_inputs(random_columns(40, n_q, c, 4), n_q);
  PredictorContext ctx{n_q, c, {}};
  for (const auto& v : steps) {
    for (int k = 1; k <= n_q; ++k)
      for (const auto* p : preds) {
        const auto dist = p->predict_distribution(ctx, std::span(v.streams).first(k));
        ASSERT_EQ(dist.size(), static_cast<std::size_t>(c));
        for (double x : dist) ASSERT_GE(x, 0.0);
        ASSERT_NEAR(std::accumulate(dist.begin(), dist.end(), 0.0), 1.0, 1e-9) << p->name();
      }
    ctx.history.push_back(v);
  }
}

TEST(CountModel, MatchesBruteForceCountsOnThreeSymbolMarkovSource) {
  const int n_q = 2, c = 3;
  const auto corpus = markov_source(3000, n_q, c, 11);
  for (int order : {0, 1, 2, 3}) {
    CountModel model(order, 0.1, n_q, c);
    model.train(corpus);
    OracleCounts oracle{order, 0.1, c, {}};
    oracle.train(corpus, n_q);

    const auto probe = markov_source(200, n_q, c, 12);
    const auto steps = oracle_steps(probe, n_q);
    PredictorContext ctx{n_q, c, {}};
    for (std::size_t n = 0; n < steps.size(); ++n) {
      const auto* prev = n > 0 ? &steps[n - 1] : nullptr;
      for (int k = 1; k <= n_q; ++k) {
        const auto dist = model.predict_distribution(ctx, std::span(steps[n]).first(k));
        for (Token t = 0; t < c; ++t)
          ASSERT_NEAR(dist[t], oracle.prob(prev, steps[n], k, t), 1e-9)
              << "order " << order << " step " << n << " stream " << k;
      }
      ctx.history.push_back(to_inputs(static_cast<std::uint32_t>(n), steps[n]));
    }
  }
}

TEST(CountModel, OrderZeroIsAContextFreeUnigram) {
  const int n_q = 2, c = 4;
  std::vector<TokenColumn> corpus;
  const std::vector<std::vector<Token>> rows = {{0, 1}, {0, 2}, {3, 2}, {0, 2}};
  for (std::size_t f = 0; f < rows.size(); ++f) corpus.push_back({static_cast<std::uint32_t>(f), rows[f]});
  CountModel m(0, 0.5, n_q, c);
  m.train(corpus);
  PredictorContext ctx{n_q, c, {}};
  const std::vector<Token> any = {kPad, 3, 1};
  const auto d1 = m.predict_distribution(ctx, std::span(any).first(1));
  // Depth 1 saw 0,0,3,0: (3 + .5) / (4 + 2).
  EXPECT_NEAR(d1[0], 3.5 / 6, 1e-15);
  EXPECT_NEAR(d1[3], 1.5 / 6, 1e-15);
  ctx.history.push_back({0, {kPad, 2, 2, 2}});
  const auto d2 = m.predict_distribution(ctx, std::span(any).first(2));
  EXPECT_NEAR(d2[2], 3.5 / 6, 1e-15);
  EXPECT_NEAR(d2[1], 1.5 / 6, 1e-15);
  EXPECT_EQ(d2[0], d2[3]);
}

TEST(CountModel, DeterministicSourceConcentratesMass) {
  const int n_q = 3, c = 64;
  std::vector<TokenColumn> corpus;
  for (std::uint32_t f = 0; f < 20000; ++f)
    corpus.push_back({f, {Token(f % 5), Token((f + 1) % 5 + 10), Token(f % 2 + 40)}});
  CountModel m(1, 0.1, n_q, c);
  m.train(corpus);
  const auto steps = build_model_inputs(corpus, n_q);
  PredictorContext ctx{n_q, c, {}};
  // Step 1 follows the zero delay fill, a context seen only once.
  ctx.history.push_back(steps[0]);
  for (std::size_t n = 1; n + 1 < 50; ++n) {
    ctx.history.push_back(steps[n]);
    for (int k = 1; k <= n_q; ++k) {
      const auto dist = m.predict_distribution(ctx, std::span(steps[n + 1].streams).first(k));
      const auto mode = std::max_element(dist.begin(), dist.end()) - dist.begin();
      EXPECT_EQ(mode, steps[n + 1].streams[k]);
      EXPECT_GE(dist[mode], 0.99);
    }
  }
}

TEST(CountModel, Validation) {
  EXPECT_THROW(CountModel(-1, 0.1, 2, 4), std::invalid_argument);
  EXPECT_THROW(CountModel(1, 0.0, 2, 4), std::invalid_argument);
  EXPECT_THROW(CountModel(1, 0.1, 0, 4), std::invalid_argument);
  CountModel m(1, 0.1, 2, 4);
  EXPECT_THROW(m.train(random_columns(4, 2, 8, 1)), std::invalid_argument);
  EXPECT_THROW(make_predictor("lstm", 1, 0.1, 2, 4), std::invalid_argument);
  EXPECT_EQ(make_predictor("repeat_last", 1, 0.1, 2, 4)->name(), "repeat_last");
}

TEST(CountModelFormat, GoldenHeaderRoundTripAndCorruption) {
  CountModel m(2, 0.25, 3, 8);
  m.train(random_columns(100, 3, 8, 5));
  const auto bytes = m.serialize();
  const std::vector<std::uint8_t> head = {'C', 'N', 'T', '1', 2, 0, 0, 0,  0, 0, 0, 0, 0, 0, 0xD0, 0x3F,
                                          3,   0,   0,   0,   8, 0, 0, 0};
  ASSERT_GT(bytes.size(), head.size() + 8);
  EXPECT_TRUE(std::equal(head.begin(), head.end(), bytes.begin()));
  const auto back = CountModel::parse(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.context_count(), m.context_count());

  const auto path = std::filesystem::temp_directory_path() / "semtok_test_model.cnt";
  m.save(path);
  const auto loaded = CountModel::load(path);
  std::filesystem::remove(path);
  const auto steps = build_model_inputs(random_columns(20, 3, 8, 6), 3);
  PredictorContext ctx{3, 8, {}};
  for (const auto& v : steps) {
    for (int k = 1; k <= 3; ++k)
      EXPECT_EQ(loaded.predict_distribution(ctx, std::span(v.streams).first(k)),
                m.predict_distribution(ctx, std::span(v.streams).first(k)));
    ctx.history.push_back(v);
  }

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(CountModel::parse(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(CountModel::parse(bad), FormatError);
  bad = bytes;
  bad[head.size() + 8 + 8] = 9;  // first triple's token
  EXPECT_THROW(CountModel::parse(bad), FormatError);
}

TEST(TokenCorpusFormat, GoldenBytesAndRoundTrip) {
  const std::vector<TokenColumn> cols = {{0, {1, 2}}, {1, {3, 2047}}};
  const auto bytes = serialize_tokens(cols, 2);
  const std::vector<std::uint8_t> want = {'T', 'O', 'K', '1', 2, 0, 0, 0, 1, 0, 2, 0, 3, 0, 0xFF, 0x07};
  EXPECT_EQ(bytes, want);
  int n_q = 0;
  EXPECT_EQ(parse_tokens(bytes, &n_q), cols);
  EXPECT_EQ(n_q, 2);

  const auto many = random_columns(300, 8, 2048, 9);
  EXPECT_EQ(parse_tokens(serialize_tokens(many, 8)), many);

  auto bad = bytes;
  bad.pop_back();
  EXPECT_THROW(parse_tokens(bad), FormatError);
  EXPECT_THROW(serialize_tokens({{0, {1, kErased}}}, 2), std::invalid_argument);
  EXPECT_THROW(serialize_tokens({{0, {1}}}, 2), std::invalid_argument);
}

TEST(Conceal, NoErasuresPassThrough) {
  const int n_q = 4, c = 32;
  const auto cols = random_columns(200, n_q, c, 21);
  CountModel m(2, 0.1, n_q, c);
  m.train(random_columns(500, n_q, c, 22));
  const UniformPredictor uni;
  const RepeatLastPredictor rep;
  for (const Predictor* p : std::vector<const Predictor*>{&uni, &rep, &m})
    EXPECT_EQ(conceal_stream(*p, cols, n_q, c), cols) << p->name();
}

TEST(Conceal, ReceivedTokensAreNeverAltered) {
  const int n_q = 5, c = 16;
  const auto truth = random_columns(400, n_q, c, 31);
  auto rx = truth;
  const auto loss = uniform_loss(400 * n_q, 0.4, 32);
  for (std::size_t f = 0; f < rx.size(); ++f)
    for (int d = 0; d < n_q; ++d)
      if (loss.lost[f * n_q + d]) rx[f].tokens[d] = kErased;
  CountModel m(3, 0.1, n_q, c);
  m.train(random_columns(2000, n_q, c, 33));
  const auto out = conceal_stream(m, rx, n_q, c);
  ASSERT_EQ(out.size(), rx.size());
  for (std::size_t f = 0; f < rx.size(); ++f) {
    EXPECT_EQ(out[f].frame_index, rx[f].frame_index);
    for (int d = 0; d < n_q; ++d) {
      ASSERT_GE(out[f].tokens[d], 0);
      ASSERT_LT(out[f].tokens[d], c);
      if (rx[f].tokens[d] != kErased) ASSERT_EQ(out[f].tokens[d], rx[f].tokens[d]);
    }
  }
}

TEST(Conceal, RepeatLastCopiesPreviousReconstructedColumn) {
  const int n_q = 4, c = 64;
  auto rx = random_columns(30, n_q, c, 41);
  for (std::size_t f : {0u, 5u, 6u, 7u, 20u, 29u}) std::fill(rx[f].tokens.begin(), rx[f].tokens.end(), kErased);
  const RepeatLastPredictor rep;
  const auto out = conceal_stream(rep, rx, n_q, c);
  EXPECT_EQ(out[0].tokens, std::vector<Token>(n_q, 0));
  for (std::size_t f : {5u, 6u, 7u, 20u, 29u}) EXPECT_EQ(out[f].tokens, out[f - 1].tokens) << f;
  EXPECT_EQ(out[8].tokens, rx[8].tokens);
}

TEST(Conceal, RepeatLastOnConstantStreamIsExact) {
  const int n_q = 3, c = 16;
  std::vector<TokenColumn> truth;
  for (std::uint32_t f = 0; f < 200; ++f) truth.push_back({f, {4, 9, 15}});
  auto rx = truth;
  const auto loss = uniform_loss(200 * n_q, 0.5, 7);
  for (std::size_t f = 1; f < rx.size(); ++f)
    for (int d = 0; d < n_q; ++d)
      if (loss.lost[f * n_q + d]) rx[f].tokens[d] = kErased;
  EXPECT_EQ(conceal_stream(RepeatLastPredictor{}, rx, n_q, c), truth);
}

TEST(Conceal, ErasedDepthThreeMatchesMaximumLikelihoodEnumeration) {
  const int n_q = 4, c = 6;
  const auto corpus = markov_source(5000, n_q, c, 51);
  CountModel m(1, 0.1, n_q, c);
  m.train(corpus);
  OracleCounts oracle{1, 0.1, c, {}};
  oracle.train(corpus, n_q);
  const auto probe = markov_source(100, n_q, c, 52);
  const auto steps = oracle_steps(probe, n_q);
  PredictorContext ctx{n_q, c, {}};
  for (std::size_t n = 0; n + 1 < steps.size(); ++n) {
    ctx.history.push_back(to_inputs(static_cast<std::uint32_t>(n), steps[n]));
    auto rx = steps[n + 1];
    rx[3] = kErased;
    const auto filled = conceal_step(m, ctx, to_inputs(static_cast<std::uint32_t>(n + 1), rx));
    // Likelihood of the whole step for each candidate, lowest index kept on ties.
    Token best = -1;
    double best_l = -1;
    for (Token cand = 0; cand < c; ++cand) {
      auto v = steps[n + 1];
      v[3] = cand;
      double l = 1;
      for (int k = 1; k <= n_q; ++k) l *= oracle.prob(&steps[n], v, k, v[k]);
      if (l > best_l * (1 + 1e-12)) {
        best_l = l;
        best = cand;
      }
    }
    EXPECT_EQ(filled.streams[3], best) << n;
    for (int k = 0; k <= n_q; ++k)
      if (k != 3) EXPECT_EQ(filled.streams[k], steps[n + 1][k]);
  }
}

TEST(Conceal, GreedyEqualsJointArgmaxForOrderZero) {
  const int n_q = 3, c = 4;
  CountModel m(0, 0.1, n_q, c);
  m.train(markov_source(301, n_q, c, 61));
  PredictorContext ctx{n_q, c, {{0, {kPad, 1, 0, 0}}}};
  const auto filled = conceal_step(m, ctx, {1, {kPad, kErased, kErased, kErased}});
  double best_l = -1;
  std::vector<Token> best;
  for (Token a = 0; a < c; ++a)
    for (Token b = 0; b < c; ++b)
      for (Token d = 0; d < c; ++d) {
        const std::vector<Token> v = {kPad, a, b, d};
        double l = 1;
        for (int k = 1; k <= n_q; ++k) l *= m.predict_distribution(ctx, std::span(v).first(k))[v[k]];
        if (l > best_l * (1 + 1e-12)) {
          best_l = l;
          best = v;
        }
      }
  EXPECT_EQ(filled.streams, best);
}

TEST(Conceal, HigherOrderFillsDepthByDepthFromTheFilledPrefix) {
  const int n_q = 4, c = 8;
  CountModel m(3, 0.1, n_q, c);
  m.train(markov_source(2000, n_q, c, 71));
  const auto steps = build_model_inputs(markov_source(60, n_q, c, 72), n_q);
  PredictorContext ctx{n_q, c, {}};
  for (std::size_t n = 0; n + 1 < steps.size(); ++n) {
    ctx.history.push_back(steps[n]);
    auto rx = steps[n + 1];
    for (int k = 1; k <= n_q; ++k)
      if ((n + k) % 2 == 0) rx.streams[k] = kErased;
    const auto filled = conceal_step(m, ctx, rx);
    auto seq = rx.streams;
    for (int k = 1; k <= n_q; ++k) {
      if (seq[k] != kErased) continue;
      const auto dist = m.predict_distribution(ctx, std::span(seq).first(k));
      seq[k] = static_cast<Token>(std::max_element(dist.begin(), dist.end()) - dist.begin());
    }
    EXPECT_EQ(filled.streams, seq);
  }
}

TEST(Conceal, StrictCausalityReplay) {
  const int n_q = 4, c = 16;
  CountModel m(3, 0.1, n_q, c);
  m.train(random_columns(3000, n_q, c, 81));
  auto rx = random_columns(120, n_q, c, 82);
  const auto loss = uniform_loss(120 * n_q, 0.3, 83);
  for (std::size_t f = 0; f < rx.size(); ++f)
    for (int d = 0; d < n_q; ++d)
      if (loss.lost[f * n_q + d]) rx[f].tokens[d] = kErased;

  auto run_steps = [&](const std::vector<TokenColumn>& cols) {
    ConcealmentSession s(m, n_q, c);
    std::vector<TokenColumn> frames;
    for (const auto& col : cols)
      if (auto r = s.push(col)) frames.push_back(*r);
    if (auto r = s.finish()) frames.push_back(*r);
    return std::make_pair(s.context().history, frames);
  };
  const auto [base_steps, base_frames] = run_steps(rx);

  for (std::size_t cut : {1u, 17u, 60u, 119u}) {
    auto perturbed = rx;
    const auto noise = random_columns(rx.size(), n_q, c, 900 + cut);
    for (std::size_t f = cut; f < rx.size(); ++f)
      for (int d = 0; d < n_q; ++d) perturbed[f].tokens[d] = (f + d) % 3 == 0 ? kErased : noise[f].tokens[d];
    const auto [steps, frames] = run_steps(perturbed);
    // Step n only sees frame n's depth-1 token and frame n-1's deeper tokens.
    for (std::size_t n = 0; n < cut; ++n) ASSERT_EQ(steps[n], base_steps[n]) << "cut " << cut;
    // A frame's deep tokens are filled one step later, after its successor's depth-1 token.
    for (std::size_t f = 0; f + 1 < cut; ++f) ASSERT_EQ(frames[f], base_frames[f]) << "cut " << cut;

    auto deep_only = rx;
    for (std::size_t f = cut; f < rx.size(); ++f)
      for (int d = 1; d < n_q; ++d) deep_only[f].tokens[d] = noise[f].tokens[d];
    const auto [s2, f2] = run_steps(deep_only);
    for (std::size_t f = 0; f < cut; ++f) ASSERT_EQ(f2[f], base_frames[f]) << "cut " << cut;
  }
}

TEST(Conceal, SessionMatchesBatchAndRejectsMisuse) {
  const int n_q = 3, c = 8;
  const auto cols = random_columns(10, n_q, c, 91);
  const RepeatLastPredictor rep;
  ConcealmentSession s(rep, n_q, c);
  EXPECT_FALSE(s.push(cols[0]).has_value());
  EXPECT_EQ(*s.push(cols[1]), cols[0]);
  EXPECT_THROW(s.push(cols[3]), std::invalid_argument);
  EXPECT_THROW(s.push({2, {1, 2}}), std::invalid_argument);
  EXPECT_EQ(*s.finish(), cols[1]);
  EXPECT_FALSE(s.finish().has_value());
  EXPECT_THROW(s.push(cols[2]), std::logic_error);
  EXPECT_TRUE(conceal_stream(rep, std::vector<TokenColumn>{}, n_q, c).empty());
}

TEST(ChooseToken, ArgmaxTiesAndSeededSampling) {
  const std::vector<double> tie = {0.1, 0.4, 0.4, 0.1};
  EXPECT_EQ(choose_token(tie, {}, 0), 1);
  EXPECT_THROW(choose_token(std::vector<double>{}, {}, 0), std::invalid_argument);

  const std::vector<double> dist = {0.5, 0.3, 0.2};
  for (double temp : {1.0, 0.5}) {
    ConcealOptions opts{temp, 1234};
    std::vector<double> freq(3, 0.0);
    const int n = 200000;
    for (int i = 0; i < n; ++i) freq[choose_token(dist, opts, i)] += 1.0 / n;
    std::vector<double> want(3);
    double z = 0;
    for (int i = 0; i < 3; ++i) z += want[i] = std::pow(dist[i], 1 / temp);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(freq[i], want[i] / z, 0.005) << temp;
  }
  EXPECT_EQ(choose_token(std::vector<double>{0.0, 1.0, 0.0}, {0.7, 5}, 3), 1);
}

TEST(ChooseToken, SampledConcealmentIsReproducible) {
  const int n_q = 3, c = 8;
  CountModel m(2, 0.5, n_q, c);
  m.train(random_columns(500, n_q, c, 101));
  auto rx = random_columns(200, n_q, c, 102);
  for (std::size_t f = 0; f < rx.size(); f += 2) rx[f].tokens[1] = kErased;
  const ConcealOptions a{1.0, 5}, b{1.0, 6};
  EXPECT_EQ(conceal_stream(m, rx, n_q, c, a), conceal_stream(m, rx, n_q, c, a));
  EXPECT_NE(conceal_stream(m, rx, n_q, c, a), conceal_stream(m, rx, n_q, c, b));
}

TEST(TeacherForcing, PositionsAndUniformProbabilities) {
  const auto cols = random_columns(5, 3, 16, 111);
  const auto p = teacher_forced_probabilities(UniformPredictor{}, cols, 3, 16);
  ASSERT_EQ(p.size(), 6u);
  for (std::size_t n = 0; n < p.size(); ++n) {
    EXPECT_TRUE(std::isnan(p[n][0]));
    for (int k = 1; k <= 3; ++k) {
      const bool token = (k == 1 && n < 5) || (k >= 2 && n > 0);
      if (token) EXPECT_DOUBLE_EQ(p[n][k], 1.0 / 16);
      else EXPECT_TRUE(std::isnan(p[n][k]));
    }
  }
  std::vector<TokenColumn> constant;
  for (std::uint32_t f = 0; f < 10; ++f) constant.push_back({f, {3, 3, 3}});
  const auto r = teacher_forced_probabilities(RepeatLastPredictor{}, constant, 3, 16);
  EXPECT_EQ(r[0][1], 0.0);  // the zero delay fill predicts token 0
  for (std::size_t n = 2; n < r.size(); ++n)
    for (int k = 2; k <= 3; ++k) EXPECT_EQ(r[n][k], 1.0);
}

TEST(HmmSource, CountModelBeatsRepeatLastAtTwentyPercentLoss) {
  const int n_q = 8, c = 64;
  const auto train = hmm_token_source(20000, n_q, c, 1);
  const auto truth = hmm_token_source(10000, n_q, c, 2);
  EXPECT_EQ(hmm_token_source(100, n_q, c, 2), std::vector<TokenColumn>(truth.begin(), truth.begin() + 100));
  CountModel m(2, 0.1, n_q, c);
  m.train(train);
  auto rx = truth;
  const auto loss = uniform_loss(truth.size() * n_q, 0.2, 3);
  std::size_t erased = 0;
  for (std::size_t f = 0; f < rx.size(); ++f)
    for (int d = 0; d < n_q; ++d)
      if (loss.lost[f * n_q + d]) {
        rx[f].tokens[d] = kErased;
        ++erased;
      }
  auto errors = [&](const Predictor& p) {
    const auto out = conceal_stream(p, rx, n_q, c);
    std::size_t e = 0;
    for (std::size_t f = 0; f < out.size(); ++f)
      for (int d = 0; d < n_q; ++d) e += out[f].tokens[d] != truth[f].tokens[d];
    return static_cast<double>(e) / static_cast<double>(erased);
  };
  const double count_err = errors(m);
  const double repeat_err = errors(RepeatLastPredictor{});
  EXPECT_LE(count_err, repeat_err);
  EXPECT_LT(count_err, 1.0);
}

TEST(Lora, MergeIdentities) {
  LoraAdapter a;
  a.base = Eigen::MatrixXd::Random(4, 6);
  a.down = Eigen::MatrixXd::Zero(4, 2);
  a.up = Eigen::MatrixXd::Random(2, 6);
  EXPECT_EQ(lora_merge(a), a.base);
  a.down = Eigen::MatrixXd::Random(4, 2);
  a.up.setZero();
  EXPECT_EQ(lora_merge(a), a.base);

  // r = min(d, h) = 4 with B = I: the merge adds A directly.
  a.down = Eigen::MatrixXd::Identity(4, 4);
  a.up = Eigen::MatrixXd::Random(4, 6);
  EXPECT_TRUE(lora_merge(a).isApprox(a.base + a.up, 1e-15));
  EXPECT_EQ(a.rank(), 4);
}

TEST(Lora, MatchesNaiveTripleLoop) {
  CounterRng rng(123);
  const int d = 4, h = 6, r = 2;
  LoraAdapter a{Eigen::MatrixXd(d, h), Eigen::MatrixXd(d, r), Eigen::MatrixXd(r, h)};
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < h; ++j) a.base(i, j) = rng.uniform() * 2 - 1;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < r; ++j) a.down(i, j) = rng.uniform() * 2 - 1;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < h; ++j) a.up(i, j) = rng.uniform() * 2 - 1;
  const auto w = lora_merge(a);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < h; ++j) {
      double want = a.base(i, j);
      for (int k = 0; k < r; ++k) want += a.down(i, k) * a.up(k, j);
      EXPECT_NEAR(w(i, j), want, 1e-12);
    }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(w - a.base);
  EXPECT_LE(lu.rank(), r);
}

TEST(Lora, RejectsShapeMismatch) {
  LoraAdapter a{Eigen::MatrixXd::Zero(4, 6), Eigen::MatrixXd::Zero(4, 2), Eigen::MatrixXd::Zero(3, 6)};
  EXPECT_THROW(lora_merge(a), std::invalid_argument);
  a.up = Eigen::MatrixXd::Zero(2, 5);
  EXPECT_THROW(lora_merge(a), std::invalid_argument);
  a = {Eigen::MatrixXd::Zero(4, 6), Eigen::MatrixXd::Zero(4, 5), Eigen::MatrixXd::Zero(5, 6)};
  EXPECT_THROW(lora_merge(a), std::invalid_argument);
}

}  // namespace
}  // namespace semtok
