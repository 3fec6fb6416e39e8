#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "qad/error.hpp"
#include "qad/toy_model.hpp"
#include "test_util.hpp"

using namespace qad;
using qad::testing::random_model;

namespace {

// Vocab {a, b, c, eos} etc. with eos last.
Vocab letters(int n) {
  std::vector<std::string> t;
  for (int i = 0; i + 1 < n; ++i) t.push_back(std::string(1, static_cast<char>('a' + i)));
  t.push_back("</s>");
  return Vocab(t, n - 1);
}

double entropy(const std::vector<double>& row) {
  double h = 0.0;
  for (double p : row) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace

TEST(Vocab, Validation) {
  EXPECT_THROW(Vocab({"a"}, 0), ValidationError);
  EXPECT_THROW(Vocab({"a", "a"}, 1), ValidationError);
  EXPECT_THROW(Vocab({"a", "b c"}, 1), ValidationError);
  EXPECT_THROW(Vocab({"a", "<s>"}, 1), ValidationError);
  EXPECT_THROW(Vocab({"a", "b"}, 2), ValidationError);
  const Vocab v({"x", "y", "</s>"}, 2);
  EXPECT_EQ(v.find("y"), 1);
  EXPECT_FALSE(v.find("z").has_value());
  EXPECT_EQ(v.detokenize(TokenSeq{0, 1, 0, 2}), "x y x");
}

TEST(TrainSmoothed, RelativeFrequencyAtEpsilonZero) {
  const Vocab v = letters(2);  // a, eos
  const auto m = train_smoothed({{0, 0, 1}}, 1, SmoothingConfig{0.0}, v, 5);
  const auto& after_a = next_distribution(m, TokenSeq{0});
  EXPECT_DOUBLE_EQ(after_a[0], 0.5);
  EXPECT_DOUBLE_EQ(after_a[1], 0.5);
  const auto& first = next_distribution(m, TokenSeq{});
  EXPECT_DOUBLE_EQ(first[0], 1.0);
  EXPECT_DOUBLE_EQ(first[1], 0.0);
}

TEST(TrainSmoothed, EpsilonOneIsUniform) {
  const Vocab v = letters(3);
  const auto m = train_smoothed({{0, 1, 2}, {1, 1, 2}}, 1, SmoothingConfig{1.0}, v, 5);
  for (const auto& [ctx, row] : m.rows()) {
    for (double p : row) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  }
}

TEST(TrainSmoothed, WorkedMixtureExample) {
  // Context "a" seen 10 times, always followed by "b"; |V| = 4.
  const Vocab v = letters(4);  // a b c eos
  std::vector<TokenSeq> data(10, TokenSeq{0, 1, 3});
  const auto m = train_smoothed(data, 1, SmoothingConfig{0.1}, v, 5);
  const auto& row = next_distribution(m, TokenSeq{0});
  EXPECT_NEAR(row[1], 0.925, 1e-15);
  EXPECT_NEAR(row[0], 0.025, 1e-15);
  EXPECT_NEAR(row[2], 0.025, 1e-15);
  EXPECT_NEAR(row[3], 0.025, 1e-15);
  // "b eos" from context a: log 0.925 + log P(eos | b); b is always followed by eos.
  const double p_eos_b = 0.9 + 0.025;
  const double lp = std::log(0.925) + std::log(p_eos_b);
  EXPECT_NEAR(std::log(next_distribution(m, TokenSeq{0, 1})[3]), std::log(p_eos_b), 1e-15);
  const double first = std::log(next_distribution(m, TokenSeq{})[0]);
  EXPECT_NEAR(sequence_logprob(m, TokenSeq{0, 1, 3}), first + lp, 1e-12);
}

TEST(TrainSmoothed, Errors) {
  const Vocab v = letters(3);
  EXPECT_THROW(train_smoothed({}, 1, SmoothingConfig{0.1}, v, 5), ValidationError);
  EXPECT_THROW(train_smoothed({{0, 1}}, 1, SmoothingConfig{0.1}, v, 5), ValidationError);
  EXPECT_THROW(train_smoothed({{2, 0, 2}}, 1, SmoothingConfig{0.1}, v, 5), ValidationError);
  EXPECT_THROW(train_smoothed({{0, 2}}, 1, SmoothingConfig{1.5}, v, 5), ValidationError);
  EXPECT_THROW(train_smoothed({{0, 2}}, 0, SmoothingConfig{0.1}, v, 5), ValidationError);
}

TEST(TrainSmoothed, EntropyMonotoneInEpsilon) {
  Philox rng(5, 0);
  const Vocab v = letters(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenSeq> data;
    for (int s = 0; s < 8; ++s) {
      TokenSeq seq;
      const int len = static_cast<int>(rng() % 4);
      for (int i = 0; i < len; ++i) seq.push_back(static_cast<TokenId>(rng() % 4));
      seq.push_back(4);
      data.push_back(seq);
    }
    const int order = 1 + static_cast<int>(rng() % 2);
    double prev_eps = 0.0;
    auto prev = train_smoothed(data, order, SmoothingConfig{0.0}, v, 6);
    for (double eps : {0.05, 0.1, 0.3, 0.7, 1.0}) {
      const auto cur = train_smoothed(data, order, SmoothingConfig{eps}, v, 6);
      for (const auto& [ctx, row] : cur.rows()) {
        EXPECT_GE(entropy(row) + 1e-12, entropy(prev.row(ctx)))
            << "eps " << prev_eps << " -> " << eps;
      }
      prev = cur;
      prev_eps = eps;
    }
  }
}

TEST(ToyModel, RowValidation) {
  const Vocab v = letters(3);
  EXPECT_THROW(ToyModel(v, 1, 4, {{{kBeginMarker}, {0.5, 0.5}}}), ValidationError);
  EXPECT_THROW(ToyModel(v, 1, 4, {{{kBeginMarker}, {0.5, 0.6, -0.1}}}), ValidationError);
  EXPECT_THROW(ToyModel(v, 1, 4, {{{kBeginMarker}, {0.5, 0.5, 0.1}}}), ValidationError);
  EXPECT_NO_THROW(ToyModel(v, 1, 4, {{{kBeginMarker}, {0.5, 0.25, 0.25}}}));
}

TEST(NextDistribution, MarkovPropertyAndFallback) {
  Philox rng(3, 0);
  const auto m = random_model(rng, 4, 2, 6);
  EXPECT_EQ(&next_distribution(m, TokenSeq{0, 1, 2}), &next_distribution(m, TokenSeq{1, 2}));
  EXPECT_EQ(next_distribution(m, TokenSeq{}), m.row({kBeginMarker, kBeginMarker}));
  // Unobserved context in a trained model is uniform.
  const auto t = train_smoothed({{0, 2}}, 1, SmoothingConfig{0.0}, letters(3), 4);
  for (double p : next_distribution(t, TokenSeq{1})) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
  // Every reachable row sums to 1.
  for (const auto& [ctx, row] : m.rows()) {
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
  }
  EXPECT_THROW(next_distribution(m, TokenSeq{3, 0}), ValidationError);
  EXPECT_THROW(next_distribution(m, TokenSeq{0, 0, 0, 0, 0, 0}), ValidationError);
}

TEST(SequenceLogprob, UniformAndImpossible) {
  const Vocab v = letters(4);
  const ToyModel uniform(v, 1, 5, {});
  EXPECT_DOUBLE_EQ(sequence_logprob(uniform, TokenSeq{0, 1, 3}), 3 * std::log(0.25));
  const auto m = train_smoothed({{0, 3}}, 1, SmoothingConfig{0.0}, v, 5);
  EXPECT_TRUE(is_impossible(sequence_logprob(m, TokenSeq{1, 3})));
  EXPECT_THROW(sequence_logprob(m, TokenSeq{0, 1}), ValidationError);
  EXPECT_THROW(sequence_logprob(m, TokenSeq{0, 0, 0, 0, 0, 3}), ValidationError);
}

TEST(EnumerateAll, SmallCaseAndOrdering) {
  const Vocab v = letters(2);  // a, eos
  const ToyModel m(v, 1, 2, {{{kBeginMarker}, {0.7, 0.3}}, {{0}, {0.4, 0.6}}});
  const auto all = enumerate_all(m, 2);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].tokens, (TokenSeq{0, 1}));
  EXPECT_NEAR(all[0].logprob, std::log(0.7 * 0.6), 1e-15);
  EXPECT_EQ(all[1].tokens, (TokenSeq{1}));
  EXPECT_NEAR(all[1].logprob, std::log(0.3), 1e-15);
}

TEST(EnumerateAll, BudgetRefusal) {
  const ToyModel m(qad::testing::numbered_vocab(10), 1, 8, {});
  try {
    enumerate_all(m, 8);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("1000000"), std::string::npos) << e.what();
  }
}

TEST(EnumerateAll, SortedAndMassProperties) {
  Philox rng(9, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const int vsize = 2 + static_cast<int>(rng() % 3);
    const int max_len = 1 + static_cast<int>(rng() % 4);
    const auto m = random_model(rng, vsize, 1 + static_cast<int>(rng() % 2), max_len, 1.0, 0.2);
    const auto all = enumerate_all(m, max_len);
    double mass = 0.0;
    for (std::size_t i = 0; i < all.size(); ++i) {
      EXPECT_EQ(all[i].logprob, sequence_logprob(m, all[i].tokens));
      if (i > 0) {
        EXPECT_TRUE(ranks_before(all[i - 1].logprob, all[i - 1].tokens, all[i].logprob,
                                 all[i].tokens));
      }
      mass += std::exp(all[i].logprob);
    }
    EXPECT_LE(mass, 1.0 + 1e-9);
  }
  // A model whose sequences all terminate within max_len carries full mass.
  const Vocab v = letters(3);  // a b eos
  const auto m = train_smoothed({{0, 1, 2}, {1, 2}}, 2, SmoothingConfig{0.0}, v, 3);
  double mass = 0.0;
  for (const auto& s : enumerate_all(m, 3)) mass += std::exp(s.logprob);
  EXPECT_NEAR(mass, 1.0, 1e-9);
}

TEST(ModelJson, RoundTrip) {
  Philox rng(4, 0);
  const auto m = random_model(rng, 4, 2, 5);
  EXPECT_EQ(model_from_json(model_to_json(m)), m);
  SegmentModel sm{SourceSegment{3, "src text"}, {"ref one"}, m};
  const auto back = segment_model_from_json(segment_model_to_json(sm));
  EXPECT_EQ(back.segment, sm.segment);
  EXPECT_EQ(back.references, sm.references);
  EXPECT_EQ(back.model, m);
  EXPECT_THROW(model_from_json("{"), ParseError);
}

TEST(ModelDir, LoadsSortedAndRejectsDuplicates) {
  qad::testing::TempDir dir;
  Philox rng(8, 0);
  const auto m = random_model(rng, 3, 1, 4);
  save_segment_model({SourceSegment{5, "b"}, {}, m}, dir / "x.json");
  save_segment_model({SourceSegment{2, "a"}, {}, m}, dir / "y.json");
  const auto models = load_model_dir(dir.path());
  ASSERT_EQ(models.size(), 2u);
  EXPECT_EQ(models[0].segment.id, 2);
  EXPECT_EQ(models[1].segment.id, 5);
  save_segment_model({SourceSegment{5, "c"}, {}, m}, dir / "z.json");
  EXPECT_THROW(load_model_dir(dir.path()), ValidationError);
}

TEST(TrainingCorpus, VocabularyInFirstAppearanceOrder) {
  const auto c = load_training_corpus({"b a", "c a b"});
  EXPECT_EQ(c.vocab.tokens(), (std::vector<std::string>{"b", "a", "c", "</s>"}));
  EXPECT_EQ(c.sequences[1], (TokenSeq{2, 1, 0, 3}));
}
