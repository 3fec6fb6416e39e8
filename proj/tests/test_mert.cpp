#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "qad/error.hpp"
#include "qad/mert.hpp"
#include "qad/random.hpp"

using namespace qad;

namespace {

std::size_t naive_owner(const std::vector<Line>& lines, double gamma) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].intercept + gamma * lines[i].slope >
        lines[best].intercept + gamma * lines[best].slope) {
      best = i;
    }
  }
  return best;
}

SufficientStats random_stats(Philox& rng) {
  SufficientStats s;
  s.hyp_len = 4 + static_cast<std::int64_t>(rng() % 8);
  s.ref_len = 4 + static_cast<std::int64_t>(rng() % 8);
  for (int n = 0; n < 4; ++n) {
    s.total[n] = s.hyp_len - n;
    s.match[n] = static_cast<std::int64_t>(rng() % (s.total[n] + 1));
  }
  return s;
}

MertInstance random_instance(Philox& rng, std::size_t features, std::size_t max_segments,
                             std::size_t max_candidates) {
  MertInstance inst;
  for (std::size_t k = 0; k < features; ++k) inst.feature_names.push_back("f" + std::to_string(k));
  const std::size_t segs = 1 + rng() % max_segments;
  for (std::size_t s = 0; s < segs; ++s) {
    MertSegment seg;
    const std::size_t n = 1 + rng() % max_candidates;
    for (std::size_t c = 0; c < n; ++c) {
      std::vector<double> row;
      for (std::size_t k = 0; k < features; ++k) row.push_back(rng.uniform(-2.0, 2.0));
      seg.features.push_back(row);
      seg.stats.push_back(random_stats(rng));
      seg.scores.push_back(rng.uniform(0.0, 1.0));
    }
    inst.segments.push_back(seg);
  }
  return inst;
}

}  // namespace

TEST(Envelope, HandExamples) {
  const std::vector<Line> one{{2, 3}};
  const auto e1 = upper_envelope(one);
  EXPECT_TRUE(e1.breakpoints.empty());
  EXPECT_EQ(e1.owners, (std::vector<std::size_t>{0}));

  const std::vector<Line> cross{{0, 1}, {1, -1}};
  const auto e2 = upper_envelope(cross);
  ASSERT_EQ(e2.breakpoints.size(), 1u);
  EXPECT_DOUBLE_EQ(e2.breakpoints[0], 0.5);
  EXPECT_EQ(e2.owner_at(0.6), 0u);
  EXPECT_EQ(e2.owner_at(0.4), 1u);

  const std::vector<Line> parallel{{0, 1}, {1, 1}};
  const auto e3 = upper_envelope(parallel);
  EXPECT_TRUE(e3.breakpoints.empty());
  EXPECT_EQ(e3.owners, (std::vector<std::size_t>{1}));

  const std::vector<Line> same{{1, 2}, {0, 0}, {1, 2}};
  EXPECT_EQ(upper_envelope(same).owner_at(5.0), 0u);
}

TEST(Envelope, MatchesNaiveArgmax) {
  Philox rng(51, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Line> lines(1 + rng() % 12);
    for (auto& l : lines) {
      // Small integer grids produce duplicate and parallel lines.
      if (trial % 2) {
        l = {static_cast<double>(rng() % 5), static_cast<double>(rng() % 5) - 2.0};
      } else {
        l = {rng.uniform(-5, 5), rng.uniform(-5, 5)};
      }
    }
    const auto env = upper_envelope(lines);
    ASSERT_EQ(env.owners.size(), env.breakpoints.size() + 1);
    EXPECT_TRUE(std::is_sorted(env.breakpoints.begin(), env.breakpoints.end()));
    for (int q = 0; q < 100; ++q) {
      const double gamma = rng.uniform(-20, 20);
      EXPECT_EQ(env.owner_at(gamma), naive_owner(lines, gamma)) << "trial " << trial;
    }
  }
}

TEST(LineSearch, TwoIntervalHandCase) {
  MertInstance inst;
  inst.feature_names = {"base", "dir"};
  MertSegment seg;
  // Along "dir", candidate scores are 2 + 0*g and 0 + 1*g: they cross at g = 2.
  seg.features = {{2.0, 0.0}, {0.0, 1.0}};
  seg.scores = {0.0, 1.0};
  inst.segments = {seg};
  const std::vector<double> w{1.0, 0.0};
  const auto r = line_search(inst, w, 1, MertObjective::kMeanSentenceScore);
  EXPECT_EQ(r.objective, 1.0);
  EXPECT_GT(r.gamma, 2.0);
  EXPECT_DOUBLE_EQ(r.gamma, 3.0);
}

TEST(LineSearch, ConstantDirectionIsNoOp) {
  MertInstance inst;
  inst.feature_names = {"a", "c"};
  MertSegment seg;
  seg.features = {{0.1, 5.0}, {0.7, 5.0}, {0.3, 5.0}};
  seg.scores = {1.0, 0.0, 0.5};
  inst.segments = {seg};
  const std::vector<double> w{1.0, 1.0};
  const auto r = line_search(inst, w, 1, MertObjective::kMeanSentenceScore);
  EXPECT_EQ(r.gamma, 0.0);
  EXPECT_EQ(r.objective, 0.0);
}

TEST(LineSearch, IncrementalSweepEqualsFromScratch) {
  Philox rng(52, 0);
  for (int trial = 0; trial < 300; ++trial) {
    const auto inst = random_instance(rng, 3, 10, 6);
    std::vector<double> w{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const std::size_t k = rng() % 3;
    for (auto obj : {MertObjective::kCorpusBleu, MertObjective::kMeanSentenceScore}) {
      const auto r = line_search(inst, w, k, obj);
      auto moved = w;
      moved[k] = r.gamma;
      if (obj == MertObjective::kCorpusBleu) {
        EXPECT_EQ(r.objective, evaluate_objective(inst, moved, obj));
      } else {
        EXPECT_NEAR(r.objective, evaluate_objective(inst, moved, obj), 1e-12);
      }
      // No probe point along the direction does better.
      for (int q = 0; q < 200; ++q) {
        moved[k] = rng.uniform(-50, 50);
        EXPECT_LE(evaluate_objective(inst, moved, obj), r.objective + 1e-12);
      }
    }
  }
}

TEST(Mert, PerfectFeatureReachesOracle) {
  Philox rng(53, 0);
  MertInstance inst;
  inst.feature_names = {"logprob", "oracle"};
  double oracle = 0.0;
  for (int s = 0; s < 10; ++s) {
    MertSegment seg;
    double best = -1.0;
    for (int c = 0; c < 5; ++c) {
      const double score = rng.uniform();
      seg.features.push_back({rng.uniform(-3, 0), score});
      seg.scores.push_back(score);
      best = std::max(best, score);
    }
    oracle += best;
    inst.segments.push_back(seg);
  }
  MertConfig cfg;
  cfg.objective = MertObjective::kMeanSentenceScore;
  const auto r = mert_optimize(inst, cfg);
  EXPECT_NEAR(r.objective, oracle / 10, 1e-12);
  EXPECT_GT(r.weights.get("oracle"), 0.0);
}

TEST(Mert, TraceAscendsRestartsDominateAndWeightsNormalized) {
  Philox rng(54, 0);
  for (int trial = 0; trial < 40; ++trial) {
    const auto inst = random_instance(rng, 3, 12, 5);
    MertConfig cfg;
    cfg.seed = trial;
    cfg.restarts = 4;
    const auto r = mert_optimize(inst, cfg);
    for (std::size_t i = 1; i < r.trace.size(); ++i) {
      if (r.trace[i].restart == r.trace[i - 1].restart) {
        EXPECT_GE(r.trace[i].objective, r.trace[i - 1].objective);
      }
    }
    for (double o : r.restart_objectives) EXPECT_GE(r.objective, o);
    double norm = 0.0;
    for (const auto& [name, v] : r.weights.entries()) norm += v * v;
    EXPECT_NEAR(norm, 1.0, 1e-12);
  }
}

TEST(Mert, DeterministicAcrossJobs) {
  Philox rng(55, 0);
  const auto inst = random_instance(rng, 4, 15, 5);
  MertConfig cfg;
  cfg.seed = 99;
  const auto a = mert_optimize(inst, cfg);
  cfg.jobs = 4;
  const auto b = mert_optimize(inst, cfg);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.objective, b.objective);
  EXPECT_EQ(trace_to_jsonl(a, inst.feature_names), trace_to_jsonl(b, inst.feature_names));
}

TEST(Mert, DegenerateInstance) {
  MertInstance inst;
  inst.feature_names = {"qe", "logprob"};
  MertSegment seg;
  seg.features = {{1, 2}, {3, 4}};
  SufficientStats s;
  s.hyp_len = s.ref_len = 2;
  s.total = {2, 1, 0, 0};
  seg.stats = {s, s};
  seg.scores = {0.5, 0.5};
  inst.segments = {seg, seg};
  const auto r = mert_optimize(inst, {});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.weights.get("logprob"), 1.0);
  EXPECT_EQ(r.weights.get("qe"), 0.0);
}

TEST(Mert, Validation) {
  MertInstance inst;
  inst.feature_names = {"a"};
  MertSegment seg;
  seg.features = {{1.0}, {NAN}};
  seg.scores = {0, 1};
  inst.segments = {seg};
  EXPECT_THROW(mert_optimize(inst, {MertObjective::kMeanSentenceScore}), ValidationError);
  MertConfig bad;
  bad.restarts = 0;
  inst.segments[0].features[1][0] = 2.0;
  EXPECT_THROW(mert_optimize(inst, bad), ValidationError);
}
