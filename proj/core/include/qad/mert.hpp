#pragma once

// Minimum error rate training: coordinate ascent on linear reranking weights
// with an exact line search over the piecewise-constant objective.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qad/corpus_io.hpp"
#include "qad/metrics.hpp"
#include "qad/rerank.hpp"

namespace qad {

struct Line {
  double intercept = 0.0;
  double slope = 0.0;
};

// Upper envelope of a set of lines as a function of the step size gamma.
// Interval i is (breakpoints[i-1], breakpoints[i]) with the outer intervals
// unbounded; owners[i] is the line attaining the maximum on it, lowest index
// among identical lines.
struct Envelope {
  std::vector<double> breakpoints;
  std::vector<std::size_t> owners;  // breakpoints.size() + 1 entries

  std::size_t owner_at(double gamma) const;
};

Envelope upper_envelope(std::span<const Line> lines);

enum class MertObjective { kCorpusBleu, kMeanSentenceScore };

struct MertSegment {
  std::vector<std::vector<double>> features;  // [candidate][feature]
  std::vector<SufficientStats> stats;         // corpus_bleu objective
  std::vector<double> scores;                 // mean_sentence_score objective
};

struct MertInstance {
  std::vector<std::string> feature_names;
  std::vector<MertSegment> segments;

  // Throws ValidationError on shape mismatches or non-finite features.
  void validate(MertObjective objective) const;
};

// Per-candidate statistics against the first reference of each entry. For the
// mean objective, `sentence_metric` supplies the scores (reference-based).
MertInstance make_mert_instance(const std::vector<NBestEntry>& entries,
                                const FeatureMatrix& features, MertObjective objective,
                                Metric* sentence_metric = nullptr);

struct MertConfig {
  MertObjective objective = MertObjective::kCorpusBleu;
  int restarts = 8;
  int max_iterations = 30;
  double convergence_eps = 1e-6;
  std::uint64_t seed = 0;
  int jobs = 1;
};

// Objective of the selection induced by `weights` (lowest index on ties).
double evaluate_objective(const MertInstance& instance, std::span<const double> weights,
                          MertObjective objective);

struct LineSearchResult {
  double gamma = 0.0;  // new value for weight k
  double objective = 0.0;
};

// Optimizes weight `k` with the others fixed: candidate scores are lines
// a + gamma * f_k. Returns the midpoint of the best interval (one unit past
// the outermost breakpoint for unbounded intervals, 0 when there are none).
LineSearchResult line_search(const MertInstance& instance, std::span<const double> weights,
                             std::size_t k, MertObjective objective);

struct MertTraceStep {
  int restart = 0;
  int iteration = 0;
  std::size_t feature = 0;
  double gamma = 0.0;
  double objective = 0.0;
};

struct MertResult {
  WeightsTable weights;  // L2-normalized
  double objective = 0.0;
  std::vector<MertTraceStep> trace;
  std::vector<double> restart_objectives;
  // Set when no weight vector can change the objective.
  bool degenerate = false;
};

MertResult mert_optimize(const MertInstance& instance, const MertConfig& cfg);

std::string trace_to_jsonl(const MertResult& result, const std::vector<std::string>& names);

}  // namespace qad
