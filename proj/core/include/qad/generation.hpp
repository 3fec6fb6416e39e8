#pragma once

// Candidate generation from a ToyModel: beam search, ancestral sampling and
// nucleus sampling.

#include <cstdint>
#include <span>
#include <vector>

#include "qad/corpus_io.hpp"
#include "qad/toy_model.hpp"

namespace qad {

enum class GenMethod { kBeam, kAncestral, kNucleus };

struct GenConfig {
  GenMethod method = GenMethod::kBeam;
  int beam_size = 5;
  int num_samples = 200;
  double nucleus_p = 0.6;
  // 0 means "use the model's max_len".
  int max_len = 0;
  double length_penalty = 0.0;
  std::uint64_t seed = 0;
  // Merge identical samples into multiplicities.
  bool dedup = false;
  int jobs = 1;
};

struct Hypothesis {
  TokenSeq tokens;  // eos-terminated
  double logprob = 0.0;
  // Beam score: logprob / length^length_penalty. Equals logprob for samples.
  double score = 0.0;
  std::int64_t multiplicity = 1;
  bool truncated = false;
};

std::vector<Hypothesis> beam_search(const ToyModel& model, const GenConfig& cfg);

// Draws come from Philox(cfg.seed, stream).
std::vector<Hypothesis> ancestral_sample(const ToyModel& model,
                                         const GenConfig& cfg,
                                         std::uint64_t stream = 0);
std::vector<Hypothesis> nucleus_sample(const ToyModel& model,
                                       const GenConfig& cfg,
                                       std::uint64_t stream = 0);

// Top-p truncation of one step distribution: the shortest prefix of tokens
// sorted by probability (descending, ties by token id) whose cumulative mass
// reaches p, renormalized. Tokens outside the nucleus get 0.
std::vector<double> nucleus_distribution(std::span<const double> probs,
                                         double p);

// Runs the configured method for each segment model. Segment i samples from
// stream = segment id, so output is independent of cfg.jobs.
std::vector<NBestEntry> build_nbest(const std::vector<SegmentModel>& models,
                                    const GenConfig& cfg);

}  // namespace qad
