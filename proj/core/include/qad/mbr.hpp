#pragma once

// Minimum Bayes risk decoding: pick the candidate with the highest
// Monte-Carlo expected utility against the candidates themselves, used as
// pseudo-references weighted by multiplicity.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "qad/corpus_io.hpp"
#include "qad/metrics.hpp"
#include "qad/rerank.hpp"

namespace qad {

struct UtilityMatrix {
  // values[i][j] = utility(src, hyp = candidate rows[i], ref = candidate cols[j])
  std::vector<std::vector<double>> values;
  std::vector<std::size_t> rows;  // candidate indices of hypotheses
  std::vector<std::size_t> cols;  // candidate indices of pseudo-references
  // Pseudo-reference multiplicities normalized to sum to 1.
  std::vector<double> col_weights;
  // Raw multiplicities, needed to drop a hypothesis' own sample.
  std::vector<std::int64_t> col_counts;
  bool include_diagonal = true;

  // (Sum_j c_j U[i][j]) / Sum_j c_j over raw counts. Without the diagonal, one sample of the hypothesis'
  // own string is removed from the pseudo-reference pool and the remaining
  // weights renormalized; if nothing remains, U[i][i] is used.
  double expected_utility(std::size_t i) const;
};

struct MbrConfig {
  bool include_diagonal = true;
  // Use only the first M candidates as pseudo-references; nullopt = all.
  std::optional<std::size_t> num_pseudo_refs;
  // Two-stage: keep the top-M candidates by tuned linear score.
  std::optional<std::size_t> prune_to;
  // Two-stage ablation: pseudo-references from the full list, not the pruned one.
  bool full_pseudo_refs = false;
};

// Scores the hyp x pseudo-ref grid as one batch. `rows`/`cols` default to all
// candidates (cols truncated to cfg.num_pseudo_refs).
UtilityMatrix utility_matrix(const NBestEntry& entry, Metric& utility, const MbrConfig& cfg,
                             std::optional<std::vector<std::size_t>> rows = std::nullopt,
                             std::optional<std::vector<std::size_t>> cols = std::nullopt);

// Selection over the matrix rows; ties go to the lowest candidate index.
Selection select_from_matrix(const NBestEntry& entry, const UtilityMatrix& matrix);

Selection mbr_select(const NBestEntry& entry, Metric& utility, const MbrConfig& cfg);

// Top-M by sum_k w_k f_k (ties to lower index), then MBR among the kept M.
// Indices in the Selection refer to the original candidate list.
Selection two_stage_select(const NBestEntry& entry, const FeatureMatrix& features,
                           std::size_t segment, const WeightsTable& weights, Metric& utility,
                           const MbrConfig& cfg);

// Candidate indices of the top `m` linear scores, in original index order.
std::vector<std::size_t> prune_top(const std::vector<double>& scores, std::size_t m);

// Corpus-level drivers; segments run on `jobs` threads, output is independent
// of the thread count.
std::vector<Selection> mbr_decode(const std::vector<NBestEntry>& entries, Metric& utility,
                                  const MbrConfig& cfg, int jobs = 1);
std::vector<Selection> two_stage_decode(const std::vector<NBestEntry>& entries,
                                        const FeatureMatrix& features,
                                        const WeightsTable& weights, Metric& utility,
                                        const MbrConfig& cfg, int jobs = 1);

}  // namespace qad
