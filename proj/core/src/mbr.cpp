#include "qad/mbr.hpp"

#include <algorithm>
#include <numeric>

#include "qad/error.hpp"
#include "qad/parallel.hpp"

namespace qad {

double UtilityMatrix::expected_utility(std::size_t i) const {
  const auto& row = values.at(i);
  std::size_t self = cols.size();
  if (!include_diagonal) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (cols[j] == rows[i]) {
        self = j;
        break;
      }
    }
  }
  // (sum_j c_j U_ij) / sum_j c_j with integer counts, accumulated in column
  // order, so raw samples reproduce a plain double loop exactly.
  double numerator = 0.0;
  std::int64_t denominator = 0;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const std::int64_t c = j == self ? col_counts[j] - 1 : col_counts[j];
    if (c == 0) continue;
    numerator += static_cast<double>(c) * row[j];
    denominator += c;
  }
  if (denominator == 0) return row[self];
  return numerator / static_cast<double>(denominator);
}

UtilityMatrix utility_matrix(const NBestEntry& entry, Metric& utility, const MbrConfig& cfg,
                             std::optional<std::vector<std::size_t>> rows,
                             std::optional<std::vector<std::size_t>> cols) {
  const std::size_t n = entry.candidates.size();
  if (n == 0) {
    throw ValidationError("segment " + std::to_string(entry.segment.id) + " has no candidates");
  }
  if (utility.kind() != MetricKind::kReferenceBased) {
    throw ValidationError("MBR utility '" + utility.name() + "' must be reference-based");
  }
  UtilityMatrix m;
  m.include_diagonal = cfg.include_diagonal;
  if (rows) {
    m.rows = std::move(*rows);
  } else {
    m.rows.resize(n);
    std::iota(m.rows.begin(), m.rows.end(), std::size_t{0});
  }
  if (cols) {
    m.cols = std::move(*cols);
  } else {
    std::size_t limit = n;
    if (cfg.num_pseudo_refs) {
      if (*cfg.num_pseudo_refs == 0) throw ValidationError("pseudo-reference count must be >= 1");
      limit = std::min(limit, *cfg.num_pseudo_refs);
    }
    m.cols.resize(limit);
    std::iota(m.cols.begin(), m.cols.end(), std::size_t{0});
  }
  for (std::size_t idx : m.rows) {
    if (idx >= n) throw ValidationError("hypothesis index out of range");
  }

  std::int64_t total = 0;
  for (std::size_t idx : m.cols) {
    if (idx >= n) throw ValidationError("pseudo-reference index out of range");
    m.col_counts.push_back(entry.candidates[idx].multiplicity);
    total += entry.candidates[idx].multiplicity;
  }
  for (auto c : m.col_counts) {
    m.col_weights.push_back(static_cast<double>(c) / static_cast<double>(total));
  }

  std::vector<MetricRow> requests;
  requests.reserve(m.rows.size() * m.cols.size());
  for (std::size_t i : m.rows) {
    for (std::size_t j : m.cols) {
      requests.push_back(
          {entry.segment.text, entry.candidates[i].text, entry.candidates[j].text});
    }
  }
  std::vector<double> scores;
  try {
    scores = utility.score(requests);
  } catch (const ScorerError& err) {
    if (err.row() < requests.size()) {
      throw ScorerError(err.reason(),
                        std::string(err.what()) + " [segment " +
                            std::to_string(entry.segment.id) + ", hyp " +
                            std::to_string(m.rows[err.row() / m.cols.size()]) + ", ref " +
                            std::to_string(m.cols[err.row() % m.cols.size()]) + "]",
                        err.row());
    }
    throw;
  }
  m.values.assign(m.rows.size(), std::vector<double>(m.cols.size()));
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    std::copy_n(scores.begin() + static_cast<std::ptrdiff_t>(i * m.cols.size()),
                m.cols.size(), m.values[i].begin());
  }
  return m;
}

Selection select_from_matrix(const NBestEntry& entry, const UtilityMatrix& matrix) {
  std::vector<double> eu;
  eu.reserve(matrix.rows.size());
  for (std::size_t i = 0; i < matrix.rows.size(); ++i) eu.push_back(matrix.expected_utility(i));
  Selection s;
  s.segment_id = entry.segment.id;
  const std::size_t best = argmax_lowest(eu, &s.margin);
  s.index = matrix.rows[best];
  s.text = entry.candidates[s.index].text;
  s.score = eu[best];
  return s;
}

Selection mbr_select(const NBestEntry& entry, Metric& utility, const MbrConfig& cfg) {
  return select_from_matrix(entry, utility_matrix(entry, utility, cfg));
}

std::vector<std::size_t> prune_top(const std::vector<double>& scores, std::size_t m) {
  if (m == 0 || m > scores.size()) {
    throw ValidationError("prune size " + std::to_string(m) + " must lie in [1, " +
                          std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(m);
  std::sort(order.begin(), order.end());
  return order;
}

Selection two_stage_select(const NBestEntry& entry, const FeatureMatrix& features,
                           std::size_t segment, const WeightsTable& weights, Metric& utility,
                           const MbrConfig& cfg) {
  if (!cfg.prune_to) throw ValidationError("two-stage decoding needs prune_to");
  const auto kept = prune_top(linear_scores(features, segment, weights), *cfg.prune_to);
  std::optional<std::vector<std::size_t>> cols = kept;
  if (cfg.full_pseudo_refs) cols.reset();
  return select_from_matrix(entry, utility_matrix(entry, utility, cfg, kept, cols));
}

std::vector<Selection> mbr_decode(const std::vector<NBestEntry>& entries, Metric& utility,
                                  const MbrConfig& cfg, int jobs) {
  std::vector<Selection> out(entries.size());
  parallel_for(entries.size(), jobs,
               [&](std::size_t e) { out[e] = mbr_select(entries[e], utility, cfg); });
  return out;
}

std::vector<Selection> two_stage_decode(const std::vector<NBestEntry>& entries,
                                        const FeatureMatrix& features,
                                        const WeightsTable& weights, Metric& utility,
                                        const MbrConfig& cfg, int jobs) {
  if (features.values.size() != entries.size()) {
    throw ValidationError("feature matrix does not match the N-best list");
  }
  std::vector<Selection> out(entries.size());
  parallel_for(entries.size(), jobs, [&](std::size_t e) {
    out[e] = two_stage_select(entries[e], features, e, weights, utility, cfg);
  });
  return out;
}

}  // namespace qad
