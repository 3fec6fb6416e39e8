#pragma once

// N-best reranking: a single feature (fixed) or a weighted linear combination
// of features (tuned).

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "qad/corpus_io.hpp"
#include "qad/metrics.hpp"

namespace qad {

// Reserved column holding the model log-probability.
inline constexpr const char* kLogprobFeature = "logprob";

struct FeatureMatrix {
  std::vector<std::string> columns;
  // values[segment][candidate][column]
  std::vector<std::vector<std::vector<double>>> values;

  // Index of `name`; throws ValidationError if missing.
  std::size_t column(const std::string& name) const;
  bool has_column(const std::string& name) const;
};

struct Selection {
  std::int64_t segment_id = 0;
  std::size_t index = 0;
  std::string text;
  double score = 0.0;
  // Winning score minus runner-up score; 0 for a single candidate or a tie.
  double margin = 0.0;
};

// A feature source: either the reserved logprob column or a reference-free
// metric, scored over every candidate of the corpus in one batch.
struct FeatureSource {
  std::string name;                // column name
  std::shared_ptr<Metric> metric;  // null for logprob
};

FeatureSource logprob_feature();
FeatureSource metric_feature(std::shared_ptr<Metric> metric);

// Candidates lacking a logprob get -inf in the logprob column. Scorer errors
// are rethrown with segment/candidate coordinates.
FeatureMatrix extract_features(const std::vector<NBestEntry>& entries,
                               const std::vector<FeatureSource>& sources);

// Columns from the candidates' stored "features" maps plus logprob. Every
// candidate must carry the same feature names.
FeatureMatrix stored_features(const std::vector<NBestEntry>& entries);

// Appends the columns of `extra` not already present in `base`.
void merge_features(FeatureMatrix& base, const FeatureMatrix& extra);

// Index of the maximum score; ties go to the lowest index. Returns the
// margin to the runner-up through `margin` when non-null.
std::size_t argmax_lowest(const std::vector<double>& scores, double* margin = nullptr);

std::vector<Selection> rerank_fixed(const std::vector<NBestEntry>& entries,
                                    const FeatureMatrix& features,
                                    const std::string& feature);

// Linear score sum_k w_k f_k for each candidate of one segment.
std::vector<double> linear_scores(const FeatureMatrix& features, std::size_t segment,
                                  const WeightsTable& weights);

std::vector<Selection> rerank_tuned(const std::vector<NBestEntry>& entries,
                                    const FeatureMatrix& features,
                                    const WeightsTable& weights);

// Feature cache: JSON-lines, one record per segment,
//   {"id": <id>, "features": [{"<name>": <value>, ...} per candidate]}
void write_feature_cache(const std::vector<NBestEntry>& entries,
                         const FeatureMatrix& features,
                         const std::filesystem::path& path);
FeatureMatrix read_feature_cache(const std::vector<NBestEntry>& entries,
                                 const std::filesystem::path& path);

// Selection output: JSON-lines {"id","index","text","score","margin"}.
void write_selections(const std::vector<Selection>& selections,
                      const std::filesystem::path& path);
std::vector<Selection> read_selections(const std::filesystem::path& path);

}  // namespace qad
