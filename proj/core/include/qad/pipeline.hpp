#pragma once

// End-to-end runs (generate -> features -> tune -> rank -> evaluate), corpus
// evaluation reports, MQM aggregation and `key = value` run configs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qad/corpus_io.hpp"
#include "qad/generation.hpp"
#include "qad/mbr.hpp"
#include "qad/mert.hpp"
#include "qad/metrics.hpp"
#include "qad/rerank.hpp"

namespace qad {

// ---------------------------------------------------------------------------
// Evaluation

struct EvalScore {
  std::string metric;
  double score = 0.0;
};

struct EvalReport {
  std::size_t num_segments = 0;
  std::vector<EvalScore> scores;
};

// BLEU from summed sufficient statistics, chrF from summed character n-gram
// statistics, external metrics as the mean sentence score.
EvalReport eval_report(const std::vector<std::string>& hyps,
                       const std::vector<std::string>& refs,
                       const std::vector<std::string>& srcs,
                       const std::vector<MetricSpec>& specs);

std::string format_report_text(const EvalReport& report);
// Header line "metric\tscore", then one row per metric.
std::string format_report_tsv(const EvalReport& report);

// ---------------------------------------------------------------------------
// MQM

inline constexpr double kDefaultMqmNorm = 25.0;

struct MqmCounts {
  std::int64_t minor = 0;
  std::int64_t major = 0;
  std::int64_t critical = 0;
  std::int64_t num_segments = 0;
};

// 100 * (1 - (minor + 5 major + 10 critical) / (norm * num_segments)),
// floored at 0.
double mqm_score(const MqmCounts& counts, double norm = kDefaultMqmNorm);

// ---------------------------------------------------------------------------
// Run configs

// Ordered `key = value` entries. Blank lines and lines starting with '#'
// are skipped; keys may repeat (list-valued options).
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

ConfigEntries parse_config(const std::string& text, const std::string& origin = "config");
ConfigEntries read_config_file(const std::filesystem::path& path);
std::string format_config(const ConfigEntries& entries);

// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Pipeline

// Stored features (logprob and the candidates' feature maps) plus one column
// per metric source.
FeatureMatrix collect_features(const std::vector<NBestEntry>& entries,
                               const std::vector<FeatureSource>& sources);

// parse_metric_spec plus external scorer batching and timeout.
MetricSpec make_metric_spec(const std::string& text, MetricKind kind, int batch_size,
                            double timeout_seconds);

enum class RankMethod { kFixed, kTuned, kMbr, kTwoStage };

RankMethod parse_rank_method(const std::string& text);
std::string to_string(RankMethod method);

struct PipelineConfig {
  // Exactly one input: a model directory to generate from, or an N-best file.
  std::optional<std::filesystem::path> model_dir;
  std::optional<std::filesystem::path> nbest;
  GenConfig gen;

  // Reference-free metric specs extracted as feature columns, on top of
  // logprob and any features stored in the N-best file.
  std::vector<std::string> qe_metrics;

  RankMethod rank = RankMethod::kFixed;
  std::string fixed_feature = kLogprobFeature;

  // Weights for tuned/two-stage ranking: read from a file, or tuned with MERT
  // on a dev set (a model directory or an N-best file with references).
  std::optional<std::filesystem::path> weights;
  std::optional<std::filesystem::path> dev_model_dir;
  std::optional<std::filesystem::path> dev_nbest;
  MertConfig mert;
  std::string mert_metric = "bleu";  // sentence metric of the mean objective

  std::string utility = "bleu";
  MbrConfig mbr;

  // Scored against each entry's first reference when every entry has one.
  std::vector<std::string> eval_metrics = {"bleu", "chrf"};

  // Applied to every external metric spec.
  int batch_size = 256;
  double timeout_seconds = 60.0;

  std::filesystem::path out_dir;
  ReadOptions read;
  int jobs = 1;
};

struct PipelineResult {
  std::vector<Selection> selections;
  std::optional<EvalReport> report;
  std::optional<MertResult> mert;
  // Every file written, in stage order.
  std::vector<std::filesystem::path> outputs;
};

// Stage outputs in out_dir: nbest.jsonl, features.jsonl, [dev.nbest.jsonl,
// dev.features.jsonl, weights.tsv, mert.trace.jsonl], selections.jsonl,
// hyps.txt, [eval.txt, eval.tsv]. A failing stage rethrows its error with
// "stage <name>: " prepended; files from earlier stages stay in place.
PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace qad
