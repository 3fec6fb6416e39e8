#pragma once

// Lexical metrics (BLEU, chrF) and the uniform Metric interface that rankers
// consume. Learned metrics live behind ExternalScorer (external_scorer.hpp).

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qad {

// ---------------------------------------------------------------------------
// Tokenization

// mteval-v13a tokenization as used by SacreBLEU `tok:13a`. Case is kept.
std::vector<std::string> tokenize_13a(std::string_view text);

// ---------------------------------------------------------------------------
// BLEU

inline constexpr int kBleuOrder = 4;

struct SufficientStats {
  std::array<std::int64_t, kBleuOrder> match{};
  std::array<std::int64_t, kBleuOrder> total{};
  std::int64_t hyp_len = 0;
  std::int64_t ref_len = 0;

  SufficientStats& operator+=(const SufficientStats& other);
  SufficientStats& operator-=(const SufficientStats& other);
  friend SufficientStats operator+(SufficientStats a, const SufficientStats& b) {
    return a += b;
  }
  bool operator==(const SufficientStats&) const = default;
};

SufficientStats bleu_stats(std::string_view hyp, std::string_view ref);

// Unsmoothed BLEU in [0, 100]; 0 when any order has no hypothesis n-grams or
// no matches.
double corpus_bleu(const SufficientStats& stats);

// Sentence BLEU with exponential (mteval "NIST") smoothing, in [0, 100].
double sentence_bleu(std::string_view hyp, std::string_view ref);
double smoothed_bleu(const SufficientStats& stats);

// ---------------------------------------------------------------------------
// chrF (character n-grams 1..6, beta = 2, whitespace removed)

inline constexpr int kChrfOrder = 6;
inline constexpr double kChrfBeta = 2.0;

struct ChrfStats {
  std::array<std::int64_t, kChrfOrder> hyp{};
  std::array<std::int64_t, kChrfOrder> ref{};
  std::array<std::int64_t, kChrfOrder> match{};
  // Identical inputs; forces exactly 100 at sentence level.
  bool identical = true;

  ChrfStats& operator+=(const ChrfStats& other);
  bool operator==(const ChrfStats&) const = default;
};

ChrfStats chrf_stats(std::string_view hyp, std::string_view ref);
// Mean of per-order F-beta over orders where both sides have n-grams.
double chrf_score(const ChrfStats& stats);
double sentence_chrf(std::string_view hyp, std::string_view ref);

// ---------------------------------------------------------------------------
// Uniform metric interface

enum class MetricKind { kReferenceBased, kReferenceFree };
enum class MetricBackend { kBuiltinBleu, kBuiltinChrf, kExternal };

struct ExternalScorerConfig {
  std::vector<std::string> command;
  int batch_size = 256;
  double timeout_seconds = 60.0;
};

struct MetricSpec {
  std::string name;
  MetricKind kind = MetricKind::kReferenceBased;
  MetricBackend backend = MetricBackend::kBuiltinBleu;
  std::optional<ExternalScorerConfig> external;

  // Throws ValidationError unless `external` is present iff backend=external.
  void validate() const;
};

// "bleu", "chrf", or "external:<command and args>". External specs take
// `kind` (the scorer must declare the same kind in its handshake).
MetricSpec parse_metric_spec(std::string_view text, MetricKind kind);

struct MetricRow {
  std::string_view src;
  std::string_view hyp;
  std::optional<std::string_view> ref;
};

// Higher is better for every metric.
class Metric {
 public:
  virtual ~Metric() = default;

  virtual std::string name() const = 0;
  virtual MetricKind kind() const = 0;
  // One score per row, in order.
  virtual std::vector<double> score(std::span<const MetricRow> rows) = 0;

  double operator()(std::string_view src, std::string_view hyp,
                    std::optional<std::string_view> ref = std::nullopt);

 protected:
  // Throws ValidationError when rows do not match the metric's kind.
  void check_rows(std::span<const MetricRow> rows) const;
};

std::unique_ptr<Metric> metric_fn(const MetricSpec& spec);

}  // namespace qad
