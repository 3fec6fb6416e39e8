#pragma once

// Adapter for metrics that run in a separate process.
//
// Wire protocol (UTF-8, LF-terminated lines over the child's stdin/stdout):
//   child -> "QAD-SCORER 1 <name> <ref|noref>"            (once, at start)
//   parent -> "src\thyp[\tref]"                          (one line per row)
//   child -> "<decimal float>"                           (one line per row)
// Tabs, newlines and backslashes inside fields are escaped as \t, \n, \\.
// The parent flushes after each batch of at most `batch_size` rows.

#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <sys/types.h>
#include <vector>

#include "qad/metrics.hpp"

namespace qad {

std::string escape_field(std::string_view field);
std::string unescape_field(std::string_view field);

// Owns one scorer process for its lifetime. Not thread-safe; ExternalMetric
// serializes access.
class ExternalScorer {
 public:
  // Launches the process and reads the handshake. Throws ScorerError.
  explicit ExternalScorer(ExternalScorerConfig cfg);
  ~ExternalScorer();

  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  const std::string& name() const { return name_; }
  MetricKind kind() const { return kind_; }

  std::vector<double> score(std::span<const MetricRow> rows);

 private:
  void launch();
  std::string read_line(double deadline, std::size_t response_no);
  void write_all(const std::string& data, double deadline);
  void drain_stderr();
  [[noreturn]] void fail(int reason, const std::string& what,
                         std::size_t row = static_cast<std::size_t>(-1));
  void shutdown();

  ExternalScorerConfig cfg_;
  std::string name_;
  MetricKind kind_ = MetricKind::kReferenceFree;
  pid_t pid_ = -1;
  int stdin_fd_ = -1;
  int stdout_fd_ = -1;
  int stderr_fd_ = -1;
  std::string out_buffer_;
  std::string err_buffer_;
  std::size_t responses_ = 0;
};

// Metric facade over a scorer process. Batches from concurrent callers are
// serialized; each call receives its own rows' scores in order.
class ExternalMetric final : public Metric {
 public:
  ExternalMetric(ExternalScorerConfig cfg, MetricKind declared_kind);

  std::string name() const override { return scorer_.name(); }
  MetricKind kind() const override { return scorer_.kind(); }
  std::vector<double> score(std::span<const MetricRow> rows) override;

 private:
  std::mutex mutex_;
  ExternalScorer scorer_;
};

}  // namespace qad
