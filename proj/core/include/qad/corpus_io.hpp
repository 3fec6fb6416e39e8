#pragma once

// On-disk data: N-best JSON-lines, parallel text and weight files.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace qad {

struct SourceSegment {
  std::int64_t id = 0;
  std::string text;

  bool operator==(const SourceSegment&) const = default;
};

struct Candidate {
  std::string text;
  std::optional<double> logprob;
  std::map<std::string, double> features;
  std::int64_t multiplicity = 1;
  // Set when generation hit the length limit and eos was appended.
  bool truncated = false;

  bool operator==(const Candidate&) const = default;
};

struct NBestEntry {
  SourceSegment segment;
  std::vector<Candidate> candidates;
  std::vector<std::string> references;

  // Sum of candidate multiplicities (the generation sample count).
  std::int64_t sample_count() const;

  bool operator==(const NBestEntry&) const = default;
};

// Named linear feature weights, in file order.
class WeightsTable {
 public:
  WeightsTable() = default;

  // Throws ValidationError on a repeated name or a non-finite weight.
  void set(const std::string& name, double weight);
  std::optional<double> get(const std::string& name) const;
  bool contains(const std::string& name) const { return get(name).has_value(); }

  const std::vector<std::pair<std::string, double>>& entries() const {
    return entries_;
  }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool has_nonzero() const;

  bool operator==(const WeightsTable&) const = default;

 private:
  std::vector<std::pair<std::string, double>> entries_;
};

struct ReadOptions {
  // Collapse identical candidate texts into multiplicities (first occurrence
  // keeps its position; logprob and features come from the first occurrence).
  bool dedup = false;
};

std::vector<NBestEntry> read_nbest(const std::filesystem::path& path,
                                   const ReadOptions& options = {});
void write_nbest(const std::vector<NBestEntry>& entries,
                 const std::filesystem::path& path);

// Single-record codec used by the file functions; `line_no` only feeds
// error messages.
NBestEntry parse_nbest_record(const std::string& line, std::size_t line_no);
std::string format_nbest_record(const NBestEntry& entry);

// Merges identical candidate texts. Returns, for every original candidate,
// the index of the merged candidate it was folded into.
std::vector<std::size_t> collapse_duplicates(NBestEntry& entry);

std::vector<std::pair<std::string, std::string>> read_parallel(
    const std::filesystem::path& src_path,
    const std::filesystem::path& ref_path);

// One segment per line, LF or CRLF, trailing newline optional.
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::vector<std::string>& lines,
                 const std::filesystem::path& path);

WeightsTable read_weights(const std::filesystem::path& path);
void write_weights(const WeightsTable& weights,
                   const std::filesystem::path& path);

// `%.17g`; used for weight files and anywhere a double must round-trip.
std::string format_double(double value);

}  // namespace qad
