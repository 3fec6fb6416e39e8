#pragma once

// Order-k categorical autoregressive model with explicit conditional tables.
// Small enough to enumerate exactly, which makes it the ground truth for
// testing beam search and samplers.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qad/corpus_io.hpp"

namespace qad {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Padding symbol for contexts shorter than the model order.
inline constexpr TokenId kBeginMarker = -1;
inline constexpr const char* kBeginMarkerText = "<s>";

// log-probability of an impossible event.
inline constexpr double kImpossible = -std::numeric_limits<double>::infinity();
inline bool is_impossible(double logprob) { return logprob == kImpossible; }

class Vocab {
 public:
  // Tokens must be unique, nonempty, free of whitespace and '|', and distinct
  // from the begin marker text. Order is significant: it breaks ties.
  Vocab(std::vector<std::string> tokens, TokenId eos_index);

  std::size_t size() const { return tokens_.size(); }
  TokenId eos() const { return eos_; }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(const std::string& token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Space-joined text of `seq` without the trailing eos.
  std::string detokenize(std::span<const TokenId> seq) const;

  bool operator==(const Vocab&) const = default;

 private:
  std::vector<std::string> tokens_;
  TokenId eos_;
};

struct SmoothingConfig {
  double epsilon = 0.1;
};

class ToyModel {
 public:
  using Context = std::vector<TokenId>;  // exactly `order` entries
  using Row = std::vector<double>;

  // Rows for contexts absent from `rows` are uniform. Throws ValidationError
  // if a row has the wrong size, a negative entry, or does not sum to 1
  // within 1e-12.
  ToyModel(Vocab vocab, int order, int max_len, std::map<Context, Row> rows);

  const Vocab& vocab() const { return vocab_; }
  int order() const { return order_; }
  // Longest sequence, counted in tokens including the final eos.
  int max_len() const { return max_len_; }
  const std::map<Context, Row>& rows() const { return rows_; }

  // The last `order` tokens of the begin-padded prefix.
  Context context_of(std::span<const TokenId> prefix) const;
  const Row& row(const Context& context) const;

  bool operator==(const ToyModel&) const = default;

 private:
  Vocab vocab_;
  int order_;
  int max_len_;
  std::map<Context, Row> rows_;
  Row uniform_;
};

// P(t|c) = (1-eps) count(c,t)/count(c) + eps/|V| for observed contexts;
// unobserved contexts are uniform. Every sequence must end with eos and
// contain no other eos.
ToyModel train_smoothed(const std::vector<TokenSeq>& sequences, int order,
                        SmoothingConfig smoothing, const Vocab& vocab,
                        int max_len);

// Distribution over the vocabulary for the next token after `prefix`.
const ToyModel::Row& next_distribution(const ToyModel& model,
                                       std::span<const TokenId> prefix);

// Sum of step log-probabilities; kImpossible on a zero-probability step.
double sequence_logprob(const ToyModel& model, std::span<const TokenId> seq);

struct ScoredSequence {
  TokenSeq tokens;  // eos-terminated
  double logprob = 0.0;

  bool operator==(const ScoredSequence&) const = default;
};

inline constexpr std::uint64_t kDefaultEnumerationBudget = 1'000'000;

// Every eos-terminated sequence of length <= max_len, sorted by logprob
// descending with ties in lexicographic token order. Refuses when
// |V|^max_len exceeds `budget`.
std::vector<ScoredSequence> enumerate_all(
    const ToyModel& model, int max_len,
    std::uint64_t budget = kDefaultEnumerationBudget);

// Ordering used by enumeration and beam search: higher score first, then
// lexicographically smaller token sequence.
bool ranks_before(double score_a, std::span<const TokenId> a, double score_b,
                  std::span<const TokenId> b);

// JSON: {"vocab":[...], "eos_index":i, "order":k, "max_len":L,
//        "rows":{"<s>|a":[...], ...}}
std::string model_to_json(const ToyModel& model);
ToyModel model_from_json(const std::string& text);

// Training corpus: one whitespace-tokenized sequence per line, eos implied.
// The vocabulary is built in first-appearance order with `eos_token` last.
struct TrainingCorpus {
  Vocab vocab;
  std::vector<TokenSeq> sequences;
};
TrainingCorpus load_training_corpus(const std::vector<std::string>& lines,
                                    const std::string& eos_token = "</s>");

// A model bound to one source segment; the on-disk unit of a model
// directory (`<dir>/*.json`, each with "id", optional "src"/"refs" and the
// model fields above).
struct SegmentModel {
  SourceSegment segment;
  std::vector<std::string> references;
  ToyModel model;
};

std::string segment_model_to_json(const SegmentModel& sm);
SegmentModel segment_model_from_json(const std::string& text);
std::vector<SegmentModel> load_model_dir(const std::filesystem::path& dir);
void save_segment_model(const SegmentModel& sm, const std::filesystem::path& path);

}  // namespace qad
