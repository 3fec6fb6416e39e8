#include "qad/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qad/error.hpp"

namespace qad {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr double kRowSumTolerance = 1e-12;

std::string context_key(const Vocab& vocab, const ToyModel::Context& ctx) {
  std::string key;
  for (std::size_t i = 0; i < ctx.size(); ++i) {
    if (i) key += '|';
    key += ctx[i] == kBeginMarker ? kBeginMarkerText : vocab.token(ctx[i]);
  }
  return key;
}

ToyModel::Context parse_context_key(const Vocab& vocab, const std::string& key,
                                    int order) {
  ToyModel::Context ctx;
  std::size_t start = 0;
  while (true) {
    const auto bar = key.find('|', start);
    const std::string part = key.substr(start, bar - start);
    if (part == kBeginMarkerText) {
      ctx.push_back(kBeginMarker);
    } else if (auto id = vocab.find(part)) {
      ctx.push_back(*id);
    } else {
      throw ParseError("context '" + key + "' names unknown token '" + part + "'");
    }
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  if (static_cast<int>(ctx.size()) != order) {
    throw ParseError("context '" + key + "' does not have " +
                     std::to_string(order) + " entries");
  }
  return ctx;
}

void check_terminated(const Vocab& vocab, std::span<const TokenId> seq,
                      const char* what) {
  if (seq.empty() || seq.back() != vocab.eos()) {
    throw ValidationError(std::string(what) + " does not end with eos");
  }
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    if (seq[i] == vocab.eos()) {
      throw ValidationError(std::string(what) + " has eos before its end");
    }
  }
}

ordered_json model_fields(const ToyModel& model) {
  ordered_json j;
  j["vocab"] = model.vocab().tokens();
  j["eos_index"] = model.vocab().eos();
  j["order"] = model.order();
  j["max_len"] = model.max_len();
  ordered_json rows = ordered_json::object();
  for (const auto& [ctx, row] : model.rows()) {
    rows[context_key(model.vocab(), ctx)] = row;
  }
  j["rows"] = std::move(rows);
  return j;
}

ToyModel model_from_fields(const json& j) {
  try {
    Vocab vocab(j.at("vocab").get<std::vector<std::string>>(),
                j.at("eos_index").get<TokenId>());
    const int order = j.at("order").get<int>();
    const int max_len = j.at("max_len").get<int>();
    std::map<ToyModel::Context, ToyModel::Row> rows;
    for (const auto& [key, value] : j.at("rows").items()) {
      rows.emplace(parse_context_key(vocab, key, order),
                   value.get<ToyModel::Row>());
    }
    return ToyModel(std::move(vocab), order, max_len, std::move(rows));
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model JSON: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::vector<std::string> tokens, TokenId eos_index)
    : tokens_(std::move(tokens)), eos_(eos_index) {
  if (tokens_.size() < 2) throw ValidationError("vocabulary needs >= 2 tokens");
  if (eos_ < 0 || static_cast<std::size_t>(eos_) >= tokens_.size()) {
    throw ValidationError("eos index out of range");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    if (t.empty() || t == kBeginMarkerText ||
        t.find_first_of(" \t\n\r|") != std::string::npos) {
      throw ValidationError("invalid vocabulary token '" + t + "'");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (tokens_[j] == t) throw ValidationError("duplicate token '" + t + "'");
    }
  }
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValidationError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocab::find(const std::string& token) const {
  auto it = std::find(tokens_.begin(), tokens_.end(), token);
  if (it == tokens_.end()) return std::nullopt;
  return static_cast<TokenId>(it - tokens_.begin());
}

std::string Vocab::detokenize(std::span<const TokenId> seq) const {
  std::string out;
  for (TokenId t : seq) {
    if (t == eos_) break;
    if (!out.empty()) out += ' ';
    out += token(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ToyModel

ToyModel::ToyModel(Vocab vocab, int order, int max_len,
                   std::map<Context, Row> rows)
    : vocab_(std::move(vocab)),
      order_(order),
      max_len_(max_len),
      rows_(std::move(rows)),
      uniform_(vocab_.size(), 1.0 / static_cast<double>(vocab_.size())) {
  if (order_ < 1) throw ValidationError("model order must be >= 1");
  if (max_len_ < 1) throw ValidationError("max_len must be >= 1");
  const auto v = static_cast<TokenId>(vocab_.size());
  for (const auto& [ctx, row] : rows_) {
    if (static_cast<int>(ctx.size()) != order_) {
      throw ValidationError("context length differs from model order");
    }
    for (TokenId t : ctx) {
      if (t != kBeginMarker && (t < 0 || t >= v || t == vocab_.eos())) {
        throw ValidationError("context contains an invalid token");
      }
    }
    if (row.size() != vocab_.size()) {
      throw ValidationError("row for context '" + context_key(vocab_, ctx) +
                            "' has the wrong size");
    }
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw ValidationError("row for context '" + context_key(vocab_, ctx) +
                              "' has a negative or non-finite entry");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      throw ValidationError("row for context '" + context_key(vocab_, ctx) +
                            "' does not sum to 1");
    }
  }
}

ToyModel::Context ToyModel::context_of(std::span<const TokenId> prefix) const {
  Context ctx(static_cast<std::size_t>(order_), kBeginMarker);
  const std::size_t take = std::min(prefix.size(), ctx.size());
  std::copy(prefix.end() - static_cast<std::ptrdiff_t>(take), prefix.end(),
            ctx.end() - static_cast<std::ptrdiff_t>(take));
  return ctx;
}

const ToyModel::Row& ToyModel::row(const Context& context) const {
  auto it = rows_.find(context);
  return it == rows_.end() ? uniform_ : it->second;
}

// ---------------------------------------------------------------------------
// Operations

ToyModel train_smoothed(const std::vector<TokenSeq>& sequences, int order,
                        SmoothingConfig smoothing, const Vocab& vocab,
                        int max_len) {
  if (sequences.empty()) throw ValidationError("empty training set");
  if (order < 1) throw ValidationError("model order must be >= 1");
  const double eps = smoothing.epsilon;
  if (!(eps >= 0.0 && eps <= 1.0)) {
    throw ValidationError("smoothing epsilon must lie in [0, 1]");
  }
  const auto v = vocab.size();
  const auto vi = static_cast<TokenId>(v);

  // Counting uses an unvalidated shell model only for context_of.
  const ToyModel shape(vocab, order, max_len, {});
  std::map<ToyModel::Context, std::vector<std::int64_t>> counts;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    check_terminated(vocab, seq, ("training sequence " + std::to_string(s)).c_str());
    for (std::size_t t = 0; t < seq.size(); ++t) {
      if (seq[t] < 0 || seq[t] >= vi) {
        throw ValidationError("training sequence " + std::to_string(s) +
                              " has an out-of-range token");
      }
      auto ctx = shape.context_of(std::span(seq).first(t));
      auto& c = counts[ctx];
      if (c.empty()) c.assign(v, 0);
      ++c[static_cast<std::size_t>(seq[t])];
    }
  }

  const double floor = eps / static_cast<double>(v);
  std::map<ToyModel::Context, ToyModel::Row> rows;
  for (const auto& [ctx, c] : counts) {
    const double total = static_cast<double>(std::accumulate(c.begin(), c.end(), std::int64_t{0}));
    ToyModel::Row row(v);
    for (std::size_t t = 0; t < v; ++t) {
      row[t] = (1.0 - eps) * static_cast<double>(c[t]) / total + floor;
    }
    rows.emplace(ctx, std::move(row));
  }
  return ToyModel(vocab, order, max_len, std::move(rows));
}

const ToyModel::Row& next_distribution(const ToyModel& model,
                                       std::span<const TokenId> prefix) {
  if (static_cast<int>(prefix.size()) >= model.max_len()) {
    throw ValidationError("prefix length must be below max_len");
  }
  const TokenId eos = model.vocab().eos();
  for (std::size_t i = 0; i + 1 < prefix.size(); ++i) {
    if (prefix[i] == eos) {
      throw ValidationError("prefix has eos in a non-final position");
    }
  }
  return model.row(model.context_of(prefix));
}

double sequence_logprob(const ToyModel& model, std::span<const TokenId> seq) {
  check_terminated(model.vocab(), seq, "sequence");
  if (static_cast<int>(seq.size()) > model.max_len()) {
    throw ValidationError("sequence longer than max_len");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const double p = model.row(model.context_of(seq.first(t)))
                         [static_cast<std::size_t>(seq[t])];
    if (p == 0.0) return kImpossible;
    total += std::log(p);
  }
  return total;
}

bool ranks_before(double score_a, std::span<const TokenId> a, double score_b,
                  std::span<const TokenId> b) {
  if (score_a != score_b) return score_a > score_b;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

std::vector<ScoredSequence> enumerate_all(const ToyModel& model, int max_len,
                                          std::uint64_t budget) {
  if (max_len < 1) throw ValidationError("max_len must be >= 1");
  if (max_len > model.max_len()) {
    throw ValidationError("enumeration max_len exceeds the model's max_len");
  }
  const std::uint64_t v = model.vocab().size();
  std::uint64_t space = 1;
  for (int i = 0; i < max_len; ++i) {
    if (space > budget / v) {
      space = budget + 1;
      break;
    }
    space *= v;
  }
  if (space > budget) {
    throw ValidationError("enumeration refused: |V|^max_len = " +
                          std::to_string(v) + "^" + std::to_string(max_len) +
                          " exceeds the budget of " + std::to_string(budget));
  }

  const TokenId eos = model.vocab().eos();
  std::vector<ScoredSequence> out;
  TokenSeq prefix;
  // Depth-first; log-probabilities accumulate left to right exactly as
  // sequence_logprob does, so scores agree bit for bit.
  auto visit = [&](auto&& self, double logprob) -> void {
    const auto& row = model.row(model.context_of(prefix));
    for (TokenId t = 0; t < static_cast<TokenId>(v); ++t) {
      const double p = row[static_cast<std::size_t>(t)];
      const double next = p == 0.0 ? kImpossible : logprob + std::log(p);
      prefix.push_back(t);
      if (t == eos) {
        out.push_back({prefix, next});
      } else if (static_cast<int>(prefix.size()) < max_len) {
        self(self, next);
      }
      prefix.pop_back();
    }
  };
  visit(visit, 0.0);

  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return ranks_before(a.logprob, a.tokens, b.logprob, b.tokens);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string model_to_json(const ToyModel& model) {
  return model_fields(model).dump();
}

ToyModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed model JSON: ") + e.what());
  }
  return model_from_fields(j);
}

TrainingCorpus load_training_corpus(const std::vector<std::string>& lines,
                                    const std::string& eos_token) {
  std::vector<std::string> tokens;
  std::vector<std::vector<std::string>> split;
  for (const auto& line : lines) {
    std::istringstream ss(line);
    std::vector<std::string> words;
    for (std::string w; ss >> w;) {
      if (w == eos_token) throw ValidationError("corpus contains the eos token");
      if (std::find(tokens.begin(), tokens.end(), w) == tokens.end()) {
        tokens.push_back(w);
      }
      words.push_back(std::move(w));
    }
    split.push_back(std::move(words));
  }
  tokens.push_back(eos_token);
  if (tokens.size() < 2) throw ValidationError("corpus has no tokens");
  Vocab vocab(tokens, static_cast<TokenId>(tokens.size() - 1));

  TrainingCorpus corpus{vocab, {}};
  for (const auto& words : split) {
    TokenSeq seq;
    for (const auto& w : words) seq.push_back(*vocab.find(w));
    seq.push_back(vocab.eos());
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

std::string segment_model_to_json(const SegmentModel& sm) {
  ordered_json j;
  j["id"] = sm.segment.id;
  j["src"] = sm.segment.text;
  if (!sm.references.empty()) j["refs"] = sm.references;
  const auto fields = model_fields(sm.model);
  for (const auto& [k, v] : fields.items()) j[k] = v;
  return j.dump();
}

SegmentModel segment_model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed model JSON: ") + e.what());
  }
  SourceSegment seg;
  std::vector<std::string> refs;
  try {
    seg.id = j.at("id").get<std::int64_t>();
    seg.text = j.value("src", std::string());
    if (j.contains("refs")) refs = j.at("refs").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed segment model: ") + e.what());
  }
  return SegmentModel{std::move(seg), std::move(refs), model_from_fields(j)};
}

std::vector<SegmentModel> load_model_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw IoError("not a model directory: " + dir.string());
  }
  std::vector<SegmentModel> models;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    if (f.path().extension() != ".json") continue;
    models.push_back(segment_model_from_json(read_file(f.path())));
  }
  std::sort(models.begin(), models.end(), [](const auto& a, const auto& b) {
    return a.segment.id < b.segment.id;
  });
  for (std::size_t i = 1; i < models.size(); ++i) {
    if (models[i].segment.id == models[i - 1].segment.id) {
      throw ValidationError("duplicate segment id " +
                            std::to_string(models[i].segment.id) +
                            " in model directory");
    }
  }
  return models;
}

void save_segment_model(const SegmentModel& sm,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << segment_model_to_json(sm) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace qad
