#include "qad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "qad/error.hpp"
#include "qad/external_scorer.hpp"
#include "text.hpp"

namespace qad {

namespace {

// ---------------------------------------------------------------------------
// 13a passes. Every pattern involves only ASCII bytes, so scanning bytes
// gives the same result as scanning code points.

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// [\{-\~\[-\` -\&\(-\+\:-\@\/]
bool is_13a_symbol(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= '{' && u <= '~') || (u >= '[' && u <= '`') ||
         (u >= ' ' && u <= '&') || (u >= '(' && u <= '+') ||
         (u >= ':' && u <= '@') || u == '/';
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  while (true) {
    const auto hit = s.find(from, pos);
    if (hit == std::string::npos) break;
    out.append(s, pos, hit - pos);
    out.append(to);
    pos = hit + from.size();
  }
  out.append(s, pos);
  s = std::move(out);
}

std::string tokenize_13a_line(std::string_view input) {
  std::string line(input);
  replace_all(line, "<skipped>", "");
  replace_all(line, "-\n", "");
  replace_all(line, "\n", " ");
  if (line.find('&') != std::string::npos) {
    replace_all(line, "&quot;", "\"");
    replace_all(line, "&amp;", "&");
    replace_all(line, "&lt;", "<");
    replace_all(line, "&gt;", ">");
  }
  line = " " + line + " ";

  std::string a;
  a.reserve(line.size() * 2);
  for (char c : line) {
    if (is_13a_symbol(c)) {
      a += ' ';
      a += c;
      a += ' ';
    } else {
      a += c;
    }
  }

  // ([^0-9])([\.,]) -> "\1 \2 "
  std::string b;
  b.reserve(a.size() * 2);
  for (std::size_t i = 0; i < a.size();) {
    if (i + 1 < a.size() && !is_digit(a[i]) && (a[i + 1] == '.' || a[i + 1] == ',')) {
      b += a[i];
      b += ' ';
      b += a[i + 1];
      b += ' ';
      i += 2;
    } else {
      b += a[i++];
    }
  }

  // ([\.,])([^0-9]) -> " \1 \2"
  std::string c;
  c.reserve(b.size() * 2);
  for (std::size_t i = 0; i < b.size();) {
    if (i + 1 < b.size() && (b[i] == '.' || b[i] == ',') && !is_digit(b[i + 1])) {
      c += ' ';
      c += b[i];
      c += ' ';
      c += b[i + 1];
      i += 2;
    } else {
      c += b[i++];
    }
  }

  // ([0-9])(-) -> "\1 \2 "
  std::string d;
  d.reserve(c.size() * 2);
  for (std::size_t i = 0; i < c.size();) {
    if (i + 1 < c.size() && is_digit(c[i]) && c[i + 1] == '-') {
      d += c[i];
      d += ' ';
      d += '-';
      d += ' ';
      i += 2;
    } else {
      d += c[i++];
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Prepared sentences. n-grams are keyed by their space-joined text, which is
// unambiguous because tokens never contain whitespace.

struct BleuSide {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, std::int64_t> ngrams;
};

BleuSide prepare_bleu(std::string_view sentence) {
  BleuSide side;
  side.tokens = tokenize_13a(text::rstrip(sentence));
  const auto& t = side.tokens;
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::string key;
    for (std::size_t n = 0; n < kBleuOrder && i + n < t.size(); ++n) {
      if (n) key += ' ';
      key += t[i + n];
      ++side.ngrams[key];
    }
  }
  return side;
}

std::size_t ngram_order(const std::string& key) {
  return static_cast<std::size_t>(std::count(key.begin(), key.end(), ' '));
}

SufficientStats bleu_stats(const BleuSide& hyp, const BleuSide& ref) {
  SufficientStats s;
  s.hyp_len = static_cast<std::int64_t>(hyp.tokens.size());
  s.ref_len = static_cast<std::int64_t>(ref.tokens.size());
  for (const auto& [gram, count] : hyp.ngrams) {
    const auto n = ngram_order(gram);
    s.total[n] += count;
    if (auto it = ref.ngrams.find(gram); it != ref.ngrams.end()) {
      s.match[n] += std::min(count, it->second);
    }
  }
  return s;
}

double sentence_bleu(const BleuSide& hyp, const BleuSide& ref) {
  if (hyp.tokens == ref.tokens) return 100.0;
  return smoothed_bleu(bleu_stats(hyp, ref));
}

struct ChrfSide {
  std::u32string chars;
  std::array<std::unordered_map<std::u32string, std::int64_t>, kChrfOrder> ngrams;
};

ChrfSide prepare_chrf(std::string_view sentence) {
  ChrfSide side;
  for (char32_t c : text::decode_utf8(sentence)) {
    if (!text::is_space(c)) side.chars.push_back(c);
  }
  const auto& s = side.chars;
  for (std::size_t n = 1; n <= kChrfOrder; ++n) {
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      ++side.ngrams[n - 1][s.substr(i, n)];
    }
  }
  return side;
}

ChrfStats chrf_stats(const ChrfSide& hyp, const ChrfSide& ref) {
  ChrfStats s;
  s.identical = hyp.chars == ref.chars;
  for (std::size_t n = 0; n < kChrfOrder; ++n) {
    for (const auto& [gram, count] : hyp.ngrams[n]) {
      s.hyp[n] += count;
      if (auto it = ref.ngrams[n].find(gram); it != ref.ngrams[n].end()) {
        s.match[n] += std::min(count, it->second);
      }
    }
    for (const auto& [gram, count] : ref.ngrams[n]) s.ref[n] += count;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Builtin Metric adapters. Batches cache the prepared form of each distinct
// string, which matters for MBR where every candidate appears 2N times.

template <typename Side, Side (*Prepare)(std::string_view),
          double (*Score)(const Side&, const Side&)>
class BuiltinMetric final : public Metric {
 public:
  explicit BuiltinMetric(std::string name) : name_(std::move(name)) {}

  std::string name() const override { return name_; }
  MetricKind kind() const override { return MetricKind::kReferenceBased; }

  std::vector<double> score(std::span<const MetricRow> rows) override {
    check_rows(rows);
    std::unordered_map<std::string_view, Side> cache;
    auto prepared = [&](std::string_view s) -> const Side& {
      auto it = cache.find(s);
      if (it == cache.end()) it = cache.emplace(s, Prepare(s)).first;
      return it->second;
    };
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(Score(prepared(r.hyp), prepared(*r.ref)));
    return out;
  }

 private:
  std::string name_;
};

double chrf_pair(const ChrfSide& hyp, const ChrfSide& ref) {
  return chrf_score(chrf_stats(hyp, ref));
}

double bleu_pair(const BleuSide& hyp, const BleuSide& ref) {
  return sentence_bleu(hyp, ref);
}

using BleuMetric = BuiltinMetric<BleuSide, &prepare_bleu, &bleu_pair>;
using ChrfMetric = BuiltinMetric<ChrfSide, &prepare_chrf, &chrf_pair>;

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::string> tokenize_13a(std::string_view text) {
  std::vector<std::string> out;
  const std::string line = tokenize_13a_line(text);
  for (auto tok : text::split_whitespace(line)) out.emplace_back(tok);
  return out;
}

SufficientStats& SufficientStats::operator+=(const SufficientStats& other) {
  for (int n = 0; n < kBleuOrder; ++n) {
    match[n] += other.match[n];
    total[n] += other.total[n];
  }
  hyp_len += other.hyp_len;
  ref_len += other.ref_len;
  return *this;
}

SufficientStats& SufficientStats::operator-=(const SufficientStats& other) {
  for (int n = 0; n < kBleuOrder; ++n) {
    match[n] -= other.match[n];
    total[n] -= other.total[n];
  }
  hyp_len -= other.hyp_len;
  ref_len -= other.ref_len;
  return *this;
}

SufficientStats bleu_stats(std::string_view hyp, std::string_view ref) {
  return bleu_stats(prepare_bleu(hyp), prepare_bleu(ref));
}

double corpus_bleu(const SufficientStats& s) {
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < kBleuOrder; ++n) {
    if (s.total[n] == 0 || s.match[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(s.match[n]) /
                        static_cast<double>(s.total[n]));
  }
  const double bp =
      s.hyp_len < s.ref_len
          ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len))
          : 1.0;
  return 100.0 * bp * std::exp(log_sum / kBleuOrder);
}

double smoothed_bleu(const SufficientStats& s) {
  if (s.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  double smooth = 1.0;
  for (int n = 0; n < kBleuOrder; ++n) {
    if (s.total[n] == 0) continue;
    const auto total = static_cast<double>(s.total[n]);
    if (s.match[n] == 0) {
      smooth *= 2.0;
      log_sum += std::log(1.0 / (smooth * total));
    } else {
      log_sum += std::log(static_cast<double>(s.match[n]) / total);
    }
    ++orders;
  }
  const double bp =
      s.hyp_len < s.ref_len
          ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len))
          : 1.0;
  return 100.0 * bp * std::exp(log_sum / orders);
}

double sentence_bleu(std::string_view hyp, std::string_view ref) {
  return sentence_bleu(prepare_bleu(hyp), prepare_bleu(ref));
}

ChrfStats& ChrfStats::operator+=(const ChrfStats& other) {
  for (int n = 0; n < kChrfOrder; ++n) {
    hyp[n] += other.hyp[n];
    ref[n] += other.ref[n];
    match[n] += other.match[n];
  }
  identical = identical && other.identical;
  return *this;
}

ChrfStats chrf_stats(std::string_view hyp, std::string_view ref) {
  return chrf_stats(prepare_chrf(hyp), prepare_chrf(ref));
}

double chrf_score(const ChrfStats& s) {
  if (s.identical) return 100.0;
  constexpr double factor = kChrfBeta * kChrfBeta;
  double sum = 0.0;
  int orders = 0;
  for (int n = 0; n < kChrfOrder; ++n) {
    if (s.hyp[n] == 0 || s.ref[n] == 0) continue;
    const double prec = static_cast<double>(s.match[n]) / static_cast<double>(s.hyp[n]);
    const double rec = static_cast<double>(s.match[n]) / static_cast<double>(s.ref[n]);
    const double denom = factor * prec + rec;
    sum += denom > 0.0 ? (1.0 + factor) * prec * rec / denom : 0.0;
    ++orders;
  }
  return orders == 0 ? 0.0 : 100.0 * sum / orders;
}

double sentence_chrf(std::string_view hyp, std::string_view ref) {
  return chrf_score(chrf_stats(hyp, ref));
}

// ---------------------------------------------------------------------------

void MetricSpec::validate() const {
  if ((backend == MetricBackend::kExternal) != external.has_value()) {
    throw ValidationError("metric '" + name +
                          "': external config must be present iff backend is external");
  }
  if (external && external->command.empty()) {
    throw ValidationError("metric '" + name + "': empty scorer command");
  }
  if (backend != MetricBackend::kExternal && kind != MetricKind::kReferenceBased) {
    throw ValidationError("builtin metric '" + name + "' is reference-based");
  }
}

MetricSpec parse_metric_spec(std::string_view text, MetricKind kind) {
  MetricSpec spec;
  if (text == "bleu") {
    spec.name = "bleu";
    spec.backend = MetricBackend::kBuiltinBleu;
  } else if (text == "chrf") {
    spec.name = "chrf";
    spec.backend = MetricBackend::kBuiltinChrf;
  } else if (text.starts_with("external:")) {
    ExternalScorerConfig cfg;
    std::istringstream ss{std::string(text.substr(9))};
    for (std::string arg; ss >> arg;) cfg.command.push_back(arg);
    if (cfg.command.empty()) throw ValidationError("external metric without a command");
    spec.name = "external";
    spec.kind = kind;
    spec.backend = MetricBackend::kExternal;
    spec.external = std::move(cfg);
  } else {
    throw ValidationError("unknown metric '" + std::string(text) +
                          "' (expected bleu, chrf or external:<cmd>)");
  }
  spec.validate();
  return spec;
}

double Metric::operator()(std::string_view src, std::string_view hyp,
                          std::optional<std::string_view> ref) {
  const MetricRow row{src, hyp, ref};
  return score(std::span(&row, 1)).front();
}

void Metric::check_rows(std::span<const MetricRow> rows) const {
  const bool needs_ref = kind() == MetricKind::kReferenceBased;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].ref.has_value() != needs_ref) {
      throw ValidationError("metric '" + name() + "' row " + std::to_string(i) +
                            (needs_ref ? ": reference-based metric called without a reference"
                                       : ": reference-free metric called with a reference"));
    }
  }
}

std::unique_ptr<Metric> metric_fn(const MetricSpec& spec) {
  spec.validate();
  switch (spec.backend) {
    case MetricBackend::kBuiltinBleu:
      return std::make_unique<BleuMetric>(spec.name.empty() ? "bleu" : spec.name);
    case MetricBackend::kBuiltinChrf:
      return std::make_unique<ChrfMetric>(spec.name.empty() ? "chrf" : spec.name);
    case MetricBackend::kExternal:
      return std::make_unique<ExternalMetric>(*spec.external, spec.kind);
  }
  throw ValidationError("unknown metric backend");
}

}  // namespace qad
