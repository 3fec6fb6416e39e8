#include "qad/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "qad/error.hpp"

namespace qad {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_candidates(const NBestEntry& e) {
  if (e.candidates.empty()) {
    throw ValidationError("segment " + std::to_string(e.segment.id) + " has no candidates");
  }
}

Selection make_selection(const NBestEntry& e, const std::vector<double>& scores) {
  Selection s;
  s.segment_id = e.segment.id;
  s.index = argmax_lowest(scores, &s.margin);
  s.text = e.candidates[s.index].text;
  s.score = scores[s.index];
  return s;
}

json value_to_json(double v) {
  // JSON has no infinities; a missing logprob is stored as null.
  return std::isfinite(v) ? json(v) : json(nullptr);
}

}  // namespace

std::size_t FeatureMatrix::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ValidationError("unknown feature column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

bool FeatureMatrix::has_column(const std::string& name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

FeatureSource logprob_feature() { return {kLogprobFeature, nullptr}; }

FeatureSource metric_feature(std::shared_ptr<Metric> metric) {
  if (metric->kind() != MetricKind::kReferenceFree) {
    throw ValidationError("feature '" + metric->name() +
                          "' is reference-based; rerankers only use reference-free features");
  }
  auto name = metric->name();
  return {std::move(name), std::move(metric)};
}

std::size_t argmax_lowest(const std::vector<double>& scores, double* margin) {
  if (scores.empty()) throw ValidationError("argmax over an empty candidate list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  if (margin) {
    double runner = kNegInf;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (i != best) runner = std::max(runner, scores[i]);
    }
    if (scores.size() == 1 || scores[best] == runner) {
      *margin = 0.0;
    } else {
      *margin = scores[best] - runner;
    }
  }
  return best;
}

FeatureMatrix extract_features(const std::vector<NBestEntry>& entries,
                               const std::vector<FeatureSource>& sources) {
  FeatureMatrix m;
  std::set<std::string> seen;
  for (const auto& s : sources) {
    if (!seen.insert(s.name).second) {
      throw ValidationError("duplicate feature column '" + s.name + "'");
    }
    m.columns.push_back(s.name);
  }
  m.values.resize(entries.size());
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    m.values[e].assign(entries[e].candidates.size(),
                       std::vector<double>(sources.size(), 0.0));
    for (std::size_t c = 0; c < entries[e].candidates.size(); ++c) coords.emplace_back(e, c);
  }

  for (std::size_t k = 0; k < sources.size(); ++k) {
    const auto& source = sources[k];
    if (!source.metric) {
      for (auto [e, c] : coords) {
        m.values[e][c][k] = entries[e].candidates[c].logprob.value_or(kNegInf);
      }
      continue;
    }
    if (source.metric->kind() != MetricKind::kReferenceFree) {
      throw ValidationError("feature '" + source.name + "' is not reference-free");
    }
    std::vector<MetricRow> rows;
    rows.reserve(coords.size());
    for (auto [e, c] : coords) {
      rows.push_back({entries[e].segment.text, entries[e].candidates[c].text, std::nullopt});
    }
    std::vector<double> scores;
    try {
      scores = source.metric->score(rows);
    } catch (const ScorerError& err) {
      if (err.row() < coords.size()) {
        const auto [e, c] = coords[err.row()];
        throw ScorerError(err.reason(),
                          std::string(err.what()) + " [feature '" + source.name +
                              "', segment " + std::to_string(entries[e].segment.id) +
                              ", candidate " + std::to_string(c) + "]",
                          err.row());
      }
      throw;
    }
    for (std::size_t r = 0; r < coords.size(); ++r) {
      m.values[coords[r].first][coords[r].second][k] = scores[r];
    }
  }
  return m;
}

FeatureMatrix stored_features(const std::vector<NBestEntry>& entries) {
  FeatureMatrix m;
  m.columns.push_back(kLogprobFeature);
  bool first = true;
  for (const auto& e : entries) {
    for (const auto& c : e.candidates) {
      if (first) {
        for (const auto& [name, v] : c.features) {
          if (name != kLogprobFeature) m.columns.push_back(name);
        }
        first = false;
      }
    }
  }
  m.values.resize(entries.size());
  for (std::size_t e = 0; e < entries.size(); ++e) {
    for (std::size_t c = 0; c < entries[e].candidates.size(); ++c) {
      const auto& cand = entries[e].candidates[c];
      std::vector<double> row(m.columns.size());
      row[0] = cand.logprob.value_or(kNegInf);
      for (std::size_t k = 1; k < m.columns.size(); ++k) {
        auto it = cand.features.find(m.columns[k]);
        if (it == cand.features.end()) {
          throw ValidationError("segment " + std::to_string(entries[e].segment.id) +
                                " candidate " + std::to_string(c) + " lacks feature '" +
                                m.columns[k] + "'");
        }
        row[k] = it->second;
      }
      const std::size_t named = cand.features.size() - cand.features.count(kLogprobFeature);
      if (named != m.columns.size() - 1) {
        throw ValidationError("segment " + std::to_string(entries[e].segment.id) +
                              " candidate " + std::to_string(c) +
                              " has a different feature set");
      }
      m.values[e].push_back(std::move(row));
    }
  }
  return m;
}

void merge_features(FeatureMatrix& base, const FeatureMatrix& extra) {
  if (base.values.size() != extra.values.size()) {
    throw ValidationError("feature matrices cover different segment counts");
  }
  for (std::size_t k = 0; k < extra.columns.size(); ++k) {
    if (base.has_column(extra.columns[k])) continue;
    base.columns.push_back(extra.columns[k]);
    for (std::size_t e = 0; e < base.values.size(); ++e) {
      if (base.values[e].size() != extra.values[e].size()) {
        throw ValidationError("feature matrices disagree on candidate counts");
      }
      for (std::size_t c = 0; c < base.values[e].size(); ++c) {
        base.values[e][c].push_back(extra.values[e][c][k]);
      }
    }
  }
}

std::vector<Selection> rerank_fixed(const std::vector<NBestEntry>& entries,
                                    const FeatureMatrix& features,
                                    const std::string& feature) {
  const std::size_t k = features.column(feature);
  std::vector<Selection> out;
  out.reserve(entries.size());
  for (std::size_t e = 0; e < entries.size(); ++e) {
    require_candidates(entries[e]);
    std::vector<double> scores;
    for (const auto& row : features.values.at(e)) scores.push_back(row[k]);
    out.push_back(make_selection(entries[e], scores));
  }
  return out;
}

std::vector<double> linear_scores(const FeatureMatrix& features, std::size_t segment,
                                  const WeightsTable& weights) {
  std::vector<std::pair<std::size_t, double>> terms;
  for (const auto& [name, w] : weights.entries()) {
    if (!features.has_column(name)) {
      throw ValidationError("weight '" + name + "' names no feature column");
    }
    // Zero weights are skipped so an absent logprob (-inf) cannot turn
    // into NaN.
    if (w != 0.0) terms.emplace_back(features.column(name), w);
  }
  std::vector<double> scores;
  for (const auto& row : features.values.at(segment)) {
    double s = 0.0;
    for (auto [k, w] : terms) s += w * row[k];
    scores.push_back(s);
  }
  return scores;
}

std::vector<Selection> rerank_tuned(const std::vector<NBestEntry>& entries,
                                    const FeatureMatrix& features,
                                    const WeightsTable& weights) {
  std::vector<Selection> out;
  out.reserve(entries.size());
  for (std::size_t e = 0; e < entries.size(); ++e) {
    require_candidates(entries[e]);
    out.push_back(make_selection(entries[e], linear_scores(features, e, weights)));
  }
  return out;
}

void write_feature_cache(const std::vector<NBestEntry>& entries,
                         const FeatureMatrix& features,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (std::size_t e = 0; e < entries.size(); ++e) {
    ordered_json rec;
    rec["id"] = entries[e].segment.id;
    ordered_json rows = ordered_json::array();
    for (const auto& row : features.values.at(e)) {
      ordered_json obj = ordered_json::object();
      for (std::size_t k = 0; k < features.columns.size(); ++k) {
        obj[features.columns[k]] = value_to_json(row[k]);
      }
      rows.push_back(std::move(obj));
    }
    rec["features"] = std::move(rows);
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

FeatureMatrix read_feature_cache(const std::vector<NBestEntry>& entries,
                                 const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature cache: " + path.string());
  FeatureMatrix m;
  m.values.resize(entries.size());
  std::string line;
  std::size_t line_no = 0;
  std::size_t e = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "feature cache line " + std::to_string(line_no) + ": ";
    if (e >= entries.size()) throw ValidationError(where + "more records than N-best segments");
    ordered_json rec;
    try {
      rec = ordered_json::parse(line);
    } catch (const json::parse_error& err) {
      throw ParseError(where + err.what());
    }
    if (!rec.is_object() || !rec.contains("id") || !rec.contains("features") ||
        !rec["features"].is_array()) {
      throw ParseError(where + "expected {\"id\":..., \"features\":[...]}");
    }
    if (rec["id"] != entries[e].segment.id) {
      throw ValidationError(where + "id does not match N-best segment " +
                            std::to_string(entries[e].segment.id));
    }
    const auto& rows = rec["features"];
    if (rows.size() != entries[e].candidates.size()) {
      throw ValidationError(where + "candidate count differs from the N-best file");
    }
    for (const auto& obj : rows) {
      if (!obj.is_object()) throw ParseError(where + "feature row is not an object");
      if (m.columns.empty() && e == 0 && m.values[0].empty()) {
        for (const auto& [name, v] : obj.items()) m.columns.push_back(name);
      }
      if (obj.size() != m.columns.size()) {
        throw ValidationError(where + "feature columns differ between rows");
      }
      std::vector<double> row;
      for (const auto& name : m.columns) {
        if (!obj.contains(name)) throw ValidationError(where + "missing feature '" + name + "'");
        const auto& v = obj[name];
        if (v.is_null()) {
          row.push_back(kNegInf);
        } else if (v.is_number()) {
          row.push_back(v.get<double>());
        } else {
          throw ParseError(where + "feature '" + name + "' is not a number");
        }
      }
      m.values[e].push_back(std::move(row));
    }
    ++e;
  }
  if (e != entries.size()) {
    throw ValidationError("feature cache has " + std::to_string(e) + " records for " +
                          std::to_string(entries.size()) + " segments");
  }
  return m;
}

void write_selections(const std::vector<Selection>& selections,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& s : selections) {
    ordered_json j;
    j["id"] = s.segment_id;
    j["index"] = s.index;
    j["text"] = s.text;
    j["score"] = value_to_json(s.score);
    j["margin"] = value_to_json(s.margin);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Selection> read_selections(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open selections: " + path.string());
  std::vector<Selection> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      Selection s;
      s.segment_id = j.at("id").get<std::int64_t>();
      s.index = j.at("index").get<std::size_t>();
      s.text = j.at("text").get<std::string>();
      s.score = j.at("score").is_null() ? kNegInf : j.at("score").get<double>();
      s.margin = j.at("margin").is_null() ? 0.0 : j.at("margin").get<double>();
      out.push_back(std::move(s));
    } catch (const json::exception& err) {
      throw ParseError("malformed selection record: " + std::string(err.what()));
    }
  }
  return out;
}

}  // namespace qad
