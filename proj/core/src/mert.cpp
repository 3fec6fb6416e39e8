#include "qad/mert.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "qad/error.hpp"
#include "qad/parallel.hpp"
#include "qad/random.hpp"

namespace qad {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Stream ids for restart initialization, kept apart from segment streams.
constexpr std::uint64_t kRestartStreamTag = 0x4D45525400000000ull;  // "MERT"

// Neumaier-compensated running sum; the mean objective is updated
// incrementally across thousands of breakpoints.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

std::size_t select(const std::vector<std::vector<double>>& rows,
                   std::span<const double> weights) {
  std::size_t best = 0;
  double best_score = -kInf;
  for (std::size_t c = 0; c < rows.size(); ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] * rows[c][k];
    if (c == 0 || s > best_score) {
      best = c;
      best_score = s;
    }
  }
  return best;
}

bool segment_is_flat(const MertSegment& seg, MertObjective objective) {
  for (std::size_t c = 1; c < seg.features.size(); ++c) {
    if (objective == MertObjective::kCorpusBleu) {
      if (!(seg.stats[c] == seg.stats[0])) return false;
    } else if (seg.scores[c] != seg.scores[0]) {
      return false;
    }
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Envelope

std::size_t Envelope::owner_at(double gamma) const {
  const auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), gamma);
  const auto i = static_cast<std::size_t>(it - breakpoints.begin());
  if (i > 0 && breakpoints[i - 1] == gamma) return std::min(owners[i - 1], owners[i]);
  return owners[i];
}

Envelope upper_envelope(std::span<const Line> lines) {
  if (lines.empty()) throw ValidationError("upper envelope of zero lines");
  std::vector<std::size_t> order(lines.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (lines[a].slope != lines[b].slope) return lines[a].slope < lines[b].slope;
    if (lines[a].intercept != lines[b].intercept) {
      return lines[a].intercept > lines[b].intercept;
    }
    return a < b;
  });

  // Sweep by increasing slope; each new line owns everything right of its
  // crossing with the current hull.
  Envelope env;
  std::vector<double> starts;
  for (std::size_t i : order) {
    const Line& l = lines[i];
    if (!env.owners.empty() && lines[env.owners.back()].slope == l.slope) continue;
    double cross = -kInf;
    while (!env.owners.empty()) {
      const Line& top = lines[env.owners.back()];
      cross = (top.intercept - l.intercept) / (l.slope - top.slope);
      if (cross <= starts.back()) {
        env.owners.pop_back();
        starts.pop_back();
        cross = -kInf;
      } else {
        break;
      }
    }
    env.owners.push_back(i);
    starts.push_back(cross);
  }
  env.breakpoints.assign(starts.begin() + 1, starts.end());
  return env;
}

// ---------------------------------------------------------------------------
// Instances and objectives

void MertInstance::validate(MertObjective objective) const {
  if (feature_names.empty()) throw ValidationError("MERT needs at least one feature");
  if (segments.empty()) throw ValidationError("MERT needs at least one segment");
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    const std::string where = "MERT segment " + std::to_string(s) + ": ";
    if (seg.features.empty()) throw ValidationError(where + "no candidates");
    for (const auto& row : seg.features) {
      if (row.size() != feature_names.size()) {
        throw ValidationError(where + "feature row has the wrong width");
      }
      for (double v : row) {
        if (!std::isfinite(v)) throw ValidationError(where + "non-finite feature value");
      }
    }
    const std::size_t n = seg.features.size();
    if (objective == MertObjective::kCorpusBleu && seg.stats.size() != n) {
      throw ValidationError(where + "missing sufficient statistics");
    }
    if (objective == MertObjective::kMeanSentenceScore && seg.scores.size() != n) {
      throw ValidationError(where + "missing sentence scores");
    }
  }
}

MertInstance make_mert_instance(const std::vector<NBestEntry>& entries,
                                const FeatureMatrix& features, MertObjective objective,
                                Metric* sentence_metric) {
  if (objective == MertObjective::kMeanSentenceScore && !sentence_metric) {
    throw ValidationError("mean objective needs a sentence metric");
  }
  if (features.values.size() != entries.size()) {
    throw ValidationError("feature matrix does not match the N-best list");
  }
  MertInstance inst;
  inst.feature_names = features.columns;
  std::vector<MetricRow> rows;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const auto& entry = entries[e];
    if (entry.references.empty()) {
      throw ValidationError("segment " + std::to_string(entry.segment.id) +
                            " has no reference for tuning");
    }
    MertSegment seg;
    seg.features = features.values[e];
    for (const auto& c : entry.candidates) {
      if (objective == MertObjective::kCorpusBleu) {
        seg.stats.push_back(bleu_stats(c.text, entry.references.front()));
      } else {
        rows.push_back({entry.segment.text, c.text, entry.references.front()});
      }
    }
    inst.segments.push_back(std::move(seg));
  }
  if (objective == MertObjective::kMeanSentenceScore) {
    const auto scores = sentence_metric->score(rows);
    std::size_t r = 0;
    for (auto& seg : inst.segments) {
      for (std::size_t c = 0; c < seg.features.size(); ++c) seg.scores.push_back(scores[r++]);
    }
  }
  inst.validate(objective);
  return inst;
}

double evaluate_objective(const MertInstance& instance, std::span<const double> weights,
                          MertObjective objective) {
  if (weights.size() != instance.feature_names.size()) {
    throw ValidationError("weight vector has the wrong width");
  }
  if (objective == MertObjective::kCorpusBleu) {
    SufficientStats total;
    for (const auto& seg : instance.segments) total += seg.stats[select(seg.features, weights)];
    return corpus_bleu(total);
  }
  CompensatedSum sum;
  for (const auto& seg : instance.segments) sum.add(seg.scores[select(seg.features, weights)]);
  return sum.value() / static_cast<double>(instance.segments.size());
}

LineSearchResult line_search(const MertInstance& instance, std::span<const double> weights,
                             std::size_t k, MertObjective objective) {
  const std::size_t num_features = instance.feature_names.size();
  if (weights.size() != num_features || k >= num_features) {
    throw ValidationError("line search direction out of range");
  }
  if (instance.segments.empty()) throw ValidationError("line search over zero segments");

  struct Event {
    double gamma;
    std::size_t segment;
    std::size_t owner;
  };
  std::vector<Event> events;
  std::vector<std::size_t> owner(instance.segments.size());
  std::vector<Line> lines;
  for (std::size_t s = 0; s < instance.segments.size(); ++s) {
    const auto& seg = instance.segments[s];
    lines.clear();
    for (const auto& row : seg.features) {
      double a = 0.0;
      for (std::size_t j = 0; j < num_features; ++j) {
        if (j != k) a += weights[j] * row[j];
      }
      lines.push_back({a, row[k]});
    }
    const Envelope env = upper_envelope(lines);
    owner[s] = env.owners.front();
    for (std::size_t b = 0; b < env.breakpoints.size(); ++b) {
      events.push_back({env.breakpoints[b], s, env.owners[b + 1]});
    }
  }
  std::sort(events.begin(), events.end(),
            [](const Event& a, const Event& b) { return a.gamma < b.gamma; });

  SufficientStats stats;
  CompensatedSum sum;
  for (std::size_t s = 0; s < owner.size(); ++s) {
    const auto& seg = instance.segments[s];
    if (objective == MertObjective::kCorpusBleu) {
      stats += seg.stats[owner[s]];
    } else {
      sum.add(seg.scores[owner[s]]);
    }
  }
  const double segments = static_cast<double>(instance.segments.size());
  auto current = [&] {
    return objective == MertObjective::kCorpusBleu ? corpus_bleu(stats)
                                                   : sum.value() / segments;
  };

  // Interval i spans (bounds[i-1], bounds[i]).
  std::vector<double> bounds;
  double best = current();
  std::size_t best_interval = 0;
  for (std::size_t e = 0; e < events.size();) {
    const double gamma = events[e].gamma;
    for (; e < events.size() && events[e].gamma == gamma; ++e) {
      const auto& ev = events[e];
      const auto& seg = instance.segments[ev.segment];
      if (objective == MertObjective::kCorpusBleu) {
        stats -= seg.stats[owner[ev.segment]];
        stats += seg.stats[ev.owner];
      } else {
        sum.add(-seg.scores[owner[ev.segment]]);
        sum.add(seg.scores[ev.owner]);
      }
      owner[ev.segment] = ev.owner;
    }
    bounds.push_back(gamma);
    const double value = current();
    if (value > best) {
      best = value;
      best_interval = bounds.size();
    }
  }

  LineSearchResult result;
  result.objective = best;
  if (bounds.empty()) {
    result.gamma = 0.0;
  } else if (best_interval == 0) {
    result.gamma = bounds.front() - 1.0;
  } else if (best_interval == bounds.size()) {
    result.gamma = bounds.back() + 1.0;
  } else {
    result.gamma = 0.5 * (bounds[best_interval - 1] + bounds[best_interval]);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Optimizer

MertResult mert_optimize(const MertInstance& instance, const MertConfig& cfg) {
  instance.validate(cfg.objective);
  if (cfg.restarts < 1 || cfg.max_iterations < 1 || !(cfg.convergence_eps > 0.0)) {
    throw ValidationError("MERT restarts, iterations and eps must be positive");
  }
  const std::size_t num_features = instance.feature_names.size();

  // First restart: logprob = 1, everything else 0 (first feature if there is
  // no logprob column).
  std::vector<double> initial(num_features, 0.0);
  const auto lp = std::find(instance.feature_names.begin(), instance.feature_names.end(),
                            kLogprobFeature);
  initial[lp == instance.feature_names.end()
              ? 0
              : static_cast<std::size_t>(lp - instance.feature_names.begin())] = 1.0;

  auto to_table = [&](const std::vector<double>& w) {
    WeightsTable t;
    for (std::size_t k = 0; k < num_features; ++k) t.set(instance.feature_names[k], w[k]);
    return t;
  };

  MertResult result;
  if (std::all_of(instance.segments.begin(), instance.segments.end(),
                  [&](const MertSegment& s) { return segment_is_flat(s, cfg.objective); })) {
    result.degenerate = true;
    result.weights = to_table(initial);
    result.objective = evaluate_objective(instance, initial, cfg.objective);
    result.restart_objectives = {result.objective};
    return result;
  }

  struct RestartOutcome {
    std::vector<double> weights;
    double objective = 0.0;
    std::vector<MertTraceStep> trace;
  };
  std::vector<RestartOutcome> outcomes(static_cast<std::size_t>(cfg.restarts));
  parallel_for(outcomes.size(), cfg.jobs, [&](std::size_t r) {
    auto& out = outcomes[r];
    out.weights = initial;
    if (r > 0) {
      Philox rng(cfg.seed, kRestartStreamTag | r);
      for (auto& w : out.weights) w = rng.uniform(-1.0, 1.0);
    }
    out.objective = evaluate_objective(instance, out.weights, cfg.objective);
    for (int it = 0; it < cfg.max_iterations; ++it) {
      bool accepted = false;
      for (std::size_t k = 0; k < num_features; ++k) {
        const auto step = line_search(instance, out.weights, k, cfg.objective);
        if (step.objective > out.objective + cfg.convergence_eps) {
          out.weights[k] = step.gamma;
          out.objective = step.objective;
          out.trace.push_back({static_cast<int>(r), it, k, step.gamma, step.objective});
          accepted = true;
        }
      }
      if (!accepted) break;
    }
  });

  std::size_t best = 0;
  for (std::size_t r = 0; r < outcomes.size(); ++r) {
    result.restart_objectives.push_back(outcomes[r].objective);
    if (outcomes[r].objective > outcomes[best].objective) best = r;
    result.trace.insert(result.trace.end(), outcomes[r].trace.begin(), outcomes[r].trace.end());
  }

  std::vector<double> w = outcomes[best].weights;
  const double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
  if (norm > 0.0) {
    for (auto& x : w) x /= norm;
  }
  result.weights = to_table(w);
  result.objective = evaluate_objective(instance, w, cfg.objective);
  return result;
}

std::string trace_to_jsonl(const MertResult& result, const std::vector<std::string>& names) {
  std::string out;
  for (const auto& step : result.trace) {
    nlohmann::ordered_json j;
    j["restart"] = step.restart;
    j["iteration"] = step.iteration;
    j["feature"] = names.at(step.feature);
    j["gamma"] = step.gamma;
    j["objective"] = step.objective;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace qad
