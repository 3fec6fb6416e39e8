#include "qad/generation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "qad/error.hpp"
#include "qad/parallel.hpp"
#include "qad/random.hpp"

namespace qad {

namespace {

int effective_max_len(const ToyModel& model, const GenConfig& cfg) {
  if (cfg.max_len < 0) throw ValidationError("max_len must be positive");
  if (cfg.max_len == 0) return model.max_len();
  if (cfg.max_len > model.max_len()) {
    throw ValidationError("generation max_len exceeds the model's max_len");
  }
  return cfg.max_len;
}

double length_normalized(double logprob, std::size_t length, double penalty) {
  if (penalty == 0.0) return logprob;
  return logprob / std::pow(static_cast<double>(length), penalty);
}

// Inverse-CDF draw in token order.
TokenId draw(std::span<const double> probs, Philox& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  TokenId last_positive = 0;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    if (probs[t] <= 0.0) continue;
    last_positive = static_cast<TokenId>(t);
    cumulative += probs[t];
    if (u < cumulative) return last_positive;
  }
  return last_positive;
}

template <typename StepDistribution>
std::vector<Hypothesis> sample(const ToyModel& model, const GenConfig& cfg,
                               std::uint64_t stream, StepDistribution&& step) {
  if (cfg.num_samples < 1) throw ValidationError("num_samples must be >= 1");
  const int max_len = effective_max_len(model, cfg);
  const TokenId eos = model.vocab().eos();
  Philox rng(cfg.seed, stream);

  std::vector<Hypothesis> out;
  std::map<TokenSeq, std::size_t> merged;
  for (int n = 0; n < cfg.num_samples; ++n) {
    Hypothesis h;
    while (true) {
      const auto& row = next_distribution(model, h.tokens);
      TokenId t = step(row, rng);
      const bool last_slot = static_cast<int>(h.tokens.size()) + 1 == max_len;
      if (last_slot && t != eos) {
        t = eos;
        h.truncated = true;
      }
      h.tokens.push_back(t);
      if (t == eos) break;
    }
    h.logprob = sequence_logprob(model, h.tokens);
    h.score = h.logprob;
    if (cfg.dedup) {
      auto [it, inserted] = merged.emplace(h.tokens, out.size());
      if (!inserted) {
        ++out[it->second].multiplicity;
        continue;
      }
    }
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace

std::vector<Hypothesis> beam_search(const ToyModel& model, const GenConfig& cfg) {
  if (cfg.beam_size < 1) throw ValidationError("beam_size must be >= 1");
  if (cfg.length_penalty < 0.0) throw ValidationError("length_penalty must be >= 0");
  const int max_len = effective_max_len(model, cfg);
  const auto beam = static_cast<std::size_t>(cfg.beam_size);
  const TokenId eos = model.vocab().eos();
  const auto v = static_cast<TokenId>(model.vocab().size());

  struct Partial {
    TokenSeq tokens;
    double logprob;
  };
  std::vector<Partial> live{{{}, 0.0}};
  std::vector<Hypothesis> finished;

  auto before = [](const Partial& a, const Partial& b) {
    return ranks_before(a.logprob, a.tokens, b.logprob, b.tokens);
  };

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    const bool last_slot = step + 1 == max_len;
    std::vector<Partial> pool;
    pool.reserve(live.size() * static_cast<std::size_t>(v));
    for (const auto& p : live) {
      const auto& row = next_distribution(model, p.tokens);
      for (TokenId t = 0; t < v; ++t) {
        if (last_slot && t != eos) continue;
        const double prob = row[static_cast<std::size_t>(t)];
        Partial next{p.tokens, prob == 0.0 ? kImpossible : p.logprob + std::log(prob)};
        next.tokens.push_back(t);
        pool.push_back(std::move(next));
      }
    }
    const std::size_t keep = std::min(beam, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep),
                      pool.end(), before);
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      auto& p = pool[i];
      if (p.tokens.back() == eos) {
        const double score =
            length_normalized(p.logprob, p.tokens.size(), cfg.length_penalty);
        finished.push_back({std::move(p.tokens), p.logprob, score, 1, false});
      } else {
        live.push_back(std::move(p));
      }
    }
  }

  std::sort(finished.begin(), finished.end(), [](const auto& a, const auto& b) {
    return ranks_before(a.score, a.tokens, b.score, b.tokens);
  });
  if (finished.size() > beam) finished.resize(beam);
  return finished;
}

std::vector<double> nucleus_distribution(std::span<const double> probs, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("nucleus p must lie in (0, 1]");
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<double> out(probs.size(), 0.0);
  double mass = 0.0;
  std::size_t kept = 0;
  while (kept < order.size()) {
    mass += probs[order[kept]];
    ++kept;
    if (mass >= p) break;
  }
  for (std::size_t i = 0; i < kept; ++i) {
    out[order[i]] = probs[order[i]] / mass;
  }
  return out;
}

std::vector<Hypothesis> ancestral_sample(const ToyModel& model,
                                         const GenConfig& cfg,
                                         std::uint64_t stream) {
  return sample(model, cfg, stream, [](const ToyModel::Row& row, Philox& rng) {
    return draw(row, rng);
  });
}

std::vector<Hypothesis> nucleus_sample(const ToyModel& model,
                                       const GenConfig& cfg,
                                       std::uint64_t stream) {
  const double p = cfg.nucleus_p;
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("nucleus p must lie in (0, 1]");
  return sample(model, cfg, stream, [p](const ToyModel::Row& row, Philox& rng) {
    return draw(nucleus_distribution(row, p), rng);
  });
}

std::vector<NBestEntry> build_nbest(const std::vector<SegmentModel>& models,
                                    const GenConfig& cfg) {
  std::vector<NBestEntry> entries(models.size());
  parallel_for(models.size(), cfg.jobs, [&](std::size_t i) {
    const auto& sm = models[i];
    const auto stream = static_cast<std::uint64_t>(sm.segment.id);
    std::vector<Hypothesis> hyps;
    switch (cfg.method) {
      case GenMethod::kBeam:
        hyps = beam_search(sm.model, cfg);
        break;
      case GenMethod::kAncestral:
        hyps = ancestral_sample(sm.model, cfg, stream);
        break;
      case GenMethod::kNucleus:
        hyps = nucleus_sample(sm.model, cfg, stream);
        break;
    }
    NBestEntry& e = entries[i];
    e.segment = sm.segment;
    e.references = sm.references;
    for (auto& h : hyps) {
      Candidate c;
      c.text = sm.model.vocab().detokenize(h.tokens);
      if (!is_impossible(h.logprob)) c.logprob = h.logprob;
      c.multiplicity = h.multiplicity;
      c.truncated = h.truncated;
      e.candidates.push_back(std::move(c));
    }
  });
  return entries;
}

}  // namespace qad
