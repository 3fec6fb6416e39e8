#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "qad/generation.hpp"
#include "qad/mbr.hpp"
#include "qad/mert.hpp"
#include "qad/metrics.hpp"
#include "qad/random.hpp"
#include "qad/toy_model.hpp"

namespace {

std::string sentence(qad::Philox& rng, int len) {
  std::string s;
  for (int i = 0; i < len; ++i) s += (i ? " w" : "w") + std::to_string(rng() % 30);
  return s;
}

void BM_SentenceBleu(benchmark::State& state) {
  qad::Philox rng(1, 0);
  const auto hyp = sentence(rng, 25), ref = sentence(rng, 25);
  for (auto _ : state) benchmark::DoNotOptimize(qad::sentence_bleu(hyp, ref));
}
BENCHMARK(BM_SentenceBleu);

void BM_SentenceChrf(benchmark::State& state) {
  qad::Philox rng(2, 0);
  const auto hyp = sentence(rng, 25), ref = sentence(rng, 25);
  for (auto _ : state) benchmark::DoNotOptimize(qad::sentence_chrf(hyp, ref));
}
BENCHMARK(BM_SentenceChrf);

void BM_UpperEnvelope(benchmark::State& state) {
  qad::Philox rng(3, 0);
  std::vector<qad::Line> lines(static_cast<std::size_t>(state.range(0)));
  for (auto& l : lines) l = {rng.uniform(-5, 5), rng.uniform(-5, 5)};
  for (auto _ : state) benchmark::DoNotOptimize(qad::upper_envelope(lines));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_UpperEnvelope)->RangeMultiplier(4)->Range(1024, 262144)->Complexity(benchmark::oNLogN);

void BM_LineSearch(benchmark::State& state) {
  qad::Philox rng(4, 0);
  qad::MertInstance inst;
  inst.feature_names = {"a", "b", "c"};
  for (int s = 0; s < state.range(0); ++s) {
    qad::MertSegment seg;
    for (int c = 0; c < 50; ++c) {
      seg.features.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
      qad::SufficientStats st;
      st.hyp_len = st.ref_len = 20;
      for (int n = 0; n < 4; ++n) {
        st.total[n] = 20 - n;
        st.match[n] = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(st.total[n] + 1));
      }
      seg.stats.push_back(st);
    }
    inst.segments.push_back(seg);
  }
  const std::vector<double> w{1.0, 0.5, -0.5};
  for (auto _ : state) {
    benchmark::DoNotOptimize(qad::line_search(inst, w, 1, qad::MertObjective::kCorpusBleu));
  }
}
BENCHMARK(BM_LineSearch)->Arg(100)->Arg(1000);

void BM_MbrSelect(benchmark::State& state) {
  qad::Philox rng(5, 0);
  qad::NBestEntry e;
  e.segment = {0, "src"};
  for (int i = 0; i < state.range(0); ++i) e.candidates.push_back(qad::Candidate{sentence(rng, 20)});
  auto bleu = qad::metric_fn(qad::parse_metric_spec("bleu", qad::MetricKind::kReferenceBased));
  for (auto _ : state) benchmark::DoNotOptimize(qad::mbr_select(e, *bleu, {}));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_MbrSelect)->RangeMultiplier(2)->Range(8, 128)->Complexity(benchmark::oNSquared);

void BM_BeamSearch(benchmark::State& state) {
  std::vector<std::string> tokens;
  for (int i = 0; i < 30; ++i) tokens.push_back("w" + std::to_string(i));
  tokens.push_back("</s>");
  qad::Vocab vocab(tokens, 30);
  qad::Philox rng(6, 0);
  std::vector<qad::TokenSeq> data;
  for (int k = 0; k < 200; ++k) {
    qad::TokenSeq seq;
    for (int i = 0; i < 12; ++i) seq.push_back(static_cast<qad::TokenId>(rng() % 30));
    seq.push_back(30);
    data.push_back(seq);
  }
  const auto model = qad::train_smoothed(data, 2, {0.1}, vocab, 20);
  qad::GenConfig cfg;
  cfg.beam_size = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(qad::beam_search(model, cfg));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(5)->Arg(20);

}  // namespace

BENCHMARK_MAIN();
