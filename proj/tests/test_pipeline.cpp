#include <gtest/gtest.h>

#include <cstdio>

#include "qad/error.hpp"
#include "qad/pipeline.hpp"
#include "qad/random.hpp"
#include "test_util.hpp"

using namespace qad;
using qad::testing::TempDir;
using qad::testing::random_model;
using qad::testing::read_file;
using qad::testing::stub_command;
using qad::testing::write_file;

namespace {

void write_models(Philox& rng, const std::filesystem::path& dir, int segments) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < segments; ++i) {
    SegmentModel sm{{i, "src " + std::to_string(i)}, {}, random_model(rng, 5, 1, 5, 2.0)};
    sm.references = {sm.model.vocab().detokenize(enumerate_all(sm.model, 5)[1].tokens)};
    char name[32];
    std::snprintf(name, sizeof name, "seg-%06d.json", i);
    save_segment_model(sm, dir / name);
  }
}

std::map<std::string, std::string> read_outputs(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    out[f.path().filename().string()] = read_file(f.path());
  }
  return out;
}

}  // namespace

TEST(Eval, Report) {
  const std::vector<std::string> hyps{"the cat sat on the mat", "a dog barks at the moon"}, refs = hyps, srcs{"s1", "s2"};
  const auto r = eval_report(hyps, refs, srcs,
                             {parse_metric_spec("bleu", MetricKind::kReferenceBased),
                              parse_metric_spec("chrf", MetricKind::kReferenceBased)});
  EXPECT_EQ(r.num_segments, 2u);
  ASSERT_EQ(r.scores.size(), 2u);
  EXPECT_NEAR(r.scores[0].score, 100.0, 1e-9);
  EXPECT_EQ(r.scores[1].score, 100.0);

  const std::vector<std::string> h1{"the cat sat on the mat"}, r1{"the cat is on the mat"};
  const auto single = eval_report(h1, r1, {"s"}, {parse_metric_spec("bleu", MetricKind::kReferenceBased)});
  EXPECT_EQ(single.scores[0].score, corpus_bleu(bleu_stats(h1[0], r1[0])));

  const auto ext = make_metric_spec("external:" + stub_command("--kind ref --mode const --value 0.5"),
                                    MetricKind::kReferenceBased, 16, 10.0);
  const auto e = eval_report(hyps, refs, srcs, {ext});
  EXPECT_EQ(e.scores[0].score, 0.5);
  EXPECT_EQ(e.scores[0].metric, "stub");

  EXPECT_THROW(eval_report(hyps, {"x"}, srcs, {}), ValidationError);
  const auto tsv = format_report_tsv(r);
  EXPECT_TRUE(tsv.starts_with("metric\tscore\n"));
  EXPECT_NE(format_report_text(r).find("segments"), std::string::npos);
}

TEST(Mqm, Formula) {
  EXPECT_EQ(mqm_score({0, 0, 0, 3}), 100.0);
  EXPECT_DOUBLE_EQ(mqm_score({1, 0, 0, 1}), 96.0);
  EXPECT_EQ(mqm_score({0, 0, 100, 1}), 0.0);
  // Consistency probe: (24, 67, 0) over 485 segments lands on 97.04.
  EXPECT_NEAR(mqm_score({24, 67, 0, 485}), 97.04, 0.005);
  EXPECT_DOUBLE_EQ(mqm_score({24, 67, 0, 10}, 50.0), 100.0 * (1 - 359.0 / 500.0));
  EXPECT_THROW(mqm_score({1, 0, 0, 0}), ValidationError);
  EXPECT_THROW(mqm_score({-1, 0, 0, 1}), ValidationError);
}

TEST(Config, ParseAndFormat) {
  const auto c = parse_config("# comment\n\nseed = 4\nqe = external:a b\nqe=chrf\n  rank =  tuned  \n");
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c[0], (std::pair<std::string, std::string>{"seed", "4"}));
  EXPECT_EQ(c[1].second, "external:a b");
  EXPECT_EQ(c[3], (std::pair<std::string, std::string>{"rank", "tuned"}));
  EXPECT_EQ(parse_config(format_config(c)), c);
  EXPECT_THROW(parse_config("novalue\n"), ParseError);
  EXPECT_THROW(parse_config(" = x\n"), ParseError);
}

TEST(Config, FileDigest) {
  TempDir dir;
  write_file(dir / "e", "");
  write_file(dir / "a", "a");
  EXPECT_EQ(file_digest(dir / "e"), "cbf29ce484222325");
  EXPECT_EQ(file_digest(dir / "a"), "af63dc4c8601ec8c");
  EXPECT_THROW(file_digest(dir / "missing"), IoError);
}

TEST(Pipeline, FixedLogprobOverBeamIsBeamTop1) {
  Philox rng(71, 0);
  TempDir dir;
  write_models(rng, dir / "models", 6);
  PipelineConfig cfg;
  cfg.model_dir = dir / "models";
  cfg.out_dir = dir / "out";
  const auto r = run_pipeline(cfg);
  const auto models = load_model_dir(dir / "models");
  ASSERT_EQ(r.selections.size(), 6u);
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto top = beam_search(models[i].model, cfg.gen).front();
    EXPECT_EQ(r.selections[i].index, 0u);
    EXPECT_EQ(r.selections[i].text, models[i].model.vocab().detokenize(top.tokens));
  }
  ASSERT_TRUE(r.report.has_value());
  for (const char* f : {"nbest.jsonl", "features.jsonl", "selections.jsonl", "hyps.txt",
                        "eval.txt", "eval.tsv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / f)) << f;
  }
}

TEST(Pipeline, DeterministicAndJobsIndependent) {
  Philox rng(72, 0);
  TempDir dir;
  write_models(rng, dir / "models", 5);
  write_models(rng, dir / "dev", 5);
  PipelineConfig cfg;
  cfg.model_dir = dir / "models";
  cfg.dev_model_dir = dir / "dev";
  cfg.gen.method = GenMethod::kAncestral;
  cfg.gen.num_samples = 20;
  cfg.gen.seed = 3;
  cfg.gen.dedup = true;
  cfg.rank = RankMethod::kTwoStage;
  cfg.mbr.prune_to = 3;
  cfg.mert.restarts = 3;
  cfg.qe_metrics = {"external:" + stub_command("--name qe --mode length")};
  cfg.out_dir = dir / "a";
  run_pipeline(cfg);
  cfg.out_dir = dir / "b";
  run_pipeline(cfg);
  cfg.jobs = cfg.gen.jobs = cfg.mert.jobs = 3;
  cfg.out_dir = dir / "c";
  run_pipeline(cfg);
  const auto a = read_outputs(dir / "a");
  EXPECT_TRUE(a.contains("weights.tsv"));
  EXPECT_TRUE(a.contains("mert.trace.jsonl"));
  EXPECT_EQ(a, read_outputs(dir / "b"));
  EXPECT_EQ(a, read_outputs(dir / "c"));
}

TEST(Pipeline, TwoStageFullPruneEqualsMbrAndComposes) {
  Philox rng(73, 0);
  TempDir dir;
  write_models(rng, dir / "models", 4);
  WeightsTable w;
  w.set("logprob", 1.0);
  write_weights(w, dir / "w.tsv");

  PipelineConfig cfg;
  cfg.model_dir = dir / "models";
  cfg.gen.method = GenMethod::kAncestral;
  cfg.gen.num_samples = 12;
  cfg.rank = RankMethod::kMbr;
  cfg.out_dir = dir / "mbr";
  const auto mbr = run_pipeline(cfg);

  cfg.rank = RankMethod::kTwoStage;
  cfg.weights = dir / "w.tsv";
  cfg.mbr.prune_to = 12;
  cfg.out_dir = dir / "two";
  const auto two = run_pipeline(cfg);
  EXPECT_EQ(read_file(dir / "mbr" / "selections.jsonl"), read_file(dir / "two" / "selections.jsonl"));

  // The selection stage alone, applied to the persisted intermediates.
  const auto entries = read_nbest(dir / "mbr" / "nbest.jsonl");
  auto utility = metric_fn(parse_metric_spec("bleu", MetricKind::kReferenceBased));
  const auto direct = mbr_decode(entries, *utility, {});
  ASSERT_EQ(direct.size(), mbr.selections.size());
  for (std::size_t i = 0; i < direct.size(); ++i) {
    EXPECT_EQ(direct[i].index, mbr.selections[i].index);
    EXPECT_EQ(direct[i].text, two.selections[i].text);
  }
}

TEST(Pipeline, StageErrorsArePrefixed) {
  Philox rng(74, 0);
  TempDir dir;
  write_models(rng, dir / "models", 2);
  PipelineConfig cfg;
  cfg.model_dir = dir / "models";
  cfg.qe_metrics = {"external:" + stub_command("--crash-at 0")};
  cfg.out_dir = dir / "out";
  try {
    run_pipeline(cfg);
    FAIL();
  } catch (const ScorerError& e) {
    EXPECT_TRUE(std::string(e.what()).starts_with("stage features: ")) << e.what();
    EXPECT_EQ(e.reason(), ScorerError::Reason::kCrash);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "nbest.jsonl"));

  PipelineConfig none;
  none.out_dir = dir / "x";
  EXPECT_THROW(run_pipeline(none), ValidationError);
}
