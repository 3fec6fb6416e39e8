// qad: candidate generation, quality-aware reranking and MBR decoding.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qad/corpus_io.hpp"
#include "qad/error.hpp"
#include "qad/generation.hpp"
#include "qad/mbr.hpp"
#include "qad/mert.hpp"
#include "qad/metrics.hpp"
#include "qad/pipeline.hpp"
#include "qad/rerank.hpp"
#include "qad/toy_model.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitScorer = 3;
constexpr int kExitIo = 4;
constexpr int kExitInternal = 1;

// Options that never change output bytes, and those naming inputs.
const std::set<std::string> kNotResolved = {"help", "config", "jobs", "out", "hyps-out",
                                            "trace", "tsv"};
const std::set<std::string> kInputOptions = {"model", "nbest", "features", "weights",
                                             "dev-nbest", "dev-model", "corpus",
                                             "hyps", "refs-file", "src"};

struct Globals {
  std::uint64_t seed = 0;
  int jobs = 1;
  bool dedup = false;
  std::string config;
  int batch_size = 256;
  double timeout = 60.0;
};

qad::GenMethod parse_method(const std::string& m) {
  if (m == "beam") return qad::GenMethod::kBeam;
  if (m == "ancestral") return qad::GenMethod::kAncestral;
  if (m == "nucleus") return qad::GenMethod::kNucleus;
  throw qad::ValidationError("unknown generation method '" + m + "'");
}

// "all" or a positive count.
std::optional<std::size_t> parse_refs(const std::string& s) {
  if (s == "all") return std::nullopt;
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || v < 1) {
    throw qad::ValidationError("--refs expects 'all' or a positive integer, got '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

struct Objective {
  qad::MertObjective kind;
  std::string metric;
};

Objective parse_objective(const std::string& s) {
  if (s == "corpus_bleu") return {qad::MertObjective::kCorpusBleu, "bleu"};
  if (s.starts_with("mean:") && s.size() > 5) {
    return {qad::MertObjective::kMeanSentenceScore, s.substr(5)};
  }
  throw qad::ValidationError("--objective expects corpus_bleu or mean:<metric>, got '" + s + "'");
}

qad::FeatureMatrix load_features(const std::vector<qad::NBestEntry>& entries,
                                 const std::string& cache) {
  if (cache.empty()) return qad::stored_features(entries);
  return qad::read_feature_cache(entries, cache);
}

std::vector<std::string> texts(const std::vector<qad::Selection>& sel) {
  std::vector<std::string> out;
  for (const auto& s : sel) out.push_back(s.text);
  return out;
}

void write_file(const std::string& text, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw qad::IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw qad::IoError("write failed: " + path.string());
}

fs::path sidecar(const fs::path& out) { return fs::path(out.string() + ".config"); }

int exit_code(const qad::Error& e) {
  switch (e.kind()) {
    case qad::ErrorKind::kValidation:
    case qad::ErrorKind::kParse:
      return kExitValidation;
    case qad::ErrorKind::kIo:
      return kExitIo;
    case qad::ErrorKind::kScorer:
      return kExitScorer;
  }
  return kExitInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quality-aware decoding: generate, rerank, tune and MBR-decode candidates"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();

  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--jobs", g.jobs, "Worker threads (outputs do not depend on it)")
      ->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "File of 'key = value' defaults; flags override");
  app.add_flag("--dedup", g.dedup, "Merge identical candidates into multiplicities");
  app.add_option("--batch-size", g.batch_size, "Rows per external scorer batch")
      ->check(CLI::PositiveNumber);
  app.add_option("--timeout", g.timeout, "External scorer timeout per batch, seconds");

  // generate
  auto* gen = app.add_subcommand("generate", "Build N-best lists from toy models");
  std::string gen_model, gen_method = "beam", gen_out;
  int beam_size = 5, samples = 200, max_len = 0;
  double nucleus_p = 0.6, length_penalty = 0.0;
  gen->add_option("--model", gen_model, "Model directory")->required();
  gen->add_option("--method", gen_method, "beam | ancestral | nucleus");
  gen->add_option("--beam-size", beam_size)->check(CLI::PositiveNumber);
  gen->add_option("--samples", samples)->check(CLI::PositiveNumber);
  gen->add_option("--p", nucleus_p, "Nucleus mass");
  gen->add_option("--max-len", max_len, "Override the model length limit (0 = model's)");
  gen->add_option("--length-penalty", length_penalty);
  gen->add_option("--out", gen_out, "N-best JSON-lines output")->required();

  // train
  auto* train = app.add_subcommand("train", "Fit smoothed toy models, one per segment");
  std::string train_corpus, train_out;
  int train_order = 2, train_max_len = 10;
  double epsilon = 0.1;
  train->add_option("--corpus", train_corpus,
                    "JSON-lines: {\"id\",\"src\",\"refs\",\"train\":[sentences]}")
      ->required();
  train->add_option("--order", train_order)->check(CLI::PositiveNumber);
  train->add_option("--epsilon", epsilon, "Label smoothing mass");
  train->add_option("--max-len", train_max_len)->check(CLI::PositiveNumber);
  train->add_option("--out", train_out, "Model directory")->required();

  // score
  auto* score = app.add_subcommand("score", "Extract feature columns into a feature cache");
  std::string score_nbest, score_out;
  std::vector<std::string> score_metrics;
  score->add_option("--nbest", score_nbest)->required();
  score->add_option("--metric", score_metrics, "Reference-free metric (external:<cmd>)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  score->add_option("--out", score_out, "Feature cache output")->required();

  // rerank-fixed / rerank-tuned
  auto* fixed = app.add_subcommand("rerank-fixed", "Select the argmax of one feature");
  std::string rf_nbest, rf_features, rf_feature = qad::kLogprobFeature, rf_out, rf_hyps;
  fixed->add_option("--nbest", rf_nbest)->required();
  fixed->add_option("--features", rf_features, "Feature cache (default: stored features)");
  fixed->add_option("--feature", rf_feature);
  fixed->add_option("--out", rf_out, "Selections output")->required();
  fixed->add_option("--hyps-out", rf_hyps, "Selected texts, one per line");

  auto* tuned = app.add_subcommand("rerank-tuned", "Select the argmax of a weighted sum");
  std::string rt_nbest, rt_features, rt_weights, rt_out, rt_hyps;
  tuned->add_option("--nbest", rt_nbest)->required();
  tuned->add_option("--features", rt_features, "Feature cache (default: stored features)");
  tuned->add_option("--weights", rt_weights)->required();
  tuned->add_option("--out", rt_out, "Selections output")->required();
  tuned->add_option("--hyps-out", rt_hyps, "Selected texts, one per line");

  // mert
  auto* mert = app.add_subcommand("mert", "Tune reranking weights on a dev N-best list");
  std::string mert_nbest, mert_features, mert_objective = "corpus_bleu", mert_out, mert_trace;
  qad::MertConfig mert_cfg;
  mert->add_option("--nbest", mert_nbest)->required();
  mert->add_option("--features", mert_features, "Feature cache (default: stored features)");
  mert->add_option("--objective", mert_objective, "corpus_bleu | mean:<metric>");
  mert->add_option("--restarts", mert_cfg.restarts)->check(CLI::PositiveNumber);
  mert->add_option("--max-iterations", mert_cfg.max_iterations)->check(CLI::PositiveNumber);
  mert->add_option("--out", mert_out, "Weights TSV output")->required();
  mert->add_option("--trace", mert_trace, "Trace JSON-lines (default: <out>.trace.jsonl)");

  // mbr
  auto* mbr = app.add_subcommand("mbr", "Minimum Bayes risk selection");
  std::string mbr_nbest, mbr_utility = "bleu", mbr_refs = "all", mbr_out, mbr_hyps;
  bool no_diagonal = false;
  mbr->add_option("--nbest", mbr_nbest)->required();
  mbr->add_option("--utility", mbr_utility, "bleu | chrf | external:<cmd>");
  mbr->add_option("--refs", mbr_refs, "Pseudo-references: first M candidates, or all");
  mbr->add_flag("--no-diagonal", no_diagonal, "Exclude each hypothesis' own sample");
  mbr->add_option("--out", mbr_out, "Selections output")->required();
  mbr->add_option("--hyps-out", mbr_hyps, "Selected texts, one per line");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Generate, extract features, tune, rank, evaluate");
  qad::PipelineConfig pc;
  std::string p_model, p_nbest, p_method = "beam", p_rank, p_weights, p_dev_nbest, p_dev_model;
  std::string p_objective = "corpus_bleu", p_refs = "all", p_out;
  std::size_t prune_to = 0;
  bool p_no_diagonal = false, full_refs = false;
  std::vector<std::string> p_eval = {"bleu", "chrf"};
  pipe->add_option("--model", p_model, "Model directory to generate from");
  pipe->add_option("--nbest", p_nbest, "Existing N-best list");
  pipe->add_option("--method", p_method, "beam | ancestral | nucleus");
  pipe->add_option("--beam-size", pc.gen.beam_size)->check(CLI::PositiveNumber);
  pipe->add_option("--samples", pc.gen.num_samples)->check(CLI::PositiveNumber);
  pipe->add_option("--p", pc.gen.nucleus_p, "Nucleus mass");
  pipe->add_option("--max-len", pc.gen.max_len);
  pipe->add_option("--length-penalty", pc.gen.length_penalty);
  pipe->add_option("--qe", pc.qe_metrics, "Reference-free metric feature (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  pipe->add_option("--rank", p_rank,
                   "fixed | tuned | mbr | two-stage (default: two-stage with --prune-to, "
                   "tuned with weights or a dev set, else fixed)");
  pipe->add_option("--feature", pc.fixed_feature, "Feature for fixed reranking");
  pipe->add_option("--weights", p_weights, "Weights TSV for tuned ranking");
  pipe->add_option("--dev-nbest", p_dev_nbest, "Dev N-best list with references for MERT");
  pipe->add_option("--dev-model", p_dev_model, "Dev model directory for MERT");
  pipe->add_option("--objective", p_objective, "corpus_bleu | mean:<metric>");
  pipe->add_option("--restarts", pc.mert.restarts)->check(CLI::PositiveNumber);
  pipe->add_option("--utility", pc.utility, "bleu | chrf | external:<cmd>");
  pipe->add_option("--refs", p_refs, "Pseudo-references: first M candidates, or all");
  pipe->add_flag("--no-diagonal", p_no_diagonal);
  pipe->add_option("--prune-to", prune_to, "Two-stage: candidates kept for MBR");
  pipe->add_flag("--full-pseudo-refs", full_refs,
                 "Two-stage: draw pseudo-references from the full list");
  pipe->add_option("--eval", p_eval, "Evaluation metrics (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  pipe->add_option("--out", p_out, "Output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Corpus scores of a hypothesis file");
  std::string ev_hyps, ev_refs, ev_src, ev_tsv;
  std::vector<std::string> ev_metrics = {"bleu", "chrf"};
  eval->add_option("--hyps", ev_hyps)->required();
  eval->add_option("--refs-file,--refs", ev_refs, "References, one per line")->required();
  eval->add_option("--src", ev_src, "Sources, one per line (for external metrics)");
  eval->add_option("--metric", ev_metrics, "bleu | chrf | external:<cmd> (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  eval->add_option("--tsv", ev_tsv, "Also write the report as TSV");

  // mqm-score
  auto* mqm = app.add_subcommand("mqm-score", "Aggregate MQM error counts");
  qad::MqmCounts counts;
  double mqm_norm = qad::kDefaultMqmNorm;
  mqm->add_option("--minor", counts.minor)->check(CLI::NonNegativeNumber);
  mqm->add_option("--major", counts.major)->check(CLI::NonNegativeNumber);
  mqm->add_option("--critical", counts.critical)->check(CLI::NonNegativeNumber);
  mqm->add_option("--segments", counts.num_segments)->required();
  mqm->add_option("--mqm-norm", mqm_norm, "Normalization constant");

  std::set<std::string> names;
  for (const auto* sub : app.get_subcommands({})) names.insert(sub->get_name());

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = qad::cli::expand_config(args, names);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  } catch (const qad::Error& e) {
    std::cerr << "qad: " << e.what() << "\n";
    return exit_code(e);
  }

  const CLI::App* active = app.get_subcommands().front();
  auto resolved = [&] {
    return qad::cli::resolved_config(app, *active, kNotResolved, kInputOptions);
  };
  const qad::ReadOptions read{g.dedup};
  auto spec = [&](const std::string& text, qad::MetricKind kind) {
    return qad::make_metric_spec(text, kind, g.batch_size, g.timeout);
  };

  try {
    if (*gen) {
      qad::GenConfig cfg;
      cfg.method = parse_method(gen_method);
      cfg.beam_size = beam_size;
      cfg.num_samples = samples;
      cfg.nucleus_p = nucleus_p;
      cfg.max_len = max_len;
      cfg.length_penalty = length_penalty;
      cfg.seed = g.seed;
      cfg.dedup = g.dedup;
      cfg.jobs = g.jobs;
      const auto entries = qad::build_nbest(qad::load_model_dir(gen_model), cfg);
      qad::write_nbest(entries, gen_out);
      qad::cli::write_resolved_config(resolved(), sidecar(gen_out));
    } else if (*train) {
      std::ifstream in(train_corpus, std::ios::binary);
      if (!in) throw qad::IoError("cannot read " + train_corpus);
      fs::create_directories(train_out);
      std::size_t line_no = 0;
      for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
          throw qad::ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("id") || !j.contains("train")) {
          throw qad::ParseError("line " + std::to_string(line_no) +
                                ": records need \"id\" and \"train\"");
        }
        std::optional<qad::SegmentModel> sm;
        try {
          qad::SourceSegment segment{j.at("id").get<std::int64_t>(),
                                     j.value("src", std::string())};
          auto refs = j.value("refs", std::vector<std::string>());
          const auto corpus =
              qad::load_training_corpus(j.at("train").get<std::vector<std::string>>());
          sm.emplace(qad::SegmentModel{
              std::move(segment), std::move(refs),
              qad::train_smoothed(corpus.sequences, train_order, qad::SmoothingConfig{epsilon},
                                  corpus.vocab, train_max_len)});
        } catch (const nlohmann::json::exception& e) {
          throw qad::ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        char name[64];
        std::snprintf(name, sizeof name, "seg-%06lld.json",
                      static_cast<long long>(sm->segment.id));
        qad::save_segment_model(*sm, fs::path(train_out) / name);
      }
      qad::cli::write_resolved_config(resolved(), fs::path(train_out) / "config.txt");
    } else if (*score) {
      const auto entries = qad::read_nbest(score_nbest, read);
      std::vector<qad::FeatureSource> sources;
      for (const auto& m : score_metrics) {
        if (m == qad::kLogprobFeature) continue;
        sources.push_back(
            qad::metric_feature(qad::metric_fn(spec(m, qad::MetricKind::kReferenceFree))));
      }
      const auto features = qad::collect_features(entries, sources);
      qad::write_feature_cache(entries, features, score_out);
      qad::cli::write_resolved_config(resolved(), sidecar(score_out));
    } else if (*fixed) {
      const auto entries = qad::read_nbest(rf_nbest, read);
      const auto sel = qad::rerank_fixed(entries, load_features(entries, rf_features), rf_feature);
      qad::write_selections(sel, rf_out);
      if (!rf_hyps.empty()) qad::write_lines(texts(sel), rf_hyps);
      qad::cli::write_resolved_config(resolved(), sidecar(rf_out));
    } else if (*tuned) {
      const auto entries = qad::read_nbest(rt_nbest, read);
      const auto sel = qad::rerank_tuned(entries, load_features(entries, rt_features),
                                         qad::read_weights(rt_weights));
      qad::write_selections(sel, rt_out);
      if (!rt_hyps.empty()) qad::write_lines(texts(sel), rt_hyps);
      qad::cli::write_resolved_config(resolved(), sidecar(rt_out));
    } else if (*mert) {
      const auto objective = parse_objective(mert_objective);
      const auto entries = qad::read_nbest(mert_nbest, read);
      const auto features = load_features(entries, mert_features);
      std::unique_ptr<qad::Metric> sentence_metric;
      if (objective.kind == qad::MertObjective::kMeanSentenceScore) {
        sentence_metric = qad::metric_fn(spec(objective.metric, qad::MetricKind::kReferenceBased));
      }
      mert_cfg.objective = objective.kind;
      mert_cfg.seed = g.seed;
      mert_cfg.jobs = g.jobs;
      const auto inst =
          qad::make_mert_instance(entries, features, objective.kind, sentence_metric.get());
      const auto result = qad::mert_optimize(inst, mert_cfg);
      if (result.degenerate) {
        std::cerr << "qad: warning: objective is flat in every feature direction\n";
      }
      qad::write_weights(result.weights, mert_out);
      write_file(qad::trace_to_jsonl(result, inst.feature_names),
                 mert_trace.empty() ? mert_out + ".trace.jsonl" : mert_trace);
      qad::cli::write_resolved_config(resolved(), sidecar(mert_out));
      std::printf("objective\t%s\n", qad::format_double(result.objective).c_str());
    } else if (*mbr) {
      const auto entries = qad::read_nbest(mbr_nbest, read);
      qad::MbrConfig cfg;
      cfg.include_diagonal = !no_diagonal;
      cfg.num_pseudo_refs = parse_refs(mbr_refs);
      auto utility = qad::metric_fn(spec(mbr_utility, qad::MetricKind::kReferenceBased));
      const auto sel = qad::mbr_decode(entries, *utility, cfg, g.jobs);
      qad::write_selections(sel, mbr_out);
      if (!mbr_hyps.empty()) qad::write_lines(texts(sel), mbr_hyps);
      qad::cli::write_resolved_config(resolved(), sidecar(mbr_out));
    } else if (*pipe) {
      if (!p_model.empty()) pc.model_dir = p_model;
      if (!p_nbest.empty()) pc.nbest = p_nbest;
      if (!p_weights.empty()) pc.weights = p_weights;
      if (!p_dev_nbest.empty()) pc.dev_nbest = p_dev_nbest;
      if (!p_dev_model.empty()) pc.dev_model_dir = p_dev_model;
      pc.gen.method = parse_method(p_method);
      pc.gen.seed = g.seed;
      pc.gen.dedup = g.dedup;
      const auto objective = parse_objective(p_objective);
      pc.mert.objective = objective.kind;
      pc.mert_metric = objective.metric;
      pc.mert.seed = g.seed;
      pc.mbr.include_diagonal = !p_no_diagonal;
      pc.mbr.num_pseudo_refs = parse_refs(p_refs);
      pc.mbr.full_pseudo_refs = full_refs;
      if (prune_to > 0) pc.mbr.prune_to = prune_to;
      if (!p_rank.empty()) {
        pc.rank = qad::parse_rank_method(p_rank);
      } else if (prune_to > 0) {
        pc.rank = qad::RankMethod::kTwoStage;
      } else if (pc.weights || pc.dev_nbest || pc.dev_model_dir) {
        pc.rank = qad::RankMethod::kTuned;
      } else {
        pc.rank = qad::RankMethod::kFixed;
      }
      pc.eval_metrics = p_eval;
      pc.batch_size = g.batch_size;
      pc.timeout_seconds = g.timeout;
      pc.out_dir = p_out;
      pc.read = read;
      pc.jobs = g.jobs;
      fs::create_directories(pc.out_dir);
      qad::cli::write_resolved_config(resolved(), pc.out_dir / "config.txt");
      const auto result = qad::run_pipeline(pc);
      if (result.report) std::cout << qad::format_report_text(*result.report);
    } else if (*eval) {
      const auto hyps = qad::read_lines(ev_hyps);
      const auto refs = qad::read_lines(ev_refs);
      const auto srcs = ev_src.empty() ? std::vector<std::string>(hyps.size())
                                       : qad::read_lines(ev_src);
      std::vector<qad::MetricSpec> specs;
      for (const auto& m : ev_metrics) specs.push_back(spec(m, qad::MetricKind::kReferenceBased));
      const auto report = qad::eval_report(hyps, refs, srcs, specs);
      std::cout << qad::format_report_text(report);
      if (!ev_tsv.empty()) {
        write_file(qad::format_report_tsv(report), ev_tsv);
        qad::cli::write_resolved_config(resolved(), sidecar(ev_tsv));
      }
    } else if (*mqm) {
      std::printf("%.4f\n", qad::mqm_score(counts, mqm_norm));
    }
  } catch (const qad::Error& e) {
    std::cerr << "qad: " << e.what() << "\n";
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "qad: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "qad: internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}
