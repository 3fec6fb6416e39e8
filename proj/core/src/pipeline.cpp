#include "qad/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

#include "qad/error.hpp"
#include "qad/toy_model.hpp"

namespace qad {

namespace {

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

// ---------------------------------------------------------------------------
// Evaluation

EvalReport eval_report(const std::vector<std::string>& hyps,
                       const std::vector<std::string>& refs,
                       const std::vector<std::string>& srcs,
                       const std::vector<MetricSpec>& specs) {
  if (hyps.size() != refs.size() || hyps.size() != srcs.size()) {
    throw ValidationError("evaluation inputs differ in length: " + std::to_string(hyps.size()) +
                          " hyps, " + std::to_string(refs.size()) + " refs, " +
                          std::to_string(srcs.size()) + " srcs");
  }
  EvalReport report;
  report.num_segments = hyps.size();
  for (const auto& spec : specs) {
    spec.validate();
    switch (spec.backend) {
      case MetricBackend::kBuiltinBleu: {
        SufficientStats total;
        for (std::size_t i = 0; i < hyps.size(); ++i) total += bleu_stats(hyps[i], refs[i]);
        report.scores.push_back({spec.name, corpus_bleu(total)});
        break;
      }
      case MetricBackend::kBuiltinChrf: {
        ChrfStats total;
        for (std::size_t i = 0; i < hyps.size(); ++i) total += chrf_stats(hyps[i], refs[i]);
        report.scores.push_back({spec.name, chrf_score(total)});
        break;
      }
      case MetricBackend::kExternal: {
        auto metric = metric_fn(spec);
        const bool with_ref = metric->kind() == MetricKind::kReferenceBased;
        std::vector<MetricRow> rows;
        rows.reserve(hyps.size());
        for (std::size_t i = 0; i < hyps.size(); ++i) {
          rows.push_back({srcs[i], hyps[i],
                          with_ref ? std::optional<std::string_view>(refs[i]) : std::nullopt});
        }
        const auto scores = metric->score(rows);
        double sum = 0.0;
        for (double s : scores) sum += s;
        const double mean = scores.empty() ? 0.0 : sum / static_cast<double>(scores.size());
        report.scores.push_back({metric->name(), mean});
        break;
      }
    }
  }
  return report;
}

std::string format_report_text(const EvalReport& report) {
  std::size_t width = 8;
  for (const auto& s : report.scores) width = std::max(width, s.metric.size());
  std::string out;
  auto row = [&](const std::string& name, const std::string& value) {
    out += name;
    out.append(width - name.size() + 2, ' ');
    out += value;
    out += '\n';
  };
  row("metric", "score");
  for (const auto& s : report.scores) {
    // Builtin lexical metrics on the usual 0-100 scale, external ones raw.
    const bool lexical = s.metric == "bleu" || s.metric == "chrf";
    row(s.metric, lexical ? fixed2(s.score) : fixed4(s.score));
  }
  row("segments", std::to_string(report.num_segments));
  return out;
}

std::string format_report_tsv(const EvalReport& report) {
  std::string out = "metric\tscore\n";
  for (const auto& s : report.scores) {
    out += s.metric + "\t" + format_double(s.score) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// MQM

double mqm_score(const MqmCounts& counts, double norm) {
  if (counts.minor < 0 || counts.major < 0 || counts.critical < 0) {
    throw ValidationError("MQM error counts must be nonnegative");
  }
  if (counts.num_segments <= 0) throw ValidationError("MQM score needs at least one segment");
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw ValidationError("MQM normalization must be positive and finite");
  }
  const double weighted = static_cast<double>(counts.minor) +
                          5.0 * static_cast<double>(counts.major) +
                          10.0 * static_cast<double>(counts.critical);
  const double score =
      100.0 * (1.0 - weighted / (norm * static_cast<double>(counts.num_segments)));
  return std::max(0.0, score);
}

// ---------------------------------------------------------------------------
// Run configs

ConfigEntries parse_config(const std::string& text, const std::string& origin) {
  ConfigEntries entries;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) {
      throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

ConfigEntries read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::string text{std::istreambuf_iterator<char>(in), {}};
  return parse_config(text, path.string());
}

std::string format_config(const ConfigEntries& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

// ---------------------------------------------------------------------------
// Pipeline

RankMethod parse_rank_method(const std::string& text) {
  if (text == "fixed") return RankMethod::kFixed;
  if (text == "tuned") return RankMethod::kTuned;
  if (text == "mbr") return RankMethod::kMbr;
  if (text == "two-stage") return RankMethod::kTwoStage;
  throw ValidationError("unknown ranking method '" + text +
                        "' (expected fixed, tuned, mbr or two-stage)");
}

std::string to_string(RankMethod method) {
  switch (method) {
    case RankMethod::kFixed:
      return "fixed";
    case RankMethod::kTuned:
      return "tuned";
    case RankMethod::kMbr:
      return "mbr";
    case RankMethod::kTwoStage:
      return "two-stage";
  }
  return "fixed";
}

MetricSpec make_metric_spec(const std::string& text, MetricKind kind, int batch_size,
                            double timeout_seconds) {
  auto spec = parse_metric_spec(text, kind);
  if (spec.external) {
    if (batch_size < 1) throw ValidationError("scorer batch size must be >= 1");
    if (!(timeout_seconds > 0.0)) throw ValidationError("scorer timeout must be positive");
    spec.external->batch_size = batch_size;
    spec.external->timeout_seconds = timeout_seconds;
  }
  return spec;
}

FeatureMatrix collect_features(const std::vector<NBestEntry>& entries,
                               const std::vector<FeatureSource>& sources) {
  FeatureMatrix features = stored_features(entries);
  if (!sources.empty()) merge_features(features, extract_features(entries, sources));
  return features;
}

namespace {

// Runs one stage, prefixing any library error with the stage name.
template <typename Fn>
auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  const std::string prefix = "stage " + name + ": ";
  try {
    return fn();
  } catch (const ScorerError& e) {
    throw ScorerError(e.reason(), prefix + e.what(), e.row());
  } catch (const ValidationError& e) {
    throw ValidationError(prefix + e.what());
  } catch (const ParseError& e) {
    throw ParseError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(e.kind(), prefix + e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw IoError(prefix + e.what());
  }
}

std::vector<NBestEntry> load_or_generate(const std::optional<std::filesystem::path>& model_dir,
                                         const std::optional<std::filesystem::path>& nbest,
                                         const PipelineConfig& cfg, const char* what) {
  if (model_dir.has_value() == nbest.has_value()) {
    throw ValidationError(std::string("give exactly one of a model directory or an N-best "
                                      "file for the ") +
                          what + " set");
  }
  if (nbest) return read_nbest(*nbest, cfg.read);
  GenConfig gen = cfg.gen;
  gen.jobs = cfg.jobs;
  gen.dedup = gen.dedup || cfg.read.dedup;
  return build_nbest(load_model_dir(*model_dir), gen);
}

std::vector<std::string> selected_texts(const std::vector<Selection>& selections) {
  std::vector<std::string> out;
  out.reserve(selections.size());
  for (const auto& s : selections) out.push_back(s.text);
  return out;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  if (cfg.out_dir.empty()) throw ValidationError("pipeline needs an output directory");
  stage("setup", [&] {
    std::filesystem::create_directories(cfg.out_dir);
    return 0;
  });
  PipelineResult result;
  auto spec = [&](const std::string& text, MetricKind kind) {
    return make_metric_spec(text, kind, cfg.batch_size, cfg.timeout_seconds);
  };
  auto out = [&](const char* name) {
    auto p = cfg.out_dir / name;
    result.outputs.push_back(p);
    return p;
  };

  const auto entries = stage("generate", [&] {
    auto e = load_or_generate(cfg.model_dir, cfg.nbest, cfg, "test");
    write_nbest(e, out("nbest.jsonl"));
    return e;
  });

  std::vector<FeatureSource> sources;
  stage("features", [&] {
    for (const auto& text : cfg.qe_metrics) {
      sources.push_back(
          metric_feature(metric_fn(spec(text, MetricKind::kReferenceFree))));
    }
    return 0;
  });
  const auto features = stage("features", [&] {
    auto f = collect_features(entries, sources);
    write_feature_cache(entries, f, out("features.jsonl"));
    return f;
  });

  const bool needs_weights =
      cfg.rank == RankMethod::kTuned || cfg.rank == RankMethod::kTwoStage;
  WeightsTable weights;
  if (needs_weights) {
    const bool have_dev = cfg.dev_model_dir || cfg.dev_nbest;
    if (cfg.weights && have_dev) {
      throw ValidationError("give either a weights file or a dev set, not both");
    }
    if (cfg.weights) {
      weights = stage("weights", [&] { return read_weights(*cfg.weights); });
    } else if (have_dev) {
      const auto dev = stage("dev", [&] {
        auto e = load_or_generate(cfg.dev_model_dir, cfg.dev_nbest, cfg, "dev");
        write_nbest(e, out("dev.nbest.jsonl"));
        return e;
      });
      const auto dev_features = stage("dev-features", [&] {
        auto f = collect_features(dev, sources);
        write_feature_cache(dev, f, out("dev.features.jsonl"));
        return f;
      });
      result.mert = stage("mert", [&] {
        std::unique_ptr<Metric> sentence_metric;
        if (cfg.mert.objective == MertObjective::kMeanSentenceScore) {
          sentence_metric =
              metric_fn(spec(cfg.mert_metric, MetricKind::kReferenceBased));
        }
        const auto inst =
            make_mert_instance(dev, dev_features, cfg.mert.objective, sentence_metric.get());
        MertConfig mc = cfg.mert;
        mc.jobs = cfg.jobs;
        auto r = mert_optimize(inst, mc);
        write_weights(r.weights, out("weights.tsv"));
        write_text(trace_to_jsonl(r, inst.feature_names), out("mert.trace.jsonl"));
        return r;
      });
      weights = result.mert->weights;
    } else {
      throw ValidationError("tuned ranking needs a weights file or a dev set");
    }
  }

  result.selections = stage("rank", [&] {
    std::vector<Selection> sel;
    switch (cfg.rank) {
      case RankMethod::kFixed:
        sel = rerank_fixed(entries, features, cfg.fixed_feature);
        break;
      case RankMethod::kTuned:
        sel = rerank_tuned(entries, features, weights);
        break;
      case RankMethod::kMbr: {
        auto utility = metric_fn(spec(cfg.utility, MetricKind::kReferenceBased));
        sel = mbr_decode(entries, *utility, cfg.mbr, cfg.jobs);
        break;
      }
      case RankMethod::kTwoStage: {
        auto utility = metric_fn(spec(cfg.utility, MetricKind::kReferenceBased));
        sel = two_stage_decode(entries, features, weights, *utility, cfg.mbr, cfg.jobs);
        break;
      }
    }
    write_selections(sel, out("selections.jsonl"));
    write_lines(selected_texts(sel), out("hyps.txt"));
    return sel;
  });

  const bool have_refs =
      !entries.empty() && std::all_of(entries.begin(), entries.end(),
                                      [](const NBestEntry& e) { return !e.references.empty(); });
  if (have_refs && !cfg.eval_metrics.empty()) {
    result.report = stage("eval", [&] {
      std::vector<std::string> refs, srcs;
      for (const auto& e : entries) {
        refs.push_back(e.references.front());
        srcs.push_back(e.segment.text);
      }
      std::vector<MetricSpec> specs;
      for (const auto& m : cfg.eval_metrics) {
        specs.push_back(spec(m, MetricKind::kReferenceBased));
      }
      auto report = eval_report(selected_texts(result.selections), refs, srcs, specs);
      write_text(format_report_text(report), out("eval.txt"));
      write_text(format_report_tsv(report), out("eval.tsv"));
      return report;
    });
  }
  return result;
}

}  // namespace qad
