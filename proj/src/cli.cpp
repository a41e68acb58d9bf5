#include "vancl/cli.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "vancl/decode.hpp"
#include "vancl/eval.hpp"
#include "vancl/io.hpp"
#include "vancl/paint.hpp"
#include "vancl/rng.hpp"

namespace vancl::cli {

using core::ValidationError;

namespace {

std::string fnv_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  io::write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

}  // namespace

int cmd_gen(const GenOptions& opts) {
  synthgen::GenSpec spec = synthgen::GenSpec::defaults();
  if (!opts.spec_path.empty()) {
    spec = synthgen::GenSpec::from_json(nlohmann::json::parse(io::read_file(opts.spec_path)));
  }
  if (opts.seed) spec.seed = *opts.seed;
  spec.validate();
  const synthgen::CorpusSplit corpus = synthgen::generate_corpus(spec);
  synthgen::write_corpus(opts.out_dir, corpus, spec);
  std::cout << "gen: wrote " << corpus.train.size() << " train + " << corpus.test.size()
            << " test documents to " << opts.out_dir << "\n";
  return 0;
}

int cmd_paint(const PaintOptions& opts) {
  const std::filesystem::path doc_path(opts.doc_json);
  const auto j = nlohmann::json::parse(io::read_file(doc_path));
  const std::string doc_id = j.at("doc_id").get<std::string>();
  const core::RasterImage image = io::read_ppm(doc_path.parent_path() / (doc_id + ".ppm"));
  const core::Document doc = io::document_from_json(j, image);
  const paint::ColorScheme scheme = paint::resolve_scheme(opts.scheme);
  for (const auto& seg : doc.segments) (void)scheme.spec_for(seg.label);
  const paint::PaintedDocument painted = paint::paint_document(doc, scheme);
  const std::filesystem::path out_dir =
      opts.out_dir.empty() ? doc_path.parent_path() : std::filesystem::path(opts.out_dir);
  std::filesystem::create_directories(out_dir);
  const auto out_path = out_dir / (doc_id + ".painted.ppm");
  io::write_ppm(out_path, painted.image);
  std::cout << "paint: wrote " << out_path.string() << " (scheme " << scheme.name << ")\n";
  return 0;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(io::read_file(path));
  RunConfig rc;
  if (!j.contains("data_dir")) throw ValidationError("run config needs data_dir");
  rc.data_dir = j["data_dir"].get<std::string>();
  if (j.contains("subsample_p")) rc.subsample_p = j["subsample_p"].get<double>();
  if (j.contains("train")) rc.train_cfg = train::TrainConfig::from_json(j["train"]);
  if (j.contains("model")) rc.model_cfg = model::ModelConfig::from_json(j["model"]);
  return rc;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["data_dir"] = data_dir;
  j["subsample_p"] = subsample_p;
  j["train"] = train_cfg.to_json();
  j["model"] = model_cfg.to_json();
  return j;
}

model::Vocab corpus_vocab(const synthgen::LoadedCorpus& corpus,
                          const std::filesystem::path& data_dir) {
  const auto manifest = nlohmann::json::parse(io::read_file(data_dir / "manifest.json"));
  if (manifest.contains("genspec")) {
    // closed generator vocabulary: stable across subsamples
    const synthgen::GenSpec spec = synthgen::GenSpec::from_json(manifest["genspec"]);
    std::set<std::string> uniq(spec.ambiguous_vocab.begin(), spec.ambiguous_vocab.end());
    for (const auto& [label, vocab] : spec.label_vocab) uniq.insert(vocab.begin(), vocab.end());
    std::vector<std::string> tokens{"[PAD]", "[UNK]"};
    tokens.insert(tokens.end(), uniq.begin(), uniq.end());
    return model::Vocab::from_tokens(std::move(tokens));
  }
  return model::Vocab::build(corpus.split.train);
}

TrainRun run_training(const RunConfig& base, const std::optional<std::uint64_t>& seed_override,
                      bool force_baseline) {
  RunConfig rc = base;
  if (seed_override) rc.train_cfg.seed = *seed_override;
  if (force_baseline) {
    rc.train_cfg.baseline = true;
    rc.train_cfg.mode = train::Mode::kNone;
    rc.train_cfg.lambda = 0.0;
  }
  TrainRun run;
  run.corpus = synthgen::read_corpus(rc.data_dir);
  const model::Vocab vocab = corpus_vocab(run.corpus, rc.data_dir);
  rc.model_cfg.labels = run.corpus.labels.names;
  rc.model_cfg.vocab = vocab.tokens;

  std::vector<core::Document> train_docs = run.corpus.split.train;
  if (rc.subsample_p < 1.0) {
    train_docs = synthgen::subsample(train_docs, rc.subsample_p, rc.train_cfg.seed);
  }

  run.result = train::train(train_docs, run.corpus.split.test, rc.train_cfg, rc.model_cfg);

  nlohmann::ordered_json echo;
  echo["run"] = rc.to_json();
  echo["n_train_used"] = train_docs.size();
  echo["genspec_digest"] = run.corpus.genspec_digest;
  run.config_echo = echo;
  return run;
}

int cmd_train(const TrainOptions& opts) {
  const RunConfig rc = RunConfig::load(opts.config_path);
  const TrainRun run = run_training(rc, opts.seed, opts.baseline);
  const std::filesystem::path out(opts.out_dir);
  std::filesystem::create_directories(out);
  model::save_checkpoint(out / "checkpoint.bin", run.result.deploy_params);
  std::ostringstream log;
  for (const auto& rec : run.result.log) log << rec.to_json().dump() << "\n";
  io::write_file(out / "train_log.jsonl", log.str());
  io::write_file(out / "config.json", run.config_echo.dump(2) + "\n");
  const auto& last = run.result.log.back();
  std::cout << "train: epochs=" << run.result.log.size() << " L_final=" << last.l_final
            << " dev_f1=" << last.dev_f1 << " -> " << (out / "checkpoint.bin").string() << "\n";
  return 0;
}

namespace {

std::vector<core::Document>& pick_split(synthgen::LoadedCorpus& corpus, const std::string& split) {
  if (split == "train") return corpus.split.train;
  if (split == "test") return corpus.split.test;
  throw ValidationError("unknown split: " + split + " (expected train|test)");
}

}  // namespace

int cmd_eval(const EvalOptions& opts) {
  const model::ModelParams params = model::load_checkpoint(opts.checkpoint);
  synthgen::LoadedCorpus corpus = synthgen::read_corpus(opts.data_dir);
  const auto& docs = pick_split(corpus, opts.split);
  const eval::MetricsReport report = eval::evaluate(params, docs);
  const std::filesystem::path out(opts.out_dir);
  std::filesystem::create_directories(out);
  io::write_file(out / "metrics.json", report.to_json().dump(2) + "\n");
  std::cout << "eval: split=" << opts.split << " p=" << report.prf.precision()
            << " r=" << report.prf.recall() << " f1=" << report.prf.f1() << "\n";
  return 0;
}

int cmd_predict(const PredictOptions& opts) {
  const model::ModelParams params = model::load_checkpoint(opts.checkpoint);
  synthgen::LoadedCorpus corpus = synthgen::read_corpus(opts.data_dir);
  const auto& docs = pick_split(corpus, opts.split);
  const std::filesystem::path out(opts.out_dir);
  std::filesystem::create_directories(out);
  std::ostringstream lines;
  for (const auto& doc : docs) {
    const decode::Prediction pred = decode::predict_document(params, doc);
    nlohmann::ordered_json j;
    j["doc_id"] = pred.doc_id;
    auto& ents = j["entities"] = nlohmann::ordered_json::array();
    for (const auto& e : pred.entities) {
      ents.push_back({{"type", e.type}, {"start", e.start}, {"end", e.end}});
    }
    j["tags"] = pred.tags;
    lines << j.dump() << "\n";
  }
  io::write_file(out / "predictions.jsonl", lines.str());
  std::cout << "predict: wrote " << docs.size() << " documents to "
            << (out / "predictions.jsonl").string() << "\n";
  return 0;
}

int cmd_export_embeddings(const ExportOptions& opts) {
  model::ModelParams params = model::load_checkpoint(opts.checkpoint);
  synthgen::LoadedCorpus corpus = synthgen::read_corpus(opts.data_dir);
  const auto& docs = pick_split(corpus, opts.split);
  const bool ve = opts.flow == "VE";
  if (!ve && opts.flow != "SL") throw ValidationError("flow must be SL or VE");

  // Deployable checkpoints carry no outer encoder; the VE export therefore
  // runs the shared backbone over painted crops.
  model::ModelConfig cfg = params.config;
  cfg.outer_encoder.n_layers = 0;
  const core::LabelSet labels{cfg.labels};
  const core::TagAlphabet alphabet(labels);
  const model::Vocab vocab = model::Vocab::from_tokens(cfg.vocab);
  const paint::ColorScheme scheme = paint::resolve_scheme(opts.scheme);

  std::ostringstream tsv;
  tsv << "doc_id\ttoken_index\ttag";
  for (int i = 0; i < cfg.d_model; ++i) tsv << "\th" << i;
  tsv << "\n";
  tsv.precision(10);

  long rows = 0;
  for (const auto& doc : docs) {
    if (doc.segments.empty()) continue;
    core::RasterImage painted_img;
    std::unordered_map<std::string, const core::RasterImage*> override_map;
    if (ve && !scheme.is_noop()) {
      painted_img = paint::paint_document(doc, scheme).image;
      override_map[doc.doc_id] = &painted_img;
    }
    const model::TokenBatch batch = model::make_batch({&doc}, vocab, alphabet, cfg, override_map);
    nn::Tape tape;
    model::LeafMap leaves(tape, params.store, false);
    const model::FlowHandles h =
        model::forward_on_tape(tape, cfg, leaves, nullptr, batch,
                               ve ? model::FlowMode::kVE : model::FlowMode::kSL, false, 0);
    const nn::Tensor& hidden = tape.val(h.hidden);
    const core::TagSequence gold = core::gold_tags(doc);
    for (int t = 0; t < doc.n_tokens(); ++t) {
      tsv << doc.doc_id << "\t" << t << "\t" << gold[t];
      for (int c = 0; c < cfg.d_model; ++c) tsv << "\t" << hidden.at(t, c);
      tsv << "\n";
      ++rows;
    }
  }
  const std::filesystem::path out(opts.out_path);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  io::write_file(out, tsv.str());
  std::cout << "export-embeddings: " << rows << " tokens (" << opts.flow << ") -> "
            << out.string() << "\n";
  return 0;
}

// --- sweep harness -------------------------------------------------------------

namespace {

struct Cell {
  std::string variant;
  std::uint64_t seed = 0;
  std::function<void(RunConfig&)> apply;
};

std::vector<Cell> suite_cells(const std::string& suite, const std::vector<std::uint64_t>& seeds) {
  std::vector<std::pair<std::string, std::function<void(RunConfig&)>>> variants;
  auto set_mode = [](train::Mode m) {
    return [m](RunConfig& rc) { rc.train_cfg.mode = m; };
  };
  if (suite == "consistency") {
    variants = {{"vancl", set_mode(train::Mode::kVancl)}, {"none", set_mode(train::Mode::kNone)}};
  } else if (suite == "divergence") {
    variants = {{"kl", [](RunConfig& rc) { rc.train_cfg.divergence = train::Divergence::kKL; }},
                {"js", [](RunConfig& rc) { rc.train_cfg.divergence = train::Divergence::kJS; }}};
  } else if (suite == "colors") {
    for (int row = 1; row <= 8; ++row) {
      variants.emplace_back("row" + std::to_string(row), [row](RunConfig& rc) {
        rc.train_cfg.scheme = std::to_string(row);
      });
    }
  } else if (suite == "lowres") {
    const std::pair<const char*, double> ps[] = {
        {"p5", 0.05}, {"p12.5", 0.125}, {"p25", 0.25}, {"p50", 0.5}, {"p100", 1.0}};
    for (const auto& [pname, p] : ps) {
      variants.emplace_back(std::string("baseline_") + pname, [p](RunConfig& rc) {
        rc.subsample_p = p;
        rc.train_cfg.baseline = true;
        rc.train_cfg.mode = train::Mode::kNone;
        rc.train_cfg.lambda = 0.0;
      });
      variants.emplace_back(std::string("vancl_") + pname, [p](RunConfig& rc) {
        rc.subsample_p = p;
        rc.train_cfg.mode = train::Mode::kVancl;
      });
    }
  } else if (suite == "sharing") {
    const std::pair<const char*, bool> share[] = {{"shared", true}, {"unshared", false}};
    const std::pair<const char*, bool> prompt[] = {{"paint", true}, {"nopaint", false}};
    for (const auto& [sname, sv] : share) {
      for (const auto& [pname, pv] : prompt) {
        variants.emplace_back(std::string(sname) + "_" + pname, [sv, pv](RunConfig& rc) {
          rc.train_cfg.share_weights = sv;
          if (!pv) rc.train_cfg.scheme = "none";
        });
      }
    }
  } else if (suite == "encoders") {
    const std::pair<const char*, int> encs[] = {{"cnn2", 2}, {"cnn4", 4}, {"none", 0}};
    for (const auto& [name, layers] : encs) {
      variants.emplace_back(name, [layers](RunConfig& rc) {
        rc.model_cfg.outer_encoder.n_layers = layers;
      });
    }
  } else if (suite == "modes") {
    variants = {{"vancl", set_mode(train::Mode::kVancl)},
                {"rdrop", set_mode(train::Mode::kRDrop)},
                {"mutual", set_mode(train::Mode::kMutual)},
                {"baseline", [](RunConfig& rc) {
                   rc.train_cfg.baseline = true;
                   rc.train_cfg.mode = train::Mode::kNone;
                   rc.train_cfg.lambda = 0.0;
                 }}};
  } else {
    throw ValidationError("unknown suite: " + suite);
  }
  std::vector<Cell> cells;
  for (const auto& [name, fn] : variants) {
    for (std::uint64_t seed : seeds) cells.push_back(Cell{name, seed, fn});
  }
  return cells;
}

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == '.' || c == '/' || c == ' ') c = '_';
  }
  return out;
}

struct CellResult {
  std::string variant;
  std::uint64_t seed = 0;
  nlohmann::json metrics;
  double wall_s = 0.0;
  bool reused = false;
};

CellResult run_cell(const RunConfig& base, const Cell& cell,
                    const std::filesystem::path& cells_dir) {
  RunConfig rc = base;
  cell.apply(rc);
  rc.train_cfg.seed = cell.seed;
  nlohmann::ordered_json resolved;
  resolved["variant"] = cell.variant;
  resolved["seed"] = cell.seed;
  resolved["run"] = rc.to_json();
  const std::string hash = fnv_hash(resolved.dump());
  const std::filesystem::path cell_path =
      cells_dir / (sanitize(cell.variant) + "_s" + std::to_string(cell.seed) + ".json");

  CellResult out;
  out.variant = cell.variant;
  out.seed = cell.seed;
  if (std::filesystem::exists(cell_path)) {
    const auto j = nlohmann::json::parse(io::read_file(cell_path));
    if (j.value("config_hash", "") == hash) {
      out.metrics = j.at("metrics");
      out.wall_s = j.value("wall_s", 0.0);
      out.reused = true;
      return out;  // resume: completed cell, nothing to do
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  const TrainRun run = run_training(rc, std::nullopt, rc.train_cfg.baseline);
  const eval::MetricsReport report =
      eval::evaluate(run.result.deploy_params, run.corpus.split.test);
  out.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.metrics = report.to_json();

  nlohmann::ordered_json record;
  record["variant"] = cell.variant;
  record["seed"] = cell.seed;
  record["config_hash"] = hash;
  record["metrics"] = out.metrics;
  record["wall_s"] = out.wall_s;
  record["resolved"] = resolved;
  atomic_write(cell_path, record.dump(2) + "\n");
  return out;
}

struct VariantSummary {
  std::string variant;
  std::vector<double> f1;
  double mean = 0.0;
  double stddev = 0.0;
};

std::vector<VariantSummary> summarize(const std::vector<Cell>& cells,
                                      const std::vector<CellResult>& results) {
  std::vector<VariantSummary> out;
  for (const auto& cell : cells) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const VariantSummary& v) { return v.variant == cell.variant; });
    if (it == out.end()) {
      out.push_back(VariantSummary{cell.variant, {}, 0, 0});
    }
  }
  for (auto& v : out) {
    for (const auto& r : results) {
      if (r.variant == v.variant) v.f1.push_back(r.metrics.at("micro").at("f1").get<double>());
    }
    double sum = 0.0;
    for (double x : v.f1) sum += x;
    v.mean = v.f1.empty() ? 0.0 : sum / v.f1.size();
    double sq = 0.0;
    for (double x : v.f1) sq += (x - v.mean) * (x - v.mean);
    v.stddev = v.f1.size() > 1 ? std::sqrt(sq / (v.f1.size() - 1)) : 0.0;
  }
  return out;
}

std::string format_pct(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << 100.0 * v;
  return os.str();
}

std::string colors_report_md(const std::vector<VariantSummary>& summaries,
                             const std::vector<CellResult>& results,
                             const std::vector<std::string>& labels) {
  std::ostringstream md;
  md << "# Color scheme sweep\n\n| row |";
  for (const auto& l : labels) md << " " << l << " color | " << l << " F1 |";
  md << " OTHER color | OTHER F1 | micro-avg |\n|---|";
  for (std::size_t i = 0; i < labels.size() + 1; ++i) md << "---|---|";
  md << "---|\n";
  std::map<std::string, long> support;
  for (int row = 1; row <= 8; ++row) {
    const std::string variant = "row" + std::to_string(row);
    const auto sit = std::find_if(summaries.begin(), summaries.end(),
                                  [&](const VariantSummary& v) { return v.variant == variant; });
    if (sit == summaries.end()) continue;
    const paint::ColorScheme scheme = paint::builtin_scheme(row);
    md << "| " << row << " |";
    std::vector<std::string> all = labels;
    all.push_back(core::kOtherLabel);
    for (const auto& l : all) {
      // mean per-type F1 across seeds
      double acc = 0.0;
      int n = 0;
      for (const auto& r : results) {
        if (r.variant != variant) continue;
        const auto& pt = r.metrics.at("per_type");
        if (pt.contains(l)) {
          acc += pt.at(l).at("f1").get<double>();
          ++n;
          support[l] = pt.at(l).at("support").get<long>();
        }
      }
      md << " " << paint::to_hex(scheme.spec_for(l).rgb) << " | "
         << (n > 0 ? format_pct(acc / n) : "-") << " |";
    }
    md << " " << format_pct(sit->mean) << " |\n";
  }
  md << "| supp. |";
  for (const auto& l : labels) md << "  | " << support[l] << " |";
  md << "  | " << support[core::kOtherLabel] << " |  |\n";
  return md.str();
}

std::string lowres_report_md(const std::vector<VariantSummary>& summaries) {
  const char* ps[] = {"p5", "p12.5", "p25", "p50", "p100"};
  std::ostringstream md;
  md << "# Low-resource sweep\n\n| model | 5% | 12.5% | 25% | 50% | 100% |\n"
     << "|---|---|---|---|---|---|\n";
  for (const char* arm : {"baseline", "vancl"}) {
    md << "| " << arm << " |";
    for (const char* p : ps) {
      const std::string variant = std::string(arm) + "_" + p;
      const auto it = std::find_if(summaries.begin(), summaries.end(),
                                   [&](const VariantSummary& v) { return v.variant == variant; });
      if (it == summaries.end()) {
        md << " - |";
      } else {
        md << " " << format_pct(it->mean) << " ± " << format_pct(it->stddev) << " |";
      }
    }
    md << "\n";
  }
  return md.str();
}

std::string generic_report_md(const std::string& suite,
                              const std::vector<VariantSummary>& summaries) {
  std::ostringstream md;
  md << "# " << suite << " sweep\n\n| variant | mean F1 | std | per-seed |\n|---|---|---|---|\n";
  for (const auto& v : summaries) {
    md << "| " << v.variant << " | " << format_pct(v.mean) << " | " << format_pct(v.stddev)
       << " | ";
    for (std::size_t i = 0; i < v.f1.size(); ++i) {
      if (i) md << ", ";
      md << format_pct(v.f1[i]);
    }
    md << " |\n";
  }
  return md.str();
}

}  // namespace

int cmd_ablate(const AblateOptions& opts) {
  if (opts.seeds.empty()) throw ValidationError("ablate needs at least one seed");
  const RunConfig base = RunConfig::load(opts.config_path);
  const std::vector<Cell> cells = suite_cells(opts.suite, opts.seeds);
  const std::filesystem::path out(opts.out_dir);
  const std::filesystem::path cells_dir = out / "cells";
  std::filesystem::create_directories(cells_dir);

  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::string first_error;
  const int jobs = std::max(1, opts.jobs);
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      try {
        results[i] = run_cell(base, cells[i], cells_dir);
        std::lock_guard<std::mutex> lk(err_mutex);
        std::cout << "ablate: cell " << cells[i].variant << " seed " << cells[i].seed
                  << (results[i].reused ? " (cached)" : "") << " f1="
                  << results[i].metrics.at("micro").at("f1").get<double>() << "\n";
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lk(err_mutex);
        if (first_error.empty()) {
          first_error = "cell " + cells[i].variant + " seed " + std::to_string(cells[i].seed) +
                        ": " + e.what();
        }
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (!first_error.empty()) throw std::runtime_error("ablate failed: " + first_error);

  const std::vector<VariantSummary> summaries = summarize(cells, results);

  nlohmann::ordered_json report;
  report["suite"] = opts.suite;
  report["seeds"] = opts.seeds;
  report["base_config"] = base.to_json();
  auto& cj = report["cells"] = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    cj.push_back({{"variant", r.variant},
                  {"seed", r.seed},
                  {"metrics", r.metrics},
                  {"wall_s", r.wall_s}});
  }
  auto& sj = report["summary"] = nlohmann::ordered_json::array();
  for (const auto& v : summaries) {
    sj.push_back({{"variant", v.variant},
                  {"mean_f1", v.mean},
                  {"std_f1", v.stddev},
                  {"per_seed_f1", v.f1}});
  }
  atomic_write(out / "report.json", report.dump(2) + "\n");

  const synthgen::LoadedCorpus probe = [&] {
    synthgen::LoadedCorpus c;
    const auto manifest = nlohmann::json::parse(
        io::read_file(std::filesystem::path(base.data_dir) / "manifest.json"));
    c.labels.names = manifest.at("labels").get<std::vector<std::string>>();
    return c;
  }();
  std::string md;
  if (opts.suite == "colors") {
    md = colors_report_md(summaries, results, probe.labels.names);
  } else if (opts.suite == "lowres") {
    md = lowres_report_md(summaries);
  } else {
    md = generic_report_md(opts.suite, summaries);
  }
  atomic_write(out / "report.md", md);
  std::cout << "ablate: " << cells.size() << " cells -> " << (out / "report.md").string() << "\n";
  return 0;
}

}  // namespace vancl::cli
