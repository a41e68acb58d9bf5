#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vancl/backbone.hpp"
#include "vancl/synthgen.hpp"
#include "vancl/train.hpp"

namespace vancl::cli {

struct GenOptions {
  std::string spec_path;  // empty -> built-in defaults
  std::string out_dir;
  std::optional<std::uint64_t> seed;  // overrides the spec's seed
};
int cmd_gen(const GenOptions& opts);

struct PaintOptions {
  std::string doc_json;  // sibling <doc_id>.ppm is the image
  std::string scheme = "1";
  std::string out_dir;
};
int cmd_paint(const PaintOptions& opts);

struct TrainOptions {
  std::string config_path;
  std::string out_dir;
  bool baseline = false;
  std::optional<std::uint64_t> seed;
};
int cmd_train(const TrainOptions& opts);

struct EvalOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::string out_dir;
};
int cmd_eval(const EvalOptions& opts);

struct PredictOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::string out_dir;
};
int cmd_predict(const PredictOptions& opts);

struct AblateOptions {
  std::string suite;  // consistency | divergence | colors | lowres | sharing | encoders | modes
  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds{1};
  int jobs = 1;
};
int cmd_ablate(const AblateOptions& opts);

struct ExportOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::string flow = "SL";   // SL | VE
  std::string scheme = "1";  // paints VE inputs
  std::string out_path;
};
int cmd_export_embeddings(const ExportOptions& opts);

// --- shared plumbing ---------------------------------------------------------

// Training run file: {"data_dir": ..., "subsample_p": ..., "train": {...},
// "model": {...}}. Vocabulary and labels are resolved from the corpus.
struct RunConfig {
  std::string data_dir;
  double subsample_p = 1.0;
  train::TrainConfig train_cfg;
  model::ModelConfig model_cfg;  // labels/vocab filled at load time

  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

// Builds the closed vocabulary: generator vocabularies when the manifest
// carries a genspec echo, otherwise the train split's tokens.
model::Vocab corpus_vocab(const synthgen::LoadedCorpus& corpus,
                          const std::filesystem::path& data_dir);

struct TrainRun {
  train::TrainResult result;
  synthgen::LoadedCorpus corpus;
  nlohmann::json config_echo;
};

// The train command's core, reusable by the sweep harness and tests.
TrainRun run_training(const RunConfig& base, const std::optional<std::uint64_t>& seed_override,
                      bool force_baseline);

}  // namespace vancl::cli
