#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "vancl/cli.hpp"
#include "vancl/core.hpp"

namespace {

std::string default_out() {
  const char* env = std::getenv("VANCL_OUT");
  return env ? env : "out";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vancl: visually-asymmetric consistency learning at desk scale"};
  app.require_subcommand(1);

  std::uint64_t gen_seed = 0;
  std::uint64_t train_seed = 0;

  vancl::cli::GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a synthetic corpus");
  gen_cmd->add_option("--spec", gen.spec_path, "GenSpec JSON (defaults when omitted)");
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->default_val(default_out());
  auto* gen_seed_opt = gen_cmd->add_option("--seed", gen_seed, "override the spec seed");

  vancl::cli::PaintOptions paint;
  auto* paint_cmd = app.add_subcommand("paint", "paint one document's boxes");
  paint_cmd->add_option("--doc", paint.doc_json, "document JSON path")->required();
  paint_cmd->add_option("--scheme", paint.scheme, "1..8 | none | scheme JSON path");
  paint_cmd->add_option("--out", paint.out_dir, "output directory (default: beside the input)");

  vancl::cli::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "train a tagger");
  train_cmd->add_option("--config", train.config_path, "run config JSON")->required();
  train_cmd->add_option("--out", train.out_dir, "output directory")->default_val(default_out());
  train_cmd->add_flag("--baseline", train.baseline, "single flow, no consistency");
  auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "override the config seed");

  vancl::cli::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "entity-level P/R/F1");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint path")->required();
  eval_cmd->add_option("--data", eval.data_dir, "corpus directory")->required();
  eval_cmd->add_option("--split", eval.split, "train|test");
  eval_cmd->add_option("--out", eval.out_dir, "output directory")->default_val(default_out());

  vancl::cli::PredictOptions predict;
  auto* predict_cmd = app.add_subcommand("predict", "decode entities per document");
  predict_cmd->add_option("--checkpoint", predict.checkpoint, "checkpoint path")->required();
  predict_cmd->add_option("--data", predict.data_dir, "corpus directory")->required();
  predict_cmd->add_option("--split", predict.split, "train|test");
  predict_cmd->add_option("--out", predict.out_dir, "output directory")
      ->default_val(default_out());

  vancl::cli::AblateOptions ablate;
  std::string seeds_csv = "1";
  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation sweep");
  ablate_cmd
      ->add_option("--suite", ablate.suite,
                   "consistency|divergence|colors|lowres|sharing|encoders|modes")
      ->required();
  ablate_cmd->add_option("--config", ablate.config_path, "base run config JSON")->required();
  ablate_cmd->add_option("--out", ablate.out_dir, "output directory")->default_val(default_out());
  ablate_cmd->add_option("--seeds", seeds_csv, "comma-separated seeds (default 1)");
  ablate_cmd->add_option("--jobs", ablate.jobs, "parallel cells");

  vancl::cli::ExportOptions exp;
  auto* exp_cmd = app.add_subcommand("export-embeddings", "dump per-token hidden states as TSV");
  exp_cmd->add_option("--checkpoint", exp.checkpoint, "checkpoint path")->required();
  exp_cmd->add_option("--data", exp.data_dir, "corpus directory")->required();
  exp_cmd->add_option("--split", exp.split, "train|test");
  exp_cmd->add_option("--flow", exp.flow, "SL|VE");
  exp_cmd->add_option("--scheme", exp.scheme, "paint scheme for the VE flow");
  exp_cmd->add_option("--out", exp.out_path, "output TSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage / malformed invocation
  }

  try {
    if (*gen_cmd) {
      if (gen_seed_opt->count() > 0) gen.seed = gen_seed;
      return vancl::cli::cmd_gen(gen);
    }
    if (*paint_cmd) return vancl::cli::cmd_paint(paint);
    if (*train_cmd) {
      if (train_seed_opt->count() > 0) train.seed = train_seed;
      return vancl::cli::cmd_train(train);
    }
    if (*eval_cmd) return vancl::cli::cmd_eval(eval);
    if (*predict_cmd) return vancl::cli::cmd_predict(predict);
    if (*ablate_cmd) {
      ablate.seeds.clear();
      std::string tok;
      std::istringstream is(seeds_csv);
      while (std::getline(is, tok, ',')) {
        if (!tok.empty()) ablate.seeds.push_back(std::stoull(tok));
      }
      return vancl::cli::cmd_ablate(ablate);
    }
    if (*exp_cmd) return vancl::cli::cmd_export_embeddings(exp);
  } catch (const vancl::core::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
