#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vancl/backbone.hpp"
#include "vancl/core.hpp"
#include "vancl/nn.hpp"

namespace vancl::train {

enum class Divergence { kKL, kJS, kKLForward, kKLReverse };
enum class Mode { kVancl, kMutual, kRDrop, kNone };

std::string to_string(Divergence d);
Divergence divergence_from_string(const std::string& s);
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct TrainConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  double dropout_p = 0.1;
  int batch_size = 8;
  int epochs = 20;
  double lambda = 1.0;                  // consistency weight
  Divergence divergence = Divergence::kKL;
  Mode mode = Mode::kVancl;
  bool share_weights = true;
  std::string scheme = "1";             // "1".."8" | "none" | path to a scheme JSON
  bool baseline = false;                // no second flow at all
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct StepReport {
  double l_sup = 0.0;
  double l_cons = 0.0;
  double l_final = 0.0;
  double lambda_eff = 0.0;
  double grad_norm = 0.0;
  long step = 0;
};

// --- loss functions (value level, over materialized distributions) ----------
// All reductions are means over unmasked tokens.
double cross_entropy(const model::TokenDistributions& pred, const std::vector<int>& gold_ids,
                     const std::vector<std::uint8_t>& mask);
double kl_divergence(const model::TokenDistributions& p, const model::TokenDistributions& q,
                     const std::vector<std::uint8_t>& mask);
double js_divergence(const model::TokenDistributions& p, const model::TokenDistributions& q,
                     const std::vector<std::uint8_t>& mask);
double consistency_loss(const model::TokenDistributions& p, const model::TokenDistributions& q,
                        Divergence kind, const std::vector<std::uint8_t>& mask);

inline constexpr nn::Real kLogFloorEps = 1e-9;

// --- loss functions (tape level, differentiable) -----------------------------
nn::Var cross_entropy_on_tape(nn::Tape& tape, nn::Var log_probs, std::vector<int> gold_ids,
                              std::vector<std::uint8_t> mask);
nn::Var divergence_on_tape(nn::Tape& tape, nn::Var probs_p, nn::Var probs_q, Divergence kind,
                           std::vector<std::uint8_t> mask);

// Deterministic per-flow dropout stream; the same derivation is used by the
// reference single-flow trainer in the test suite.
std::uint64_t flow_dropout_seed(std::uint64_t cfg_seed, long step, int flow);

// Adam with bias correction; t is the 1-based step count.
void adam_update(model::ParamStore& store,
                 const std::vector<std::pair<std::string, const nn::Tensor*>>& grads, double lr,
                 double beta1, double beta2, double eps, long t);

struct TrainState {
  model::ModelParams params;              // Theta (deployed)
  model::OuterEncoderParams outer;        // Theta_v
  std::optional<model::ModelParams> second;  // MUTUAL peer / unshared VE backbone
  long step = 0;
};

TrainState make_train_state(const model::ModelConfig& model_cfg, const TrainConfig& cfg);

// One optimizer step on a (SL batch, VE batch) pair. The two batches must
// share tokens/boxes/gold and differ only in image crops.
StepReport train_step(TrainState& state, const model::TokenBatch& sl_batch,
                      const model::TokenBatch& ve_batch, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double l_sup = 0.0;
  double l_cons = 0.0;
  double l_final = 0.0;
  double dev_precision = 0.0;
  double dev_recall = 0.0;
  double dev_f1 = 0.0;
  double wall_s = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  model::ModelParams deploy_params;  // Theta only; Theta_v is dropped
  std::vector<EpochRecord> log;
};

// Full training loop with seeded shuffling; dev metrics are computed per epoch
// when dev_docs is non-empty.
TrainResult train(const std::vector<core::Document>& train_docs,
                  const std::vector<core::Document>& dev_docs, const TrainConfig& cfg,
                  model::ModelConfig model_cfg);

}  // namespace vancl::train
