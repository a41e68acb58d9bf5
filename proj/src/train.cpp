#include "vancl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "vancl/eval.hpp"
#include "vancl/paint.hpp"
#include "vancl/rng.hpp"

namespace vancl::train {

using core::ValidationError;

std::string to_string(Divergence d) {
  switch (d) {
    case Divergence::kKL: return "kl";
    case Divergence::kJS: return "js";
    case Divergence::kKLForward: return "kl_forward";
    case Divergence::kKLReverse: return "kl_reverse";
  }
  return "kl";
}

Divergence divergence_from_string(const std::string& s) {
  if (s == "kl") return Divergence::kKL;
  if (s == "js") return Divergence::kJS;
  if (s == "kl_forward") return Divergence::kKLForward;
  if (s == "kl_reverse") return Divergence::kKLReverse;
  throw ValidationError("unknown divergence: " + s);
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kVancl: return "vancl";
    case Mode::kMutual: return "mutual";
    case Mode::kRDrop: return "rdrop";
    case Mode::kNone: return "none";
  }
  return "vancl";
}

Mode mode_from_string(const std::string& s) {
  if (s == "vancl") return Mode::kVancl;
  if (s == "mutual") return Mode::kMutual;
  if (s == "rdrop") return Mode::kRDrop;
  if (s == "none") return Mode::kNone;
  throw ValidationError("unknown training mode: " + s);
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ValidationError("lr must be positive");
  if (lambda < 0.0) throw ValidationError("lambda must be >= 0");
  if (batch_size <= 0) throw ValidationError("batch_size must be positive");
  if (epochs <= 0) throw ValidationError("epochs must be positive");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ValidationError("dropout_p must be in [0,1)");
  if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0) {
    throw ValidationError("adam betas must be in (0,1)");
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["lr"] = lr;
  j["adam_betas"] = {beta1, beta2};
  j["adam_eps"] = adam_eps;
  j["dropout_p"] = dropout_p;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["lambda"] = lambda;
  j["divergence"] = to_string(divergence);
  j["mode"] = to_string(mode);
  j["share_weights"] = share_weights;
  j["scheme"] = scheme;
  j["baseline"] = baseline;
  j["seed"] = seed;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("lr")) c.lr = j["lr"].get<double>();
  if (j.contains("adam_betas")) {
    c.beta1 = j["adam_betas"][0].get<double>();
    c.beta2 = j["adam_betas"][1].get<double>();
  }
  if (j.contains("adam_eps")) c.adam_eps = j["adam_eps"].get<double>();
  if (j.contains("dropout_p")) c.dropout_p = j["dropout_p"].get<double>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
  if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
  if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
  if (j.contains("divergence")) c.divergence = divergence_from_string(j["divergence"]);
  if (j.contains("mode")) c.mode = mode_from_string(j["mode"]);
  if (j.contains("share_weights")) c.share_weights = j["share_weights"].get<bool>();
  if (j.contains("scheme")) c.scheme = j["scheme"].get<std::string>();
  if (j.contains("baseline")) c.baseline = j["baseline"].get<bool>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  c.validate();
  return c;
}

// --- value-level losses -------------------------------------------------------

namespace {

void check_pair_shapes(const model::TokenDistributions& p, const model::TokenDistributions& q,
                       const std::vector<std::uint8_t>& mask) {
  if (p.n_rows != q.n_rows || p.n_tags != q.n_tags ||
      static_cast<int>(mask.size()) != p.n_rows) {
    throw ValidationError("distribution shape mismatch");
  }
}

double kl_term(const model::TokenDistributions& p, const model::TokenDistributions& q, int row) {
  double acc = 0.0;
  for (int c = 0; c < p.n_tags; ++c) {
    const double pv = p.prob_at(row, c);
    const double qv = q.prob_at(row, c);
    acc += pv * (std::log(std::max<double>(pv, kLogFloorEps)) -
                 std::log(std::max<double>(qv, kLogFloorEps)));
  }
  return acc;
}

}  // namespace

double cross_entropy(const model::TokenDistributions& pred, const std::vector<int>& gold_ids,
                     const std::vector<std::uint8_t>& mask) {
  if (static_cast<int>(gold_ids.size()) != pred.n_rows ||
      static_cast<int>(mask.size()) != pred.n_rows) {
    throw ValidationError("cross_entropy: shape mismatch");
  }
  double acc = 0.0;
  long n = 0;
  for (int r = 0; r < pred.n_rows; ++r) {
    if (!mask[r]) continue;
    if (gold_ids[r] < 0 || gold_ids[r] >= pred.n_tags) {
      throw ValidationError("cross_entropy: gold tag id out of range");
    }
    acc -= std::log(std::max<double>(pred.prob_at(r, gold_ids[r]), kLogFloorEps));
    ++n;
  }
  if (n == 0) throw ValidationError("cross_entropy: no real tokens under the mask");
  return acc / static_cast<double>(n);
}

double kl_divergence(const model::TokenDistributions& p, const model::TokenDistributions& q,
                     const std::vector<std::uint8_t>& mask) {
  check_pair_shapes(p, q, mask);
  double acc = 0.0;
  long n = 0;
  for (int r = 0; r < p.n_rows; ++r) {
    if (!mask[r]) continue;
    acc += 0.5 * (kl_term(p, q, r) + kl_term(q, p, r));
    ++n;
  }
  if (n == 0) throw ValidationError("kl_divergence: no real tokens under the mask");
  return acc / static_cast<double>(n);
}

double js_divergence(const model::TokenDistributions& p, const model::TokenDistributions& q,
                     const std::vector<std::uint8_t>& mask) {
  check_pair_shapes(p, q, mask);
  double acc = 0.0;
  long n = 0;
  for (int r = 0; r < p.n_rows; ++r) {
    if (!mask[r]) continue;
    double jsd = 0.0;
    for (int c = 0; c < p.n_tags; ++c) {
      const double pv = p.prob_at(r, c);
      const double qv = q.prob_at(r, c);
      const double mv = 0.5 * (pv + qv);
      const double lm = std::log(std::max(mv, kLogFloorEps));
      jsd += 0.5 * pv * (std::log(std::max(pv, kLogFloorEps)) - lm);
      jsd += 0.5 * qv * (std::log(std::max(qv, kLogFloorEps)) - lm);
    }
    acc += jsd;
    ++n;
  }
  if (n == 0) throw ValidationError("js_divergence: no real tokens under the mask");
  return acc / static_cast<double>(n);
}

double consistency_loss(const model::TokenDistributions& p, const model::TokenDistributions& q,
                        Divergence kind, const std::vector<std::uint8_t>& mask) {
  switch (kind) {
    case Divergence::kKL: return kl_divergence(p, q, mask);
    case Divergence::kJS: return js_divergence(p, q, mask);
    case Divergence::kKLForward:
    case Divergence::kKLReverse: {
      check_pair_shapes(p, q, mask);
      double acc = 0.0;
      long n = 0;
      for (int r = 0; r < p.n_rows; ++r) {
        if (!mask[r]) continue;
        acc += kind == Divergence::kKLForward ? kl_term(p, q, r) : kl_term(q, p, r);
        ++n;
      }
      if (n == 0) throw ValidationError("consistency_loss: no real tokens under the mask");
      return acc / static_cast<double>(n);
    }
  }
  throw std::logic_error("unreachable");
}

// --- tape-level losses ----------------------------------------------------------

nn::Var cross_entropy_on_tape(nn::Tape& tape, nn::Var log_probs, std::vector<int> gold_ids,
                              std::vector<std::uint8_t> mask) {
  return tape.nll(log_probs, std::move(gold_ids), std::move(mask));
}

nn::Var divergence_on_tape(nn::Tape& tape, nn::Var probs_p, nn::Var probs_q, Divergence kind,
                           std::vector<std::uint8_t> mask) {
  auto kl_rows = [&](nn::Var a, nn::Var b) {
    nn::Var diff = tape.sub(tape.log_floor(a, kLogFloorEps), tape.log_floor(b, kLogFloorEps));
    return tape.row_sum(tape.mul(a, diff));
  };
  nn::Var rows;
  switch (kind) {
    case Divergence::kKLForward: rows = kl_rows(probs_p, probs_q); break;
    case Divergence::kKLReverse: rows = kl_rows(probs_q, probs_p); break;
    case Divergence::kKL:
      rows = tape.scale(tape.add(kl_rows(probs_p, probs_q), kl_rows(probs_q, probs_p)), 0.5);
      break;
    case Divergence::kJS: {
      nn::Var m = tape.scale(tape.add(probs_p, probs_q), 0.5);
      rows = tape.scale(tape.add(kl_rows(probs_p, m), kl_rows(probs_q, m)), 0.5);
      break;
    }
  }
  return tape.masked_mean(rows, std::move(mask));
}

std::uint64_t flow_dropout_seed(std::uint64_t cfg_seed, long step, int flow) {
  return rng::derive_seed(cfg_seed, 0xF10000ULL + static_cast<std::uint64_t>(step) * 4 +
                                        static_cast<std::uint64_t>(flow));
}

void adam_update(model::ParamStore& store,
                 const std::vector<std::pair<std::string, const nn::Tensor*>>& grads, double lr,
                 double beta1, double beta2, double eps, long t) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (const auto& [name, grad] : grads) {
    model::ParamTensor& p = store.at(name);
    if (p.adam_m.data.empty()) {
      p.adam_m = nn::Tensor(p.value.rows, p.value.cols);
      p.adam_v = nn::Tensor(p.value.rows, p.value.cols);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = grad->data[i];
      p.adam_m.data[i] = beta1 * p.adam_m.data[i] + (1.0 - beta1) * g;
      p.adam_v.data[i] = beta2 * p.adam_v.data[i] + (1.0 - beta2) * g * g;
      const double mhat = p.adam_m.data[i] / bc1;
      const double vhat = p.adam_v.data[i] / bc2;
      p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

TrainState make_train_state(const model::ModelConfig& model_cfg, const TrainConfig& cfg) {
  TrainState state;
  auto [params, outer] = model::init_params(model_cfg, cfg.seed);
  state.params = std::move(params);
  state.outer = std::move(outer);
  const bool needs_second =
      cfg.mode == Mode::kMutual || (!cfg.share_weights && !cfg.baseline && cfg.mode != Mode::kRDrop);
  if (needs_second) {
    auto [second, unused_outer] = model::init_params(model_cfg, rng::derive_seed(cfg.seed, 0x2ed));
    state.second = std::move(second);
  }
  return state;
}

namespace {

struct CollectedGrads {
  std::vector<std::pair<std::string, const nn::Tensor*>> backbone;
  std::vector<std::pair<std::string, const nn::Tensor*>> outer;
  std::vector<std::pair<std::string, const nn::Tensor*>> second;
  double sq_norm = 0.0;
};

void collect_leaf_grads(const nn::Tape& tape, const model::LeafMap& leaves,
                        std::vector<std::pair<std::string, const nn::Tensor*>>& out,
                        double& sq_norm) {
  for (const auto& [name, var] : leaves.entries()) {
    const nn::Tensor& g = tape.grad(var);
    if (g.data.empty()) continue;  // parameter did not participate in the loss
    for (nn::Real v : g.data) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("non-finite gradient for parameter " + name);
      }
      sq_norm += v * v;
    }
    out.emplace_back(name, &g);
  }
}

void require_finite_loss(double v, const char* what, long step) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "training aborted: non-finite " << what << " at step " << step;
    throw std::runtime_error(os.str());
  }
}

StepReport joint_flow_step(TrainState& state, const model::TokenBatch& sl_batch,
                           const model::TokenBatch& ve_batch, const TrainConfig& cfg) {
  const model::ModelConfig& mc = state.params.config;
  const bool run_ve = !cfg.baseline;
  const bool ve_uses_second = state.second.has_value() && cfg.mode != Mode::kMutual;
  const double lambda_eff = (cfg.baseline || cfg.mode == Mode::kNone) ? 0.0 : cfg.lambda;

  nn::Tape tape;
  model::LeafMap backbone(tape, state.params.store, /*requires_grad=*/true);
  std::optional<model::LeafMap> second_leaves;
  if (run_ve && ve_uses_second) {
    second_leaves.emplace(tape, state.second->store, /*requires_grad=*/true);
  }
  std::optional<model::LeafMap> outer_leaves;
  const bool ve_has_outer = run_ve && cfg.mode != Mode::kRDrop && mc.outer_encoder.n_layers > 0;
  if (ve_has_outer) outer_leaves.emplace(tape, state.outer.store, /*requires_grad=*/true);

  const std::uint64_t seed_sl = flow_dropout_seed(cfg.seed, state.step, 0);
  const std::uint64_t seed_ve = flow_dropout_seed(cfg.seed, state.step, 1);

  const model::FlowHandles sl = model::forward_on_tape(tape, mc, backbone, nullptr, sl_batch,
                                                       model::FlowMode::kSL, /*train=*/true,
                                                       seed_sl);
  nn::Var ce_sl = cross_entropy_on_tape(tape, sl.log_probs, sl_batch.gold_tag_ids, sl_batch.mask);

  StepReport report;
  report.step = state.step + 1;
  report.lambda_eff = lambda_eff;

  nn::Var l_final = ce_sl;
  nn::Var l_sup = ce_sl;
  std::optional<nn::Var> l_cons;
  if (run_ve) {
    model::FlowHandles ve;
    if (cfg.mode == Mode::kRDrop) {
      // second forward over the SL inputs with an independent dropout draw
      ve = model::forward_on_tape(tape, mc, backbone, nullptr, sl_batch, model::FlowMode::kSL,
                                  /*train=*/true, seed_ve);
    } else {
      const model::LeafMap& ve_backbone = ve_uses_second ? *second_leaves : backbone;
      ve = model::forward_on_tape(tape, mc, ve_backbone,
                                  outer_leaves ? &*outer_leaves : nullptr, ve_batch,
                                  model::FlowMode::kVE, /*train=*/true, seed_ve);
    }
    nn::Var ce_ve = cross_entropy_on_tape(tape, ve.log_probs, ve_batch.gold_tag_ids,
                                          ve_batch.mask);
    l_sup = tape.add(ce_sl, ce_ve);
    l_cons = divergence_on_tape(tape, sl.probs, ve.probs, cfg.divergence, sl_batch.mask);
    l_final = lambda_eff == 0.0 ? l_sup : tape.add(l_sup, tape.scale(*l_cons, lambda_eff));
  }

  report.l_sup = tape.val(l_sup).item();
  report.l_cons = l_cons ? tape.val(*l_cons).item() : 0.0;
  report.l_final = tape.val(l_final).item();
  require_finite_loss(report.l_final, "loss", report.step);

  tape.backward(l_final);

  CollectedGrads grads;
  collect_leaf_grads(tape, backbone, grads.backbone, grads.sq_norm);
  if (outer_leaves) collect_leaf_grads(tape, *outer_leaves, grads.outer, grads.sq_norm);
  if (second_leaves) collect_leaf_grads(tape, *second_leaves, grads.second, grads.sq_norm);
  report.grad_norm = std::sqrt(grads.sq_norm);

  state.step += 1;
  adam_update(state.params.store, grads.backbone, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
              state.step);
  if (!grads.outer.empty()) {
    adam_update(state.outer.store, grads.outer, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                state.step);
  }
  if (!grads.second.empty()) {
    adam_update(state.second->store, grads.second, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                state.step);
  }
  return report;
}

// Deep mutual learning: two peers on the same inputs, each trained toward the
// other's detached prediction, updated alternately within the step.
StepReport mutual_step(TrainState& state, const model::TokenBatch& sl_batch,
                       const TrainConfig& cfg) {
  if (!state.second.has_value()) throw std::logic_error("mutual mode requires a second network");
  const model::ModelConfig& mc = state.params.config;
  const double lambda_eff = cfg.lambda;
  StepReport report;
  report.step = state.step + 1;
  report.lambda_eff = lambda_eff;

  const std::uint64_t seed_a = flow_dropout_seed(cfg.seed, state.step, 0);
  const std::uint64_t seed_b = flow_dropout_seed(cfg.seed, state.step, 1);
  const std::uint64_t seed_b2 = flow_dropout_seed(cfg.seed, state.step, 2);
  const std::uint64_t seed_a2 = flow_dropout_seed(cfg.seed, state.step, 3);

  double ce_a_v = 0.0, ce_b_v = 0.0, q_a_v = 0.0, q_b_v = 0.0;
  double sq_norm = 0.0;

  // update network A against B's detached prediction
  {
    nn::Tape tape;
    model::LeafMap leaves_a(tape, state.params.store, /*requires_grad=*/true);
    model::LeafMap leaves_b(tape, state.second->store, /*requires_grad=*/false);
    const auto flow_a = model::forward_on_tape(tape, mc, leaves_a, nullptr, sl_batch,
                                               model::FlowMode::kSL, true, seed_a);
    const auto flow_b = model::forward_on_tape(tape, mc, leaves_b, nullptr, sl_batch,
                                               model::FlowMode::kSL, true, seed_b);
    nn::Var ce_a = cross_entropy_on_tape(tape, flow_a.log_probs, sl_batch.gold_tag_ids,
                                         sl_batch.mask);
    nn::Var q_a = divergence_on_tape(tape, flow_a.probs, flow_b.probs, cfg.divergence,
                                     sl_batch.mask);
    nn::Var loss_a = tape.add(ce_a, tape.scale(q_a, lambda_eff));
    ce_a_v = tape.val(ce_a).item();
    q_a_v = tape.val(q_a).item();
    require_finite_loss(tape.val(loss_a).item(), "loss (network A)", report.step);
    tape.backward(loss_a);
    std::vector<std::pair<std::string, const nn::Tensor*>> grads;
    collect_leaf_grads(tape, leaves_a, grads, sq_norm);
    adam_update(state.params.store, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                state.step + 1);
  }
  // update network B against the refreshed A's detached prediction
  {
    nn::Tape tape;
    model::LeafMap leaves_b(tape, state.second->store, /*requires_grad=*/true);
    model::LeafMap leaves_a(tape, state.params.store, /*requires_grad=*/false);
    const auto flow_b = model::forward_on_tape(tape, mc, leaves_b, nullptr, sl_batch,
                                               model::FlowMode::kSL, true, seed_b2);
    const auto flow_a = model::forward_on_tape(tape, mc, leaves_a, nullptr, sl_batch,
                                               model::FlowMode::kSL, true, seed_a2);
    nn::Var ce_b = cross_entropy_on_tape(tape, flow_b.log_probs, sl_batch.gold_tag_ids,
                                         sl_batch.mask);
    nn::Var q_b = divergence_on_tape(tape, flow_b.probs, flow_a.probs, cfg.divergence,
                                     sl_batch.mask);
    nn::Var loss_b = tape.add(ce_b, tape.scale(q_b, lambda_eff));
    ce_b_v = tape.val(ce_b).item();
    q_b_v = tape.val(q_b).item();
    require_finite_loss(tape.val(loss_b).item(), "loss (network B)", report.step);
    tape.backward(loss_b);
    std::vector<std::pair<std::string, const nn::Tensor*>> grads;
    collect_leaf_grads(tape, leaves_b, grads, sq_norm);
    adam_update(state.second->store, grads, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                state.step + 1);
  }

  state.step += 1;
  report.l_sup = ce_a_v + ce_b_v;
  report.l_cons = q_a_v + q_b_v;
  report.l_final = report.l_sup + lambda_eff * report.l_cons;
  report.grad_norm = std::sqrt(sq_norm);
  return report;
}

}  // namespace

StepReport train_step(TrainState& state, const model::TokenBatch& sl_batch,
                      const model::TokenBatch& ve_batch, const TrainConfig& cfg) {
  if (cfg.mode == Mode::kMutual && !cfg.baseline) return mutual_step(state, sl_batch, cfg);
  return joint_flow_step(state, sl_batch, ve_batch, cfg);
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["L_sup"] = l_sup;
  j["L_cons"] = l_cons;
  j["L_final"] = l_final;
  j["dev_precision"] = dev_precision;
  j["dev_recall"] = dev_recall;
  j["dev_f1"] = dev_f1;
  j["wall_s"] = wall_s;
  return j;
}

TrainResult train(const std::vector<core::Document>& train_docs,
                  const std::vector<core::Document>& dev_docs, const TrainConfig& cfg,
                  model::ModelConfig model_cfg) {
  cfg.validate();
  if (train_docs.empty()) throw ValidationError("train: empty training split");
  model_cfg.dropout_p = cfg.dropout_p;
  model_cfg.validate();

  TrainState state = make_train_state(model_cfg, cfg);
  const model::Vocab vocab = model::Vocab::from_tokens(model_cfg.vocab);
  const core::LabelSet labels{model_cfg.labels};
  const core::TagAlphabet alphabet(labels);

  // paint once per document; the painted copies exist only inside the trainer
  const bool wants_paint = !cfg.baseline && cfg.mode != Mode::kRDrop && cfg.mode != Mode::kMutual;
  std::unordered_map<std::string, core::RasterImage> painted;
  std::unordered_map<std::string, const core::RasterImage*> painted_view;
  if (wants_paint) {
    const paint::ColorScheme scheme = paint::resolve_scheme(cfg.scheme);
    if (!scheme.is_noop()) {
      scheme.require_covers(labels);
      for (const auto& doc : train_docs) {
        painted[doc.doc_id] = paint::paint_document(doc, scheme).image;
      }
      for (const auto& [id, img] : painted) painted_view[id] = &img;
    }
  }

  TrainResult result;
  std::vector<std::size_t> order(train_docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng::Rng shuffle_rng(rng::derive_seed(cfg.seed, 0xE90000ULL + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double sum_sup = 0.0, sum_cons = 0.0, sum_final = 0.0;
    long n_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const core::Document*> docs;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        docs.push_back(&train_docs[order[i]]);
      }
      const model::TokenBatch sl_batch = model::make_batch(docs, vocab, alphabet, model_cfg);
      const model::TokenBatch ve_batch =
          painted_view.empty() ? sl_batch
                               : model::make_batch(docs, vocab, alphabet, model_cfg, painted_view);
      const StepReport r = train_step(state, sl_batch, ve_batch, cfg);
      sum_sup += r.l_sup;
      sum_cons += r.l_cons;
      sum_final += r.l_final;
      ++n_steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_sup = sum_sup / n_steps;
    rec.l_cons = sum_cons / n_steps;
    rec.l_final = sum_final / n_steps;
    if (!dev_docs.empty()) {
      const eval::MetricsReport m = eval::evaluate(state.params, dev_docs);
      rec.dev_precision = m.prf.precision();
      rec.dev_recall = m.prf.recall();
      rec.dev_f1 = m.prf.f1();
    }
    rec.wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
  }

  // flow detachment: only Theta ships; optimizer state is dropped as well
  result.deploy_params.config = state.params.config;
  for (const auto& p : state.params.store.items()) {
    result.deploy_params.store.add(p.name, p.value);
  }
  return result;
}

}  // namespace vancl::train
