#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vancl/core.hpp"
#include "vancl/nn.hpp"

namespace vancl::model {

enum class Precision { kF32, kF64 };
std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

// n_layers = 0 means "no encoder" (the VE flow falls back to the inner one).
struct CnnSpec {
  int n_layers = 2;
  int channels = 8;
  bool operator==(const CnnSpec&) const = default;
};

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_dim = 128;
  int max_seq_len = 512;
  int layout_buckets = 32;
  int roi_patch_h = 8;
  int roi_patch_w = 8;
  double dropout_p = 0.1;
  CnnSpec inner_encoder{2, 8};
  CnnSpec outer_encoder{4, 8};
  bool ve_augment = false;  // VE adds inner(painted crop) on top of the outer encoder
  Precision precision = Precision::kF64;  // checkpoint storage dtype
  std::vector<std::string> labels;        // entity labels, OTHER implicit
  std::vector<std::string> vocab;         // id -> token; [PAD]=0, [UNK]=1

  int vocab_size() const { return static_cast<int>(vocab.size()); }
  int n_tags() const { return 1 + 2 * static_cast<int>(labels.size()); }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Closed vocabulary with [PAD]/[UNK] specials.
struct Vocab {
  std::vector<std::string> tokens;

  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  static Vocab build(const std::vector<core::Document>& docs);
  static Vocab from_tokens(std::vector<std::string> tokens);
  int id_of(const std::string& token) const;  // kUnk when unknown

 private:
  std::unordered_map<std::string, int> index_;
};

struct ParamTensor {
  std::string name;
  nn::Tensor value;
  nn::Tensor adam_m;  // optimizer state lives next to the tensor
  nn::Tensor adam_v;
};

class ParamStore {
 public:
  nn::Tensor& add(const std::string& name, nn::Tensor value);
  ParamTensor& at(const std::string& name);
  const ParamTensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<ParamTensor>& items() { return items_; }
  const std::vector<ParamTensor>& items() const { return items_; }
  std::size_t n_scalars() const;
  bool all_finite() const;

 private:
  std::vector<ParamTensor> items_;  // insertion order = checkpoint order
  std::unordered_map<std::string, std::size_t> index_;
};

// Shared backbone weights (token/position/layout embeddings, inner visual
// encoder, transformer stack, classifier).
struct ModelParams {
  ModelConfig config;
  ParamStore store;
};

// Extra weights of the vision-enhanced flow's outer visual encoder; never
// exported for deployment.
struct OuterEncoderParams {
  CnnSpec spec;
  ParamStore store;
};

std::pair<ModelParams, OuterEncoderParams> init_params(const ModelConfig& config,
                                                       std::uint64_t seed);

// Bilinear resample of the box's pixel rect to a fixed patch, channel-major
// [3][h][w], values in [0,1]. Degenerate boxes replicate the nearest pixel.
std::vector<nn::Real> roi_crop(const core::RasterImage& image, const core::BoundingBox& box,
                               int patch_h, int patch_w);

struct TokenBatch {
  int n_docs = 0;
  int seq_len = 0;  // padded
  std::vector<int> token_ids;            // n_docs * seq_len
  std::vector<core::BoundingBox> boxes;  // per token (segment box)
  std::vector<std::uint8_t> mask;        // 1 = real token
  std::vector<nn::Real> crops;           // n_docs * seq_len * 3 * patch_h * patch_w
  std::vector<int> gold_tag_ids;         // -1 on padding
  std::vector<std::string> doc_ids;

  int rows() const { return n_docs * seq_len; }
};

// Builds a padded batch; `image_override` (doc_id -> image) substitutes the
// crop source, which is how painted images enter the VE flow.
TokenBatch make_batch(const std::vector<const core::Document*>& docs, const Vocab& vocab,
                      const core::TagAlphabet& alphabet, const ModelConfig& config,
                      const std::unordered_map<std::string, const core::RasterImage*>&
                          image_override = {});

enum class FlowMode { kSL, kVE };

struct TokenDistributions {
  int n_rows = 0;
  int n_tags = 0;
  std::vector<nn::Real> probs;
  std::vector<nn::Real> log_probs;
  std::vector<nn::Real> logits;  // pre-softmax scores for decoding
  std::vector<std::uint8_t> mask;

  nn::Real prob_at(int row, int tag) const {
    return probs[static_cast<std::size_t>(row) * n_tags + tag];
  }
};

// Parameter leaves lifted onto a tape. Shared-weight training lifts the store
// once and reuses the same leaves in both flows, so gradients sum naturally.
class LeafMap {
 public:
  LeafMap() = default;
  LeafMap(nn::Tape& tape, const ParamStore& store, bool requires_grad, std::string prefix = "");
  nn::Var at(const std::string& name) const;
  const std::vector<std::pair<std::string, nn::Var>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, nn::Var>> entries_;
  std::unordered_map<std::string, nn::Var> index_;
};

struct FlowHandles {
  nn::Var hidden;     // [rows, d_model] final encoder states
  nn::Var logits;     // [rows, n_tags]
  nn::Var log_probs;  // [rows, n_tags]
  nn::Var probs;      // [rows, n_tags]
};

// Graph-building forward; `outer` may be null for SL (and for VE when the
// outer encoder spec is empty). Dropout draws come from `dropout_seed` only.
FlowHandles forward_on_tape(nn::Tape& tape, const ModelConfig& config, const LeafMap& backbone,
                            const LeafMap* outer, const TokenBatch& batch, FlowMode mode,
                            bool train, std::uint64_t dropout_seed);

// Stateless evaluation entry point (no gradients).
TokenDistributions forward(const ModelParams& params, const OuterEncoderParams* outer,
                           const TokenBatch& batch, FlowMode mode, bool train = false,
                           std::uint64_t dropout_seed = 0);

TokenDistributions distributions_from(const nn::Tape& tape, const FlowHandles& handles,
                                      const TokenBatch& batch);

// --- checkpoints -------------------------------------------------------------
// Flat binary container: magic, version, JSON header (tensor table + config
// echo), then raw little-endian tensor data. Byte-deterministic.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

// Tensor names listed in a checkpoint header (for deployment-size checks).
std::vector<std::string> checkpoint_tensor_names(const std::filesystem::path& path);

}  // namespace vancl::model
