#include "vancl/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vancl/io.hpp"
#include "vancl/rng.hpp"

namespace vancl::model {

using core::ValidationError;

std::string to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw ValidationError("unknown precision: " + s + " (expected f32|f64)");
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || ffn_dim <= 0) {
    throw ValidationError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ValidationError("d_model must be divisible by n_heads");
  if (max_seq_len <= 0) throw ValidationError("max_seq_len must be positive");
  if (layout_buckets <= 0) throw ValidationError("layout_buckets must be positive");
  if (roi_patch_h < 1 || roi_patch_w < 1) throw ValidationError("roi_patch must be >= 1");
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ValidationError("dropout_p must be in [0,1)");
  if (inner_encoder.n_layers < 1) throw ValidationError("inner encoder needs >= 1 conv layer");
  if (outer_encoder.n_layers < 0) throw ValidationError("outer encoder layer count negative");
  if (labels.empty()) throw ValidationError("model has no entity labels");
  if (vocab.size() < 2) throw ValidationError("vocabulary must include [PAD] and [UNK]");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["ffn_dim"] = ffn_dim;
  j["max_seq_len"] = max_seq_len;
  j["layout_buckets"] = layout_buckets;
  j["roi_patch"] = {roi_patch_h, roi_patch_w};
  j["dropout_p"] = dropout_p;
  j["inner_encoder"] = {{"layers", inner_encoder.n_layers}, {"channels", inner_encoder.channels}};
  j["outer_encoder"] = {{"layers", outer_encoder.n_layers}, {"channels", outer_encoder.channels}};
  j["ve_augment"] = ve_augment;
  j["precision"] = to_string(precision);
  j["labels"] = labels;
  j["vocab"] = vocab;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("d_model")) c.d_model = j["d_model"].get<int>();
  if (j.contains("n_layers")) c.n_layers = j["n_layers"].get<int>();
  if (j.contains("n_heads")) c.n_heads = j["n_heads"].get<int>();
  if (j.contains("ffn_dim")) c.ffn_dim = j["ffn_dim"].get<int>();
  if (j.contains("max_seq_len")) c.max_seq_len = j["max_seq_len"].get<int>();
  if (j.contains("layout_buckets")) c.layout_buckets = j["layout_buckets"].get<int>();
  if (j.contains("roi_patch")) {
    c.roi_patch_h = j["roi_patch"][0].get<int>();
    c.roi_patch_w = j["roi_patch"][1].get<int>();
  }
  if (j.contains("dropout_p")) c.dropout_p = j["dropout_p"].get<double>();
  if (j.contains("inner_encoder")) {
    c.inner_encoder.n_layers = j["inner_encoder"]["layers"].get<int>();
    c.inner_encoder.channels = j["inner_encoder"]["channels"].get<int>();
  }
  if (j.contains("outer_encoder")) {
    c.outer_encoder.n_layers = j["outer_encoder"]["layers"].get<int>();
    c.outer_encoder.channels = j["outer_encoder"]["channels"].get<int>();
  }
  if (j.contains("ve_augment")) c.ve_augment = j["ve_augment"].get<bool>();
  if (j.contains("precision")) c.precision = precision_from_string(j["precision"].get<std::string>());
  if (j.contains("labels")) c.labels = j["labels"].get<std::vector<std::string>>();
  if (j.contains("vocab")) c.vocab = j["vocab"].get<std::vector<std::string>>();
  return c;
}

Vocab Vocab::build(const std::vector<core::Document>& docs) {
  std::set<std::string> uniq;
  for (const auto& d : docs) {
    for (const auto& s : d.segments) uniq.insert(s.tokens.begin(), s.tokens.end());
  }
  std::vector<std::string> tokens{"[PAD]", "[UNK]"};
  tokens.insert(tokens.end(), uniq.begin(), uniq.end());
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  v.tokens = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens.size(); ++i) v.index_[v.tokens[i]] = static_cast<int>(i);
  return v;
}

int Vocab::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

nn::Tensor& ParamStore::add(const std::string& name, nn::Tensor value) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
  index_[name] = items_.size();
  items_.push_back(ParamTensor{name, std::move(value), {}, {}});
  return items_.back().value;
}

ParamTensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::logic_error("unknown parameter: " + name);
  return items_[it->second];
}

const ParamTensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::logic_error("unknown parameter: " + name);
  return items_[it->second];
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

std::size_t ParamStore::n_scalars() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& p : items_) {
    if (!p.value.all_finite()) return false;
  }
  return true;
}

namespace {

// N(0, 1/fan_in) entries, one derived RNG stream per tensor
nn::Tensor init_normal(int rows, int cols, int fan_in, std::uint64_t seed, std::uint64_t stream) {
  nn::Tensor t(rows, cols);
  rng::Rng r(rng::derive_seed(seed, stream));
  const nn::Real scale = 1.0 / std::sqrt(static_cast<nn::Real>(fan_in));
  for (auto& v : t.data) v = r.normal() * scale;
  return t;
}

void add_cnn_params(ParamStore& store, const std::string& prefix, const CnnSpec& spec,
                    int d_model, std::uint64_t seed, std::uint64_t& stream) {
  int cin = 3;
  for (int i = 0; i < spec.n_layers; ++i) {
    store.add(prefix + ".conv" + std::to_string(i) + ".w",
              init_normal(spec.channels, cin * 9, cin * 9, seed, stream++));
    store.add(prefix + ".conv" + std::to_string(i) + ".b", nn::Tensor(1, spec.channels));
    cin = spec.channels;
  }
  store.add(prefix + ".proj.w",
            init_normal(spec.channels, d_model, spec.channels, seed, stream++));
  store.add(prefix + ".proj.b", nn::Tensor(1, d_model));
}

}  // namespace

std::pair<ModelParams, OuterEncoderParams> init_params(const ModelConfig& config,
                                                       std::uint64_t seed) {
  config.validate();
  ModelParams params;
  params.config = config;
  ParamStore& s = params.store;
  const int d = config.d_model;
  std::uint64_t stream = 1;

  s.add("emb.token", init_normal(config.vocab_size(), d, d, seed, stream++));
  s.add("emb.pos", init_normal(config.max_seq_len, d, d, seed, stream++));
  for (const char* axis : {"x1", "y1", "x2", "y2", "w", "h"}) {
    s.add(std::string("emb.layout.") + axis,
          init_normal(config.layout_buckets, d, d, seed, stream++));
  }
  add_cnn_params(s, "inner", config.inner_encoder, d, seed, stream);

  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    for (const char* mat : {"wq", "wk", "wv", "wo"}) {
      s.add(p + ".attn." + mat, init_normal(d, d, d, seed, stream++));
    }
    for (const char* vec : {"bq", "bk", "bv", "bo"}) s.add(p + ".attn." + vec, nn::Tensor(1, d));
    nn::Tensor ln1g(1, d);
    std::fill(ln1g.data.begin(), ln1g.data.end(), 1.0);
    s.add(p + ".ln1.gamma", std::move(ln1g));
    s.add(p + ".ln1.beta", nn::Tensor(1, d));
    s.add(p + ".ffn.w1", init_normal(d, config.ffn_dim, d, seed, stream++));
    s.add(p + ".ffn.b1", nn::Tensor(1, config.ffn_dim));
    s.add(p + ".ffn.w2", init_normal(config.ffn_dim, d, config.ffn_dim, seed, stream++));
    s.add(p + ".ffn.b2", nn::Tensor(1, d));
    nn::Tensor ln2g(1, d);
    std::fill(ln2g.data.begin(), ln2g.data.end(), 1.0);
    s.add(p + ".ln2.gamma", std::move(ln2g));
    s.add(p + ".ln2.beta", nn::Tensor(1, d));
  }
  s.add("cls.w", init_normal(d, config.n_tags(), d, seed, stream++));
  s.add("cls.b", nn::Tensor(1, config.n_tags()));

  OuterEncoderParams outer;
  outer.spec = config.outer_encoder;
  if (config.outer_encoder.n_layers > 0) {
    std::uint64_t outer_stream = 0x0ABC0000;
    add_cnn_params(outer.store, "outer", config.outer_encoder, d, seed, outer_stream);
  }
  return {std::move(params), std::move(outer)};
}

std::vector<nn::Real> roi_crop(const core::RasterImage& image, const core::BoundingBox& box,
                               int patch_h, int patch_w) {
  std::vector<nn::Real> out(static_cast<std::size_t>(3) * patch_h * patch_w, 0.0);
  const core::PixelRect r = core::roi_pixel_rect(box, image.width, image.height);
  auto write = [&](int c, int y, int x, nn::Real v) {
    out[(static_cast<std::size_t>(c) * patch_h + y) * patch_w + x] = v;
  };
  if (r.empty()) {
    // degenerate box: replicate the nearest pixel
    const int px = std::clamp(static_cast<int>(static_cast<std::int64_t>(box.x1) * image.width / 1000),
                              0, image.width - 1);
    const int py = std::clamp(static_cast<int>(static_cast<std::int64_t>(box.y1) * image.height / 1000),
                              0, image.height - 1);
    const std::uint8_t* p = image.at(px, py);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < patch_h; ++y) {
        for (int x = 0; x < patch_w; ++x) write(c, y, x, p[c] / 255.0);
      }
    }
    return out;
  }
  const nn::Real sy_scale = static_cast<nn::Real>(r.height()) / patch_h;
  const nn::Real sx_scale = static_cast<nn::Real>(r.width()) / patch_w;
  for (int y = 0; y < patch_h; ++y) {
    nn::Real sy = r.top + (y + 0.5) * sy_scale - 0.5;
    sy = std::clamp(sy, static_cast<nn::Real>(r.top), static_cast<nn::Real>(r.bottom - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, r.bottom - 1);
    const nn::Real fy = sy - y0;
    for (int x = 0; x < patch_w; ++x) {
      nn::Real sx = r.left + (x + 0.5) * sx_scale - 0.5;
      sx = std::clamp(sx, static_cast<nn::Real>(r.left), static_cast<nn::Real>(r.right - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, r.right - 1);
      const nn::Real fx = sx - x0;
      const std::uint8_t* p00 = image.at(x0, y0);
      const std::uint8_t* p01 = image.at(x1, y0);
      const std::uint8_t* p10 = image.at(x0, y1);
      const std::uint8_t* p11 = image.at(x1, y1);
      for (int c = 0; c < 3; ++c) {
        const nn::Real v = (1 - fy) * ((1 - fx) * p00[c] + fx * p01[c]) +
                           fy * ((1 - fx) * p10[c] + fx * p11[c]);
        write(c, y, x, v / 255.0);
      }
    }
  }
  return out;
}

TokenBatch make_batch(const std::vector<const core::Document*>& docs, const Vocab& vocab,
                      const core::TagAlphabet& alphabet, const ModelConfig& config,
                      const std::unordered_map<std::string, const core::RasterImage*>&
                          image_override) {
  TokenBatch b;
  b.n_docs = static_cast<int>(docs.size());
  int max_len = 1;
  for (const auto* d : docs) {
    const int n = d->n_tokens();
    if (n > config.max_seq_len) {
      throw ValidationError("document " + d->doc_id + " exceeds max_seq_len (" +
                            std::to_string(n) + " tokens)");
    }
    max_len = std::max(max_len, n);
  }
  b.seq_len = max_len;
  const int rows = b.n_docs * b.seq_len;
  const std::size_t crop_len = static_cast<std::size_t>(3) * config.roi_patch_h * config.roi_patch_w;
  b.token_ids.assign(rows, Vocab::kPad);
  b.boxes.assign(rows, core::BoundingBox{});
  b.mask.assign(rows, 0);
  b.crops.assign(static_cast<std::size_t>(rows) * crop_len, 0.0);
  b.gold_tag_ids.assign(rows, -1);

  for (int di = 0; di < b.n_docs; ++di) {
    const core::Document& doc = *docs[di];
    b.doc_ids.push_back(doc.doc_id);
    const core::RasterImage* img = &doc.image;
    if (auto it = image_override.find(doc.doc_id); it != image_override.end()) img = it->second;
    const core::TagSequence gold = core::gold_tags(doc);
    int pos = 0;
    for (const auto& seg : doc.segments) {
      const auto crop = roi_crop(*img, seg.box, config.roi_patch_h, config.roi_patch_w);
      for (const auto& tok : seg.tokens) {
        const int row = di * b.seq_len + pos;
        b.token_ids[row] = vocab.id_of(tok);
        b.boxes[row] = seg.box;
        b.mask[row] = 1;
        b.gold_tag_ids[row] = alphabet.id_of(gold[pos]);
        std::copy(crop.begin(), crop.end(), b.crops.begin() + row * crop_len);
        ++pos;
      }
    }
  }
  return b;
}

LeafMap::LeafMap(nn::Tape& tape, const ParamStore& store, bool requires_grad, std::string prefix) {
  for (const auto& p : store.items()) {
    const nn::Var v = tape.leaf(p.value, requires_grad);
    entries_.emplace_back(prefix + p.name, v);
    index_[prefix + p.name] = v;
  }
}

nn::Var LeafMap::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::logic_error("no parameter leaf named " + name);
  return it->second;
}

namespace {

int layout_bucket(int v, int buckets) {
  return std::clamp(static_cast<int>(static_cast<std::int64_t>(v) * buckets / 1001), 0,
                    buckets - 1);
}

// CNN visual encoder over all crops in the batch: conv stack, pool, project.
nn::Var run_cnn(nn::Tape& tape, const LeafMap& leaves, const std::string& prefix,
                const CnnSpec& spec, nn::Var crops, int patch_h, int patch_w) {
  nn::Var z = crops;
  int cin = 3;
  for (int i = 0; i < spec.n_layers; ++i) {
    z = tape.relu(tape.conv2d_3x3(z, leaves.at(prefix + ".conv" + std::to_string(i) + ".w"),
                                  leaves.at(prefix + ".conv" + std::to_string(i) + ".b"), cin,
                                  patch_h, patch_w));
    cin = spec.channels;
  }
  z = tape.global_avg_pool(z, spec.channels, patch_h, patch_w);
  return tape.add_rowvec(tape.matmul(z, leaves.at(prefix + ".proj.w")),
                         leaves.at(prefix + ".proj.b"));
}

}  // namespace

FlowHandles forward_on_tape(nn::Tape& tape, const ModelConfig& config, const LeafMap& backbone,
                            const LeafMap* outer, const TokenBatch& batch, FlowMode mode,
                            bool train, std::uint64_t dropout_seed) {
  const int rows = batch.rows();
  const int d = config.d_model;
  if (rows == 0) throw ValidationError("empty batch");
  rng::Rng drop_rng(rng::derive_seed(dropout_seed, 0xD20));

  // --- embeddings ---
  nn::Var tok = tape.embedding_rows(backbone.at("emb.token"), batch.token_ids);
  std::vector<int> pos_ids(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) pos_ids[i] = i % batch.seq_len;
  nn::Var pos = tape.embedding_rows(backbone.at("emb.pos"), pos_ids);

  nn::Var x = tape.add(tok, pos);
  const char* axes[6] = {"x1", "y1", "x2", "y2", "w", "h"};
  for (int a = 0; a < 6; ++a) {
    std::vector<int> ids(static_cast<std::size_t>(rows));
    for (int i = 0; i < rows; ++i) {
      const auto& bb = batch.boxes[i];
      int v = 0;
      switch (a) {
        case 0: v = bb.x1; break;
        case 1: v = bb.y1; break;
        case 2: v = bb.x2; break;
        case 3: v = bb.y2; break;
        case 4: v = bb.x2 - bb.x1; break;
        case 5: v = bb.y2 - bb.y1; break;
      }
      ids[i] = layout_bucket(v, config.layout_buckets);
    }
    x = tape.add(x, tape.embedding_rows(backbone.at(std::string("emb.layout.") + axes[a]), ids));
  }

  // --- visual embedding: inner encoder for SL, outer encoder for VE ---
  nn::Tensor crop_tensor(rows, 3 * config.roi_patch_h * config.roi_patch_w);
  crop_tensor.data = batch.crops;
  nn::Var crops = tape.leaf(std::move(crop_tensor));
  nn::Var vis;
  if (mode == FlowMode::kSL) {
    vis = run_cnn(tape, backbone, "inner", config.inner_encoder, crops, config.roi_patch_h,
                  config.roi_patch_w);
  } else {
    const bool have_outer = outer != nullptr && config.outer_encoder.n_layers > 0;
    if (have_outer) {
      vis = run_cnn(tape, *outer, "outer", config.outer_encoder, crops, config.roi_patch_h,
                    config.roi_patch_w);
      if (config.ve_augment) {
        vis = tape.add(vis, run_cnn(tape, backbone, "inner", config.inner_encoder, crops,
                                    config.roi_patch_h, config.roi_patch_w));
      }
    } else {
      // no outer encoder configured: the VE flow reuses the inner encoder
      vis = run_cnn(tape, backbone, "inner", config.inner_encoder, crops, config.roi_patch_h,
                    config.roi_patch_w);
    }
  }
  x = tape.add(x, vis);

  // padded rows are forced to exact zero so garbage inputs cannot propagate
  x = tape.select_rows(x, batch.mask);
  x = tape.dropout(x, config.dropout_p, drop_rng, train);

  // --- transformer, per document ---
  const int dh = d / config.n_heads;
  const nn::Real inv_sqrt_dh = 1.0 / std::sqrt(static_cast<nn::Real>(dh));
  std::vector<nn::Var> doc_states;
  for (int di = 0; di < batch.n_docs; ++di) {
    nn::Var h = tape.row_slice(x, di * batch.seq_len, (di + 1) * batch.seq_len);
    std::vector<std::uint8_t> doc_mask(batch.mask.begin() + di * batch.seq_len,
                                       batch.mask.begin() + (di + 1) * batch.seq_len);
    for (int l = 0; l < config.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l);
      nn::Var q = tape.add_rowvec(tape.matmul(h, backbone.at(p + ".attn.wq")),
                                  backbone.at(p + ".attn.bq"));
      nn::Var k = tape.add_rowvec(tape.matmul(h, backbone.at(p + ".attn.wk")),
                                  backbone.at(p + ".attn.bk"));
      nn::Var v = tape.add_rowvec(tape.matmul(h, backbone.at(p + ".attn.wv")),
                                  backbone.at(p + ".attn.bv"));
      std::vector<nn::Var> heads;
      for (int hd = 0; hd < config.n_heads; ++hd) {
        nn::Var qh = tape.col_slice(q, hd * dh, (hd + 1) * dh);
        nn::Var kh = tape.col_slice(k, hd * dh, (hd + 1) * dh);
        nn::Var vh = tape.col_slice(v, hd * dh, (hd + 1) * dh);
        nn::Var scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh);
        scores = tape.add_key_mask(scores, doc_mask);
        nn::Var probs = tape.softmax_rows(scores);
        probs = tape.dropout(probs, config.dropout_p, drop_rng, train);
        heads.push_back(tape.matmul(probs, vh));
      }
      nn::Var ctx = tape.concat_cols(heads);
      nn::Var attn_out = tape.add_rowvec(tape.matmul(ctx, backbone.at(p + ".attn.wo")),
                                         backbone.at(p + ".attn.bo"));
      attn_out = tape.dropout(attn_out, config.dropout_p, drop_rng, train);
      h = tape.layer_norm_rows(tape.add(h, attn_out), backbone.at(p + ".ln1.gamma"),
                               backbone.at(p + ".ln1.beta"));
      nn::Var ff = tape.gelu(tape.add_rowvec(tape.matmul(h, backbone.at(p + ".ffn.w1")),
                                             backbone.at(p + ".ffn.b1")));
      ff = tape.add_rowvec(tape.matmul(ff, backbone.at(p + ".ffn.w2")),
                           backbone.at(p + ".ffn.b2"));
      ff = tape.dropout(ff, config.dropout_p, drop_rng, train);
      h = tape.layer_norm_rows(tape.add(h, ff), backbone.at(p + ".ln2.gamma"),
                               backbone.at(p + ".ln2.beta"));
    }
    doc_states.push_back(h);
  }
  nn::Var hidden = batch.n_docs == 1 ? doc_states[0] : tape.concat_rows(doc_states);

  FlowHandles out;
  out.hidden = hidden;
  out.logits = tape.add_rowvec(tape.matmul(hidden, backbone.at("cls.w")), backbone.at("cls.b"));
  out.log_probs = tape.log_softmax_rows(out.logits);
  out.probs = tape.softmax_rows(out.logits);
  return out;
}

TokenDistributions distributions_from(const nn::Tape& tape, const FlowHandles& handles,
                                      const TokenBatch& batch) {
  TokenDistributions d;
  const nn::Tensor& logits = tape.val(handles.logits);
  d.n_rows = logits.rows;
  d.n_tags = logits.cols;
  d.logits = logits.data;
  d.log_probs = tape.val(handles.log_probs).data;
  d.probs = tape.val(handles.probs).data;
  d.mask = batch.mask;
  return d;
}

TokenDistributions forward(const ModelParams& params, const OuterEncoderParams* outer,
                           const TokenBatch& batch, FlowMode mode, bool train,
                           std::uint64_t dropout_seed) {
  if (mode == FlowMode::kVE && params.config.outer_encoder.n_layers > 0 && outer == nullptr) {
    throw ValidationError("VE forward requires outer encoder parameters");
  }
  nn::Tape tape;
  LeafMap backbone(tape, params.store, /*requires_grad=*/false);
  std::optional<LeafMap> outer_leaves;
  if (outer != nullptr && params.config.outer_encoder.n_layers > 0) {
    outer_leaves.emplace(tape, outer->store, /*requires_grad=*/false);
  }
  const FlowHandles h =
      forward_on_tape(tape, params.config, backbone, outer_leaves ? &*outer_leaves : nullptr,
                      batch, mode, train, dropout_seed);
  return distributions_from(tape, h, batch);
}

// --- checkpoints --------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'V', 'A', 'N', 'C', 'L', 'C', 'K', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void append_raw(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  const bool f32 = params.config.precision == Precision::kF32;
  nlohmann::ordered_json header;
  header["format"] = "vancl-checkpoint";
  header["version"] = kVersion;
  header["dtype"] = to_string(params.config.precision);
  auto& tensors = header["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params.store.items()) {
    const std::uint64_t nbytes = p.value.size() * (f32 ? 4 : 8);
    tensors.push_back({{"name", p.name},
                       {"shape", {p.value.rows, p.value.cols}},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["config"] = params.config.to_json();

  std::string blob;
  blob.append(kMagic, sizeof(kMagic));
  append_raw(blob, kVersion);
  const std::string hj = header.dump();
  append_raw(blob, static_cast<std::uint64_t>(hj.size()));
  blob += hj;
  for (const auto& p : params.store.items()) {
    if (f32) {
      for (nn::Real v : p.value.data) append_raw(blob, static_cast<float>(v));
    } else {
      for (nn::Real v : p.value.data) append_raw(blob, v);
    }
  }
  io::write_file(path, blob);
}

namespace {

nlohmann::json read_checkpoint_header(const std::string& blob, std::size_t& data_start) {
  if (blob.size() < sizeof(kMagic) + 12 || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("not a vancl checkpoint");
  }
  std::uint32_t version = 0;
  std::memcpy(&version, blob.data() + sizeof(kMagic), 4);
  if (version != kVersion) {
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, blob.data() + sizeof(kMagic) + 4, 8);
  const std::size_t hstart = sizeof(kMagic) + 12;
  if (blob.size() < hstart + hlen) throw ValidationError("truncated checkpoint header");
  data_start = hstart + hlen;
  return nlohmann::json::parse(blob.substr(hstart, hlen));
}

}  // namespace

ModelParams load_checkpoint(const std::filesystem::path& path) {
  const std::string blob = io::read_file(path);
  std::size_t data_start = 0;
  const nlohmann::json header = read_checkpoint_header(blob, data_start);
  ModelParams params;
  params.config = ModelConfig::from_json(header.at("config"));
  const bool f32 = header.at("dtype").get<std::string>() == "f32";
  for (const auto& tj : header.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    const int rows = tj.at("shape")[0].get<int>();
    const int cols = tj.at("shape")[1].get<int>();
    const std::uint64_t offset = tj.at("offset").get<std::uint64_t>();
    const std::uint64_t nbytes = tj.at("nbytes").get<std::uint64_t>();
    nn::Tensor t(rows, cols);
    if (nbytes != t.size() * (f32 ? 4 : 8) || data_start + offset + nbytes > blob.size()) {
      throw ValidationError("corrupt checkpoint tensor " + name);
    }
    const char* src = blob.data() + data_start + offset;
    if (f32) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        float v = 0;
        std::memcpy(&v, src + i * 4, 4);
        t.data[i] = v;
      }
    } else {
      std::memcpy(t.data.data(), src, nbytes);
    }
    params.store.add(name, std::move(t));
  }
  return params;
}

std::vector<std::string> checkpoint_tensor_names(const std::filesystem::path& path) {
  const std::string blob = io::read_file(path);
  std::size_t data_start = 0;
  const nlohmann::json header = read_checkpoint_header(blob, data_start);
  std::vector<std::string> names;
  for (const auto& tj : header.at("tensors")) names.push_back(tj.at("name").get<std::string>());
  return names;
}

}  // namespace vancl::model
