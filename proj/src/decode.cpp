#include "vancl/decode.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace vancl::decode {

using core::ValidationError;

TransitionMask TransitionMask::bio(const core::TagAlphabet& alphabet) {
  TransitionMask m;
  m.n_tags = alphabet.size();
  m.start_ok.assign(m.n_tags, 1);
  m.allowed.assign(static_cast<std::size_t>(m.n_tags) * m.n_tags, 1);
  for (int to = 0; to < m.n_tags; ++to) {
    if (!alphabet.is_inside(to)) continue;
    const int label = alphabet.label_index(to);
    m.start_ok[to] = 0;  // sequences cannot open with I-t
    for (int from = 0; from < m.n_tags; ++from) {
      // I-t only after B-t or I-t
      const bool ok = (alphabet.is_begin(from) || alphabet.is_inside(from)) &&
                      alphabet.label_index(from) == label;
      if (!ok) m.allowed[static_cast<std::size_t>(from) * m.n_tags + to] = 0;
    }
  }
  return m;
}

std::vector<int> viterbi(const nn::Real* scores, int length, const TransitionMask& mask) {
  if (length < 1) throw ValidationError("viterbi: empty sequence");
  const int k = mask.n_tags;
  constexpr nn::Real kNegInf = -std::numeric_limits<nn::Real>::infinity();

  std::vector<nn::Real> dp(static_cast<std::size_t>(length) * k, kNegInf);
  std::vector<int> bp(static_cast<std::size_t>(length) * k, -1);

  for (int j = 0; j < k; ++j) {
    if (mask.start(j)) dp[j] = scores[j];
  }
  for (int t = 1; t < length; ++t) {
    for (int j = 0; j < k; ++j) {
      nn::Real best = kNegInf;
      int best_from = -1;
      for (int i = 0; i < k; ++i) {
        if (!mask.step(i, j)) continue;
        const nn::Real cand = dp[static_cast<std::size_t>(t - 1) * k + i];
        if (cand > best) {  // strict '>' keeps the lowest index on ties
          best = cand;
          best_from = i;
        }
      }
      if (best_from >= 0) {
        dp[static_cast<std::size_t>(t) * k + j] = best + scores[static_cast<std::size_t>(t) * k + j];
        bp[static_cast<std::size_t>(t) * k + j] = best_from;
      }
    }
  }

  nn::Real best = kNegInf;
  int best_tag = -1;
  for (int j = 0; j < k; ++j) {
    const nn::Real v = dp[static_cast<std::size_t>(length - 1) * k + j];
    if (v > best) {
      best = v;
      best_tag = j;
    }
  }
  if (best_tag < 0) throw ValidationError("viterbi: no feasible path (all scores -inf)");

  std::vector<int> path(static_cast<std::size_t>(length));
  path[length - 1] = best_tag;
  for (int t = length - 1; t > 0; --t) {
    path[t - 1] = bp[static_cast<std::size_t>(t) * k + path[t]];
  }
  return path;
}

std::vector<int> decode_tags(const model::TokenDistributions& dist, int row_offset, int length,
                             const TransitionMask& mask) {
  return viterbi(dist.log_probs.data() + static_cast<std::size_t>(row_offset) * dist.n_tags,
                 length, mask);
}

Prediction predict_document(const model::ModelParams& params, const core::Document& doc) {
  Prediction out;
  out.doc_id = doc.doc_id;
  if (doc.segments.empty()) return out;

  core::LabelSet labels{params.config.labels};
  const core::TagAlphabet alphabet(labels);
  const model::Vocab vocab = model::Vocab::from_tokens(params.config.vocab);
  const model::TokenBatch batch = model::make_batch({&doc}, vocab, alphabet, params.config);
  const model::TokenDistributions dist =
      model::forward(params, nullptr, batch, model::FlowMode::kSL);
  const TransitionMask mask = TransitionMask::bio(alphabet);
  const std::vector<int> ids = decode_tags(dist, 0, doc.n_tokens(), mask);
  for (int id : ids) out.tags.push_back(alphabet.tag(id));
  out.entities = core::entities_from_tags(out.tags);
  return out;
}

std::vector<core::Entity> predict_entities(const model::ModelParams& params,
                                           const core::Document& doc) {
  return predict_document(params, doc).entities;
}

}  // namespace vancl::decode
