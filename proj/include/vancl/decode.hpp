#pragma once

#include <vector>

#include "vancl/backbone.hpp"
#include "vancl/core.hpp"

namespace vancl::decode {

// BIO legality as hard constraints; no learned transition scores.
struct TransitionMask {
  int n_tags = 0;
  std::vector<std::uint8_t> start_ok;  // [n_tags]
  std::vector<std::uint8_t> allowed;   // [n_tags * n_tags], row = from, col = to

  bool start(int tag) const { return start_ok[tag] != 0; }
  bool step(int from, int to) const {
    return allowed[static_cast<std::size_t>(from) * n_tags + to] != 0;
  }

  static TransitionMask bio(const core::TagAlphabet& alphabet);
};

// Max-sum decoding over per-token scores [length, n_tags] (row-major),
// illegal transitions treated as -inf; ties broken toward the lowest tag
// index at every backtrack step.
std::vector<int> viterbi(const nn::Real* scores, int length, const TransitionMask& mask);

// Decodes one document's rows of a TokenDistributions (uses log-probs).
std::vector<int> decode_tags(const model::TokenDistributions& dist, int row_offset, int length,
                             const TransitionMask& mask);

// Full pipeline on the ORIGINAL image: SL forward, Viterbi, span extraction.
std::vector<core::Entity> predict_entities(const model::ModelParams& params,
                                           const core::Document& doc);

struct Prediction {
  std::string doc_id;
  core::TagSequence tags;
  std::vector<core::Entity> entities;
};

Prediction predict_document(const model::ModelParams& params, const core::Document& doc);

}  // namespace vancl::decode
