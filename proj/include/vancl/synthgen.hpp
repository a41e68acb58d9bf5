#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vancl/core.hpp"

namespace vancl::synthgen {

// Visual rendering style of a segment cell; this is what carries the label
// signal when the text is ambiguous.
struct SegmentStyle {
  std::uint8_t bg[3] = {255, 255, 255};
  bool border = false;
};

struct GenSpec {
  std::uint64_t seed = 7;
  int n_train = 250;
  int n_test = 50;
  core::LabelSet labels{{"QUESTION", "ANSWER", "HEADER"}};
  int page_w = 256;
  int page_h = 256;
  int grid_rows = 4;
  int grid_cols = 4;
  int segments_per_doc = 12;
  int min_tokens = 1;
  int max_tokens = 3;
  double ambiguity = 0.5;  // rho: fraction of segments with ambiguous text
  std::map<std::string, std::vector<std::string>> label_vocab;  // includes OTHER
  std::vector<std::string> ambiguous_vocab;
  std::map<std::string, SegmentStyle> style_map;  // includes OTHER

  static GenSpec defaults();
  static GenSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  std::string digest() const;  // FNV-1a of the canonical JSON dump
  void validate() const;
};

struct CorpusSplit {
  std::vector<core::Document> train;
  std::vector<core::Document> test;
};

// Deterministic per spec.seed; per-document RNG streams are split so document
// generation order does not matter.
CorpusSplit generate_corpus(const GenSpec& spec);

// FUNSD-format annotation ingestion. Word-level boxes and linking are
// discarded; labels are uppercased into {QUESTION, ANSWER, HEADER, OTHER}.
core::Document load_funsd(const std::string& annotation_json, core::RasterImage image,
                          const std::string& doc_id);

// ceil(p*N) documents by seeded sampling without replacement, original order
// preserved. Subsets are nested across p for a fixed seed.
std::vector<core::Document> subsample(const std::vector<core::Document>& train, double p,
                                      std::uint64_t seed);

// Writes per-document JSON + PPM plus manifest.json; returns the manifest.
nlohmann::json write_corpus(const std::filesystem::path& dir, const CorpusSplit& corpus,
                            const GenSpec& spec);

struct LoadedCorpus {
  CorpusSplit split;
  core::LabelSet labels;
  std::string genspec_digest;
};
LoadedCorpus read_corpus(const std::filesystem::path& dir);

}  // namespace vancl::synthgen
