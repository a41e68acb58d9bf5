#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "vancl/backbone.hpp"
#include "vancl/core.hpp"

namespace vancl::eval {

struct PrfCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  long support() const { return tp + fn; }
  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }
  double f1() const {
    const double p = precision();
    const double r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  PrfCounts& operator+=(const PrfCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct PrfResult {
  PrfCounts micro;
  std::map<std::string, PrfCounts> per_type;

  double precision() const { return micro.precision(); }
  double recall() const { return micro.recall(); }
  double f1() const { return micro.f1(); }
};

// Exact (type, start, end) matching.
PrfResult entity_prf(const std::vector<core::Entity>& pred, const std::vector<core::Entity>& gold);

struct MetricsReport {
  PrfResult prf;
  int n_docs = 0;

  nlohmann::json to_json() const;
};

// Micro aggregation by global counts across the corpus.
MetricsReport evaluate(const model::ModelParams& params,
                       const std::vector<core::Document>& test_docs);

// Same aggregation over precomputed prediction/gold pairs (used by tests).
MetricsReport aggregate(const std::vector<std::pair<std::vector<core::Entity>,
                                                    std::vector<core::Entity>>>& doc_pairs);

}  // namespace vancl::eval
