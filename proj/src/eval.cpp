#include "vancl/eval.hpp"

#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

#include "vancl/decode.hpp"

namespace vancl::eval {

using core::ValidationError;

PrfResult entity_prf(const std::vector<core::Entity>& pred,
                     const std::vector<core::Entity>& gold) {
  using Key = std::tuple<std::string, int, int>;
  std::set<Key> gold_set;
  for (const auto& e : gold) gold_set.insert({e.type, e.start, e.end});

  PrfResult r;
  std::set<Key> matched;
  for (const auto& e : pred) {
    const Key k{e.type, e.start, e.end};
    if (gold_set.count(k) && !matched.count(k)) {
      matched.insert(k);
      r.micro.tp += 1;
      r.per_type[e.type].tp += 1;
    } else {
      r.micro.fp += 1;
      r.per_type[e.type].fp += 1;
    }
  }
  for (const auto& e : gold) {
    if (!matched.count({e.type, e.start, e.end})) {
      r.micro.fn += 1;
      r.per_type[e.type].fn += 1;
    }
  }
  return r;
}

MetricsReport aggregate(const std::vector<std::pair<std::vector<core::Entity>,
                                                    std::vector<core::Entity>>>& doc_pairs) {
  MetricsReport report;
  report.n_docs = static_cast<int>(doc_pairs.size());
  for (const auto& [pred, gold] : doc_pairs) {
    const PrfResult r = entity_prf(pred, gold);
    report.prf.micro += r.micro;
    for (const auto& [type, counts] : r.per_type) report.prf.per_type[type] += counts;
  }
  return report;
}

MetricsReport evaluate(const model::ModelParams& params,
                       const std::vector<core::Document>& test_docs) {
  if (test_docs.empty()) throw ValidationError("evaluate: empty test set");
  std::vector<std::pair<std::vector<core::Entity>, std::vector<core::Entity>>> pairs;
  pairs.reserve(test_docs.size());
  for (const auto& doc : test_docs) {
    pairs.emplace_back(decode::predict_entities(params, doc), core::gold_entities(doc));
  }
  return aggregate(pairs);
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["micro"] = {{"p", prf.precision()}, {"r", prf.recall()}, {"f1", prf.f1()}};
  nlohmann::ordered_json types;
  for (const auto& [type, counts] : prf.per_type) {
    types[type] = {{"p", counts.precision()},
                   {"r", counts.recall()},
                   {"f1", counts.f1()},
                   {"support", counts.support()}};
  }
  j["per_type"] = types;
  j["n_docs"] = n_docs;
  return j;
}

}  // namespace vancl::eval
