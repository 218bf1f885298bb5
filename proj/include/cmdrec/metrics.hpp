#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "cmdrec/features.hpp"
#include "cmdrec/model.hpp"

namespace cmdrec {

struct EvalInstance {
  std::vector<int> ranking;  // best first
  int true_id = 0;

  std::size_t rank() const;  // 1-based
};

// Rank of true_id among non-reserved ids: 1 + number of ids scoring higher,
// ties resolved by ascending id as in top_k.
std::size_t rank_of(const std::vector<double>& scores, int true_id);

double recall_at_k(const std::vector<std::size_t>& ranks, std::size_t k);
double ndcg_at_k(const std::vector<std::size_t>& ranks, std::size_t k);
double recall_at_k(const std::vector<EvalInstance>& instances, std::size_t k);
double ndcg_at_k(const std::vector<EvalInstance>& instances, std::size_t k);

struct MetricsReport {
  std::vector<std::size_t> ks;
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
  std::size_t instances = 0;
  std::size_t skipped_unknown = 0;

  static MetricsReport from_ranks(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& ks,
                                  std::size_t skipped = 0);
  std::string to_table(const std::string& label = "model") const;
  std::string to_json_text() const;
};

// Last-item protocol: each sequence's final item is hidden and ranked
// against the full vocabulary. Sequences whose final item is UNK are skipped.
std::vector<std::size_t> evaluation_ranks(const Model& model, const FeatureEncoder& encoder,
                                          const std::vector<CleanSequence>& sequences, std::size_t* skipped = nullptr,
                                          std::size_t batch_size = 64);
MetricsReport evaluate(const Model& model, const FeatureEncoder& encoder, const std::vector<CleanSequence>& sequences,
                       const std::vector<std::size_t>& ks = {5, 10}, std::size_t batch_size = 64);

}  // namespace cmdrec
