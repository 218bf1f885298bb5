#include "cmdrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace cmdrec {

std::size_t EvalInstance::rank() const {
  auto it = std::find(ranking.begin(), ranking.end(), true_id);
  if (it == ranking.end()) throw Error(ErrorCode::DimensionMismatch, "true id missing from ranking");
  return static_cast<std::size_t>(it - ranking.begin()) + 1;
}

std::size_t rank_of(const std::vector<double>& scores, int true_id) {
  if (true_id < kNumReserved || true_id >= static_cast<int>(scores.size()))
    throw Error(ErrorCode::DimensionMismatch, "true id is not rankable");
  const double s = scores[static_cast<std::size_t>(true_id)];
  std::size_t rank = 1;
  for (int i = kNumReserved; i < static_cast<int>(scores.size()); ++i) {
    double v = scores[static_cast<std::size_t>(i)];
    if (v > s || (v == s && i < true_id)) ++rank;
  }
  return rank;
}

double recall_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
  if (ranks.empty()) throw Error(ErrorCode::EmptyEvalSet, "no evaluation instances");
  if (k < 1) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
  std::size_t hits = 0;
  for (auto r : ranks) hits += r <= k;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double ndcg_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
  if (ranks.empty()) throw Error(ErrorCode::EmptyEvalSet, "no evaluation instances");
  if (k < 1) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
  double total = 0.0;
  for (auto r : ranks)
    if (r <= k) total += 1.0 / std::log2(1.0 + static_cast<double>(r));
  return total / static_cast<double>(ranks.size());
}

namespace {
std::vector<std::size_t> ranks_of(const std::vector<EvalInstance>& instances) {
  std::vector<std::size_t> r;
  r.reserve(instances.size());
  for (const auto& i : instances) r.push_back(i.rank());
  return r;
}
}  // namespace

double recall_at_k(const std::vector<EvalInstance>& instances, std::size_t k) {
  return recall_at_k(ranks_of(instances), k);
}
double ndcg_at_k(const std::vector<EvalInstance>& instances, std::size_t k) { return ndcg_at_k(ranks_of(instances), k); }

MetricsReport MetricsReport::from_ranks(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& ks,
                                        std::size_t skipped) {
  MetricsReport m;
  m.ks = ks;
  m.instances = ranks.size();
  m.skipped_unknown = skipped;
  for (auto k : ks) {
    m.recall[k] = recall_at_k(ranks, k);
    m.ndcg[k] = ndcg_at_k(ranks, k);
  }
  return m;
}

std::string MetricsReport::to_table(const std::string& label) const {
  std::ostringstream os;
  os << std::left << std::setw(14) << "Model";
  for (auto k : ks) os << std::setw(11) << ("Recall@" + std::to_string(k)) << std::setw(11) << ("NDCG@" + std::to_string(k));
  os << "n\n" << std::setw(14) << label << std::fixed << std::setprecision(2);
  for (auto k : ks) os << std::setw(11) << 100.0 * recall.at(k) << std::setw(11) << 100.0 * ndcg.at(k);
  os << instances << '\n';
  if (skipped_unknown) os << "skipped (unknown target): " << skipped_unknown << '\n';
  return os.str();
}

std::string MetricsReport::to_json_text() const {
  nlohmann::json j;
  j["instances"] = instances;
  j["skipped_unknown"] = skipped_unknown;
  for (auto k : ks) {
    j["recall@" + std::to_string(k)] = recall.at(k);
    j["ndcg@" + std::to_string(k)] = ndcg.at(k);
  }
  return j.dump();
}

std::vector<std::size_t> evaluation_ranks(const Model& model, const FeatureEncoder& encoder,
                                          const std::vector<CleanSequence>& sequences, std::size_t* skipped,
                                          std::size_t batch_size) {
  std::vector<EncodedSequence> encoded;
  std::size_t skip = 0;
  for (const auto& s : sequences) {
    if (s.items.size() < 2) continue;
    auto e = encoder.encode(s);
    if (e.ids.back() == kUnkId) {
      ++skip;
      continue;
    }
    encoded.push_back(std::move(e));
  }
  if (skipped) *skipped = skip;
  // Length-sorted batches keep padding small; ranks are reported in input order.
  std::vector<std::size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return encoded[a].length() < encoded[b].length(); });
  std::vector<std::size_t> ranks(encoded.size());
  const auto scheme = model.config().scheme();
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<EncodedSequence> chunk;
    auto end = std::min(order.size(), start + batch_size);
    for (auto i = start; i < end; ++i) chunk.push_back(encoded[order[i]]);
    auto batch = mask_sequences(chunk, scheme, Mode::Infer, 0);
    auto scores = model.target_scores(batch);
    for (auto i = start; i < end; ++i) {
      const auto row = static_cast<Eigen::Index>(i - start);
      std::vector<double> s(scores.row(row).data(), scores.row(row).data() + scores.cols());
      ranks[order[i]] = rank_of(s, chunk[i - start].ids.back());
    }
  }
  return ranks;
}

MetricsReport evaluate(const Model& model, const FeatureEncoder& encoder, const std::vector<CleanSequence>& sequences,
                       const std::vector<std::size_t>& ks, std::size_t batch_size) {
  std::size_t skipped = 0;
  auto ranks = evaluation_ranks(model, encoder, sequences, &skipped, batch_size);
  return MetricsReport::from_ranks(ranks, ks, skipped);
}

}  // namespace cmdrec
