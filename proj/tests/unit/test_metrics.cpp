#include <cmath>
#include <random>

#include "../oracles.hpp"
#include "cmdrec/metrics.hpp"
#include "doctest.h"

using namespace cmdrec;

TEST_SUITE("metrics") {

TEST_CASE("rank examples") {
  std::vector<double> s = {9, 9, 9, 0.1, 0.5, 0.3, 0.5};
  CHECK(rank_of(s, 4) == 1);
  CHECK(rank_of(s, 6) == 2);  // tie with 4, larger id ranks after
  CHECK(rank_of(s, 5) == 3);
  CHECK(rank_of(s, 3) == 4);
  EvalInstance e{{5, 3, 7}, 7};
  CHECK(e.rank() == 3);
}

TEST_CASE("ndcg values") {
  CHECK(ndcg_at_k(std::vector<std::size_t>{1}, 5) == 1.0);
  CHECK(ndcg_at_k(std::vector<std::size_t>{3}, 5) == doctest::Approx(0.5));
  CHECK(ndcg_at_k(std::vector<std::size_t>{4}, 5) == doctest::Approx(1.0 / std::log2(5.0)));
  CHECK(ndcg_at_k(std::vector<std::size_t>{6}, 5) == 0.0);
  CHECK(recall_at_k(std::vector<std::size_t>{1, 5, 6, 2}, 5) == 0.75);
  CHECK_THROWS_AS(recall_at_k(std::vector<std::size_t>{}, 5), Error);
}

TEST_CASE("metrics agree with the exhaustive oracle") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0, 1);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t N = 1 + rng() % 12, V = 4 + rng() % 30;
    std::vector<std::vector<double>> scores(N, std::vector<double>(V));
    std::vector<int> truth(N);
    std::vector<std::size_t> ranks;
    for (std::size_t i = 0; i < N; ++i) {
      for (auto& x : scores[i]) x = trial % 3 == 0 ? std::round(n(rng)) : n(rng);  // ties on a third
      truth[i] = kNumReserved + static_cast<int>(rng() % (V - kNumReserved));
      ranks.push_back(rank_of(scores[i], truth[i]));
    }
    for (std::size_t k : {1u, 5u, 10u}) {
      worst = std::max(worst, std::abs(recall_at_k(ranks, k) - oracle::recall_exhaustive(scores, truth, k, kNumReserved)));
      worst = std::max(worst, std::abs(ndcg_at_k(ranks, k) - oracle::ndcg_exhaustive(scores, truth, k, kNumReserved)));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("uniform scorer gives K/V") {
  // All-equal scores: ties by id make the rank id - reserved + 1.
  const int V = 50;
  std::vector<double> flat(V + kNumReserved, 0.0);
  std::vector<std::size_t> ranks;
  for (int id = kNumReserved; id < V + kNumReserved; ++id) ranks.push_back(rank_of(flat, id));
  CHECK(recall_at_k(ranks, 5) == doctest::Approx(5.0 / V));
  CHECK(recall_at_k(ranks, 10) == doctest::Approx(10.0 / V));
}

TEST_CASE("evaluation skips unknown targets and rejects empty sets") {
  FeatureEncoder enc;
  CleanSequence a{"a", {{"A", Category::Tool, -1, 0, 0}, {"B", Category::Tool, -2, 1, 0}}};
  enc.vocab = Vocabulary::build({a});
  enc.embedder = TextEmbedder(16);
  Model m(preset_config("llama2", static_cast<int>(enc.vocab.size())), 1);
  CleanSequence unk{"u", {{"A", Category::Tool, -1, 0, 0}, {"Z", Category::Tool, -9, 1, 0}}};
  std::size_t skipped = 0;
  auto ranks = evaluation_ranks(m, enc, {a, unk}, &skipped);
  CHECK(ranks.size() == 1);
  CHECK(skipped == 1);
  auto rep = evaluate(m, enc, {a, unk}, {1, 2});
  CHECK(rep.instances == 1);
  CHECK(rep.skipped_unknown == 1);
  CHECK(rep.recall.at(2) == 1.0);  // only two commands
  try {
    evaluate(m, enc, {unk});
    FAIL("expected EmptyEvalSet");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyEvalSet);
  }
}

}
