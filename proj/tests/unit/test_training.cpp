#include <unistd.h>

#include <filesystem>
#include <random>

#include "cmdrec/synthgen.hpp"
#include "cmdrec/training.hpp"
#include "doctest.h"

using namespace cmdrec;

namespace {

SplitDataset chain_data(std::size_t sessions, std::uint64_t seed) {
  GeneratorSpec s;
  s.sessions = sessions;
  s.seed = seed;
  s.trigger_frac = 0.0;
  auto c = generate(s);
  return sessionize_and_split(c.truth.clean, SplitOptions{});
}

FeatureEncoder encoder_for(const SplitDataset& d, std::size_t d_text = 16) {
  FeatureEncoder e;
  e.vocab = Vocabulary::build(d.train);
  e.embedder = TextEmbedder(d_text);
  e.time = TimeNormStats::fit(d.train);
  return e;
}

std::vector<EncodedSequence> random_batch(int vocab, std::size_t d_text, std::size_t n, std::mt19937_64& rng) {
  std::vector<EncodedSequence> out;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t s = 0; s < n; ++s) {
    EncodedSequence e;
    e.d_text = d_text;
    auto len = 3 + rng() % 5;
    for (std::size_t i = 0; i < len; ++i) {
      e.ids.push_back(kNumReserved + static_cast<int>(rng() % static_cast<unsigned>(vocab - kNumReserved)));
      e.types.push_back(static_cast<int>(rng() % 3));
      e.dt.push_back(nd(rng));
      for (std::size_t j = 0; j < d_text; ++j) e.text.push_back(nd(rng));
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("same seed, same run") {
  auto d = chain_data(60, 4);
  d.train.resize(std::min<std::size_t>(d.train.size(), 50));
  auto enc = encoder_for(d);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.seed = 17;
  auto run = [&] {
    Model m(preset_config("mistral", static_cast<int>(enc.vocab.size()), 16), 5);
    auto r = train(m, enc, d, tc);
    return std::make_pair(std::move(m), r);
  };
  auto [a, ra] = run();
  auto [b, rb] = run();
  for (std::size_t i = 0; i < a.params().size(); ++i)
    CHECK((a.params()[i].value.array() == b.params()[i].value.array()).all());
  for (std::size_t e = 0; e < ra.history.size(); ++e) CHECK(ra.history[e].train_loss == rb.history[e].train_loss);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto d = chain_data(40, 5);
  auto enc = encoder_for(d);
  Model m(preset_config("llama2", static_cast<int>(enc.vocab.size()), 16), 5);
  auto before = m.params();
  TrainConfig tc;
  tc.epochs = 1;
  tc.lr = 0.0;
  tc.evaluate_each_epoch = false;
  train(m, enc, d, tc);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK((before[i].value.array() == m.params()[i].value.array()).all());
}

TEST_CASE("a batch without supervised positions is an error") {
  std::mt19937_64 rng(1);
  auto c = tiny_config("llama2");
  Model m(c, 1);
  auto b = mask_sequences(random_batch(10, 4, 2, rng), Scheme::CLM, Mode::Train, 1);
  std::fill(b.labels.begin(), b.labels.end(), kIgnore);
  try {
    compute_gradients(m, b);
    FAIL("expected NoSupervisedPositions");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoSupervisedPositions);
  }
}

TEST_CASE("frozen parameters receive no update") {
  std::mt19937_64 rng(2);
  Model m(tiny_config("bert"), 2);
  m.param("item_emb").trainable = false;
  auto keep = m.param("item_emb").value;
  TrainConfig tc;
  tc.lr = 0.1;
  Optimizer opt(tc);
  for (int i = 0; i < 5; ++i) {
    compute_gradients(m, mask_sequences(random_batch(10, 4, 4, rng), Scheme::MLM, Mode::Train, rng));
    opt.step(m);
  }
  CHECK((m.param("item_emb").value.array() == keep.array()).all());
}

TEST_CASE("finite differences on the tiny presets") {
  std::mt19937_64 rng(3);
  for (const auto& name : preset_names()) {
    auto c = tiny_config(name);
    Model m(c, 7);
    auto b = mask_sequences(random_batch(10, 4, 3, rng), c.scheme(), Mode::Train, rng);
    auto r = finite_diff_check(m, b, 1e-5, 300, 1);
    INFO(name << " worst " << r.worst_param << " " << r.max_rel_error);
    CHECK(r.checked == 300);
    CHECK(r.max_rel_error < 1e-6);
    CHECK_THROWS_AS(finite_diff_check(m, b, 0.0), Error);
  }
}

TEST_CASE("learns a planted chain") {
  auto d = chain_data(300, 8);
  auto enc = encoder_for(d);
  Model m(preset_config("llama2", static_cast<int>(enc.vocab.size()), 32), 3);
  TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 3e-3;
  tc.ks = {5};
  auto r = train(m, enc, d, tc);
  REQUIRE(r.initial);
  INFO("untrained " << r.initial->recall.at(5) << " trained " << r.history.back().validation->recall.at(5));
  CHECK(r.history.back().validation->recall.at(5) > r.initial->recall.at(5) + 0.1);
  CHECK(r.history.back().train_loss < r.history.front().train_loss);
}

TEST_CASE("run directory round trip") {
  auto d = chain_data(40, 9);
  auto enc = encoder_for(d);
  Model m(preset_config("mixtral", static_cast<int>(enc.vocab.size()), 16), 3);
  TrainConfig tc;
  tc.epochs = 1;
  auto r = train(m, enc, d, tc);
  auto dir = std::filesystem::temp_directory_path() / ("cmdrec_run_" + std::to_string(::getpid()));
  write_run(dir, m, enc, tc, r);
  for (const char* f : {"config.json", "vocab.tsv", "metrics.jsonl", "model.ckpt"}) CHECK(std::filesystem::exists(dir / f));
  auto back = load_run(dir);
  CHECK(back.encoder.vocab == enc.vocab);
  CHECK(back.encoder.time.mean == enc.time.mean);
  auto a = evaluate(m, enc, d.validation), b = evaluate(back.model, back.encoder, d.validation);
  CHECK(a.recall == b.recall);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config validation") {
  TrainConfig tc;
  tc.epochs = 0;  // untrained baseline runs are allowed
  CHECK_NOTHROW(tc.validate());
  tc.epochs = -1;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.lr = -1;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.scheme = Scheme::MLM;
  tc.seed = 9;
  auto back = TrainConfig::from_json_text(tc.to_json_text());
  CHECK(back.to_json_text() == tc.to_json_text());
}

}
