#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "cmdrec/checkpoint.hpp"
#include "cmdrec/training.hpp"
#include "doctest.h"

using namespace cmdrec;
using ag::Mat;

namespace {

EncodedSequence random_seq(std::size_t len, int vocab, std::size_t d_text, std::mt19937_64& rng) {
  EncodedSequence e;
  e.d_text = d_text;
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i < len; ++i) {
    e.ids.push_back(kNumReserved + static_cast<int>(rng() % static_cast<unsigned>(vocab - kNumReserved)));
    e.types.push_back(static_cast<int>(rng() % 3));
    e.dt.push_back(n(rng));
    for (std::size_t j = 0; j < d_text; ++j) e.text.push_back(n(rng));
  }
  return e;
}

double checksum(const Mat& m) {
  double s = 0;
  for (Eigen::Index i = 0; i < m.size(); ++i) s += m.data()[i] * static_cast<double>(i % 97 + 1);
  return s;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cmdrec_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_SUITE("lora") {

TEST_CASE("zero-initialized adapters leave outputs bit-identical") {
  std::mt19937_64 rng(1);
  for (const auto& name : preset_names()) {
    auto c = preset_config(name, 40);
    Model m(c, 3);
    auto b = query_batch({random_seq(9, 40, 16, rng), random_seq(4, 40, 16, rng)}, c.scheme());
    ag::Tape t0(false);
    Mat before = m.logits(t0, b).v();
    m.inject_lora({}, 5);
    ag::Tape t1(false);
    Mat after = m.logits(t1, b).v();
    CHECK((before.array() == after.array()).all());
  }
}

TEST_CASE("adapter parameter count") {
  auto c = preset_config("llama2", 40);
  Model m(c, 3);
  auto base = m.parameter_count();
  LoraSpec spec;
  spec.rank = 4;
  spec.targets = {"wq"};
  spec.layers = {0};
  m.inject_lora(spec, 1);
  CHECK(m.parameter_count() - base == 512u);  // r (d_in + d_out) = 4 * 128
  CHECK(m.trainable_count() == 512u);
  CHECK(m.lora_targets() == std::vector<std::string>{"layers.0.attn.wq"});
}

TEST_CASE("rank checks") {
  Model m(preset_config("llama2", 40), 3);
  LoraSpec spec;
  spec.rank = 65;
  CHECK_THROWS_AS(m.inject_lora(spec, 1), Error);
  spec.rank = 0;
  try {
    m.inject_lora(spec, 1);
    FAIL("expected RankTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::RankTooLarge);
  }
}

TEST_CASE("frozen parameters stay fixed over 100 steps") {
  std::mt19937_64 rng(2);
  auto c = tiny_config("mistral", 12);
  Model m(c, 4);
  LoraSpec spec;
  spec.rank = 2;
  m.inject_lora(spec, 6);
  std::map<std::string, double> frozen, adapters;
  for (const auto& p : m.params()) (p.trainable ? adapters : frozen)[p.name] = checksum(p.value);
  CHECK(!frozen.empty());
  TrainConfig tc;
  tc.lr = 1e-2;
  Optimizer opt(tc);
  std::vector<EncodedSequence> data;
  for (int i = 0; i < 8; ++i) data.push_back(random_seq(6, 12, 4, rng));
  for (int step = 0; step < 100; ++step) {
    auto b = mask_sequences(data, Scheme::CLM, Mode::Train, rng);
    compute_gradients(m, b);
    opt.step(m);
  }
  std::size_t moved = 0;
  for (const auto& p : m.params()) {
    if (p.trainable) moved += checksum(p.value) != adapters[p.name];
    else CHECK(checksum(p.value) == frozen[p.name]);
  }
  CHECK(moved > 0);
}

}

TEST_SUITE("checkpoint") {

TEST_CASE("round trip restores identical scores") {
  std::mt19937_64 rng(3);
  for (const auto& name : preset_names()) {
    auto c = preset_config(name, 30);
    Model m(c, 8);
    if (name == "mistral") m.inject_lora({}, 2);
    for (auto& p : m.params()) p.value.array() += 0.01;  // make adapters non-trivial
    auto path = temp_path(name + ".ckpt");
    save_checkpoint(m, path, 1234, R"({"note":1})");
    auto back = load_checkpoint(path, 1234);
    CHECK(back.vocab_hash == 1234);
    CHECK(back.model.config() == m.config());
    CHECK(back.model.lora().has_value() == m.lora().has_value());
    CHECK(back.model.parameter_count() == m.parameter_count());
    auto b = query_batch({random_seq(7, 30, 16, rng)}, c.scheme());
    CHECK((back.model.target_scores(b).array() == m.target_scores(b).array()).all());
    try {
      load_checkpoint(path, 99);
      FAIL("expected VocabularyMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::VocabularyMismatch);
    }
    std::filesystem::remove(path);
  }
}

TEST_CASE("corrupt files") {
  auto path = temp_path("bad.ckpt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT";
  }
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(temp_path("missing.ckpt")), Error);
}

}
