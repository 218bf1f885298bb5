#include <cmath>
#include <functional>
#include <random>

#include "cmdrec/autograd.hpp"
#include "cmdrec/common.hpp"
#include "doctest.h"

using namespace cmdrec;
using namespace cmdrec::ag;

namespace {

Mat randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

using Fn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Reduces f's output with fixed random weights so every output entry matters,
// then compares the tape gradient against central differences.
double max_grad_error(const Fn& f, std::vector<Mat> inputs, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Mat weights;
  auto scalar = [&](std::vector<Mat>& in, std::vector<Mat>* grads) {
    Tape t(grads != nullptr);
    std::vector<Var> vars;
    for (std::size_t i = 0; i < in.size(); ++i) vars.push_back(grads ? t.param(in[i], &(*grads)[i]) : t.constant(in[i]));
    Var y = f(t, vars);
    if (weights.size() == 0) weights = randn(y.rows(), y.cols(), rng);
    Var loss = sum_all(mul(y, t.constant(weights)));
    if (grads) t.backward(loss);
    return loss.v()(0, 0);
  };
  std::vector<Mat> grads;
  for (auto& m : inputs) grads.push_back(Mat::Zero(m.rows(), m.cols()));
  scalar(inputs, &grads);
  double worst = 0.0;
  const double eps = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
      double keep = inputs[i].data()[k];
      inputs[i].data()[k] = keep + eps;
      double up = scalar(inputs, nullptr);
      inputs[i].data()[k] = keep - eps;
      double down = scalar(inputs, nullptr);
      inputs[i].data()[k] = keep;
      double num = (up - down) / (2 * eps), ana = grads[i].data()[k];
      worst = std::max(worst, std::abs(num - ana) / std::max(1.0, std::abs(num) + std::abs(ana)));
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("autograd") {

TEST_CASE("elementary ops match central differences") {
  std::mt19937_64 rng(42);
  auto A = randn(3, 4, rng), B = randn(4, 5, rng), C = randn(3, 4, rng), row = randn(1, 4, rng), D = randn(5, 4, rng);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }, {A, B}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return matmul_nt(v[0], v[1]); }, {A, D}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); }, {A, C}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return add_row(v[0], v[1]); }, {A, row}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }, {A, C}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return scale(v[0], -2.5); }, {A}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return gelu(v[0]); }, {A}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return silu(v[0]); }, {A}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return relu(v[0]); }, {A}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return concat_cols({v[0], v[1]}); }, {A, C}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return gather_rows(v[0], {2, 0, 2, 1}); }, {A}) < 1e-7);
}

TEST_CASE("norms match central differences") {
  std::mt19937_64 rng(43);
  auto X = randn(4, 6, rng), g = randn(1, 6, rng), b = randn(1, 6, rng);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return rms_norm(v[0], v[1]); }, {X, g}) < 1e-7);
  CHECK(max_grad_error([](Tape&, const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); }, {X, g, b}) < 1e-7);
}

TEST_CASE("rope and attention match central differences") {
  std::mt19937_64 rng(44);
  const int B = 2, L = 4, H = 4, KV = 2, hd = 2;
  auto q = randn(B * L, H * hd, rng), k = randn(B * L, KV * hd, rng), v = randn(B * L, KV * hd, rng);
  CHECK(max_grad_error([&](Tape&, const std::vector<Var>& x) { return rope(x[0], H, hd, L); }, {q}) < 1e-7);
  std::vector<std::uint8_t> valid = {1, 1, 1, 1, 1, 1, 0, 0};
  for (bool causal : {true, false})
    for (int window : {0, 2}) {
      AttentionSpec spec{B, L, H, KV, hd, causal, window, &valid};
      CHECK(max_grad_error([&](Tape&, const std::vector<Var>& x) { return attention(x[0], x[1], x[2], spec); }, {q, k, v}) <
            1e-7);
    }
}

TEST_CASE("gating and scatter match central differences with routing held") {
  std::mt19937_64 rng(45);
  auto logits = randn(5, 4, rng), y = randn(3, 2, rng);
  std::vector<std::vector<int>> routing;
  {
    Tape t(false);
    topk_gate(t.constant(logits), 2, &routing);
  }
  CHECK(max_grad_error([&](Tape&, const std::vector<Var>& x) {
          auto r = routing;
          return topk_gate(x[0], 2, &r);
        },
                       {logits}) < 1e-7);
  CHECK(max_grad_error([&](Tape&, const std::vector<Var>& x) {
          auto r = routing;
          auto w = topk_gate(x[1], 2, &r);
          return scatter_weighted(x[0], {0, 2, 4}, w, 1, 5);
        },
                       {y, logits}) < 1e-7);
}

TEST_CASE("cross entropy") {
  std::mt19937_64 rng(46);
  auto logits = randn(4, 5, rng);
  std::vector<int> labels = {1, -1, 4, 0};
  CHECK(max_grad_error([&](Tape&, const std::vector<Var>& x) { return cross_entropy(x[0], labels); }, {logits}) < 1e-7);

  Tape t(false);
  // uniform logits: ln V
  auto u = cross_entropy(t.constant(Mat::Zero(3, 7)), {0, 3, 6});
  CHECK(u.v()(0, 0) == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  // hand-computed 2-class, 2-position fixture
  Mat l(2, 2);
  l << 1.0, 2.0, 0.5, -0.5;
  double expect = (std::log(std::exp(1.0) + std::exp(2.0)) - 2.0 + std::log(std::exp(0.5) + std::exp(-0.5)) - 0.5) / 2;
  CHECK(std::abs(cross_entropy(t.constant(l), {1, 0}).v()(0, 0) - expect) < 1e-9);
  // margin -> infinity
  double prev = 1e9;
  for (double m : {1.0, 5.0, 20.0, 60.0}) {
    Mat x = Mat::Zero(1, 3);
    x(0, 1) = m;
    double ce = cross_entropy(t.constant(x), {1}).v()(0, 0);
    CHECK(ce < prev);
    prev = ce;
  }
  CHECK(prev < 1e-20);
  CHECK_THROWS_AS(cross_entropy(t.constant(l), {-1, -1}), Error);
}

TEST_CASE("attention rows are distributions over allowed keys") {
  std::mt19937_64 rng(47);
  const int B = 2, L = 6, H = 2, hd = 3;
  auto q = randn(B * L, H * hd, rng), k = randn(B * L, H * hd, rng), v = randn(B * L, H * hd, rng);
  std::vector<std::uint8_t> valid = {1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0};
  Tape t(false);
  std::vector<Mat> probs;
  AttentionSpec spec{B, L, H, H, hd, true, 3, &valid};
  attention(t.constant(q), t.constant(k), t.constant(v), spec, &probs);
  REQUIRE(probs.size() == static_cast<std::size_t>(B * H));
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h) {
      const auto& P = probs[b * H + h];
      for (int i = 0; i < L; ++i) {
        double s = 0;
        int allowed_keys = 0;
        for (int j = 0; j < L; ++j) {
          bool allowed = j <= i && i - j < 3 && valid[b * L + j];
          allowed_keys += allowed;
          if (!allowed) CHECK(P(i, j) == 0.0);
          s += P(i, j);
        }
        // a query whose whole window is padding attends to nothing
        CHECK(s == doctest::Approx(allowed_keys ? 1.0 : 0.0).epsilon(1e-12));
      }
    }
}

TEST_CASE("non-recording tape keeps values only") {
  Tape t(false);
  Mat a = Mat::Ones(2, 2);
  Mat g = Mat::Zero(2, 2);
  auto x = t.param(a, &g);
  auto y = matmul(x, x);
  CHECK(y.v()(0, 0) == 2.0);
  CHECK_FALSE(t.recording());
}

}
