#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <vector>

namespace cmdrec::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Mat value;
  Mat grad;
  bool needs_grad = false;
  bool grad_ready = false;
  // Parameters live outside the tape; their value/grad are borrowed.
  const Mat* ext_value = nullptr;
  Mat* ext_grad = nullptr;
  std::function<void()> backward;

  const Mat& v() const { return ext_value ? *ext_value : value; }
  Mat& g();
};

class Tape;

struct Var {
  Node* n = nullptr;
  Tape* t = nullptr;

  const Mat& v() const { return n->v(); }
  Eigen::Index rows() const { return v().rows(); }
  Eigen::Index cols() const { return v().cols(); }
  bool needs_grad() const { return n->needs_grad; }
};

// Records operations for reverse-mode differentiation. With record = false
// only values are computed.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  // grad == nullptr marks the parameter frozen.
  Var param(const Mat& value, Mat* grad);
  Var make(Mat value, bool needs_grad);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward step.
  void backward(Var loss);
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  bool record_;
  std::deque<Node> nodes_;
};

Var matmul(Var a, Var b);     // a b
Var matmul_nt(Var a, Var b);  // a b^T
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // row broadcast over a's rows
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var gather_rows(Var table, const std::vector<int>& idx);
Var concat_cols(const std::vector<Var>& parts);
Var relu(Var x);
Var gelu(Var x);  // erf form
Var silu(Var x);
Var rms_norm(Var x, Var gain, double eps = 1e-6);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Rotary embedding on (batch*length) x (n_heads*head_dim); row r sits at
// position r % length.
Var rope(Var x, int n_heads, int head_dim, int length, double base = 10000.0);
Var sum_all(Var x);

struct AttentionSpec {
  int batch = 1;
  int length = 1;
  int n_heads = 1;
  int n_kv_heads = 1;
  int head_dim = 1;
  bool causal = true;
  int window = 0;  // 0: unbounded
  const std::vector<std::uint8_t>* valid = nullptr;  // key validity, batch*length
};

// Scaled dot-product attention. q: (B*L) x (H*hd), k, v: (B*L) x (Hkv*hd).
// When probs is given it receives the attention matrix of every (b, h).
Var attention(Var q, Var k, Var v, const AttentionSpec& spec, std::vector<Mat>* probs = nullptr);

// Picks top_k columns per row and softmaxes over them; other entries are 0.
// routing holds the chosen columns per row: filled when empty, reused
// (held fixed) otherwise.
Var topk_gate(Var logits, int top_k, std::vector<std::vector<int>>* routing = nullptr);

// out[rows[i]] += weights(rows[i], col) * y[i], out has n_rows rows.
Var scatter_weighted(Var y, const std::vector<int>& rows, Var weights, int col, Eigen::Index n_rows);

Var dropout(Var x, double p, std::mt19937_64& rng);

// Mean negative log-softmax of the labelled class over rows with label >= 0.
Var cross_entropy(Var logits, const std::vector<int>& labels);

}  // namespace cmdrec::ag
