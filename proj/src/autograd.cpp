#include "cmdrec/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cmdrec/common.hpp"
#include "cmdrec/random.hpp"

namespace cmdrec::ag {

Mat& Node::g() {
  if (ext_grad) {
    if (ext_grad->rows() != v().rows() || ext_grad->cols() != v().cols()) *ext_grad = Mat::Zero(v().rows(), v().cols());
    return *ext_grad;
  }
  if (!grad_ready) {
    grad = Mat::Zero(value.rows(), value.cols());
    grad_ready = true;
  }
  return grad;
}

Var Tape::make(Mat value, bool needs_grad) {
  auto& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.needs_grad = needs_grad && record_;
  return {&n, this};
}

Var Tape::constant(Mat value) { return make(std::move(value), false); }

Var Tape::param(const Mat& value, Mat* grad) {
  auto& n = nodes_.emplace_back();
  n.ext_value = &value;
  n.ext_grad = grad;
  n.needs_grad = grad != nullptr && record_;
  return {&n, this};
}

void Tape::backward(Var loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw Error(ErrorCode::DimensionMismatch, "backward needs a scalar");
  if (!loss.needs_grad()) return;
  loss.n->g()(0, 0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->backward && it->grad_ready) it->backward();
  }
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::DimensionMismatch, what);
}

bool wants(Var out) { return out.n->needs_grad; }

// a * b where every output entry is an fma chain over k in order, so a row's
// result never depends on the other rows or on the matrix size. Eigen's GEMM
// picks kernels by shape and panel position, which moves the last bit around.
Mat row_product(const Mat& a, const Mat& b) {
  const Eigen::Index n = a.rows(), K = a.cols(), m = b.cols();
  Mat c = Mat::Zero(n, m);
  constexpr Eigen::Index R = 4, T = 64;
  for (Eigen::Index j0 = 0; j0 < m; j0 += T) {
    const Eigen::Index jn = std::min(T, m - j0);
    Eigen::Index i = 0;
    for (; i + R <= n; i += R) {
      double* c0 = c.row(i).data() + j0;
      double* c1 = c.row(i + 1).data() + j0;
      double* c2 = c.row(i + 2).data() + j0;
      double* c3 = c.row(i + 3).data() + j0;
      for (Eigen::Index k = 0; k < K; ++k) {
        const double a0 = a(i, k), a1 = a(i + 1, k), a2 = a(i + 2, k), a3 = a(i + 3, k);
        const double* bk = b.row(k).data() + j0;
        for (Eigen::Index j = 0; j < jn; ++j) {
          c0[j] = std::fma(a0, bk[j], c0[j]);
          c1[j] = std::fma(a1, bk[j], c1[j]);
          c2[j] = std::fma(a2, bk[j], c2[j]);
          c3[j] = std::fma(a3, bk[j], c3[j]);
        }
      }
    }
    for (; i < n; ++i) {
      double* c0 = c.row(i).data() + j0;
      for (Eigen::Index k = 0; k < K; ++k) {
        const double a0 = a(i, k);
        const double* bk = b.row(k).data() + j0;
        for (Eigen::Index j = 0; j < jn; ++j) c0[j] = std::fma(a0, bk[j], c0[j]);
      }
    }
  }
  return c;
}

}  // namespace

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat v = row_product(a.v(), b.v());
  Var out = a.t->make(std::move(v), a.needs_grad() || b.needs_grad());
  if (wants(out)) {
    out.n->backward = [a, b, o = out.n] {
      if (a.needs_grad()) a.n->g().noalias() += o->grad * b.v().transpose();
      if (b.needs_grad()) b.n->g().noalias() += a.v().transpose() * o->grad;
    };
  }
  return out;
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Mat v = row_product(a.v(), b.v().transpose());
  Var out = a.t->make(std::move(v), a.needs_grad() || b.needs_grad());
  if (wants(out)) {
    out.n->backward = [a, b, o = out.n] {
      if (a.needs_grad()) a.n->g().noalias() += o->grad * b.v();
      if (b.needs_grad()) b.n->g().noalias() += o->grad.transpose() * a.v();
    };
  }
  return out;
}

Var add(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
  Var out = a.t->make(a.v() + b.v(), a.needs_grad() || b.needs_grad());
  if (wants(out)) {
    out.n->backward = [a, b, o = out.n] {
      if (a.needs_grad()) a.n->g() += o->grad;
      if (b.needs_grad()) b.n->g() += o->grad;
    };
  }
  return out;
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shapes differ");
  Mat v = a.v().rowwise() + row.v().row(0);
  Var out = a.t->make(std::move(v), a.needs_grad() || row.needs_grad());
  if (wants(out)) {
    out.n->backward = [a, row, o = out.n] {
      if (a.needs_grad()) a.n->g() += o->grad;
      if (row.needs_grad()) row.n->g() += o->grad.colwise().sum();
    };
  }
  return out;
}

Var mul(Var a, Var b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shapes differ");
  Mat v = a.v().cwiseProduct(b.v());
  Var out = a.t->make(std::move(v), a.needs_grad() || b.needs_grad());
  if (wants(out)) {
    out.n->backward = [a, b, o = out.n] {
      if (a.needs_grad()) a.n->g() += o->grad.cwiseProduct(b.v());
      if (b.needs_grad()) b.n->g() += o->grad.cwiseProduct(a.v());
    };
  }
  return out;
}

Var scale(Var a, double s) {
  Var out = a.t->make(a.v() * s, a.needs_grad());
  if (wants(out)) out.n->backward = [a, s, o = out.n] { a.n->g() += o->grad * s; };
  return out;
}

Var gather_rows(Var table, const std::vector<int>& idx) {
  const auto& tv = table.v();
  Mat v(static_cast<Eigen::Index>(idx.size()), tv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < tv.rows(), "gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = tv.row(idx[i]);
  }
  Var out = table.t->make(std::move(v), table.needs_grad());
  if (wants(out)) {
    out.n->backward = [table, idx, o = out.n] {
      auto& g = table.n->g();
      for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += o->grad.row(static_cast<Eigen::Index>(i));
    };
  }
  return out;
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  Eigen::Index rows = parts.front().rows(), cols = 0;
  bool needs = false;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
    needs = needs || p.needs_grad();
  }
  Mat v(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.v();
    c += p.cols();
  }
  Var out = parts.front().t->make(std::move(v), needs);
  if (wants(out)) {
    out.n->backward = [parts, o = out.n] {
      Eigen::Index c = 0;
      for (const auto& p : parts) {
        if (p.needs_grad()) p.n->g() += o->grad.middleCols(c, p.cols());
        c += p.cols();
      }
    };
  }
  return out;
}

Var relu(Var x) {
  Mat v = x.v().cwiseMax(0.0);
  Var out = x.t->make(std::move(v), x.needs_grad());
  if (wants(out)) {
    out.n->backward = [x, o = out.n] {
      x.n->g().array() += o->grad.array() * (x.v().array() > 0.0).cast<double>();
    };
  }
  return out;
}

Var gelu(Var x) {
  Mat v = x.v().unaryExpr([](double z) { return 0.5 * z * (1.0 + std::erf(z * M_SQRT1_2)); });
  Var out = x.t->make(std::move(v), x.needs_grad());
  if (wants(out)) {
    out.n->backward = [x, o = out.n] {
      Mat d = x.v().unaryExpr([](double z) {
        return 0.5 * (1.0 + std::erf(z * M_SQRT1_2)) + z * std::exp(-0.5 * z * z) * 0.5 * M_2_SQRTPI * M_SQRT1_2;
      });
      x.n->g().array() += o->grad.array() * d.array();
    };
  }
  return out;
}

Var silu(Var x) {
  Mat v = x.v().unaryExpr([](double z) { return z / (1.0 + std::exp(-z)); });
  Var out = x.t->make(std::move(v), x.needs_grad());
  if (wants(out)) {
    out.n->backward = [x, o = out.n] {
      Mat d = x.v().unaryExpr([](double z) {
        double s = 1.0 / (1.0 + std::exp(-z));
        return s * (1.0 + z * (1.0 - s));
      });
      x.n->g().array() += o->grad.array() * d.array();
    };
  }
  return out;
}

Var rms_norm(Var x, Var gain, double eps) {
  require(gain.rows() == 1 && gain.cols() == x.cols(), "rms_norm: gain shape");
  const auto& xv = x.v();
  Eigen::VectorXd inv = ((xv.array().square().rowwise().mean()) + eps).rsqrt().matrix();
  Mat v = (xv.array().colwise() * inv.array()).rowwise() * gain.v().row(0).array();
  Var out = x.t->make(std::move(v), x.needs_grad() || gain.needs_grad());
  if (wants(out)) {
    out.n->backward = [x, gain, inv, o = out.n] {
      const auto& xv = x.v();
      Mat xhat = xv.array().colwise() * inv.array();
      if (gain.needs_grad()) gain.n->g() += (o->grad.array() * xhat.array()).colwise().sum().matrix();
      if (x.needs_grad()) {
        Mat dxhat = o->grad.array().rowwise() * gain.v().row(0).array();
        Eigen::VectorXd m = (dxhat.array() * xhat.array()).rowwise().mean().matrix();
        x.n->g().array() += (dxhat.array() - xhat.array().colwise() * m.array()).colwise() * inv.array();
      }
    };
  }
  return out;
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require(gain.rows() == 1 && gain.cols() == x.cols() && bias.rows() == 1 && bias.cols() == x.cols(),
          "layer_norm: gain/bias shape");
  const auto& xv = x.v();
  Eigen::VectorXd mu = xv.rowwise().mean();
  Mat centered = xv.colwise() - mu;
  Eigen::VectorXd inv = (centered.array().square().rowwise().mean() + eps).rsqrt().matrix();
  Mat xhat = centered.array().colwise() * inv.array();
  Mat v = (xhat.array().rowwise() * gain.v().row(0).array()).rowwise() + bias.v().row(0).array();
  Var out = x.t->make(std::move(v), x.needs_grad() || gain.needs_grad() || bias.needs_grad());
  if (wants(out)) {
    out.n->backward = [x, gain, bias, inv, xhat = std::move(xhat), o = out.n] {
      if (gain.needs_grad()) gain.n->g() += (o->grad.array() * xhat.array()).colwise().sum().matrix();
      if (bias.needs_grad()) bias.n->g() += o->grad.colwise().sum();
      if (x.needs_grad()) {
        Mat dxhat = o->grad.array().rowwise() * gain.v().row(0).array();
        Eigen::VectorXd m1 = dxhat.rowwise().mean();
        Eigen::VectorXd m2 = (dxhat.array() * xhat.array()).rowwise().mean().matrix();
        x.n->g().array() +=
            ((dxhat.array().colwise() - m1.array()) - xhat.array().colwise() * m2.array()).colwise() * inv.array();
      }
    };
  }
  return out;
}

namespace {

// cos/sin table: length x (head_dim / 2).
std::pair<Mat, Mat> rope_table(int head_dim, int length, double base) {
  const int half = head_dim / 2;
  Mat c(length, half), s(length, half);
  for (int p = 0; p < length; ++p)
    for (int i = 0; i < half; ++i) {
      double theta = static_cast<double>(p) * std::pow(base, -2.0 * i / head_dim);
      c(p, i) = std::cos(theta);
      s(p, i) = std::sin(theta);
    }
  return {std::move(c), std::move(s)};
}

}  // namespace

Var rope(Var x, int n_heads, int head_dim, int length, double base) {
  require(head_dim % 2 == 0, "rope: head_dim must be even");
  require(x.cols() == static_cast<Eigen::Index>(n_heads) * head_dim, "rope: width");
  require(length > 0 && x.rows() % length == 0, "rope: rows must be a multiple of length");
  auto [c, s] = rope_table(head_dim, length, base);
  const auto& xv = x.v();
  Mat v(xv.rows(), xv.cols());
  const int half = head_dim / 2;
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const auto p = r % length;
    for (int h = 0; h < n_heads; ++h)
      for (int i = 0; i < half; ++i) {
        auto j = h * head_dim + 2 * i;
        double a = xv(r, j), b = xv(r, j + 1);
        v(r, j) = a * c(p, i) - b * s(p, i);
        v(r, j + 1) = a * s(p, i) + b * c(p, i);
      }
  }
  Var out = x.t->make(std::move(v), x.needs_grad());
  if (wants(out)) {
    out.n->backward = [x, n_heads, head_dim, length, c = std::move(c), s = std::move(s), o = out.n] {
      auto& g = x.n->g();
      const int half = head_dim / 2;
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const auto p = r % length;
        for (int h = 0; h < n_heads; ++h)
          for (int i = 0; i < half; ++i) {
            auto j = h * head_dim + 2 * i;
            double da = o->grad(r, j), db = o->grad(r, j + 1);
            g(r, j) += da * c(p, i) + db * s(p, i);
            g(r, j + 1) += -da * s(p, i) + db * c(p, i);
          }
      }
    };
  }
  return out;
}

Var sum_all(Var x) {
  Mat v(1, 1);
  v(0, 0) = x.v().sum();
  Var out = x.t->make(std::move(v), x.needs_grad());
  if (wants(out)) out.n->backward = [x, o = out.n] { x.n->g().array() += o->grad(0, 0); };
  return out;
}

Var attention(Var q, Var k, Var v, const AttentionSpec& sp, std::vector<Mat>* probs) {
  const Eigen::Index L = sp.length, hd = sp.head_dim;
  require(sp.n_kv_heads > 0 && sp.n_heads % sp.n_kv_heads == 0, "attention: n_kv_heads must divide n_heads");
  require(q.rows() == sp.batch * L && k.rows() == q.rows() && v.rows() == q.rows(), "attention: row count");
  require(q.cols() == sp.n_heads * hd && k.cols() == sp.n_kv_heads * hd && v.cols() == k.cols(),
          "attention: head widths");
  require(!sp.valid || sp.valid->size() == static_cast<std::size_t>(q.rows()), "attention: validity mask size");
  const int group = sp.n_heads / sp.n_kv_heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(hd));
  const double neg_inf = -std::numeric_limits<double>::infinity();

  // Additive mask per sequence, shared by all heads, plus a 0/1 copy: the
  // vectorized exp maps -inf to a denormal, not to 0.
  std::vector<Mat> masks(static_cast<std::size_t>(sp.batch)), keeps(static_cast<std::size_t>(sp.batch));
  for (int b = 0; b < sp.batch; ++b) {
    Mat m = Mat::Zero(L, L);
    for (Eigen::Index i = 0; i < L; ++i)
      for (Eigen::Index j = 0; j < L; ++j) {
        bool ok = !sp.valid || (*sp.valid)[static_cast<std::size_t>(b * L + j)];
        if (sp.causal && j > i) ok = false;
        if (sp.window > 0 && std::abs(i - j) >= sp.window) ok = false;
        if (!ok) m(i, j) = neg_inf;
      }
    keeps[static_cast<std::size_t>(b)] = (m.array() == 0.0).cast<double>().matrix();
    masks[static_cast<std::size_t>(b)] = std::move(m);
  }

  Mat out(q.rows(), q.cols());
  std::vector<Mat> P(static_cast<std::size_t>(sp.batch * sp.n_heads));
  for (int b = 0; b < sp.batch; ++b)
    for (int h = 0; h < sp.n_heads; ++h) {
      const int kh = h / group;
      auto Q = q.v().block(b * L, h * hd, L, hd);
      auto K = k.v().block(b * L, kh * hd, L, hd);
      auto V = v.v().block(b * L, kh * hd, L, hd);
      const Mat& keep = keeps[static_cast<std::size_t>(b)];
      Mat S = (Q * K.transpose()) * scl + masks[static_cast<std::size_t>(b)];
      for (Eigen::Index i = 0; i < L; ++i) {
        double mx = S.row(i).maxCoeff();
        if (mx == neg_inf) {
          S.row(i).setZero();  // nothing to attend to
          continue;
        }
        S.row(i) = (S.row(i).array() - mx).exp() * keep.row(i).array();
        S.row(i) /= S.row(i).sum();
      }
      out.block(b * L, h * hd, L, hd).noalias() = S * V;
      P[static_cast<std::size_t>(b * sp.n_heads + h)] = std::move(S);
    }
  if (probs) *probs = P;
  Var res = q.t->make(std::move(out), q.needs_grad() || k.needs_grad() || v.needs_grad());
  if (wants(res)) {
    res.n->backward = [q, k, v, sp, P = std::move(P), scl, group, o = res.n] {
      const Eigen::Index L = sp.length, hd = sp.head_dim;
      Mat* gq = q.needs_grad() ? &q.n->g() : nullptr;
      Mat* gk = k.needs_grad() ? &k.n->g() : nullptr;
      Mat* gv = v.needs_grad() ? &v.n->g() : nullptr;
      for (int b = 0; b < sp.batch; ++b)
        for (int h = 0; h < sp.n_heads; ++h) {
          const int kh = h / group;
          const Mat& p = P[static_cast<std::size_t>(b * sp.n_heads + h)];
          auto dO = o->grad.block(b * L, h * hd, L, hd);
          auto Q = q.v().block(b * L, h * hd, L, hd);
          auto K = k.v().block(b * L, kh * hd, L, hd);
          auto V = v.v().block(b * L, kh * hd, L, hd);
          if (gv) gv->block(b * L, kh * hd, L, hd).noalias() += p.transpose() * dO;
          if (!gq && !gk) continue;
          Mat dP = dO * V.transpose();
          Eigen::VectorXd rs = (dP.array() * p.array()).rowwise().sum().matrix();
          Mat dS = (p.array() * (dP.array().colwise() - rs.array())).matrix() * scl;
          if (gq) gq->block(b * L, h * hd, L, hd).noalias() += dS * K;
          if (gk) gk->block(b * L, kh * hd, L, hd).noalias() += dS.transpose() * Q;
        }
    };
  }
  return res;
}

Var topk_gate(Var logits, int top_k, std::vector<std::vector<int>>* routing) {
  const auto& z = logits.v();
  const auto n = z.rows(), e = z.cols();
  require(top_k >= 1 && top_k <= e, "topk_gate: top_k out of range");
  std::vector<std::vector<int>> local;
  auto& route = routing ? *routing : local;
  const bool replay = !route.empty();
  require(!replay || route.size() == static_cast<std::size_t>(n), "topk_gate: routing size");
  if (!replay) {
    route.assign(static_cast<std::size_t>(n), {});
    std::vector<int> order(static_cast<std::size_t>(e));
    for (Eigen::Index r = 0; r < n; ++r) {
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + top_k, order.end(), [&](int a, int b) {
        return z(r, a) > z(r, b) || (z(r, a) == z(r, b) && a < b);
      });
      route[static_cast<std::size_t>(r)].assign(order.begin(), order.begin() + top_k);
    }
  }
  Mat w = Mat::Zero(n, e);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& sel = route[static_cast<std::size_t>(r)];
    double mx = -std::numeric_limits<double>::infinity();
    for (int c : sel) mx = std::max(mx, z(r, c));
    double total = 0.0;
    for (int c : sel) total += (w(r, c) = std::exp(z(r, c) - mx));
    for (int c : sel) w(r, c) /= total;
  }
  Var out = logits.t->make(std::move(w), logits.needs_grad());
  if (wants(out)) {
    out.n->backward = [logits, route, o = out.n] {
      auto& g = logits.n->g();
      const auto& w = o->value;
      for (std::size_t r = 0; r < route.size(); ++r) {
        const auto row = static_cast<Eigen::Index>(r);
        double dot = 0.0;
        for (int c : route[r]) dot += w(row, c) * o->grad(row, c);
        for (int c : route[r]) g(row, c) += w(row, c) * (o->grad(row, c) - dot);
      }
    };
  }
  return out;
}

Var scatter_weighted(Var y, const std::vector<int>& rows, Var weights, int col, Eigen::Index n_rows) {
  require(y.rows() == static_cast<Eigen::Index>(rows.size()), "scatter_weighted: row list size");
  require(weights.rows() == n_rows && col >= 0 && col < weights.cols(), "scatter_weighted: weights shape");
  Mat v = Mat::Zero(n_rows, y.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    v.row(rows[i]) += weights.v()(rows[i], col) * y.v().row(static_cast<Eigen::Index>(i));
  Var out = y.t->make(std::move(v), y.needs_grad() || weights.needs_grad());
  if (wants(out)) {
    out.n->backward = [y, rows, weights, col, o = out.n] {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (y.needs_grad()) y.n->g().row(r) += weights.v()(rows[i], col) * o->grad.row(rows[i]);
        if (weights.needs_grad()) weights.n->g()(rows[i], col) += o->grad.row(rows[i]).dot(y.v().row(r));
      }
    };
  }
  return out;
}

Var dropout(Var x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  require(p < 1.0, "dropout: p must be < 1");
  Mat mask(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = bernoulli(rng, p) ? 0.0 : keep;
  Mat v = x.v().cwiseProduct(mask);
  Var out = x.t->make(std::move(v), x.needs_grad());
  if (wants(out)) out.n->backward = [x, mask = std::move(mask), o = out.n] { x.n->g() += o->grad.cwiseProduct(mask); };
  return out;
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  const auto& z = logits.v();
  require(z.rows() == static_cast<Eigen::Index>(labels.size()), "cross_entropy: label count");
  std::size_t count = 0;
  double total = 0.0;
  Mat soft = Mat::Zero(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    int y = labels[static_cast<std::size_t>(r)];
    if (y < 0) continue;
    require(y < z.cols(), "cross_entropy: label out of range");
    double mx = z.row(r).maxCoeff();
    soft.row(r) = (z.row(r).array() - mx).exp();
    double s = soft.row(r).sum();
    total += std::log(s) + mx - z(r, y);
    soft.row(r) /= s;
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::NoSupervisedPositions, "no labelled positions");
  Mat v(1, 1);
  v(0, 0) = total / static_cast<double>(count);
  Var out = logits.t->make(std::move(v), logits.needs_grad());
  if (wants(out)) {
    out.n->backward = [logits, labels, soft = std::move(soft), count, o = out.n] {
      auto& g = logits.n->g();
      const double f = o->grad(0, 0) / static_cast<double>(count);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        int y = labels[static_cast<std::size_t>(r)];
        if (y < 0) continue;
        g.row(r) += soft.row(r) * f;
        g(r, y) -= f;
      }
    };
  }
  return out;
}

}  // namespace cmdrec::ag
