#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vtb/common/error.hpp"

namespace vtb::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// A named array that outlives any graph. Graphs read `value` in place and
// accumulate into `grad` when `trainable`.
template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool trainable = false;

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over row-major matrices. Build the forward pass by calling
// ops, then backward() on a 1x1 result. One graph per sequence; graphs are
// not shared across threads.
template <class T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  const Matrix<T>& value(Var v) const {
    const auto& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.param ? n.param->value : n.value;
  }

  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  // Gradient of a non-parameter node after backward(); empty when none flowed.
  const Matrix<T>& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  Var constant(Matrix<T> value) { return push(std::move(value), false, nullptr); }

  // Differentiable leaf whose gradient is readable through grad().
  Var input(Matrix<T> value) { return push(std::move(value), grad_enabled_, nullptr); }

  Var param(Parameter<T>& p) {
    Node n;
    n.param = &p;
    n.needs_grad = grad_enabled_ && p.trainable;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size() - 1)};
  }

  void backward(Var loss) {
    if (value(loss).size() != 1) throw InvalidArgument("backward needs a scalar");
    if (!needs_grad(loss)) return;
    nodes_[static_cast<std::size_t>(loss.id)].grad = Matrix<T>::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.needs_grad && n.backward && n.grad.size() > 0) n.backward();
    }
  }

  // ---------------------------------------------------------------- ops

  // x (n x in) times w^T (w: out x in).
  Var linear(Var x, Var w) {
    Matrix<T> y;
    y.noalias() = value(x) * value(w).transpose();
    Var out = push(std::move(y), any(x, w), nullptr);
    on_backward(out, [this, x, w, out] {
      const auto& g = grad(out);
      if (needs_grad(x)) acc(x).noalias() += g * value(w);
      if (needs_grad(w)) acc(w).noalias() += g.transpose() * value(x);
    });
    return out;
  }

  // x (n x c) plus a 1 x c row broadcast over rows.
  Var add_row(Var x, Var b) {
    Matrix<T> y = value(x);
    y.rowwise() += value(b).row(0);
    Var out = push(std::move(y), any(x, b), nullptr);
    on_backward(out, [this, x, b, out] {
      const auto& g = grad(out);
      if (needs_grad(x)) acc(x) += g;
      if (needs_grad(b)) acc(b) += g.colwise().sum();
    });
    return out;
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Var out = push(value(a) + value(b), any(a, b), nullptr);
    on_backward(out, [this, a, b, out] {
      if (needs_grad(a)) acc(a) += grad(out);
      if (needs_grad(b)) acc(b) += grad(out);
    });
    return out;
  }

  Var scale(Var a, T s) {
    Var out = push(value(a) * s, needs_grad(a), nullptr);
    on_backward(out, [this, a, s, out] { acc(a) += grad(out) * s; });
    return out;
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Var out = push(value(a).cwiseProduct(value(b)), any(a, b), nullptr);
    on_backward(out, [this, a, b, out] {
      if (needs_grad(a)) acc(a) += grad(out).cwiseProduct(value(b));
      if (needs_grad(b)) acc(b) += grad(out).cwiseProduct(value(a));
    });
    return out;
  }

  // tanh-approximated GELU.
  Var gelu(Var x) {
    const auto xa = value(x).array();
    static constexpr T c = T(0.7978845608028654);
    static constexpr T k = T(0.044715);
    Matrix<T> t = (c * (xa + k * xa.cube())).tanh().matrix();
    Matrix<T> y = (T(0.5) * xa * (T(1) + t.array())).matrix();
    Var out = push(std::move(y), needs_grad(x), nullptr);
    on_backward(out, [this, x, out, t = std::move(t)] {
      const auto xa = value(x).array();
      const auto ta = t.array();
      acc(x).array() += grad(out).array() * (T(0.5) * (T(1) + ta) +
                                             T(0.5) * xa * (T(1) - ta.square()) * c * (T(1) + T(3) * k * xa.square()));
    });
    return out;
  }

  Var silu(Var x) {
    Matrix<T> sig = ((-value(x).array()).exp() + T(1)).inverse().matrix();
    Var out = push(value(x).cwiseProduct(sig), needs_grad(x), nullptr);
    on_backward(out, [this, x, out, sig = std::move(sig)] {
      const auto& xv = value(x);
      Matrix<T> d = sig.array() * (T(1) + xv.array() * (T(1) - sig.array()));
      acc(x) += grad(out).cwiseProduct(d);
    });
    return out;
  }

  // Splits columns in half: first * sigmoid(second).
  Var glu(Var x) {
    const auto& xv = value(x);
    if (xv.cols() % 2) throw InvalidArgument("glu needs an even column count");
    const auto h = xv.cols() / 2;
    Matrix<T> sig = ((-xv.rightCols(h).array()).exp() + T(1)).inverse().matrix();
    Var out = push(xv.leftCols(h).cwiseProduct(sig), needs_grad(x), nullptr);
    on_backward(out, [this, x, out, h, sig = std::move(sig)] {
      const auto& xv = value(x);
      const auto& g = grad(out);
      auto& gx = acc(x);
      gx.leftCols(h) += g.cwiseProduct(sig);
      gx.rightCols(h).array() += g.array() * xv.leftCols(h).array() * sig.array() * (T(1) - sig.array());
    });
    return out;
  }

  // Row-wise x / rms(x) * w, w is 1 x c.
  Var rms_norm(Var x, Var w, T eps) {
    const auto& xv = value(x);
    RowVec<T> inv(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r)
      inv(r) = T(1) / std::sqrt(xv.row(r).squaredNorm() / T(xv.cols()) + eps);
    Matrix<T> xhat = inv.transpose().asDiagonal() * xv;
    Matrix<T> y = xhat;
    y.array().rowwise() *= value(w).row(0).array();
    Var out = push(std::move(y), any(x, w), nullptr);
    on_backward(out, [this, x, w, out, inv = std::move(inv), xhat = std::move(xhat)] {
      const auto& g = grad(out);
      if (needs_grad(w)) acc(w) += g.cwiseProduct(xhat).colwise().sum();
      if (needs_grad(x)) {
        Matrix<T> gw = g;
        gw.array().rowwise() *= value(w).row(0).array();
        auto& gx = acc(x);
        const T n = T(xhat.cols());
        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
          const T dot = gw.row(r).dot(xhat.row(r)) / n;
          gx.row(r) += inv(r) * (gw.row(r) - dot * xhat.row(r));
        }
      }
    });
    return out;
  }

  Var layer_norm(Var x, Var gamma, Var beta, T eps) {
    const auto& xv = value(x);
    const T n = T(xv.cols());
    RowVec<T> inv(xv.rows());
    Matrix<T> xhat(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      const T mean = xv.row(r).sum() / n;
      auto centered = xv.row(r).array() - mean;
      inv(r) = T(1) / std::sqrt(centered.square().sum() / n + eps);
      xhat.row(r) = centered * inv(r);
    }
    Matrix<T> y = xhat;
    y.array().rowwise() *= value(gamma).row(0).array();
    y.rowwise() += value(beta).row(0);
    Var out = push(std::move(y), any(x, gamma) || needs_grad(beta), nullptr);
    on_backward(out, [this, x, gamma, beta, out, inv = std::move(inv), xhat = std::move(xhat)] {
      const auto& g = grad(out);
      if (needs_grad(gamma)) acc(gamma) += g.cwiseProduct(xhat).colwise().sum();
      if (needs_grad(beta)) acc(beta) += g.colwise().sum();
      if (needs_grad(x)) {
        Matrix<T> gh = g;
        gh.array().rowwise() *= value(gamma).row(0).array();
        auto& gx = acc(x);
        const T n = T(xhat.cols());
        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
          const T m1 = gh.row(r).sum() / n;
          const T m2 = gh.row(r).dot(xhat.row(r)) / n;
          gx.row(r).array() += inv(r) * (gh.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
      }
    });
    return out;
  }

  // Rotary position embedding; each head's columns are rotated in
  // (i, i + half) pairs by angle pos * base^(-i / half).
  Var rope(Var x, int heads, T base = T(10000)) {
    const auto& xv = value(x);
    const auto d = xv.cols();
    if (d % heads || (d / heads) % 2) throw InvalidArgument("rope needs an even head dimension");
    const auto hd = d / heads;
    const auto half = hd / 2;
    auto table = std::make_shared<std::pair<Matrix<T>, Matrix<T>>>(Matrix<T>(xv.rows(), half), Matrix<T>(xv.rows(), half));
    for (Eigen::Index p = 0; p < xv.rows(); ++p)
      for (Eigen::Index i = 0; i < half; ++i) {
        const double ang = static_cast<double>(p) * std::pow(static_cast<double>(base), -static_cast<double>(i) / half);
        table->first(p, i) = T(std::cos(ang));
        table->second(p, i) = T(std::sin(ang));
      }
    auto rotate = [heads, hd, half, table](const Matrix<T>& in, T sign) {
      Matrix<T> out(in.rows(), in.cols());
      const auto& cs = table->first;
      const auto& sn = table->second;
      for (int h = 0; h < heads; ++h) {
        const auto a = in.middleCols(h * hd, half).array();
        const auto b = in.middleCols(h * hd + half, half).array();
        out.middleCols(h * hd, half).array() = a * cs.array() - sign * b * sn.array();
        out.middleCols(h * hd + half, half).array() = sign * a * sn.array() + b * cs.array();
      }
      return out;
    };
    Var out = push(rotate(xv, T(1)), needs_grad(x), nullptr);
    on_backward(out, [this, x, out, rotate] { acc(x) += rotate(grad(out), T(-1)); });
    return out;
  }

  // Multi-head scaled dot-product attention over q, k, v (n x d each).
  Var attention(Var q, Var k, Var v, int heads, bool causal) {
    const auto& qv = value(q);
    const auto& kv = value(k);
    const auto& vv = value(v);
    const auto n = qv.rows();
    const auto d = qv.cols();
    if (d % heads) throw InvalidArgument("attention width not divisible by heads");
    const auto hd = d / heads;
    const T sc = T(1) / std::sqrt(T(hd));
    auto probs = std::make_shared<std::vector<Matrix<T>>>(static_cast<std::size_t>(heads));
    Matrix<T> y(n, d);
    for (int h = 0; h < heads; ++h) {
      Matrix<T> s;
      s.noalias() = qv.middleCols(h * hd, hd) * kv.middleCols(h * hd, hd).transpose();
      s *= sc;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index lim = causal ? i + 1 : n;
        const T mx = s.row(i).head(lim).maxCoeff();
        s.row(i).head(lim) = (s.row(i).head(lim).array() - mx).exp();
        s.row(i).head(lim) /= s.row(i).head(lim).sum();
        if (lim < n) s.row(i).tail(n - lim).setZero();
      }
      y.middleCols(h * hd, hd).noalias() = s * vv.middleCols(h * hd, hd);
      (*probs)[static_cast<std::size_t>(h)] = std::move(s);
    }
    Var out = push(std::move(y), any(q, k) || needs_grad(v), nullptr);
    on_backward(out, [this, q, k, v, out, heads, hd, sc, probs] {
      const auto& g = grad(out);
      const auto& qv = value(q);
      const auto& kv = value(k);
      const auto& vv = value(v);
      for (int h = 0; h < heads; ++h) {
        const auto& p = (*probs)[static_cast<std::size_t>(h)];
        const auto gh = g.middleCols(h * hd, hd);
        if (needs_grad(v)) acc(v).middleCols(h * hd, hd).noalias() += p.transpose() * gh;
        if (!needs_grad(q) && !needs_grad(k)) continue;
        Matrix<T> dp;
        dp.noalias() = gh * vv.middleCols(h * hd, hd).transpose();
        RowVec<T> rs = dp.cwiseProduct(p).rowwise().sum().transpose();
        Matrix<T> ds = p.cwiseProduct(dp - rs.transpose().replicate(1, dp.cols()));
        ds *= sc;
        if (needs_grad(q)) acc(q).middleCols(h * hd, hd).noalias() += ds * kv.middleCols(h * hd, hd);
        if (needs_grad(k)) acc(k).middleCols(h * hd, hd).noalias() += ds.transpose() * qv.middleCols(h * hd, hd);
      }
    });
    return out;
  }

  // Same-padded depthwise convolution along rows (time). w: c x k (k odd), b: 1 x c.
  Var depthwise_conv(Var x, Var w, Var b) {
    const auto& xv = value(x);
    const auto& wv = value(w);
    const auto t = xv.rows();
    const auto k = wv.cols();
    if (k % 2 == 0) throw InvalidArgument("depthwise kernel must be odd");
    if (wv.rows() != xv.cols()) throw InvalidArgument("depthwise channel mismatch");
    const auto pad = k / 2;
    Matrix<T> y(t, xv.cols());
    y.rowwise() = value(b).row(0);
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto shift = j - pad;
      const auto lo = std::max<Eigen::Index>(0, -shift);
      const auto hi = std::min<Eigen::Index>(t, t - shift);
      if (hi <= lo) continue;
      y.middleRows(lo, hi - lo).array() +=
          xv.middleRows(lo + shift, hi - lo).array().rowwise() * wv.col(j).transpose().array();
    }
    Var out = push(std::move(y), any(x, w) || needs_grad(b), nullptr);
    on_backward(out, [this, x, w, b, out, pad] {
      const auto& g = grad(out);
      const auto& xv = value(x);
      const auto& wv = value(w);
      const auto t = xv.rows();
      if (needs_grad(b)) acc(b) += g.colwise().sum();
      for (Eigen::Index j = 0; j < wv.cols(); ++j) {
        const auto shift = j - pad;
        const auto lo = std::max<Eigen::Index>(0, -shift);
        const auto hi = std::min<Eigen::Index>(t, t - shift);
        if (hi <= lo) continue;
        if (needs_grad(w))
          acc(w).col(j) += g.middleRows(lo, hi - lo).cwiseProduct(xv.middleRows(lo + shift, hi - lo)).colwise().sum().transpose();
        if (needs_grad(x))
          acc(x).middleRows(lo + shift, hi - lo).array() +=
              g.middleRows(lo, hi - lo).array().rowwise() * wv.col(j).transpose().array();
      }
    });
    return out;
  }

  // Concatenates each run of k consecutive rows into one row: (t x c) ->
  // (floor(t/k) x k*c). Trailing rows that do not fill a group are dropped.
  Var stack_frames(Var x, int k) {
    const auto& xv = value(x);
    const auto groups = xv.rows() / k;
    const auto c = xv.cols();
    Matrix<T> y = Eigen::Map<const Matrix<T>>(xv.data(), groups, k * c);
    Var out = push(std::move(y), needs_grad(x), nullptr);
    on_backward(out, [this, x, out, groups, k, c] {
      auto& gx = acc(x);
      Eigen::Map<Matrix<T>>(gx.data(), groups, k * c) += grad(out);
    });
    return out;
  }

  // Rows of `table` selected by ids, times `scale`.
  Var embedding(Var table, std::span<const std::int32_t> ids, T scale = T(1)) {
    const auto& tv = value(table);
    Matrix<T> y(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= tv.rows()) throw InvalidArgument("token id out of vocabulary: " + std::to_string(ids[i]));
      y.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]) * scale;
    }
    std::vector<std::int32_t> idv(ids.begin(), ids.end());
    Var out = push(std::move(y), needs_grad(table), nullptr);
    on_backward(out, [this, table, out, idv = std::move(idv), scale] {
      auto& gt = acc(table);
      const auto& g = grad(out);
      for (std::size_t i = 0; i < idv.size(); ++i) gt.row(idv[i]) += g.row(static_cast<Eigen::Index>(i)) * scale;
    });
    return out;
  }

  Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw InvalidArgument("concat_rows of nothing");
    const auto c = value(parts[0]).cols();
    Eigen::Index rows = 0;
    bool ng = false;
    for (Var p : parts) {
      if (value(p).cols() != c) throw InvalidArgument("concat_rows width mismatch");
      rows += value(p).rows();
      ng = ng || needs_grad(p);
    }
    Matrix<T> y(rows, c);
    Eigen::Index r = 0;
    for (Var p : parts) {
      y.middleRows(r, value(p).rows()) = value(p);
      r += value(p).rows();
    }
    std::vector<Var> pv(parts.begin(), parts.end());
    Var out = push(std::move(y), ng, nullptr);
    on_backward(out, [this, out, pv = std::move(pv)] {
      Eigen::Index r = 0;
      for (Var p : pv) {
        const auto n = value(p).rows();
        if (needs_grad(p)) acc(p) += grad(out).middleRows(r, n);
        r += n;
      }
    });
    return out;
  }

  // Sum over mask=1 rows of -log softmax(logits)[target], divided by
  // `normalizer`. Result is 1 x 1.
  Var masked_nll(Var logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask, T normalizer) {
    const auto& lv = value(logits);
    if (static_cast<Eigen::Index>(targets.size()) != lv.rows() || targets.size() != mask.size())
      throw InvalidArgument("masked_nll shape mismatch");
    T total = 0;
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < lv.rows(); ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      const auto tgt = targets[static_cast<std::size_t>(i)];
      if (tgt < 0 || tgt >= lv.cols()) throw InvalidArgument("target id out of vocabulary");
      const T mx = lv.row(i).maxCoeff();
      const T lse = mx + std::log((lv.row(i).array() - mx).exp().sum());
      total += lse - lv(i, tgt);
      rows.push_back(i);
    }
    std::vector<std::int32_t> tv(targets.begin(), targets.end());
    Matrix<T> y(1, 1);
    y(0, 0) = total / normalizer;
    Var out = push(std::move(y), needs_grad(logits), nullptr);
    on_backward(out, [this, logits, out, rows = std::move(rows), tv = std::move(tv), normalizer] {
      const T g = grad(out)(0, 0) / normalizer;
      const auto& lv = value(logits);
      auto& gl = acc(logits);
      for (auto i : rows) {
        const T mx = lv.row(i).maxCoeff();
        RowVec<T> p = (lv.row(i).array() - mx).exp();
        p /= p.sum();
        p(tv[static_cast<std::size_t>(i)]) -= T(1);
        gl.row(i) += g * p;
      }
    });
    return out;
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  Var push(Matrix<T> v, bool ng, Parameter<T>* p) {
    Node n;
    n.value = std::move(v);
    n.param = p;
    n.needs_grad = ng && grad_enabled_;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size() - 1)};
  }

  template <class F>
  void on_backward(Var out, F&& f) {
    auto& n = nodes_[static_cast<std::size_t>(out.id)];
    if (n.needs_grad) n.backward = std::forward<F>(f);
  }

  bool any(Var a, Var b) const { return needs_grad(a) || needs_grad(b); }

  void check_same(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw InvalidArgument(std::string(op) + ": shape mismatch");
  }

  // Gradient buffer of v, zero-initialized on first use.
  Matrix<T>& acc(Var v) {
    auto& n = nodes_[static_cast<std::size_t>(v.id)];
    Matrix<T>& g = n.param ? n.param->grad : n.grad;
    const auto& val = n.param ? n.param->value : n.value;
    if (g.rows() != val.rows() || g.cols() != val.cols()) g.setZero(val.rows(), val.cols());
    return g;
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace vtb::nn
