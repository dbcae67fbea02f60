#pragma once

// Tape-based reverse-mode differentiation over row-major Eigen matrices.
//
// Every value on the tape is a 2-D matrix; scalars are 1x1. Token tensors of a
// mini-batch are stored as (batch * tokens) x features with equal-length
// segments per example, which is what the attention kernel expects.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "btc/errors.hpp"
#include "btc/rng.hpp"

namespace btc {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool trainable = true;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ag {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  using Mat = Matrix<T>;

  // A non-recording tape evaluates forward values only.
  explicit Tape(bool record = true) : record_(record) { nodes_.reserve(512); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  T scalar(Var v) const { return nodes_[v.id].value(0, 0); }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Mat m) { return push(std::move(m), false, nullptr); }

  Var param(Parameter<T>& p) {
    const bool ng = record_ && p.trainable;
    Var v = push(p.value, ng, nullptr);
    nodes_[v.id].param = ng ? &p : nullptr;
    return v;
  }

  // Seeds d(out)/d(out) = 1 and accumulates into trainable parameter grads.
  void backward(Var out) {
    if (!record_) throw InvalidInput("backward on a non-recording tape");
    Node& root = nodes_[out.id];
    if (root.value.size() != 1) throw ShapeError("backward requires a scalar output");
    if (!root.needs_grad) return;
    root.grad = Mat::Ones(1, 1);
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward();
      if (n.param != nullptr) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

  // ---------------------------------------------------------------- algebra

  Var matmul(Var a, Var b) {
    const Mat& A = value(a);
    const Mat& B = value(b);
    if (A.cols() != B.rows()) throw ShapeError(shape_msg("matmul", A, B));
    Mat out = A * B;
    return emit(std::move(out), {a, b}, [this, a, b](const Mat& g) {
      if (needs_grad(a)) acc(a, g * value(b).transpose());
      if (needs_grad(b)) acc(b, value(a).transpose() * g);
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    const Mat& A = value(a);
    const Mat& B = value(b);
    if (A.cols() != B.cols()) throw ShapeError(shape_msg("matmul_nt", A, B));
    Mat out = A * B.transpose();
    return emit(std::move(out), {a, b}, [this, a, b](const Mat& g) {
      if (needs_grad(a)) acc(a, g * value(b));
      if (needs_grad(b)) acc(b, g.transpose() * value(a));
    });
  }

  // x * w + bias (bias broadcast over rows; optional).
  Var affine(Var x, Var w, Var bias) {
    const Mat& X = value(x);
    const Mat& W = value(w);
    if (X.cols() != W.rows()) throw ShapeError(shape_msg("affine", X, W));
    Mat out = X * W;
    if (bias.valid()) {
      if (value(bias).rows() != 1 || value(bias).cols() != W.cols())
        throw ShapeError("affine: bias shape mismatch");
      out.rowwise() += value(bias).row(0);
    }
    return emit(std::move(out), {x, w, bias}, [this, x, w, bias](const Mat& g) {
      if (needs_grad(x)) acc(x, g * value(w).transpose());
      if (needs_grad(w)) acc(w, value(x).transpose() * g);
      if (bias.valid() && needs_grad(bias)) acc(bias, g.colwise().sum());
    });
  }

  Var add(Var a, Var b) {
    check_same("add", a, b);
    Mat out = value(a) + value(b);
    return emit(std::move(out), {a, b}, [this, a, b](const Mat& g) {
      if (needs_grad(a)) acc(a, g);
      if (needs_grad(b)) acc(b, g);
    });
  }

  Var sub(Var a, Var b) {
    check_same("sub", a, b);
    Mat out = value(a) - value(b);
    return emit(std::move(out), {a, b}, [this, a, b](const Mat& g) {
      if (needs_grad(a)) acc(a, g);
      if (needs_grad(b)) acc(b, -g);
    });
  }

  Var mul(Var a, Var b) {
    check_same("mul", a, b);
    Mat out = value(a).cwiseProduct(value(b));
    return emit(std::move(out), {a, b}, [this, a, b](const Mat& g) {
      if (needs_grad(a)) acc(a, g.cwiseProduct(value(b)));
      if (needs_grad(b)) acc(b, g.cwiseProduct(value(a)));
    });
  }

  // a + row, row is 1 x cols broadcast over every row of a.
  Var add_row(Var a, Var row) {
    if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
      throw ShapeError(shape_msg("add_row", value(a), value(row)));
    Mat out = value(a);
    out.rowwise() += value(row).row(0);
    return emit(std::move(out), {a, row}, [this, a, row](const Mat& g) {
      if (needs_grad(a)) acc(a, g);
      if (needs_grad(row)) acc(row, g.colwise().sum());
    });
  }

  Var scale(Var a, T s) {
    Mat out = value(a) * s;
    return emit(std::move(out), {a}, [this, a, s](const Mat& g) {
      if (needs_grad(a)) acc(a, g * s);
    });
  }

  Var add_const(Var a, T c) {
    Mat out = value(a).array() + c;
    return emit(std::move(out), {a}, [this, a](const Mat& g) {
      if (needs_grad(a)) acc(a, g);
    });
  }

  // s * a where s is a 1x1 tape value.
  Var mul_scalar(Var a, Var s) {
    if (value(s).size() != 1) throw ShapeError("mul_scalar: scalar operand must be 1x1");
    const T sv = scalar(s);
    Mat out = value(a) * sv;
    return emit(std::move(out), {a, s}, [this, a, s](const Mat& g) {
      if (needs_grad(a)) acc(a, g * scalar(s));
      if (needs_grad(s)) acc(s, Mat::Constant(1, 1, g.cwiseProduct(value(a)).sum()));
    });
  }

  Var sum(Var a) {
    Mat out = Mat::Constant(1, 1, value(a).sum());
    return emit(std::move(out), {a}, [this, a](const Mat& g) {
      if (needs_grad(a)) acc(a, Mat::Constant(value(a).rows(), value(a).cols(), g(0, 0)));
    });
  }

  Var mean(Var a) {
    const T n = static_cast<T>(value(a).size());
    return scale(sum(a), T(1) / n);
  }

  // ----------------------------------------------------------- elementwise

  Var gelu(Var a) {
    const Mat& X = value(a);
    Mat out = X.unaryExpr([](T x) { return gelu_value(x); });
    return emit(std::move(out), {a}, [this, a](const Mat& g) {
      if (!needs_grad(a)) return;
      Mat d = value(a).unaryExpr([](T x) { return gelu_deriv(x); });
      acc(a, g.cwiseProduct(d));
    });
  }

  Var sigmoid(Var a) {
    Mat out = value(a).unaryExpr([](T x) { return sigmoid_value(x); });
    const int id = static_cast<int>(nodes_.size());
    return emit(std::move(out), {a}, [this, a, id](const Mat& g) {
      if (!needs_grad(a)) return;
      const Mat& y = nodes_[id].value;
      acc(a, g.cwiseProduct(y.cwiseProduct((Mat::Ones(y.rows(), y.cols()) - y))));
    });
  }

  // Row-wise layer normalisation with affine gamma/beta (1 x cols each).
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const Mat& X = value(x);
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    if (value(gamma).cols() != d || value(beta).cols() != d)
      throw ShapeError("layer_norm: affine shape mismatch");
    Mat xhat(n, d);
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const T mu = X.row(r).mean();
      const T var = (X.row(r).array() - mu).square().mean();
      inv_std(r) = T(1) / std::sqrt(var + eps);
      xhat.row(r) = (X.row(r).array() - mu) * inv_std(r);
    }
    Mat out = xhat.array().rowwise() * value(gamma).row(0).array();
    out.rowwise() += value(beta).row(0);
    return emit(std::move(out), {x, gamma, beta},
                [this, x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    const Mat& g) {
                  if (needs_grad(gamma)) acc(gamma, g.cwiseProduct(xhat).colwise().sum());
                  if (needs_grad(beta)) acc(beta, g.colwise().sum());
                  if (!needs_grad(x)) return;
                  Mat dxhat = g.array().rowwise() * value(gamma).row(0).array();
                  Mat dx(dxhat.rows(), dxhat.cols());
                  for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                    const T m1 = dxhat.row(r).mean();
                    const T m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<T>(dxhat.cols());
                    dx.row(r) =
                        (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                  }
                  acc(x, dx);
                });
  }

  // Row-wise x / sqrt(|x|^2 + eps).
  Var l2_normalize_rows(Var x, T eps = T(1e-12)) {
    const Mat& X = value(x);
    Eigen::Matrix<T, Eigen::Dynamic, 1> norms(X.rows());
    Mat out(X.rows(), X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      norms(r) = std::sqrt(X.row(r).squaredNorm() + eps);
      out.row(r) = X.row(r) / norms(r);
    }
    const int id = static_cast<int>(nodes_.size());
    return emit(std::move(out), {x}, [this, x, id, norms = std::move(norms)](const Mat& g) {
      if (!needs_grad(x)) return;
      const Mat& y = nodes_[id].value;
      Mat dx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const T proj = y.row(r).dot(g.row(r));
        dx.row(r) = (g.row(r) - y.row(r) * proj) / norms(r);
      }
      acc(x, dx);
    });
  }

  // Inverted dropout with a mask drawn from rng. Identity when p == 0.
  Var dropout(Var x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw InvalidInput("dropout probability must be < 1");
    std::bernoulli_distribution keep(1.0 - p);
    const Mat& X = value(x);
    Mat mask(X.rows(), X.cols());
    const T s = T(1) / static_cast<T>(1.0 - p);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : T(0);
    return mul(x, constant(std::move(mask)));
  }

  // ------------------------------------------------------------ structural

  Var gather_rows(Var x, std::vector<int> idx) {
    const Mat& X = value(x);
    Mat out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= X.rows()) throw ShapeError("gather_rows: index out of range");
      out.row(static_cast<Eigen::Index>(i)) = X.row(idx[i]);
    }
    return emit(std::move(out), {x}, [this, x, idx = std::move(idx)](const Mat& g) {
      if (!needs_grad(x)) return;
      Mat dx = Mat::Zero(value(x).rows(), value(x).cols());
      for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
      acc(x, dx);
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Eigen::Index rows = 0;
    const Eigen::Index cols = value(parts[0]).cols();
    for (Var p : parts) {
      if (value(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
      rows += value(p).rows();
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
      out.middleRows(r, value(p).rows()) = value(p);
      r += value(p).rows();
    }
    return emit(std::move(out), parts, [this, parts](const Mat& g) {
      Eigen::Index r0 = 0;
      for (Var p : parts) {
        const Eigen::Index n = value(p).rows();
        if (needs_grad(p)) acc(p, g.middleRows(r0, n));
        r0 += n;
      }
    });
  }

  Var concat_cols(Var a, Var b) {
    if (value(a).rows() != value(b).rows()) throw ShapeError("concat_cols: row mismatch");
    const Eigen::Index ca = value(a).cols();
    const Eigen::Index cb = value(b).cols();
    Mat out(value(a).rows(), ca + cb);
    out.leftCols(ca) = value(a);
    out.rightCols(cb) = value(b);
    return emit(std::move(out), {a, b}, [this, a, b, ca, cb](const Mat& g) {
      if (needs_grad(a)) acc(a, g.leftCols(ca));
      if (needs_grad(b)) acc(b, g.rightCols(cb));
    });
  }

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count <= 0 || start + count > value(a).cols())
      throw ShapeError("slice_cols: range out of bounds");
    Mat out = value(a).middleCols(start, count);
    return emit(std::move(out), {a}, [this, a, start, count](const Mat& g) {
      if (!needs_grad(a)) return;
      Mat d = Mat::Zero(value(a).rows(), value(a).cols());
      d.middleCols(start, count) = g;
      acc(a, d);
    });
  }

  // ------------------------------------------------------------- attention

  // Multi-head scaled dot-product attention over `n_seq` independent
  // sequences. q holds n_seq * lq rows, k and v hold n_seq * lk rows. When
  // probs_out is given, the per-(sequence, head) softmax maps are copied out.
  Var attention(Var q, Var k, Var v, int n_seq, int heads,
                std::vector<Mat>* probs_out = nullptr) {
    const Mat& Q = value(q);
    const Mat& K = value(k);
    const Mat& V = value(v);
    const Eigen::Index d = Q.cols();
    if (K.cols() != d || V.cols() != d || K.rows() != V.rows())
      throw ShapeError("attention: q/k/v feature mismatch");
    if (n_seq <= 0 || Q.rows() % n_seq != 0 || K.rows() % n_seq != 0)
      throw ShapeError("attention: rows not divisible by sequence count");
    if (heads <= 0 || d % heads != 0) throw ShapeError("attention: dim not divisible by heads");
    const Eigen::Index lq = Q.rows() / n_seq;
    const Eigen::Index lk = K.rows() / n_seq;
    const Eigen::Index dh = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

    std::vector<Mat> probs(static_cast<std::size_t>(n_seq) * heads);
    Mat out(Q.rows(), d);
    for (int s = 0; s < n_seq; ++s) {
      for (int h = 0; h < heads; ++h) {
        auto qs = Q.block(s * lq, h * dh, lq, dh);
        auto ks = K.block(s * lk, h * dh, lk, dh);
        auto vs = V.block(s * lk, h * dh, lk, dh);
        Mat p = (qs * ks.transpose()) * inv_sqrt;
        softmax_rows_inplace(p);
        out.block(s * lq, h * dh, lq, dh).noalias() = p * vs;
        probs[static_cast<std::size_t>(s) * heads + h] = std::move(p);
      }
    }
    if (probs_out != nullptr) *probs_out = probs;
    return emit(std::move(out), {q, k, v},
                [this, q, k, v, n_seq, heads, lq, lk, dh, inv_sqrt,
                 probs = std::move(probs)](const Mat& g) {
                  const bool gq = needs_grad(q), gk = needs_grad(k), gv = needs_grad(v);
                  const Mat& Q = value(q);
                  const Mat& K = value(k);
                  const Mat& V = value(v);
                  Mat dQ, dK, dV;
                  if (gq) dQ = Mat::Zero(Q.rows(), Q.cols());
                  if (gk) dK = Mat::Zero(K.rows(), K.cols());
                  if (gv) dV = Mat::Zero(V.rows(), V.cols());
                  for (int s = 0; s < n_seq; ++s) {
                    for (int h = 0; h < heads; ++h) {
                      const Mat& p = probs[static_cast<std::size_t>(s) * heads + h];
                      auto go = g.block(s * lq, h * dh, lq, dh);
                      auto vs = V.block(s * lk, h * dh, lk, dh);
                      if (gv) dV.block(s * lk, h * dh, lk, dh).noalias() += p.transpose() * go;
                      if (!gq && !gk) continue;
                      Mat dp = go * vs.transpose();
                      Eigen::Matrix<T, Eigen::Dynamic, 1> rs = dp.cwiseProduct(p).rowwise().sum();
                      Mat ds = p.cwiseProduct(dp.colwise() - rs) * inv_sqrt;
                      if (gq) dQ.block(s * lq, h * dh, lq, dh).noalias() += ds * K.block(s * lk, h * dh, lk, dh);
                      if (gk) dK.block(s * lk, h * dh, lk, dh).noalias() += ds.transpose() * Q.block(s * lq, h * dh, lq, dh);
                    }
                  }
                  if (gq) acc(q, dQ);
                  if (gk) acc(k, dK);
                  if (gv) acc(v, dV);
                });
  }

  // ---------------------------------------------------------------- losses

  // Mean squared error over the listed rows of pred against a constant
  // target; normalised by rows.size() * cols.
  Var masked_mse(Var pred, const Mat& target, std::vector<int> rows) {
    const Mat& P = value(pred);
    if (P.rows() != target.rows() || P.cols() != target.cols())
      throw ShapeError(shape_msg("masked_mse", P, target));
    if (rows.empty()) throw InvalidInput("masked_mse: empty masked set");
    const T denom = static_cast<T>(rows.size()) * static_cast<T>(P.cols());
    T total = 0;
    Mat diff = Mat::Zero(P.rows(), P.cols());
    for (int r : rows) {
      diff.row(r) = P.row(r) - target.row(r);
      total += diff.row(r).squaredNorm();
    }
    Mat out = Mat::Constant(1, 1, total / denom);
    return emit(std::move(out), {pred}, [this, pred, denom, diff = std::move(diff)](const Mat& g) {
      if (needs_grad(pred)) acc(pred, diff * (T(2) * g(0, 0) / denom));
    });
  }

  // NT-Xent over 2N L2-normalised rows; row i and row i+N are the positives.
  Var nt_xent(Var z, T tau) {
    if (!(tau > T(0))) throw InvalidInput("nt_xent: temperature must be positive");
    const Mat& Z = value(z);
    if (Z.rows() < 2 || Z.rows() % 2 != 0) throw ShapeError("nt_xent: expected 2N rows");
    const Eigen::Index n2 = Z.rows();
    const Eigen::Index n = n2 / 2;
    Mat logits = (Z * Z.transpose()) / tau;
    Mat soft = Mat::Zero(n2, n2);
    T total = 0;
    for (Eigen::Index i = 0; i < n2; ++i) {
      const Eigen::Index pos = (i + n) % n2;
      T mx = -std::numeric_limits<T>::infinity();
      for (Eigen::Index k = 0; k < n2; ++k)
        if (k != i) mx = std::max(mx, logits(i, k));
      T se = 0;
      for (Eigen::Index k = 0; k < n2; ++k) {
        if (k == i) continue;
        soft(i, k) = std::exp(logits(i, k) - mx);
        se += soft(i, k);
      }
      soft.row(i) /= se;
      total += -(logits(i, pos) - mx - std::log(se));
    }
    Mat out = Mat::Constant(1, 1, total / static_cast<T>(n2));
    return emit(std::move(out), {z}, [this, z, n, n2, tau, soft = std::move(soft)](const Mat& g) {
      if (!needs_grad(z)) return;
      Mat ds = soft;
      for (Eigen::Index i = 0; i < n2; ++i) ds(i, (i + n) % n2) -= T(1);
      ds *= g(0, 0) / static_cast<T>(n2);
      Mat sym = ds + ds.transpose();
      acc(z, (sym * value(z)) / tau);
    });
  }

  // ------------------------------------------------------- scalar kernels

  static T gelu_value(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  }
  static T gelu_deriv(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * x * x) * (std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>);
    return cdf + x * pdf;
  }
  static T sigmoid_value(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  }
  static void softmax_rows_inplace(Mat& p) {
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const T mx = p.row(r).maxCoeff();
      p.row(r) = (p.row(r).array() - mx).exp();
      p.row(r) /= p.row(r).sum();
    }
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void()> backward;
    Parameter<T>* param = nullptr;
  };

  Var push(Mat value, bool ng, std::function<void()> bw) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = ng;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // Registers an op result; the backward closure is dropped when no input
  // needs a gradient or the tape is not recording.
  template <typename F>
  Var emit(Mat value, std::initializer_list<Var> inputs, F&& bw) {
    return emit_impl(std::move(value), inputs.begin(), inputs.end(), std::forward<F>(bw));
  }
  template <typename F>
  Var emit(Mat value, const std::vector<Var>& inputs, F&& bw) {
    return emit_impl(std::move(value), inputs.begin(), inputs.end(), std::forward<F>(bw));
  }
  template <typename It, typename F>
  Var emit_impl(Mat value, It first, It last, F&& bw) {
    bool ng = false;
    if (record_)
      for (It it = first; it != last; ++it)
        if (it->valid() && nodes_[it->id].needs_grad) ng = true;
    if (!ng) return push(std::move(value), false, nullptr);
    const int id = static_cast<int>(nodes_.size());
    return push(std::move(value), true,
                [this, id, fn = std::forward<F>(bw)]() { fn(nodes_[id].grad); });
  }

  template <typename Derived>
  void acc(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  void check_same(const char* op, Var a, Var b) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw ShapeError(shape_msg(op, value(a), value(b)));
  }

  static std::string shape_msg(const char* op, const Mat& a, const Mat& b) {
    return std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) + "x" +
           std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
           std::to_string(b.cols());
  }

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace ag
}  // namespace btc
