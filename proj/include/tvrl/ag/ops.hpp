#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "tvrl/ag/tape.hpp"

namespace tvrl::ag {

template <class T>
inline Var<T> make_op(Tape<T>& t, bool parents_require) {
  Var<T> n = t.alloc();
  n->requires_grad = t.grad_enabled() && parents_require;
  return n;
}

// ---------------------------------------------------------------------------
// Matrix products

template <class T>
Var<T> matmul(Tape<T>& t, Var<T> a, Var<T> b) {
  if (a->value.cols() != b->value.rows())
    throw contract_error("matmul: inner dimensions differ");
  Var<T> out = make_op(t, a->requires_grad || b->requires_grad);
  out->value.noalias() = a->value * b->value;
  if (out->requires_grad)
    out->backprop = [out, a, b] {
      if (a->requires_grad) {
        ensure_grad(a);
        a->grad.noalias() += out->grad * b->value.transpose();
      }
      if (b->requires_grad) {
        ensure_grad(b);
        b->grad.noalias() += a->value.transpose() * out->grad;
      }
    };
  return out;
}

/// a * b^T. Handles a == b (both contributions accumulate).
template <class T>
Var<T> matmul_nt(Tape<T>& t, Var<T> a, Var<T> b) {
  if (a->value.cols() != b->value.cols())
    throw contract_error("matmul_nt: column counts differ");
  Var<T> out = make_op(t, a->requires_grad || b->requires_grad);
  out->value.noalias() = a->value * b->value.transpose();
  if (out->requires_grad)
    out->backprop = [out, a, b] {
      if (a->requires_grad) {
        ensure_grad(a);
        a->grad.noalias() += out->grad * b->value;
      }
      if (b->requires_grad) {
        ensure_grad(b);
        b->grad.noalias() += out->grad.transpose() * a->value;
      }
    };
  return out;
}

/// x @ W^T + b, with W (out x in) and b (1 x out) broadcast over rows.
template <class T>
Var<T> linear(Tape<T>& t, Var<T> x, Var<T> w, Var<T> b) {
  if (x->value.cols() != w->value.cols())
    throw contract_error("linear: input width does not match weight");
  if (b->value.rows() != 1 || b->value.cols() != w->value.rows())
    throw contract_error("linear: bias shape mismatch");
  Var<T> out = make_op(t, x->requires_grad || w->requires_grad || b->requires_grad);
  out->value.noalias() = x->value * w->value.transpose();
  out->value.rowwise() += b->value.row(0);
  if (out->requires_grad)
    out->backprop = [out, x, w, b] {
      if (x->requires_grad) {
        ensure_grad(x);
        x->grad.noalias() += out->grad * w->value;
      }
      if (w->requires_grad) {
        ensure_grad(w);
        w->grad.noalias() += out->grad.transpose() * x->value;
      }
      if (b->requires_grad) {
        ensure_grad(b);
        b->grad.row(0) += out->grad.colwise().sum();
      }
    };
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise and affine

template <class T>
Var<T> add(Tape<T>& t, Var<T> a, Var<T> b) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw contract_error("add: shape mismatch");
  Var<T> out = make_op(t, a->requires_grad || b->requires_grad);
  out->value = a->value + b->value;
  if (out->requires_grad)
    out->backprop = [out, a, b] {
      accum(a, out->grad);
      accum(b, out->grad);
    };
  return out;
}

template <class T>
Var<T> sub(Tape<T>& t, Var<T> a, Var<T> b) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw contract_error("sub: shape mismatch");
  Var<T> out = make_op(t, a->requires_grad || b->requires_grad);
  out->value = a->value - b->value;
  if (out->requires_grad)
    out->backprop = [out, a, b] {
      accum(a, out->grad);
      if (b->requires_grad) {
        ensure_grad(b);
        b->grad -= out->grad;
      }
    };
  return out;
}

/// alpha * x + beta (elementwise).
template <class T>
Var<T> affine(Tape<T>& t, Var<T> x, T alpha, T beta) {
  Var<T> out = make_op(t, x->requires_grad);
  out->value = (x->value.array() * alpha + beta).matrix();
  if (out->requires_grad)
    out->backprop = [out, x, alpha] {
      if (!x->requires_grad) return;
      ensure_grad(x);
      x->grad += alpha * out->grad;
    };
  return out;
}

template <class T>
Var<T> scale(Tape<T>& t, Var<T> x, T alpha) {
  return affine(t, x, alpha, T(0));
}

/// Stop-gradient: a constant copy of x's value.
template <class T>
Var<T> detach(Tape<T>& t, Var<T> x) {
  return t.constant(x->value);
}

// ---------------------------------------------------------------------------
// Shape ops

template <class T>
Var<T> cols_slice(Tape<T>& t, Var<T> x, int c0, int width) {
  if (c0 < 0 || c0 + width > x->value.cols())
    throw contract_error("cols_slice: range out of bounds");
  Var<T> out = make_op(t, x->requires_grad);
  out->value = x->value.middleCols(c0, width);
  if (out->requires_grad)
    out->backprop = [out, x, c0, width] {
      ensure_grad(x);
      x->grad.middleCols(c0, width) += out->grad;
    };
  return out;
}

template <class T>
Var<T> gather_rows(Tape<T>& t, Var<T> x, std::vector<int> idx) {
  for (int i : idx)
    if (i < 0 || i >= x->value.rows())
      throw contract_error("gather_rows: index out of range");
  Var<T> out = make_op(t, x->requires_grad);
  out->value.resize(static_cast<int>(idx.size()), x->value.cols());
  for (size_t r = 0; r < idx.size(); ++r) out->value.row(r) = x->value.row(idx[r]);
  if (out->requires_grad)
    out->backprop = [out, x, idx = std::move(idx)] {
      ensure_grad(x);
      for (size_t r = 0; r < idx.size(); ++r)
        x->grad.row(idx[r]) += out->grad.row(r);
    };
  return out;
}

/// y_i = x(i, cols[i]); one element per row.
template <class T>
Var<T> pick_per_row(Tape<T>& t, Var<T> x, std::vector<int> cols) {
  if (static_cast<int>(cols.size()) != x->value.rows())
    throw contract_error("pick_per_row: one index per row required");
  for (int c : cols)
    if (c < 0 || c >= x->value.cols())
      throw contract_error("pick_per_row: column out of range");
  Var<T> out = make_op(t, x->requires_grad);
  out->value.resize(x->value.rows(), 1);
  for (int i = 0; i < x->value.rows(); ++i) out->value(i, 0) = x->value(i, cols[i]);
  if (out->requires_grad)
    out->backprop = [out, x, cols = std::move(cols)] {
      ensure_grad(x);
      for (size_t i = 0; i < cols.size(); ++i)
        x->grad(static_cast<int>(i), cols[i]) += out->grad(static_cast<int>(i), 0);
    };
  return out;
}

template <class T>
Var<T> mean_all(Tape<T>& t, Var<T> x) {
  Var<T> out = make_op(t, x->requires_grad);
  out->value.resize(1, 1);
  out->value(0, 0) = x->value.mean();
  if (out->requires_grad)
    out->backprop = [out, x] {
      ensure_grad(x);
      x->grad.array() += out->grad(0, 0) / static_cast<T>(x->value.size());
    };
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities

/// GELU, tanh approximation (the variant commonly used in ViT stacks):
/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class T>
Var<T> gelu(Tape<T>& t, Var<T> x) {
  static constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T kA = T(0.044715);
  Var<T> out = make_op(t, x->requires_grad);
  auto xs = x->value.array();
  auto ctx = std::make_shared<Mat<T>>();
  *ctx = (kC * (xs + kA * xs.cube())).tanh().matrix();
  out->value = (T(0.5) * xs * (ctx->array() + T(1))).matrix();
  if (!out->requires_grad) {
    ctx->resize(0, 0);
    return out;
  }
  out->backprop = [out, x, ctx]() mutable {
    ensure_grad(x);
    auto xs2 = x->value.array();
    auto th = ctx->array();
    x->grad.array() += out->grad.array() *
                       (T(0.5) * (T(1) + th) +
                        T(0.5) * xs2 * (T(1) - th.square()) * kC *
                            (T(1) + T(3) * kA * xs2.square()));
    ctx->resize(0, 0);
  };
  return out;
}

/// x * sigmoid(x).
template <class T>
Var<T> silu(Tape<T>& t, Var<T> x) {
  Var<T> out = make_op(t, x->requires_grad);
  auto ctx = std::make_shared<Mat<T>>();
  *ctx = (T(1) / (T(1) + (-x->value.array()).exp())).matrix();
  out->value = (x->value.array() * ctx->array()).matrix();
  if (!out->requires_grad) {
    ctx->resize(0, 0);
    return out;
  }
  out->backprop = [out, x, ctx]() mutable {
    ensure_grad(x);
    auto s = ctx->array();
    x->grad.array() +=
        out->grad.array() * (s * (T(1) + x->value.array() * (T(1) - s)));
    ctx->resize(0, 0);
  };
  return out;
}

template <class T>
Var<T> relu(Tape<T>& t, Var<T> x) {
  Var<T> out = make_op(t, x->requires_grad);
  out->value = x->value.cwiseMax(T(0));
  if (out->requires_grad)
    out->backprop = [out, x] {
      ensure_grad(x);
      x->grad.array() +=
          out->grad.array() * (x->value.array() > T(0)).template cast<T>();
    };
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Row-wise layer norm with learnable gain g and bias b (both 1 x d).
template <class T>
Var<T> layer_norm(Tape<T>& t, Var<T> x, Var<T> g, Var<T> b, T eps = T(1e-5)) {
  const int d = static_cast<int>(x->value.cols());
  if (g->value.cols() != d || b->value.cols() != d)
    throw contract_error("layer_norm: gain/bias width mismatch");
  Var<T> out = make_op(t, x->requires_grad || g->requires_grad || b->requires_grad);
  auto xhat = std::make_shared<Mat<T>>(x->value.rows(), d);
  auto inv = std::make_shared<Mat<T>>(x->value.rows(), 1);
  for (int i = 0; i < x->value.rows(); ++i) {
    T mu = x->value.row(i).mean();
    T var = (x->value.row(i).array() - mu).square().mean();
    T is = T(1) / std::sqrt(var + eps);
    (*inv)(i, 0) = is;
    xhat->row(i) = ((x->value.row(i).array() - mu) * is).matrix();
  }
  out->value = (xhat->array().rowwise() * g->value.row(0).array()).rowwise() +
               b->value.row(0).array();
  if (!out->requires_grad) {
    xhat->resize(0, 0);
    return out;
  }
  out->backprop = [out, x, g, b, xhat, inv]() mutable {
    const int dd = static_cast<int>(xhat->cols());
    if (g->requires_grad) {
      ensure_grad(g);
      g->grad.row(0) += (out->grad.array() * xhat->array()).colwise().sum().matrix();
    }
    if (b->requires_grad) {
      ensure_grad(b);
      b->grad.row(0) += out->grad.colwise().sum();
    }
    if (x->requires_grad) {
      ensure_grad(x);
      Mat<T> h = (out->grad.array().rowwise() * g->value.row(0).array()).matrix();
      for (int i = 0; i < h.rows(); ++i) {
        T mh = h.row(i).mean();
        T mhx = (h.row(i).array() * xhat->row(i).array()).mean();
        x->grad.row(i) +=
            ((h.row(i).array() - mh - xhat->row(i).array() * mhx) * (*inv)(i, 0))
                .matrix();
      }
    }
    xhat->resize(0, 0);
    inv->resize(0, 0);
    (void)dd;
  };
  return out;
}

/// Row-wise L2 normalization with an epsilon clamp on the norm: rows whose
/// norm falls below eps are scaled by 1/eps instead (documented numeric
/// guard; keeps zero rows at zero).
template <class T>
Var<T> normalize_rows(Tape<T>& t, Var<T> x, T eps = T(1e-12)) {
  Var<T> out = make_op(t, x->requires_grad);
  const int n = static_cast<int>(x->value.rows());
  auto inv = std::make_shared<Mat<T>>(n, 1);
  auto clamped = std::make_shared<std::vector<char>>(n, 0);
  out->value.resizeLike(x->value);
  for (int i = 0; i < n; ++i) {
    T nrm = x->value.row(i).norm();
    if (nrm < eps) {
      (*clamped)[i] = 1;
      nrm = eps;
    }
    (*inv)(i, 0) = T(1) / nrm;
    out->value.row(i) = x->value.row(i) * (*inv)(i, 0);
  }
  if (!out->requires_grad) return out;
  out->backprop = [out, x, inv, clamped]() mutable {
    ensure_grad(x);
    for (int i = 0; i < out->grad.rows(); ++i) {
      if ((*clamped)[i]) {
        x->grad.row(i) += out->grad.row(i) * (*inv)(i, 0);
      } else {
        T dot = out->grad.row(i).dot(out->value.row(i));
        x->grad.row(i) +=
            (out->grad.row(i) - out->value.row(i) * dot) * (*inv)(i, 0);
      }
    }
    inv->resize(0, 0);
  };
  return out;
}

/// y_i = a_i . b_i per row, returned as n x 1.
template <class T>
Var<T> rowwise_dot(Tape<T>& t, Var<T> a, Var<T> b) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw contract_error("rowwise_dot: shape mismatch");
  Var<T> out = make_op(t, a->requires_grad || b->requires_grad);
  out->value = (a->value.array() * b->value.array()).rowwise().sum().matrix();
  if (out->requires_grad)
    out->backprop = [out, a, b] {
      if (a->requires_grad) {
        ensure_grad(a);
        a->grad += (b->value.array().colwise() * out->grad.col(0).array()).matrix();
      }
      if (b->requires_grad) {
        ensure_grad(b);
        b->grad += (a->value.array().colwise() * out->grad.col(0).array()).matrix();
      }
    };
  return out;
}

/// Per-row log-sum-exp over the off-diagonal entries of a square matrix
/// (max-subtracted). The diagonal never contributes, which is exactly the
/// "k != i" constraint of the contrastive denominator.
template <class T>
Var<T> lse_rows_offdiag(Tape<T>& t, Var<T> x) {
  const int n = static_cast<int>(x->value.rows());
  if (x->value.cols() != n) throw contract_error("lse_rows_offdiag: square input required");
  if (n < 2) throw contract_error("lse_rows_offdiag: needs at least 2 rows");
  Var<T> out = make_op(t, x->requires_grad);
  out->value.resize(n, 1);
  for (int i = 0; i < n; ++i) {
    T m = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < n; ++j)
      if (j != i) m = std::max(m, x->value(i, j));
    T s = T(0);
    for (int j = 0; j < n; ++j)
      if (j != i) s += std::exp(x->value(i, j) - m);
    out->value(i, 0) = m + std::log(s);
  }
  if (out->requires_grad)
    out->backprop = [out, x] {
      ensure_grad(x);
      const int nn = static_cast<int>(out->value.rows());
      for (int i = 0; i < nn; ++i) {
        T gi = out->grad(i, 0);
        if (gi == T(0)) continue;
        for (int j = 0; j < nn; ++j)
          if (j != i)
            x->grad(i, j) += gi * std::exp(x->value(i, j) - out->value(i, 0));
      }
    };
  return out;
}

// ---------------------------------------------------------------------------
// Attention

/// Multi-head self-attention over a batch of independent row blocks.
///
/// q, k, v are (B*S) x D with B consecutive blocks of S rows each. Heads
/// split D into H slices. `prefix_len`, when nonempty, gives per block the
/// number of leading rows that are valid keys; the remaining rows are
/// excluded from every softmax (padding is never attended to). Queries are
/// computed for all rows; outputs at padded rows are unused downstream.
template <class T>
Var<T> block_attention(Tape<T>& t, Var<T> q, Var<T> k, Var<T> v, int block_rows,
                       int heads, const std::vector<int>& prefix_len = {}) {
  const int total = static_cast<int>(q->value.rows());
  const int dim = static_cast<int>(q->value.cols());
  if (total % block_rows != 0)
    throw contract_error("block_attention: rows not a multiple of block size");
  if (dim % heads != 0) throw contract_error("block_attention: dim % heads != 0");
  const int nblocks = total / block_rows;
  if (!prefix_len.empty() && static_cast<int>(prefix_len.size()) != nblocks)
    throw contract_error("block_attention: one prefix length per block required");
  for (int pl : prefix_len)
    if (pl < 1 || pl > block_rows)
      throw contract_error("block_attention: prefix length out of range");
  const int dh = dim / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

  Var<T> out =
      make_op(t, q->requires_grad || k->requires_grad || v->requires_grad);
  out->value.setZero(total, dim);
  auto probs = std::make_shared<std::vector<Mat<T>>>();
  probs->reserve(static_cast<size_t>(nblocks) * heads);
  Mat<T> scores;
  for (int b = 0; b < nblocks; ++b) {
    const int keys = prefix_len.empty() ? block_rows : prefix_len[b];
    const int r0 = b * block_rows;
    for (int h = 0; h < heads; ++h) {
      const int c0 = h * dh;
      scores.noalias() = q->value.block(r0, c0, block_rows, dh) *
                         k->value.block(r0, c0, keys, dh).transpose();
      scores *= inv_sqrt;
      for (int i = 0; i < block_rows; ++i) {
        T m = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - m).exp();
        scores.row(i) /= scores.row(i).sum();
      }
      out->value.block(r0, c0, block_rows, dh).noalias() =
          scores * v->value.block(r0, c0, keys, dh);
      probs->push_back(scores);
    }
  }
  if (!out->requires_grad) {
    probs->clear();
    return out;
  }
  std::vector<int> prefix = prefix_len;
  out->backprop = [out, q, k, v, probs, nblocks, block_rows, heads, dh, inv_sqrt,
                   prefix = std::move(prefix)]() mutable {
    Mat<T> dq, dk, dv;
    if (q->requires_grad) dq.setZero(out->grad.rows(), out->grad.cols());
    if (k->requires_grad) dk.setZero(out->grad.rows(), out->grad.cols());
    if (v->requires_grad) dv.setZero(out->grad.rows(), out->grad.cols());
    Mat<T> dP, dS;
    for (int b = 0; b < nblocks; ++b) {
      const int keys = prefix.empty() ? block_rows : prefix[b];
      const int r0 = b * block_rows;
      for (int h = 0; h < heads; ++h) {
        const int c0 = h * dh;
        const Mat<T>& P = (*probs)[static_cast<size_t>(b) * heads + h];
        auto dO = out->grad.block(r0, c0, block_rows, dh);
        dP.noalias() = dO * v->value.block(r0, c0, keys, dh).transpose();
        // softmax jacobian: dS = (dP - rowsum(dP .* P)) .* P
        dS = dP;
        for (int i = 0; i < block_rows; ++i) {
          T rs = dP.row(i).dot(P.row(i));
          dS.row(i) = ((dP.row(i).array() - rs) * P.row(i).array()).matrix();
        }
        if (q->requires_grad)
          dq.block(r0, c0, block_rows, dh).noalias() +=
              (dS * k->value.block(r0, c0, keys, dh)) * inv_sqrt;
        if (k->requires_grad)
          dk.block(r0, c0, keys, dh).noalias() +=
              (dS.transpose() * q->value.block(r0, c0, block_rows, dh)) * inv_sqrt;
        if (v->requires_grad)
          dv.block(r0, c0, keys, dh).noalias() += P.transpose() * dO;
      }
    }
    if (q->requires_grad) accum(q, dq);
    if (k->requires_grad) accum(k, dk);
    if (v->requires_grad) accum(v, dv);
    probs->clear();
  };
  return out;
}

// ---------------------------------------------------------------------------
// Scalar losses over columns

/// Mean binary cross entropy with logits; targets are 0/1 constants (n x 1).
template <class T>
Var<T> bce_with_logits(Tape<T>& t, Var<T> logits, const Mat<T>& targets) {
  const int n = static_cast<int>(logits->value.rows());
  if (logits->value.cols() != 1 || targets.rows() != n || targets.cols() != 1)
    throw contract_error("bce_with_logits: expects n x 1 logits and targets");
  if (n == 0) throw contract_error("bce_with_logits: empty batch");
  Var<T> out = make_op(t, logits->requires_grad);
  T acc = T(0);
  for (int i = 0; i < n; ++i) {
    T z = logits->value(i, 0), y = targets(i, 0);
    // max(z,0) - y z + log(1 + exp(-|z|)), the numerically stable form
    acc += std::max(z, T(0)) - y * z + std::log1p(std::exp(-std::abs(z)));
  }
  out->value.resize(1, 1);
  out->value(0, 0) = acc / static_cast<T>(n);
  if (out->requires_grad) {
    Mat<T> y = targets;
    out->backprop = [out, logits, y = std::move(y), n] {
      ensure_grad(logits);
      for (int i = 0; i < n; ++i) {
        T z = logits->value(i, 0);
        T p = T(1) / (T(1) + std::exp(-z));
        logits->grad(i, 0) += out->grad(0, 0) * (p - y(i, 0)) / static_cast<T>(n);
      }
    };
  }
  return out;
}

/// Mean squared error against constant targets of the same shape.
template <class T>
Var<T> mse_loss(Tape<T>& t, Var<T> pred, const Mat<T>& targets) {
  if (pred->value.rows() != targets.rows() || pred->value.cols() != targets.cols())
    throw contract_error("mse_loss: shape mismatch");
  if (pred->value.size() == 0) throw contract_error("mse_loss: empty input");
  Var<T> out = make_op(t, pred->requires_grad);
  out->value.resize(1, 1);
  out->value(0, 0) = (pred->value - targets).array().square().mean();
  if (out->requires_grad) {
    Mat<T> y = targets;
    out->backprop = [out, pred, y = std::move(y)] {
      ensure_grad(pred);
      pred->grad += out->grad(0, 0) * T(2) / static_cast<T>(pred->value.size()) *
                    (pred->value - y);
    };
  }
  return out;
}

}  // namespace tvrl::ag
