#pragma once

#include <json.hpp>
#include <string>

#include "tvrl/ag/ops.hpp"
#include "tvrl/nn/params.hpp"

namespace tvrl {

/// Loss hyperparameters. The temperature and projection widths are not
/// reported in the source protocol; defaults follow the cited contrastive
/// setups and are configurable.
struct LossConfig {
  double temperature = 0.1;
  double lambda_weight = 0.5;
  double mask_ratio = 0.15;
  int projection_dim = 128;

  void validate() const {
    if (!(temperature > 0)) throw config_error("loss: temperature must be > 0");
    if (lambda_weight < 0 || lambda_weight > 1)
      throw config_error("loss: lambda must lie in [0,1]");
    if (!(mask_ratio > 0) || !(mask_ratio < 1))
      throw config_error("loss: mask_ratio must lie in (0,1)");
    if (projection_dim < 1) throw config_error("loss: projection_dim must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"temperature", c.temperature},
                     {"lambda_weight", c.lambda_weight},
                     {"mask_ratio", c.mask_ratio},
                     {"projection_dim", c.projection_dim}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  LossConfig d;
  c.temperature = j.value("temperature", d.temperature);
  c.lambda_weight = j.value("lambda_weight", d.lambda_weight);
  c.mask_ratio = j.value("mask_ratio", d.mask_ratio);
  c.projection_dim = j.value("projection_dim", d.projection_dim);
}

/// Two-layer nonlinear projection (Linear -> ReLU -> Linear). The contrastive
/// head p and the reconstruction head q are separate instances with separate
/// parameters; q maps back to the encoder width so its outputs compare
/// against spatial tokens.
template <class T>
class ProjectionHead {
 public:
  ProjectionHead(const std::string& name, int in_dim, int hidden, int out_dim,
                 uint64_t seed)
      : in_dim_(in_dim), out_dim_(out_dim), store_(seed) {
    w1_ = &store_.add(name + ".w1", hidden, in_dim, nn::Init::kNormal002);
    b1_ = &store_.add(name + ".b1", 1, hidden, nn::Init::kZeros, true);
    w2_ = &store_.add(name + ".w2", out_dim, hidden, nn::Init::kNormal002);
    b2_ = &store_.add(name + ".b2", 1, out_dim, nn::Init::kZeros, true);
  }

  ag::Var<T> forward(ag::Tape<T>& t, ag::Var<T> x) {
    if (x->value.cols() != in_dim_)
      throw config_error("projection head: feature width mismatch");
    ag::Var<T> h = ag::relu(t, ag::linear(t, x, t.param(*w1_), t.param(*b1_)));
    return ag::linear(t, h, t.param(*w2_), t.param(*b2_));
  }

  /// Row-wise application without gradients.
  Mat<T> apply(const Mat<T>& features) {
    ag::Tape<T> t(false);
    return forward(t, t.constant(features))->value;
  }

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }

 private:
  int in_dim_, out_dim_;
  nn::ParamStore<T> store_;
  ag::Param<T>*w1_, *b1_, *w2_, *b2_;
};

/// Row-wise projection through a head; the spec-level convenience wrapper.
template <class T>
Mat<T> project(const Mat<T>& features, ProjectionHead<T>& head) {
  return head.apply(features);
}

/// Cosine similarity with an epsilon clamp on the norm product (zero vectors
/// yield 0 rather than NaN; the clamp is the documented numeric guard).
template <class T>
T cosine_similarity(const VecX<T>& a, const VecX<T>& b, T eps = T(1e-12)) {
  if (a.size() != b.size())
    throw contract_error("cosine_similarity: length mismatch");
  T denom = a.norm() * b.norm();
  return a.dot(b) / std::max(denom, eps);
}

// ---------------------------------------------------------------------------
// NT-Xent

/// Per-anchor NT-Xent terms over 2N projected rows arranged as N adjacent
/// positive pairs (rows 2k and 2k+1). Term i is
///   -log exp(sim(i, partner)/tau) / sum_{k != i} exp(sim(i,k)/tau)
/// computed as logsumexp_offdiag - positive, on cosine similarities.
template <class T>
ag::Var<T> ntxent_terms(ag::Tape<T>& t, ag::Var<T> projected, T tau) {
  const int rows = static_cast<int>(projected->value.rows());
  if (rows == 0) throw contract_error("ntxent_loss: empty batch");
  if (rows % 2 != 0)
    throw contract_error("ntxent_loss: rows must form adjacent pairs");
  if (rows < 2) throw contract_error("ntxent_loss: needs at least one pair");
  if (!(tau > 0)) throw config_error("ntxent_loss: temperature must be > 0");
  ag::Var<T> zn = ag::normalize_rows(t, projected);
  ag::Var<T> sim = ag::matmul_nt(t, zn, zn);
  ag::Var<T> logits = ag::scale(t, sim, T(1) / tau);
  std::vector<int> partner(rows);
  for (int i = 0; i < rows; ++i) partner[i] = i ^ 1;
  ag::Var<T> pos = ag::pick_per_row(t, logits, partner);
  ag::Var<T> lse = ag::lse_rows_offdiag(t, logits);
  return ag::sub(t, lse, pos);
}

/// Mean NT-Xent loss over all 2N anchors (symmetric form).
template <class T>
ag::Var<T> ntxent_loss_graph(ag::Tape<T>& t, ag::Var<T> projected, T tau) {
  return ag::mean_all(t, ntxent_terms(t, projected, tau));
}

/// Value-level API on a 2N x P matrix of projected views.
template <class T>
T ntxent_loss(const Mat<T>& projected, T tau) {
  ag::Tape<T> t(false);
  return ntxent_loss_graph(t, t.constant(projected), tau)->value(0, 0);
}

template <class T>
VecX<T> ntxent_anchor_terms(const Mat<T>& projected, T tau) {
  ag::Tape<T> t(false);
  return ntxent_terms(t, t.constant(projected), tau)->value.col(0);
}

// ---------------------------------------------------------------------------
// Masked latent-feature prediction

/// (1/m) sum_i (1 - cos(pred_i, target_i)). Targets are constants: no
/// gradient ever reaches them (stop-gradient contract). The raw printed form
/// of the objective is the mean similarity itself; it is negated into this
/// minimizable form so that smaller is better and 0 means perfect
/// reconstruction. Range [0, 2].
template <class T>
ag::Var<T> masked_prediction_loss_graph(ag::Tape<T>& t, ag::Var<T> pred,
                                        const Mat<T>& targets) {
  const int m = static_cast<int>(pred->value.rows());
  if (m == 0) throw contract_error("masked_prediction_loss: empty mask");
  if (targets.rows() != m || targets.cols() != pred->value.cols())
    throw contract_error("masked_prediction_loss: shape mismatch");
  Mat<T> tn(targets.rows(), targets.cols());
  for (int i = 0; i < targets.rows(); ++i) {
    T nrm = std::max(targets.row(i).norm(), T(1e-12));
    tn.row(i) = targets.row(i) / nrm;
  }
  ag::Var<T> pn = ag::normalize_rows(t, pred);
  ag::Var<T> cos = ag::rowwise_dot(t, pn, t.constant(tn));
  return ag::affine(t, ag::mean_all(t, cos), T(-1), T(1));
}

/// Overload taking the targets as a graph node; detaches internally so the
/// stop-gradient contract is part of the operation, not the call site.
template <class T>
ag::Var<T> masked_prediction_loss_graph(ag::Tape<T>& t, ag::Var<T> pred,
                                        ag::Var<T> targets) {
  return masked_prediction_loss_graph(t, pred, Mat<T>(targets->value));
}

template <class T>
T masked_prediction_loss(const Mat<T>& reconstructed, const Mat<T>& targets) {
  ag::Tape<T> t(false);
  return masked_prediction_loss_graph(t, t.constant(reconstructed), targets)
      ->value(0, 0);
}

// ---------------------------------------------------------------------------
// Combined temporally-variant representation loss

/// (1 - lambda) * contrastive + lambda * masked.
inline double tvrl_loss(double l_contrastive, double l_masked, double lambda) {
  if (lambda < 0 || lambda > 1) throw contract_error("tvrl_loss: lambda in [0,1]");
  return (1.0 - lambda) * l_contrastive + lambda * l_masked;
}

template <class T>
ag::Var<T> tvrl_loss_graph(ag::Tape<T>& t, ag::Var<T> l_contrastive,
                           ag::Var<T> l_masked, T lambda) {
  if (lambda < 0 || lambda > 1) throw contract_error("tvrl_loss: lambda in [0,1]");
  return ag::add(t, ag::scale(t, l_contrastive, T(1) - lambda),
                 ag::scale(t, l_masked, lambda));
}

}  // namespace tvrl
