#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "moem/math.hpp"
#include "moem/random.hpp"
#include "moem/types.hpp"

namespace moem {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Gating distribution P(z | x; w) over the k experts.
///
/// General models use the softmax of x'w_1, ..., x'w_k. Symmetric models
/// return (sigma(x'w), 1 - sigma(x'w)), ordered (z=+1, z=-1).
template <typename Scalar>
VectorX<Scalar> gating_probs(const VectorX<Scalar>& x, const MatrixX<Scalar>& gating, const ModelKind& kind) {
  kind.validate();
  if (gating.rows() != x.size() || gating.cols() != kind.columns())
    throw Error(ErrorCode::DimensionMismatch, "gating_probs: dimension mismatch");
  if (!x.allFinite() || !gating.allFinite()) throw Error(ErrorCode::NonFinite, "gating_probs: non-finite input");
  if (kind.symmetric()) {
    const Scalar a = x.dot(gating.col(0));
    VectorX<Scalar> p(2);
    p << sigmoid(a), sigmoid(-a);
    return p;
  }
  const VectorX<Scalar> logits = gating.transpose() * x;
  const Scalar lse = log_sum_exp(logits);
  return (logits.array() - lse).exp().matrix();
}

// log p(y | expert score s). Linear experts: N(y; s, 1). Logistic: sigma(y s).
template <typename Scalar>
Scalar expert_loglik_score(Scalar y, Scalar score, const ModelKind& kind) {
  if (kind.logistic()) {
    if (y != Scalar(1) && y != Scalar(-1)) throw Error(ErrorCode::InvalidTarget, "logistic target must be +1 or -1");
    return log_sigmoid(y * score);
  }
  const Scalar r = y - score;
  return -r * r / Scalar(2) - half_log_two_pi<Scalar>();
}

/// log p(y | x, z; beta_z). For symmetric kinds `label` is z in {+1, -1} and the
/// expert score is z * x'beta; for general kinds `beta_i` is already the
/// expert's own column and `label` is ignored.
template <typename Scalar>
Scalar expert_loglik(Scalar y, const VectorX<Scalar>& x, const VectorX<Scalar>& beta_i, const ModelKind& kind,
                     int label = 1) {
  if (beta_i.size() != x.size()) throw Error(ErrorCode::DimensionMismatch, "expert_loglik: dimension mismatch");
  Scalar score = x.dot(beta_i);
  if (kind.symmetric()) score *= Scalar(label);
  return expert_loglik_score(y, score, kind);
}

namespace detail {

// Expert scores per (sample, label): general kinds X * B, symmetric kinds (Xb, -Xb).
template <typename Scalar>
MatrixX<Scalar> expert_scores(const MatrixX<Scalar>& X, const Theta<Scalar>& theta, const ModelKind& kind) {
  if (kind.symmetric()) {
    MatrixX<Scalar> s(X.rows(), 2);
    s.col(0) = X * theta.experts.col(0);
    s.col(1) = -s.col(0);
    return s;
  }
  return X * theta.experts;
}

// log P(z = j | x_i; w) for every sample and label.
template <typename Scalar>
MatrixX<Scalar> log_gating(const MatrixX<Scalar>& X, const Theta<Scalar>& theta, const ModelKind& kind) {
  if (kind.symmetric()) {
    const VectorX<Scalar> a = X * theta.gating.col(0);
    MatrixX<Scalar> lg(X.rows(), 2);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      lg(i, 0) = log_sigmoid(a[i]);
      lg(i, 1) = log_sigmoid(-a[i]);
    }
    return lg;
  }
  MatrixX<Scalar> logits = X * theta.gating;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar lse = log_sum_exp(logits.row(i).transpose().eval());
    logits.row(i).array() -= lse;
  }
  return logits;
}

template <typename Scalar>
Scalar expert_loglik_unchecked(Scalar y, Scalar score, bool logistic) {
  if (logistic) return log_sigmoid(y * score);
  const Scalar r = y - score;
  return -r * r / Scalar(2) - half_log_two_pi<Scalar>();
}

}  // namespace detail

/// n x k matrix of log p(y_i, z = j | x_i; theta).
template <typename Scalar>
MatrixX<Scalar> log_joint(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const ModelKind& kind) {
  check_dataset(data, kind);
  check_theta(theta, data.d(), kind);
  const MatrixX<Scalar> scores = detail::expert_scores(data.features, theta, kind);
  MatrixX<Scalar> lj = detail::log_gating(data.features, theta, kind);
  const bool logistic = kind.logistic();
  for (Eigen::Index j = 0; j < lj.cols(); ++j)
    for (Eigen::Index i = 0; i < lj.rows(); ++i)
      lj(i, j) += detail::expert_loglik_unchecked(data.targets[i], scores(i, j), logistic);
  return lj;
}

template <typename Scalar>
constexpr Scalar responsibility_floor() {
  return Scalar(1e-300);
}

/// Posterior P(z | x_i, y_i; theta) per sample.
///
/// Symmetric kinds use the closed forms P(z=+1|x,y) = sigma(2y x'beta + x'w)
/// (linear experts) and sigma(y x'beta + x'w) (logistic experts); general
/// kinds normalise the log-joint row by row.
template <typename Scalar>
Responsibilities<Scalar> responsibilities(const DataSet<Scalar>& data, const Theta<Scalar>& theta,
                                          const ModelKind& kind) {
  check_dataset(data, kind);
  check_theta(theta, data.d(), kind);
  const Eigen::Index n = data.n();
  Responsibilities<Scalar> r;
  if (kind.symmetric()) {
    const VectorX<Scalar> a = data.features * theta.gating.col(0);
    const VectorX<Scalar> b = data.features * theta.experts.col(0);
    const Scalar scale = kind.linear() ? Scalar(2) : Scalar(1);
    r.weights.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar logit = scale * data.targets[i] * b[i] + a[i];
      r.weights(i, 0) = sigmoid(logit);
      r.weights(i, 1) = sigmoid(-logit);
    }
  } else {
    r.weights = log_joint(data, theta, kind);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar lse = log_sum_exp(r.weights.row(i).transpose().eval());
      r.weights.row(i) = (r.weights.row(i).array() - lse).exp();
    }
  }
  r.weights = r.weights.cwiseMax(responsibility_floor<Scalar>()).cwiseMin(Scalar(1));
  return r;
}

/// Draws n samples from the generative model at `truth`: x ~ N(0, I_d),
/// z ~ P(z|x; w*), y ~ p(y|x, z; beta*). Deterministic for a fixed seed.
template <typename Scalar = double>
DataSet<Scalar> sample_dataset(const ModelKind& kind, Eigen::Index n, Eigen::Index d, const Theta<Scalar>& truth,
                               std::uint64_t seed) {
  kind.validate();
  if (n < 1 || d < 1) throw Error(ErrorCode::DimensionMismatch, "sample_dataset: n and d must be positive");
  check_theta(truth, d, kind);

  Philox4x32 rng(seed);
  NormalSampler normal(rng);
  DataSet<Scalar> data;
  data.features.resize(n, d);
  data.targets.resize(n);
  data.latents = Eigen::VectorXi(n);
  data.truth = truth;

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) data.features(i, j) = Scalar(normal());
    const VectorX<Scalar> x = data.features.row(i).transpose();
    const VectorX<Scalar> gate = gating_probs(x, truth.gating, kind);

    // Inverse-CDF draw of the expert label.
    const double u = rng.uniform();
    Eigen::Index label = gate.size() - 1;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < gate.size(); ++j) {
      acc += double(gate[j]);
      if (u < acc) {
        label = j;
        break;
      }
    }

    Scalar score;
    if (kind.symmetric()) {
      const int z = label == 0 ? 1 : -1;
      (*data.latents)[i] = z;
      score = Scalar(z) * x.dot(truth.experts.col(0));
    } else {
      (*data.latents)[i] = int(label);
      score = x.dot(truth.experts.col(label));
    }

    if (kind.linear()) {
      data.targets[i] = score + Scalar(normal());
    } else {
      data.targets[i] = rng.uniform() < double(sigmoid(score)) ? Scalar(1) : Scalar(-1);
    }
  }
  return data;
}

}  // namespace moem
