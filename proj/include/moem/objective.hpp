#pragma once

#include <optional>

#include "moem/model.hpp"

namespace moem {

template <typename Scalar>
struct ObjectiveValue {
  Scalar value = 0;
  std::optional<VectorX<Scalar>> per_sample;
};

namespace detail {

template <typename Scalar>
ObjectiveValue<Scalar> mean_of(VectorX<Scalar> per_sample, bool keep) {
  ObjectiveValue<Scalar> out;
  out.value = per_sample.mean();
  if (keep) out.per_sample = std::move(per_sample);
  return out;
}

// d log p(y | s) / ds for the expert density as a function of its score.
template <typename Scalar>
Scalar expert_score_derivative(Scalar y, Scalar score, bool logistic) {
  if (logistic) return y * sigmoid(-y * score);
  return y - score;
}

}  // namespace detail

/// Empirical negative log-likelihood (1/n) sum_i -log sum_z p(y_i|x_i,z) P(z|x_i).
template <typename Scalar>
ObjectiveValue<Scalar> neg_log_lik(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const ModelKind& kind,
                                   bool keep_per_sample = false) {
  const MatrixX<Scalar> lj = log_joint(data, theta, kind);
  VectorX<Scalar> per(lj.rows());
  for (Eigen::Index i = 0; i < lj.rows(); ++i) per[i] = -log_sum_exp(lj.row(i).transpose().eval());
  return detail::mean_of(std::move(per), keep_per_sample);
}

/// Gradient of neg_log_lik. Symmetric kinds use the closed forms obtained by
/// differentiating the two-term mixture directly; general kinds weight the
/// per-expert score derivatives by the posterior.
template <typename Scalar>
Theta<Scalar> grad_neg_log_lik(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const ModelKind& kind) {
  check_dataset(data, kind);
  check_theta(theta, data.d(), kind);
  const auto& X = data.features;
  const auto& y = data.targets;
  const Eigen::Index n = data.n();
  const Scalar inv_n = Scalar(1) / Scalar(n);

  if (kind.symmetric()) {
    const VectorX<Scalar> a = X * theta.gating.col(0);
    const VectorX<Scalar> b = X * theta.experts.col(0);
    VectorX<Scalar> cw(n), cb(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (kind.linear()) {
        // d/dw: -(P(z=1|x,y) - sigma(a)) x ;  d/dbeta: -((2P-1) y - b) x
        const Scalar post = sigmoid(Scalar(2) * y[i] * b[i] + a[i]);
        cw[i] = -(post - sigmoid(a[i]));
        cb[i] = -((Scalar(2) * post - Scalar(1)) * y[i] - b[i]);
      } else {
        // p(y|x) = sigma(a) sigma(yb) + sigma(-a) sigma(-yb); differentiate log p(y|x).
        const Scalar lp = log_sum_exp(log_sigmoid(a[i]) + log_sigmoid(y[i] * b[i]),
                                      log_sigmoid(-a[i]) + log_sigmoid(-y[i] * b[i]));
        const Scalar sa = sigmoid_prime(a[i]);
        const Scalar sb = sigmoid_prime(y[i] * b[i]);
        const Scalar dpa = sa * (sigmoid(y[i] * b[i]) - sigmoid(-y[i] * b[i]));
        const Scalar dpb = y[i] * sb * (sigmoid(a[i]) - sigmoid(-a[i]));
        using std::exp;
        const Scalar inv_p = exp(-lp);
        cw[i] = -dpa * inv_p;
        cb[i] = -dpb * inv_p;
      }
    }
    Theta<Scalar> g;
    g.gating = inv_n * (X.transpose() * cw);
    g.experts = inv_n * (X.transpose() * cb);
    return g;
  }

  const MatrixX<Scalar> r = responsibilities(data, theta, kind).weights;
  MatrixX<Scalar> gate(n, kind.k);
  const MatrixX<Scalar> lg = detail::log_gating(X, theta, kind);
  gate = lg.array().exp().matrix();
  const MatrixX<Scalar> scores = X * theta.experts;
  MatrixX<Scalar> ce(n, kind.k);
  for (Eigen::Index j = 0; j < kind.k; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      ce(i, j) = -r(i, j) * detail::expert_score_derivative(y[i], scores(i, j), kind.logistic());
  Theta<Scalar> g;
  g.gating = -inv_n * (X.transpose() * (r - gate));
  g.experts = inv_n * (X.transpose() * ce);
  return g;
}

/// EM surrogate Q(theta | anchor) = -(1/n) sum_i sum_z r_iz(anchor) log p(y_i, z | x_i; theta).
template <typename Scalar>
ObjectiveValue<Scalar> em_surrogate_q(const DataSet<Scalar>& data, const Theta<Scalar>& theta,
                                      const Theta<Scalar>& anchor, const ModelKind& kind,
                                      bool keep_per_sample = false) {
  const MatrixX<Scalar> r = responsibilities(data, anchor, kind).weights;
  const MatrixX<Scalar> lj = log_joint(data, theta, kind);
  VectorX<Scalar> per = -(r.array() * lj.array()).rowwise().sum().matrix();
  return detail::mean_of(std::move(per), keep_per_sample);
}

/// H(theta | anchor) = -(1/n) sum_i sum_z r_iz(anchor) log P(z | x_i, y_i; theta).
template <typename Scalar>
ObjectiveValue<Scalar> entropy_h(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const Theta<Scalar>& anchor,
                                 const ModelKind& kind, bool keep_per_sample = false) {
  const MatrixX<Scalar> r = responsibilities(data, anchor, kind).weights;
  MatrixX<Scalar> log_post = log_joint(data, theta, kind);
  for (Eigen::Index i = 0; i < log_post.rows(); ++i) {
    const Scalar lse = log_sum_exp(log_post.row(i).transpose().eval());
    log_post.row(i).array() -= lse;
  }
  VectorX<Scalar> per = -(r.array() * log_post.array()).rowwise().sum().matrix();
  return detail::mean_of(std::move(per), keep_per_sample);
}

/// Gradient of Q(. | anchor) at theta, anchor held fixed. The gating and
/// expert blocks are the gradients of the two separable pieces of Q.
template <typename Scalar>
Theta<Scalar> grad_surrogate_q(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const Theta<Scalar>& anchor,
                               const ModelKind& kind) {
  check_theta(theta, data.d(), kind);
  const MatrixX<Scalar> r = responsibilities(data, anchor, kind).weights;
  const auto& X = data.features;
  const auto& y = data.targets;
  const Eigen::Index n = data.n();
  const Scalar inv_n = Scalar(1) / Scalar(n);
  const MatrixX<Scalar> gate = detail::log_gating(X, theta, kind).array().exp().matrix();
  const MatrixX<Scalar> scores = detail::expert_scores(X, theta, kind);
  const bool logistic = kind.logistic();

  Theta<Scalar> g;
  if (kind.symmetric()) {
    // log P(z|x;w) = (z+1)/2 a - softplus(a)  =>  d/da = [z=+1] - sigma(a)
    // score_z = z b  =>  d/db log p(y|z) = z * dlogp/ds
    VectorX<Scalar> cw(n), cb(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      cw[i] = -(r(i, 0) - gate(i, 0));
      cb[i] = -(r(i, 0) * detail::expert_score_derivative(y[i], scores(i, 0), logistic) -
                r(i, 1) * detail::expert_score_derivative(y[i], scores(i, 1), logistic));
    }
    g.gating = inv_n * (X.transpose() * cw);
    g.experts = inv_n * (X.transpose() * cb);
    return g;
  }
  MatrixX<Scalar> ce(n, kind.k);
  for (Eigen::Index j = 0; j < kind.k; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      ce(i, j) = -r(i, j) * detail::expert_score_derivative(y[i], scores(i, j), logistic);
  // sum_j r_ij = 1, so d/dW of -sum_j r_ij log softmax_j = -(r - gate) x'
  g.gating = -inv_n * (X.transpose() * (r - gate));
  g.experts = inv_n * (X.transpose() * ce);
  return g;
}

}  // namespace moem
