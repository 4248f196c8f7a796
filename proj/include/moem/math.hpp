#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace moem {

// Numerically stable scalar helpers shared by every module.

template <typename Scalar>
Scalar sigmoid(Scalar t) {
  using std::exp;
  if (t >= 0) return Scalar(1) / (Scalar(1) + exp(-t));
  const Scalar e = exp(t);
  return e / (Scalar(1) + e);
}

// log(1 + e^t)
template <typename Scalar>
Scalar softplus(Scalar t) {
  using std::exp;
  using std::log1p;
  return t > 0 ? t + log1p(exp(-t)) : log1p(exp(t));
}

// log sigma(t) = -softplus(-t)
template <typename Scalar>
Scalar log_sigmoid(Scalar t) {
  return -softplus(-t);
}

// sigma'(t) = sigma(t) * sigma(-t)
template <typename Scalar>
Scalar sigmoid_prime(Scalar t) {
  return sigmoid(t) * sigmoid(-t);
}

template <typename Scalar>
Scalar log_sum_exp(Scalar a, Scalar b) {
  using std::exp;
  using std::log1p;
  const Scalar m = a > b ? a : b;
  if (m == -std::numeric_limits<Scalar>::infinity()) return m;
  return m + log1p(exp(-(a > b ? a - b : b - a)));
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = v.maxCoeff();
  if (m == -std::numeric_limits<Scalar>::infinity()) return m;
  return m + std::log((v.array() - m).exp().sum());
}

template <typename Scalar>
constexpr Scalar half_log_two_pi() {
  return Scalar(0.91893853320467274178032973640561763986139747363778L);
}

// KL(Bern(sigma(a)) || Bern(sigma(b))), evaluated from the logits.
template <typename Scalar>
Scalar bernoulli_kl_logits(Scalar a, Scalar b) {
  const Scalar p = sigmoid(a);
  const Scalar q = Scalar(1) - p;
  return p * (log_sigmoid(a) - log_sigmoid(b)) + q * (log_sigmoid(-a) - log_sigmoid(-b));
}

}  // namespace moem
