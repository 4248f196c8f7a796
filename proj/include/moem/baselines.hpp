#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Eigenvalues>

#include "moem/objective.hpp"

namespace moem {

enum class StepMode { Fixed, Backtracking, GridSelected };

struct StepSizes {
  double gamma1 = 1.0;  // expert block, gradient EM
  double gamma2 = 1.0;  // gating block, gradient EM
  double gamma = 0.1;   // joint step, gradient descent
  StepMode mode = StepMode::Fixed;

  void validate() const {
    if (!(gamma1 > 0) || !(gamma2 > 0) || !(gamma > 0))
      throw Error(ErrorCode::Validation, "step sizes must be positive");
  }
};

namespace detail {

// Halve `scale` until the Armijo condition holds on L along -direction.
template <typename Scalar>
Theta<Scalar> armijo_descend(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const ModelKind& kind,
                             const Theta<Scalar>& direction, Scalar slope) {
  const Scalar f0 = neg_log_lik(data, theta, kind).value;
  Scalar t = 1;
  for (int halving = 0; halving < 60; ++halving) {
    const Theta<Scalar> trial = theta - t * direction;
    if (trial.all_finite()) {
      const Scalar f = neg_log_lik(data, trial, kind).value;
      if (std::isfinite(double(f)) && f <= f0 - Scalar(1e-4) * t * slope) return trial;
    }
    t /= 2;
  }
  return theta;
}

}  // namespace detail

/// One gradient-EM iteration: a single gradient step on each block of
/// Q(. | theta_t), with responsibilities anchored at theta_t.
/// beta <- beta - gamma1 * grad_beta Q,  w <- w - gamma2 * grad_w Q.
template <typename Scalar>
Theta<Scalar> gradient_em_step(const DataSet<Scalar>& data, const Theta<Scalar>& theta_t, const ModelKind& kind,
                               const StepSizes& steps) {
  steps.validate();
  const Theta<Scalar> g = grad_surrogate_q(data, theta_t, theta_t, kind);
  const Theta<Scalar> direction(Scalar(steps.gamma2) * g.gating, Scalar(steps.gamma1) * g.experts);
  if (steps.mode == StepMode::Backtracking)
    return detail::armijo_descend(data, theta_t, kind, direction, g.dot(direction));
  return theta_t - direction;
}

/// theta - gamma * grad L(theta); in backtracking mode gamma is the initial
/// trial step and is halved until the Armijo condition holds.
template <typename Scalar>
Theta<Scalar> gd_step(const DataSet<Scalar>& data, const Theta<Scalar>& theta_t, const ModelKind& kind,
                      const StepSizes& steps) {
  if (!(steps.gamma >= 0)) throw Error(ErrorCode::Validation, "gamma must be non-negative");
  const Theta<Scalar> g = grad_neg_log_lik(data, theta_t, kind);
  const Theta<Scalar> direction = Scalar(steps.gamma) * g;
  if (steps.mode == StepMode::Backtracking && steps.gamma > 0)
    return detail::armijo_descend(data, theta_t, kind, direction, g.dot(direction));
  return theta_t - direction;
}

/// Block steps for gradient EM from the smoothness of each Q block: the gating
/// block has curvature at most lambda_max(E[xx'])/4, linear experts
/// lambda_max(E[xx']), logistic experts lambda_max(E[xx'])/4.
template <typename Scalar>
StepSizes default_gradient_em_steps(const DataSet<Scalar>& data, const ModelKind& kind) {
  const MatrixX<Scalar> gram = (data.features.transpose() * data.features) / Scalar(data.n());
  const double top = double(Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>>(gram, Eigen::EigenvaluesOnly)
                                .eigenvalues()
                                .maxCoeff());
  if (!(top > 0)) throw Error(ErrorCode::SingularSystem, "features have zero second moment");
  StepSizes s;
  s.gamma2 = 4.0 / top;
  s.gamma1 = kind.linear() ? 1.0 / top : 4.0 / top;
  s.mode = StepMode::Fixed;
  return s;
}

/// Grid search for the gradient-descent step: runs probe_iters fixed-step
/// iterations per candidate from theta_1 and keeps the smallest final L.
/// Candidates whose objective becomes non-finite are discarded; ties keep the
/// earlier grid entry.
template <typename Scalar>
StepSizes select_step_size(const DataSet<Scalar>& data, const Theta<Scalar>& theta_1, const ModelKind& kind,
                           const std::vector<double>& grid, int probe_iters = 10) {
  if (grid.empty()) throw Error(ErrorCode::Validation, "select_step_size: empty grid");
  if (probe_iters < 1) throw Error(ErrorCode::Validation, "select_step_size: probe_iters must be positive");
  double best_gamma = 0;
  Scalar best = std::numeric_limits<Scalar>::infinity();
  bool found = false;
  for (double gamma : grid) {
    if (!(gamma > 0)) throw Error(ErrorCode::Validation, "select_step_size: grid values must be positive");
    StepSizes s;
    s.gamma = gamma;
    Theta<Scalar> theta = theta_1;
    Scalar value = std::numeric_limits<Scalar>::quiet_NaN();
    try {
      for (int i = 0; i < probe_iters; ++i) theta = gd_step(data, theta, kind, s);
      value = neg_log_lik(data, theta, kind).value;
    } catch (const Error&) {
      continue;  // overflowed into non-finite parameters
    }
    if (!std::isfinite(double(value))) continue;
    if (!found || value < best) {
      best = value;
      best_gamma = gamma;
      found = true;
    }
  }
  if (!found) throw Error(ErrorCode::AllDiverged, "every grid step size diverged");
  StepSizes s;
  s.gamma = best_gamma;
  s.mode = StepMode::GridSelected;
  return s;
}

}  // namespace moem
