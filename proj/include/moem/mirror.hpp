#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include "moem/objective.hpp"
#include "moem/em_solver.hpp"

namespace moem {

/// Value, gradient and Hessian of the mirror map A at a point. The Hessian is
/// 2d x 2d with the gating block first, matching Theta::flat().
template <typename Scalar>
struct MirrorMapEval {
  Scalar value = 0;
  Theta<Scalar> gradient;
  MatrixX<Scalar> hessian;
};

namespace detail {

inline void require_symmetric(const ModelKind& kind, const char* what) {
  if (!kind.symmetric()) throw Error(ErrorCode::WrongKind, std::string(what) + " is defined for symmetric models only");
}

}  // namespace detail

/// Mirror map under the empirical feature measure:
///   SymMoLinE  A(theta) = mean[(x'beta)^2 / 2 + log(1 + e^{x'w})]
///   SymMoLogE  A(theta) = mean[log(1 + e^{x'beta}) + log(1 + e^{x'w})]
template <typename Scalar>
MirrorMapEval<Scalar> mirror_map_eval(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const ModelKind& kind,
                                      bool with_hessian = true) {
  detail::require_symmetric(kind, "mirror_map_eval");
  check_dataset(data, kind);
  check_theta(theta, data.d(), kind);
  const auto& X = data.features;
  const Eigen::Index n = data.n(), d = data.d();
  const Scalar inv_n = Scalar(1) / Scalar(n);
  const VectorX<Scalar> a = X * theta.gating.col(0);
  const VectorX<Scalar> b = X * theta.experts.col(0);

  VectorX<Scalar> da(n), db(n), ca(n), cb(n);
  Scalar value = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    value += softplus(a[i]);
    da[i] = sigmoid(a[i]);
    ca[i] = sigmoid_prime(a[i]);
    if (kind.linear()) {
      value += b[i] * b[i] / Scalar(2);
      db[i] = b[i];
      cb[i] = Scalar(1);
    } else {
      value += softplus(b[i]);
      db[i] = sigmoid(b[i]);
      cb[i] = sigmoid_prime(b[i]);
    }
  }

  MirrorMapEval<Scalar> out;
  out.value = value * inv_n;
  out.gradient.gating = inv_n * (X.transpose() * da);
  out.gradient.experts = inv_n * (X.transpose() * db);
  if (with_hessian) {
    out.hessian = MatrixX<Scalar>::Zero(2 * d, 2 * d);
    out.hessian.topLeftCorner(d, d) = inv_n * (X.transpose() * ca.asDiagonal() * X);
    out.hessian.bottomRightCorner(d, d) = inv_n * (X.transpose() * cb.asDiagonal() * X);
  }
  return out;
}

/// D_A(phi, theta) = A(phi) - A(theta) - <grad A(theta), phi - theta>.
template <typename Scalar>
Scalar bregman(const DataSet<Scalar>& data, const Theta<Scalar>& phi, const Theta<Scalar>& theta,
               const ModelKind& kind) {
  const auto at_theta = mirror_map_eval(data, theta, kind, false);
  const auto at_phi = mirror_map_eval(data, phi, kind, false);
  return at_phi.value - at_theta.value - at_theta.gradient.dot(phi - theta);
}

/// KL[p(x, y, z; theta) || p(x, y, z; phi)] with x drawn from the dataset rows.
///
/// The gating part is a Bernoulli KL between sigma(x'w_theta) and
/// sigma(x'w_phi). Given z, the expert part does not depend on z: a Gaussian
/// KL (x'(beta_theta - beta_phi))^2 / 2 for linear experts and a Bernoulli KL
/// on the expert logits for logistic ones.
template <typename Scalar>
Scalar complete_data_kl(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const Theta<Scalar>& phi,
                        const ModelKind& kind) {
  detail::require_symmetric(kind, "complete_data_kl");
  check_dataset(data, kind);
  check_theta(theta, data.d(), kind);
  check_theta(phi, data.d(), kind);
  const auto& X = data.features;
  const VectorX<Scalar> a_t = X * theta.gating.col(0), a_p = X * phi.gating.col(0);
  const VectorX<Scalar> b_t = X * theta.experts.col(0), b_p = X * phi.experts.col(0);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    total += bernoulli_kl_logits(a_t[i], a_p[i]);
    if (kind.linear()) {
      const Scalar diff = b_t[i] - b_p[i];
      total += diff * diff / Scalar(2);
    } else {
      total += bernoulli_kl_logits(b_t[i], b_p[i]);
    }
  }
  return total / Scalar(data.n());
}

struct MdReport {
  bool converged = true;
  int iterations = 0;
  // max-norm of grad A(theta_new) - (grad A(theta_t) - grad L(theta_t))
  double optimality_residual = 0;
};

namespace detail {

// Inverts u -> mean[sigma(x'u) x] at `target` by Newton on the strictly convex
// F(u) = mean[softplus(x'u)] - <target, u>, with halving on F.
template <typename Scalar>
InnerSolution<VectorX<Scalar>> invert_sigmoid_moment(const MatrixX<Scalar>& X, const VectorX<Scalar>& target,
                                                     VectorX<Scalar> u, double tol, int max_iter) {
  const Scalar inv_n = Scalar(1) / Scalar(X.rows());
  auto value = [&](const VectorX<Scalar>& v) {
    const VectorX<Scalar> s = X * v;
    Scalar f = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) f += softplus(s[i]);
    return f * inv_n - target.dot(v);
  };
  auto moment = [&](const VectorX<Scalar>& v) {
    const VectorX<Scalar> s = X * v;
    return VectorX<Scalar>(inv_n * (X.transpose() * s.unaryExpr([](Scalar t) { return sigmoid(t); })));
  };

  InnerSolution<VectorX<Scalar>> out;
  VectorX<Scalar> g = moment(u) - target;
  Scalar f = value(u);
  while (true) {
    out.grad_norm = double(g.norm());
    if (out.grad_norm <= tol) {
      out.converged = true;
      break;
    }
    if (out.iterations >= max_iter) break;
    ++out.iterations;
    const VectorX<Scalar> s = X * u;
    const VectorX<Scalar> w = s.unaryExpr([](Scalar t) { return sigmoid_prime(t); });
    const MatrixX<Scalar> H = inv_n * (X.transpose() * w.asDiagonal() * X);
    const VectorX<Scalar> step = -H.ldlt().solve(g);
    const Scalar decrease = -g.dot(step);
    // When the decrease is below what f can resolve, judge the step by |g|.
    if (decrease <= Scalar(64) * std::numeric_limits<Scalar>::epsilon() * (std::abs(f) + Scalar(1))) {
      const VectorX<Scalar> next = u + step;
      const VectorX<Scalar> g_next = moment(next) - target;
      if (g_next.norm() >= g.norm()) break;
      u = next;
      g = g_next;
      f = value(u);
      continue;
    }
    Scalar t = 1;
    VectorX<Scalar> next = u + step;
    Scalar f_next = value(next);
    while (!(f_next <= f - Scalar(1e-4) * t * decrease) && t > Scalar(1e-12)) {
      t /= 2;
      next = u + t * step;
      f_next = value(next);
    }
    u = next;
    f = f_next;
    g = moment(u) - target;
  }
  out.solution = std::move(u);
  return out;
}

}  // namespace detail

/// One unit-step mirror-descent update
///   argmin_theta <grad L(theta_t), theta - theta_t> + D_A(theta, theta_t),
/// solved through its optimality condition grad A(theta) = grad A(theta_t) - grad L(theta_t).
/// The linear-expert block is a single Gram solve; sigmoid blocks use Newton.
template <typename Scalar>
Theta<Scalar> md_step(const DataSet<Scalar>& data, const Theta<Scalar>& theta_t, const ModelKind& kind,
                      const SolverOptions& opts, MdReport* report = nullptr) {
  detail::require_symmetric(kind, "md_step");
  opts.validate();
  const auto mirror = mirror_map_eval(data, theta_t, kind, false);
  const Theta<Scalar> target = mirror.gradient - grad_neg_log_lik(data, theta_t, kind);
  const auto& X = data.features;

  MdReport local;
  Theta<Scalar> next = theta_t;
  auto w = detail::invert_sigmoid_moment<Scalar>(X, target.gating.col(0), theta_t.gating.col(0), opts.inner_tol,
                                                 opts.inner_max_iter);
  next.gating.col(0) = w.solution;
  local.converged = w.converged;
  local.iterations = w.iterations;

  if (kind.linear()) {
    const MatrixX<Scalar> gram = (X.transpose() * X) / Scalar(data.n());
    Eigen::LDLT<MatrixX<Scalar>> ldlt(gram);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0))
      throw Error(ErrorCode::SingularSystem, "md_step: empirical second moment of x is singular");
    next.experts.col(0) = ldlt.solve(target.experts.col(0));
  } else {
    auto b = detail::invert_sigmoid_moment<Scalar>(X, target.experts.col(0), theta_t.experts.col(0), opts.inner_tol,
                                                   opts.inner_max_iter);
    next.experts.col(0) = b.solution;
    local.converged = local.converged && b.converged;
    local.iterations += b.iterations;
  }

  if (report) {
    const auto at_next = mirror_map_eval(data, next, kind, false);
    local.optimality_residual = double((at_next.gradient - target).max_abs());
    *report = local;
  }
  return next;
}

template <typename Scalar>
struct EquivalenceReport {
  Theta<Scalar> theta_em;
  Theta<Scalar> theta_md;
  double abs_gap = 0;
  double rel_gap = 0;
  StepReport em;
  MdReport md;
  bool pass = false;
};

/// Runs one EM step and one MD step from theta_t and compares them.
/// PASS iff ||theta_EM - theta_MD|| / max(1, ||theta_EM||) <= tol.
template <typename Scalar>
EquivalenceReport<Scalar> verify_em_equals_md(const DataSet<Scalar>& data, const Theta<Scalar>& theta_t,
                                              const ModelKind& kind, double tol = 1e-6,
                                              const SolverOptions& opts = {}) {
  detail::require_symmetric(kind, "verify_em_equals_md");
  EquivalenceReport<Scalar> rep;
  rep.theta_em = em_step(data, theta_t, kind, opts, &rep.em);
  rep.theta_md = md_step(data, theta_t, kind, opts, &rep.md);
  rep.abs_gap = double((rep.theta_em - rep.theta_md).norm());
  rep.rel_gap = rep.abs_gap / std::max(1.0, double(rep.theta_em.norm()));
  rep.pass = std::isfinite(rep.rel_gap) && rep.rel_gap <= tol;
  return rep;
}

// Uniform draw from the ball of the given radius in the 2d-dimensional parameter space.
template <typename Scalar = double>
Theta<Scalar> sample_theta_in_ball(Philox4x32& rng, Eigen::Index d, const ModelKind& kind, double radius) {
  NormalSampler normal(rng);
  const Eigen::Index dim = 2 * d * kind.columns();
  const Eigen::VectorXd dir = normal.unit_vector(dim);
  const double r = radius * std::pow(rng.uniform(), 1.0 / double(dim));
  return Theta<Scalar>::from_flat((r * dir).cast<Scalar>(), d, kind.columns());
}

/// max over random pairs of L(theta) - [L(phi) + <grad L(phi), theta - phi> + D_A(theta, phi)],
/// pairs drawn uniformly from the ball of `radius`. Non-positive when L is
/// 1-smooth relative to A.
template <typename Scalar>
Scalar relative_smoothness_probe(const DataSet<Scalar>& data, int pairs, const ModelKind& kind, std::uint64_t seed,
                                 double radius = 8.0) {
  detail::require_symmetric(kind, "relative_smoothness_probe");
  if (pairs < 1) throw Error(ErrorCode::Validation, "relative_smoothness_probe: pairs must be positive");
  Philox4x32 rng(seed);
  Scalar worst = -std::numeric_limits<Scalar>::infinity();
  for (int p = 0; p < pairs; ++p) {
    const Theta<Scalar> theta = sample_theta_in_ball<Scalar>(rng, data.d(), kind, radius);
    const Theta<Scalar> phi = sample_theta_in_ball<Scalar>(rng, data.d(), kind, radius);
    const Scalar upper = neg_log_lik(data, phi, kind).value + grad_neg_log_lik(data, phi, kind).dot(theta - phi) +
                         bregman(data, theta, phi, kind);
    worst = std::max(worst, neg_log_lik(data, theta, kind).value - upper);
  }
  return worst;
}

}  // namespace moem
