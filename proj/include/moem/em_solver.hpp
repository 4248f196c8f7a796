#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "moem/objective.hpp"

namespace moem {

struct SolverOptions {
  double inner_tol = 1e-10;
  int inner_max_iter = 100;
  double ridge = 1e-8;
  double feasibility_radius = 1e3;
  // Use beta = E[(2r - 1) x y] for SymMoLinE, which is the exact M-step only
  // when the empirical second moment of x is the identity.
  bool literal_beta_update = false;

  void validate() const {
    if (!(inner_tol > 0)) throw Error(ErrorCode::Validation, "inner_tol must be positive");
    if (inner_max_iter < 1) throw Error(ErrorCode::Validation, "inner_max_iter must be at least 1");
    if (!(ridge >= 0)) throw Error(ErrorCode::Validation, "ridge must be non-negative");
    if (!(feasibility_radius > 0)) throw Error(ErrorCode::Validation, "feasibility_radius must be positive");
  }
};

template <typename Solution>
struct InnerSolution {
  Solution solution;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0;
};

struct StepReport {
  bool converged = true;
  int inner_iterations = 0;
  double inner_residual = 0;
  std::string note;

  void absorb(bool ok, int iters, double residual, const char* what) {
    inner_iterations += iters;
    inner_residual = std::max(inner_residual, residual);
    if (!ok) {
      converged = false;
      if (!note.empty()) note += "; ";
      note += what;
      note += " hit the iteration limit";
    }
  }
};

namespace detail {

// True when the predicted Newton decrease is too small to resolve in f.
template <typename Scalar>
bool below_rounding(Scalar slope, Scalar f) {
  using std::abs;
  return -slope <= Scalar(64) * std::numeric_limits<Scalar>::epsilon() * (abs(f) + Scalar(1));
}

// min_u (1/n) sum_i c_i [softplus(x_i'u) - t_i x_i'u] by damped Newton with
// Armijo backtracking (c = 1e-4, halving).
template <typename Scalar>
InnerSolution<VectorX<Scalar>> soft_logistic_newton(const MatrixX<Scalar>& X, const VectorX<Scalar>& weight,
                                                    const VectorX<Scalar>& target, VectorX<Scalar> u,
                                                    const SolverOptions& opts) {
  const Eigen::Index n = X.rows();
  const Scalar inv_n = Scalar(1) / Scalar(n);
  auto loss = [&](const VectorX<Scalar>& v) {
    const VectorX<Scalar> s = X * v;
    Scalar f = 0;
    for (Eigen::Index i = 0; i < n; ++i) f += weight[i] * (softplus(s[i]) - target[i] * s[i]);
    return f * inv_n;
  };
  auto gradient = [&](const VectorX<Scalar>& v, VectorX<Scalar>& curvature) {
    const VectorX<Scalar> s = X * v;
    VectorX<Scalar> c(n);
    curvature.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      c[i] = weight[i] * (sigmoid(s[i]) - target[i]);
      curvature[i] = weight[i] * sigmoid_prime(s[i]);
    }
    return VectorX<Scalar>(inv_n * (X.transpose() * c));
  };

  InnerSolution<VectorX<Scalar>> out;
  VectorX<Scalar> curv;
  VectorX<Scalar> g = gradient(u, curv);
  Scalar f = loss(u);
  for (;;) {
    out.grad_norm = double(g.norm());
    if (out.grad_norm <= opts.inner_tol) {
      out.converged = true;
      break;
    }
    if (out.iterations >= opts.inner_max_iter) break;
    ++out.iterations;

    MatrixX<Scalar> H = inv_n * (X.transpose() * curv.asDiagonal() * X);
    Eigen::LLT<MatrixX<Scalar>> llt(H);
    if (llt.info() != Eigen::Success) {
      H.diagonal().array() += Scalar(opts.ridge > 0 ? opts.ridge : 1e-12);
      llt.compute(H);
    }
    const VectorX<Scalar> step = -llt.solve(g);
    const Scalar slope = g.dot(step);

    Scalar alpha = 1;
    bool accepted = false;
    VectorX<Scalar> trial;
    for (int halving = 0; halving < 60 && !below_rounding(slope, f); ++halving) {
      trial = u + alpha * step;
      const Scalar ft = loss(trial);
      if (std::isfinite(double(ft)) && ft <= f + Scalar(1e-4) * alpha * slope) {
        f = ft;
        accepted = true;
        break;
      }
      alpha /= 2;
    }
    VectorX<Scalar> curv_trial;
    if (!accepted) {
      // Loss differences are lost to rounding here; take the full Newton step
      // if it still shrinks the gradient.
      trial = u + step;
      const VectorX<Scalar> gt = gradient(trial, curv_trial);
      if (gt.norm() >= g.norm()) break;
      u = trial;
      g = gt;
      curv = curv_trial;
      f = loss(u);
      continue;
    }
    u = trial;
    g = gradient(u, curv);
  }
  out.solution = std::move(u);
  return out;
}

// min_W -(1/n) sum_i sum_j r_ij log softmax_j(x_i'W): damped Newton on the
// d*k unknowns with a ridge on the (shift-singular) Hessian.
template <typename Scalar>
InnerSolution<MatrixX<Scalar>> soft_softmax_newton(const MatrixX<Scalar>& X, const MatrixX<Scalar>& R,
                                                   MatrixX<Scalar> W, const SolverOptions& opts) {
  const Eigen::Index n = X.rows(), d = X.cols(), k = R.cols();
  const Scalar inv_n = Scalar(1) / Scalar(n);
  auto probs = [&](const MatrixX<Scalar>& V) {
    MatrixX<Scalar> logits = X * V;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar lse = log_sum_exp(logits.row(i).transpose().eval());
      logits.row(i) = (logits.row(i).array() - lse).exp();
    }
    return logits;
  };
  auto loss = [&](const MatrixX<Scalar>& V) {
    MatrixX<Scalar> logits = X * V;
    Scalar f = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar lse = log_sum_exp(logits.row(i).transpose().eval());
      f -= (R.row(i).array() * (logits.row(i).array() - lse)).sum();
    }
    return f * inv_n;
  };

  InnerSolution<MatrixX<Scalar>> out;
  MatrixX<Scalar> G = probs(W);
  MatrixX<Scalar> grad = inv_n * (X.transpose() * (G - R));
  Scalar f = loss(W);
  for (;;) {
    out.grad_norm = double(grad.norm());
    if (out.grad_norm <= opts.inner_tol) {
      out.converged = true;
      break;
    }
    if (out.iterations >= opts.inner_max_iter) break;
    ++out.iterations;

    // Hessian blocks (j, l): (1/n) sum_i (g_ij [j==l] - g_ij g_il) x_i x_i'
    MatrixX<Scalar> H = MatrixX<Scalar>::Zero(d * k, d * k);
    for (Eigen::Index j = 0; j < k; ++j) {
      for (Eigen::Index l = j; l < k; ++l) {
        VectorX<Scalar> c = -(G.col(j).array() * G.col(l).array()).matrix();
        if (j == l) c += G.col(j);
        const MatrixX<Scalar> block = inv_n * (X.transpose() * c.asDiagonal() * X);
        H.block(j * d, l * d, d, d) = block;
        if (l != j) H.block(l * d, j * d, d, d) = block;
      }
    }
    // The gradient is orthogonal to the shift directions, so penalising them
    // leaves the Newton step unchanged while making H well conditioned.
    const Scalar shift_weight = H.diagonal().mean() / Scalar(k);
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index l = 0; l < k; ++l) H.block(j * d, l * d, d, d).diagonal().array() += shift_weight;
    H.diagonal().array() += Scalar(opts.ridge);
    const VectorX<Scalar> gflat = grad.reshaped();
    Eigen::LLT<MatrixX<Scalar>> llt(H);
    const VectorX<Scalar> step_flat = llt.info() == Eigen::Success ? VectorX<Scalar>(-llt.solve(gflat))
                                                                    : VectorX<Scalar>(-H.ldlt().solve(gflat));
    const MatrixX<Scalar> step = step_flat.reshaped(d, k);
    const Scalar slope = gflat.dot(step_flat);

    Scalar alpha = 1;
    bool accepted = false;
    MatrixX<Scalar> trial;
    for (int halving = 0; halving < 60 && !below_rounding(slope, f); ++halving) {
      trial = W + alpha * step;
      const Scalar ft = loss(trial);
      if (std::isfinite(double(ft)) && ft <= f + Scalar(1e-4) * alpha * slope) {
        f = ft;
        accepted = true;
        break;
      }
      alpha /= 2;
    }
    if (!accepted) {
      trial = W + step;
      const MatrixX<Scalar> Gt = probs(trial);
      const MatrixX<Scalar> gt = inv_n * (X.transpose() * (Gt - R));
      if (gt.norm() >= grad.norm()) break;
      W = trial;
      G = Gt;
      grad = gt;
      f = loss(W);
      continue;
    }
    W = trial;
    G = probs(W);
    grad = inv_n * (X.transpose() * (G - R));
  }
  out.solution = std::move(W);
  return out;
}

}  // namespace detail

/// Gating half of the M-step: minimise the soft-label gating loss implied by
/// the responsibilities. Symmetric models solve
///   (1/n) sum_i [log(1 + e^{x_i'w}) - r_i x_i'w],
/// general models the soft-target softmax cross-entropy.
template <typename Scalar>
InnerSolution<MatrixX<Scalar>> solve_w_subproblem(const DataSet<Scalar>& data, const Responsibilities<Scalar>& resp,
                                                  const MatrixX<Scalar>& init, const SolverOptions& opts) {
  opts.validate();
  const auto& X = data.features;
  if (resp.weights.rows() != data.n() || init.rows() != data.d())
    throw Error(ErrorCode::DimensionMismatch, "solve_w_subproblem: dimension mismatch");
  InnerSolution<MatrixX<Scalar>> out;
  if (init.cols() == 1) {
    if (resp.weights.cols() != 2)
      throw Error(ErrorCode::DimensionMismatch, "symmetric gating expects two responsibility columns");
    const VectorX<Scalar> ones = VectorX<Scalar>::Ones(data.n());
    auto sol = detail::soft_logistic_newton<Scalar>(X, ones, resp.weights.col(0), init.col(0), opts);
    out.solution = sol.solution;
    out.converged = sol.converged;
    out.iterations = sol.iterations;
    out.grad_norm = sol.grad_norm;
    return out;
  }
  if (resp.weights.cols() != init.cols())
    throw Error(ErrorCode::DimensionMismatch, "gating columns do not match responsibilities");
  return detail::soft_softmax_newton<Scalar>(X, resp.weights, init, opts);
}

namespace detail {

template <typename Scalar>
VectorX<Scalar> gram_solve(MatrixX<Scalar> gram, const VectorX<Scalar>& rhs, bool force_ridge, double ridge) {
  if (force_ridge) gram.diagonal().array() += Scalar(ridge);
  Eigen::LLT<MatrixX<Scalar>> llt(gram);
  if (llt.info() != Eigen::Success && !force_ridge) {
    gram.diagonal().array() += Scalar(ridge);
    llt.compute(gram);
  }
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularSystem, "ridge-regularised Gram matrix is singular");
  VectorX<Scalar> sol = llt.solve(rhs);
  if (!sol.allFinite()) throw Error(ErrorCode::SingularSystem, "Gram solve produced non-finite values");
  return sol;
}

}  // namespace detail

/// Expert half of the M-step.
///
/// SymMoLinE solves E[xx'] beta = E[(2r - 1) x y] exactly; GeneralMoLinE runs
/// one weighted least-squares solve per expert; logistic kinds minimise the
/// responsibility-weighted logistic loss by damped Newton.
template <typename Scalar>
InnerSolution<MatrixX<Scalar>> solve_beta_subproblem(const DataSet<Scalar>& data, const Responsibilities<Scalar>& resp,
                                                     const ModelKind& kind, const MatrixX<Scalar>& init,
                                                     const SolverOptions& opts) {
  opts.validate();
  check_dataset(data, kind);
  const auto& X = data.features;
  const auto& y = data.targets;
  const Eigen::Index n = data.n(), d = data.d();
  if (resp.weights.rows() != n || resp.weights.cols() != kind.k || init.rows() != d || init.cols() != kind.columns())
    throw Error(ErrorCode::DimensionMismatch, "solve_beta_subproblem: dimension mismatch");
  const Scalar inv_n = Scalar(1) / Scalar(n);
  const bool underdetermined = n < d;

  InnerSolution<MatrixX<Scalar>> out;
  out.converged = true;
  switch (kind.family) {
    case Family::SymMoLinE: {
      const VectorX<Scalar> signed_y = ((Scalar(2) * resp.weights.col(0).array() - Scalar(1)) * y.array()).matrix();
      const VectorX<Scalar> rhs = inv_n * (X.transpose() * signed_y);
      if (opts.literal_beta_update) {
        out.solution = rhs;
      } else {
        const MatrixX<Scalar> gram = inv_n * (X.transpose() * X);
        out.solution = detail::gram_solve<Scalar>(gram, rhs, underdetermined, opts.ridge);
        out.grad_norm = double((gram * out.solution.col(0) - rhs).norm());
      }
      return out;
    }
    case Family::GeneralMoLinE: {
      out.solution.resize(d, kind.k);
      for (int j = 0; j < kind.k; ++j) {
        const VectorX<Scalar> rj = resp.weights.col(j);
        const MatrixX<Scalar> gram = X.transpose() * rj.asDiagonal() * X;
        const VectorX<Scalar> rhs = X.transpose() * (rj.array() * y.array()).matrix();
        // The ridge always applies here: a responsibility column can be nearly empty.
        out.solution.col(j) = detail::gram_solve<Scalar>(gram, rhs, true, opts.ridge);
      }
      return out;
    }
    case Family::SymMoLogE: {
      // sum_z r_z [softplus(s) - (yz+1)/2 s] = softplus(s) - t s with t = (y(2r-1)+1)/2
      const VectorX<Scalar> t =
          ((y.array() * (Scalar(2) * resp.weights.col(0).array() - Scalar(1)) + Scalar(1)) / Scalar(2)).matrix();
      const VectorX<Scalar> ones = VectorX<Scalar>::Ones(n);
      auto sol = detail::soft_logistic_newton<Scalar>(X, ones, t, init.col(0), opts);
      out.solution = sol.solution;
      out.converged = sol.converged;
      out.iterations = sol.iterations;
      out.grad_norm = sol.grad_norm;
      return out;
    }
    case Family::GeneralMoLogE: {
      out.solution.resize(d, kind.k);
      const VectorX<Scalar> t = ((y.array() + Scalar(1)) / Scalar(2)).matrix();
      for (int j = 0; j < kind.k; ++j) {
        auto sol = detail::soft_logistic_newton<Scalar>(X, resp.weights.col(j), t, init.col(j), opts);
        out.solution.col(j) = sol.solution;
        out.converged = out.converged && sol.converged;
        out.iterations += sol.iterations;
        out.grad_norm = std::max(out.grad_norm, sol.grad_norm);
      }
      return out;
    }
  }
  return out;
}

/// One EM iteration: E-step at theta_t, then the two separable M-step solves.
template <typename Scalar>
Theta<Scalar> em_step(const DataSet<Scalar>& data, const Theta<Scalar>& theta_t, const ModelKind& kind,
                      const SolverOptions& opts, StepReport* report = nullptr) {
  check_dataset(data, kind);
  check_theta(theta_t, data.d(), kind);
  const Responsibilities<Scalar> resp = responsibilities(data, theta_t, kind);
  auto w = solve_w_subproblem(data, resp, theta_t.gating, opts);
  auto beta = solve_beta_subproblem(data, resp, kind, theta_t.experts, opts);
  if (report) {
    report->absorb(w.converged, w.iterations, w.grad_norm, "gating subproblem");
    report->absorb(beta.converged, beta.iterations, beta.grad_norm, "expert subproblem");
  }
  return Theta<Scalar>(std::move(w.solution), std::move(beta.solution));
}

}  // namespace moem
