#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Eigenvalues>

#include "moem/mirror.hpp"
#include "moem/quadrature.hpp"

namespace moem {

enum class FisherMode { Empirical, Population };

struct MonteCarloConfig {
  std::int64_t samples = 1'000'000;
  std::uint64_t seed = 0;
  std::int64_t block = 20'000;  // samples per independently seeded block

  void validate() const {
    if (samples < 2 || block < 1) throw Error(ErrorCode::Validation, "invalid Monte Carlo configuration");
  }
};

struct DiagnosticConfig {
  FisherMode mode = FisherMode::Population;
  QuadratureConfig quadrature;
  MonteCarloConfig monte_carlo;
};

/// Complete and missing information at one theta. `missing_stderr` holds
/// entrywise standard errors when the missing block was estimated by Monte Carlo.
struct FisherPair {
  Eigen::MatrixXd complete;
  Eigen::MatrixXd missing;
  std::optional<Eigen::MatrixXd> missing_stderr;
  FisherMode mode = FisherMode::Population;
};

struct MimReport {
  Eigen::MatrixXd mim;
  Eigen::VectorXd eigenvalues;  // descending
  double lambda_max = 0;
  std::optional<double> alpha_certificate;
  double asymmetry = 0;  // ||M - M'||_F / ||M||_F
  double condition_complete = 0;
};

// ---------------------------------------------------------------- complete

/// Empirical complete-data Fisher information: the Hessian of the mirror map.
template <typename Scalar>
MatrixX<Scalar> fisher_complete(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const ModelKind& kind) {
  return mirror_map_eval(data, theta, kind, true).hessian;
}

struct SigmoidBlockEigen {
  double lambda1 = 0;  // along u: E[x1^2 sigma'(|u| x1)]
  double lambda2 = 0;  // across u: E[sigma'(|u| x1)]
};

/// The two distinct eigenvalues of E[xx' sigma'(x'u)] for x ~ N(0, I), given |u|.
inline SigmoidBlockEigen sigmoid_block_eigen(double norm, const QuadratureConfig& cfg = {}) {
  const NormalRule rule = composite_normal_rule(norm, cfg);
  SigmoidBlockEigen e;
  e.lambda1 = rule.expect([&](double t) { return t * t * sigmoid_prime(norm * t); });
  e.lambda2 = rule.expect([&](double t) { return sigmoid_prime(norm * t); });
  return e;
}

/// E[xx' sigma'(x'u)] for x ~ N(0, I): rotate u onto the first axis, where
/// the matrix is diag(lambda1, lambda2, ..., lambda2), then rotate back.
inline Eigen::MatrixXd population_sigmoid_block(const Eigen::VectorXd& u, const QuadratureConfig& cfg = {}) {
  const Eigen::Index d = u.size();
  const double norm = u.norm();
  const SigmoidBlockEigen e = sigmoid_block_eigen(norm, cfg);
  Eigen::MatrixXd block = e.lambda2 * Eigen::MatrixXd::Identity(d, d);
  if (norm > 0) block += (e.lambda1 - e.lambda2) * (u * u.transpose()) / (norm * norm);
  return block;
}

/// Population complete-data Fisher information for x ~ N(0, I).
inline Eigen::MatrixXd fisher_complete_population(const Thetad& theta, const ModelKind& kind,
                                                  const QuadratureConfig& cfg = {}) {
  detail::require_symmetric(kind, "fisher_complete_population");
  check_theta(theta, theta.dim(), kind);
  const Eigen::Index d = theta.dim();
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  F.topLeftCorner(d, d) = population_sigmoid_block(theta.w(), cfg);
  F.bottomRightCorner(d, d) =
      kind.linear() ? Eigen::MatrixXd(Eigen::MatrixXd::Identity(d, d)) : population_sigmoid_block(theta.beta(), cfg);
  return F;
}

// ----------------------------------------------------------------- missing

/// Empirical missing information mean[sigma'(<v, theta>) v v'] with
/// v = (x; 2yx) for linear experts and v = (x; yx) for logistic experts.
template <typename Scalar>
MatrixX<Scalar> fisher_missing(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const ModelKind& kind) {
  detail::require_symmetric(kind, "fisher_missing");
  check_dataset(data, kind);
  check_theta(theta, data.d(), kind);
  const auto& X = data.features;
  const Eigen::Index n = data.n(), d = data.d();
  const Scalar scale = kind.linear() ? Scalar(2) : Scalar(1);
  const VectorX<Scalar> a = X * theta.gating.col(0);
  const VectorX<Scalar> b = X * theta.experts.col(0);
  VectorX<Scalar> c0(n), c1(n), c2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar yy = scale * data.targets[i];
    const Scalar s = sigmoid_prime(a[i] + yy * b[i]);
    c0[i] = s;
    c1[i] = s * yy;
    c2[i] = s * yy * yy;
  }
  const Scalar inv_n = Scalar(1) / Scalar(n);
  MatrixX<Scalar> M(2 * d, 2 * d);
  M.topLeftCorner(d, d) = inv_n * (X.transpose() * c0.asDiagonal() * X);
  M.topRightCorner(d, d) = inv_n * (X.transpose() * c1.asDiagonal() * X);
  M.bottomLeftCorner(d, d) = M.topRightCorner(d, d).transpose();
  M.bottomRightCorner(d, d) = inv_n * (X.transpose() * c2.asDiagonal() * X);
  return M;
}

struct MissingEstimate {
  Eigen::MatrixXd value;
  std::optional<Eigen::MatrixXd> stderr_;  // Monte Carlo only
};

namespace detail {

// SymMoLogE: the integrand depends on x only through its projection onto
// span{w, beta}. With an orthonormal basis Q of that span and t = Q'x,
//   E[S(x) xx'] = Q E[S(t) tt'] Q' + E[S(t)] (I - QQ'),
// and E[S(t) tt'] is a tensor-product quadrature over at most two dimensions.
inline Eigen::MatrixXd logistic_missing_quadrature(const Thetad& theta, const QuadratureConfig& cfg) {
  const Eigen::Index d = theta.dim();
  const Eigen::VectorXd w = theta.w(), beta = theta.beta();

  Eigen::MatrixXd span(d, 2);
  span << w, beta;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(span, Eigen::ComputeThinU);
  const double tol = 1e-12 * std::max(1.0, svd.singularValues()[0]);
  const Eigen::Index rank = (svd.singularValues().array() > tol).count();
  const Eigen::MatrixXd Q = svd.matrixU().leftCols(rank);

  const Eigen::VectorXd wq = Q.transpose() * w, bq = Q.transpose() * beta;
  const double sharp = std::max({w.norm() + beta.norm(), 1.0});
  const NormalRule rule = composite_normal_rule(sharp, cfg);

  // Accumulate E[S0], E[S1], E[S0 tt'], E[S1 tt'] in the rotated basis
  // (padded to two coordinates; unused ones stay zero).
  Eigen::Vector2d wp = Eigen::Vector2d::Zero(), bp = Eigen::Vector2d::Zero();
  wp.head(rank) = wq;
  bp.head(rank) = bq;
  double e0 = 0, e1 = 0;
  Eigen::Matrix2d m0 = Eigen::Matrix2d::Zero(), m1 = Eigen::Matrix2d::Zero();
  auto accumulate = [&](const Eigen::Vector2d& t, double weight) {
    const double a = wp.dot(t), c = bp.dot(t);
    double s0 = 0, s1 = 0;
    for (double y : {1.0, -1.0}) {
      const double p = sigmoid(a) * sigmoid(y * c) + sigmoid(-a) * sigmoid(-y * c);
      const double sp = sigmoid_prime(a + y * c);
      s0 += p * sp;
      s1 += y * p * sp;
    }
    e0 += weight * s0;
    e1 += weight * s1;
    const Eigen::Matrix2d tt = t * t.transpose();
    m0 += weight * s0 * tt;
    m1 += weight * s1 * tt;
  };
  if (rank == 0) {
    accumulate(Eigen::Vector2d::Zero(), 1.0);
  } else if (rank == 1) {
    for (Eigen::Index i = 0; i < rule.nodes.size(); ++i) accumulate({rule.nodes[i], 0.0}, rule.weights[i]);
  } else {
    for (Eigen::Index i = 0; i < rule.nodes.size(); ++i)
      for (Eigen::Index j = 0; j < rule.nodes.size(); ++j)
        accumulate({rule.nodes[i], rule.nodes[j]}, rule.weights[i] * rule.weights[j]);
  }

  const Eigen::MatrixXd P = Eigen::MatrixXd::Identity(d, d) - Q * Q.transpose();
  const Eigen::MatrixXd B0 = Q * m0.topLeftCorner(rank, rank) * Q.transpose() + e0 * P;
  const Eigen::MatrixXd B1 = Q * m1.topLeftCorner(rank, rank) * Q.transpose() + e1 * P;
  Eigen::MatrixXd M(2 * d, 2 * d);
  M << B0, B1, B1, B0;  // y^2 = 1, so the expert block equals the gating block
  return M;
}

// SymMoLinE: Monte Carlo over fresh (x, z, y) draws at theta, in blocks with
// seeds derived from the configured seed, reduced in block order.
inline MissingEstimate linear_missing_monte_carlo(const Thetad& theta, const MonteCarloConfig& mc) {
  const Eigen::Index d = theta.dim();
  const ModelKind kind = ModelKind::sym_linear();
  const Eigen::Index dim = 2 * d;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(dim, dim), sum_sq = Eigen::MatrixXd::Zero(dim, dim);
  std::int64_t done = 0;
  for (std::int64_t blk = 0; done < mc.samples; ++blk) {
    const std::int64_t m = std::min(mc.block, mc.samples - done);
    const DataSetd data = sample_dataset(kind, m, d, theta, derive_seed(mc.seed, std::uint64_t(blk)));
    const Eigen::VectorXd a = data.features * theta.w();
    const Eigen::VectorXd b = data.features * theta.beta();
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double yy = 2 * data.targets[i];
      const double s = sigmoid_prime(a[i] + yy * b[i]);
      v.head(d) = data.features.row(i).transpose();
      v.tail(d) = yy * v.head(d);
      const Eigen::MatrixXd term = s * v * v.transpose();
      sum += term;
      sum_sq += term.cwiseProduct(term);
    }
    done += m;
  }
  const double n = double(mc.samples);
  MissingEstimate out;
  out.value = sum / n;
  const Eigen::MatrixXd var = (sum_sq / n - out.value.cwiseProduct(out.value)) * (n / (n - 1));
  out.stderr_ = (var.cwiseMax(0.0) / n).cwiseSqrt();
  return out;
}

}  // namespace detail

/// Population missing information for x ~ N(0, I). SymMoLogE is integrated
/// by quadrature over span{w, beta}; SymMoLinE, whose y is continuous, by
/// Monte Carlo with entrywise standard errors.
inline MissingEstimate fisher_missing_population(const Thetad& theta, const ModelKind& kind,
                                                 const DiagnosticConfig& cfg = {}) {
  detail::require_symmetric(kind, "fisher_missing_population");
  check_theta(theta, theta.dim(), kind);
  if (kind.logistic()) return {detail::logistic_missing_quadrature(theta, cfg.quadrature), std::nullopt};
  cfg.monte_carlo.validate();
  return detail::linear_missing_monte_carlo(theta, cfg.monte_carlo);
}

// ------------------------------------------------------------------- MIM

inline constexpr double kCertificateMargin = 1e-9;

/// M = complete^{-1} missing. The inverse goes through a symmetric
/// eigendecomposition with eigenvalues floored at 1e-12; the spectrum comes
/// from the symmetric-definite pencil (missing, complete), which has the same
/// eigenvalues as M and is real by construction.
inline MimReport mim_from_pair(const Eigen::MatrixXd& complete, const Eigen::MatrixXd& missing) {
  if (complete.rows() != complete.cols() || complete.rows() != missing.rows() || missing.cols() != missing.rows())
    throw Error(ErrorCode::DimensionMismatch, "mim: matrix shapes differ");
  const Eigen::MatrixXd C = 0.5 * (complete + complete.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double top = ev.maxCoeff();
  MimReport rep;
  rep.condition_complete = ev.minCoeff() > 0 ? top / ev.minCoeff() : std::numeric_limits<double>::infinity();
  if (!(rep.condition_complete <= 1e12))
    throw Error(ErrorCode::IllConditioned, "complete-data Fisher information is ill conditioned");
  const Eigen::MatrixXd inv =
      es.eigenvectors() * ev.cwiseMax(1e-12).cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  rep.mim = inv * missing;

  const Eigen::MatrixXd J = 0.5 * (missing + missing.transpose());
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(J, C, Eigen::EigenvaluesOnly);
  rep.eigenvalues = ges.eigenvalues().reverse();
  rep.lambda_max = rep.eigenvalues[0];
  // A spectrum that touches 1 up to rounding (theta = 0 gives M = I) earns no certificate.
  if (rep.lambda_max < 1 - kCertificateMargin) rep.alpha_certificate = 1 - rep.lambda_max;
  const double fro = rep.mim.norm();
  rep.asymmetry = fro > 0 ? (rep.mim - rep.mim.transpose()).norm() / fro : 0.0;
  return rep;
}

/// Fisher pair at theta: the empirical measure of `data`, or the population
/// law x ~ N(0, I) with responses drawn from the model at theta.
inline FisherPair fisher_pair(const Thetad& theta, const ModelKind& kind, const DiagnosticConfig& cfg,
                              const DataSetd* data = nullptr) {
  detail::require_symmetric(kind, "fisher_pair");
  FisherPair pair;
  pair.mode = cfg.mode;
  if (cfg.mode == FisherMode::Empirical) {
    if (!data) throw Error(ErrorCode::Validation, "empirical Fisher information needs a dataset");
    pair.complete = fisher_complete(*data, theta, kind);
    pair.missing = fisher_missing(*data, theta, kind);
    return pair;
  }
  pair.complete = fisher_complete_population(theta, kind, cfg.quadrature);
  MissingEstimate m = fisher_missing_population(theta, kind, cfg);
  pair.missing = std::move(m.value);
  pair.missing_stderr = std::move(m.stderr_);
  return pair;
}

inline MimReport mim_certificate(const Thetad& theta, const ModelKind& kind, const DiagnosticConfig& cfg = {},
                                 const DataSetd* data = nullptr) {
  const FisherPair pair = fisher_pair(theta, kind, cfg, data);
  return mim_from_pair(pair.complete, pair.missing);
}

// ---------------------------------------------------------- scaling checks

struct ScalingRow {
  double norm = 0;
  double lambda1 = 0;
  double lambda2 = 0;
  bool within_bounds = false;  // 0 < lambda1 <= 4/|u|^3 and 0 < lambda2 <= 1/|u|
};

struct ScalingTable {
  std::vector<ScalingRow> rows;
  double band_lambda1 = 0;  // max/min of lambda1 |u|^3 over the sweep
  double band_lambda2 = 0;  // max/min of lambda2 |u|
  bool pass = false;
};

/// Eigenvalues of E[xx' sigma'(x'u)] along a sweep of |u|, checked against
/// lambda1 <= 4/|u|^3 and lambda2 <= 1/|u|, with the compensated products
/// lambda1 |u|^3 and lambda2 |u| each confined to a factor-10 band.
inline ScalingTable eig_scaling_check(const std::vector<double>& norms, const QuadratureConfig& cfg = {}) {
  if (norms.empty()) throw Error(ErrorCode::Validation, "eig_scaling_check: empty sweep");
  for (double s : norms)
    if (!(s >= std::sqrt(2.0))) throw Error(ErrorCode::PreconditionViolated, "eig_scaling_check: norms must be >= sqrt(2)");
  ScalingTable table;
  table.pass = true;
  double lo1 = INFINITY, hi1 = 0, lo2 = INFINITY, hi2 = 0;
  for (double s : norms) {
    const SigmoidBlockEigen e = sigmoid_block_eigen(s, cfg);
    ScalingRow row{s, e.lambda1, e.lambda2, false};
    row.within_bounds = e.lambda1 > 0 && e.lambda2 > 0 && e.lambda1 <= 4 / (s * s * s) && e.lambda2 <= 1 / s;
    table.pass = table.pass && row.within_bounds;
    lo1 = std::min(lo1, e.lambda1 * s * s * s);
    hi1 = std::max(hi1, e.lambda1 * s * s * s);
    lo2 = std::min(lo2, e.lambda2 * s);
    hi2 = std::max(hi2, e.lambda2 * s);
    table.rows.push_back(row);
  }
  table.band_lambda1 = hi1 / lo1;
  table.band_lambda2 = hi2 / lo2;
  table.pass = table.pass && table.band_lambda1 <= 10 && table.band_lambda2 <= 10;
  return table;
}

struct ScalarBound {
  double lhs = 0;     // Monte Carlo trace of the missing information
  double stderr_ = 0;
  double rhs = 0;     // 8 (1/(1+|w-beta|)^3 + 1/(1+|w+beta|)^3)
  bool pass = false;  // lhs <= rhs + 3 stderr
};

/// d = 1 SymMoLogE: trace of the missing information, 2 E[x^2 sigma'(x(w + y beta))],
/// estimated by Monte Carlo and compared with the closed-form upper bound.
inline ScalarBound scalar_mim_bound(const Thetad& theta, const MonteCarloConfig& mc = {}) {
  if (theta.dim() != 1 || theta.gating.cols() != 1 || theta.experts.cols() != 1)
    throw Error(ErrorCode::WrongDimension, "scalar_mim_bound needs d = 1");
  mc.validate();
  const ModelKind kind = ModelKind::sym_logistic();
  check_theta(theta, 1, kind);
  const double w = theta.gating(0, 0), beta = theta.experts(0, 0);
  double sum = 0, sum_sq = 0;
  std::int64_t done = 0;
  for (std::int64_t blk = 0; done < mc.samples; ++blk) {
    const std::int64_t m = std::min(mc.block, mc.samples - done);
    const DataSetd data = sample_dataset(kind, m, 1, theta, derive_seed(mc.seed, std::uint64_t(blk)));
    for (Eigen::Index i = 0; i < m; ++i) {
      const double x = data.features(i, 0), y = data.targets[i];
      const double v = 2 * x * x * sigmoid_prime(x * (w + y * beta));
      sum += v;
      sum_sq += v * v;
    }
    done += m;
  }
  const double n = double(mc.samples);
  ScalarBound out;
  out.lhs = sum / n;
  out.stderr_ = std::sqrt(std::max(0.0, (sum_sq / n - out.lhs * out.lhs) / (n - 1)));
  const double a = 1 + std::abs(w - beta), b = 1 + std::abs(w + beta);
  out.rhs = 8 * (1 / (a * a * a) + 1 / (b * b * b));
  out.pass = out.lhs <= out.rhs + 3 * out.stderr_;
  return out;
}

}  // namespace moem
