#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Eigenvalues>

#include "moem/types.hpp"

namespace moem {

/// Nodes and weights for E[f(t)], t ~ N(0, 1): sum_i weights[i] * f(nodes[i]).
struct NormalRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  template <typename F>
  double expect(F&& f) const {
    double s = 0;
    for (Eigen::Index i = 0; i < nodes.size(); ++i) s += weights[i] * f(nodes[i]);
    return s;
  }
};

namespace detail {

// Golub-Welsch: nodes are the eigenvalues of the symmetric Jacobi matrix of
// the orthogonal polynomials, weights mu0 * (first eigenvector component)^2.
inline void golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& offdiag, double mu0,
                         Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  const Eigen::Index m = diag.size();
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
  J.diagonal() = diag;
  for (Eigen::Index i = 0; i + 1 < m; ++i) J(i, i + 1) = J(i + 1, i) = offdiag[i];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  nodes = es.eigenvalues();
  weights = mu0 * es.eigenvectors().row(0).transpose().array().square();
}

}  // namespace detail

/// m-point Gauss-Hermite rule for the standard normal weight
/// (probabilists' Hermite polynomials, recurrence coefficient sqrt(i)).
inline NormalRule gauss_hermite(int m) {
  if (m < 1) throw Error(ErrorCode::Validation, "gauss_hermite: need at least one node");
  Eigen::VectorXd off(std::max(m - 1, 0));
  for (int i = 0; i + 1 < m; ++i) off[i] = std::sqrt(double(i + 1));
  NormalRule r;
  detail::golub_welsch(Eigen::VectorXd::Zero(m), off, 1.0, r.nodes, r.weights);
  return r;
}

/// m-point Gauss-Legendre rule on [-1, 1].
inline NormalRule gauss_legendre(int m) {
  if (m < 1) throw Error(ErrorCode::Validation, "gauss_legendre: need at least one node");
  Eigen::VectorXd off(std::max(m - 1, 0));
  for (int i = 0; i + 1 < m; ++i) {
    const double k = i + 1;
    off[i] = k / std::sqrt(4 * k * k - 1);
  }
  NormalRule r;
  detail::golub_welsch(Eigen::VectorXd::Zero(m), off, 2.0, r.nodes, r.weights);
  return r;
}

/// Settings for the composite rule: [-half_width, half_width] is split into
/// equal panels no wider than min(max_panel, panel_scale / sharpness), each
/// integrated with nodes_per_panel Gauss-Legendre points.
struct QuadratureConfig {
  int nodes_per_panel = 8;
  double half_width = 10.0;
  double max_panel = 0.5;
  double panel_scale = 2.0;

  void validate() const {
    if (nodes_per_panel < 2 || !(half_width > 0) || !(max_panel > 0) || !(panel_scale > 0))
      throw Error(ErrorCode::Validation, "invalid quadrature configuration");
  }
};

/// Composite Gauss-Legendre rule for the standard normal weight. `sharpness`
/// is the inverse width of the narrowest feature of the integrand (for
/// sigma'(s t) it is |s|); panels shrink accordingly so that peaked
/// integrands stay resolved at any scale.
inline NormalRule composite_normal_rule(double sharpness, const QuadratureConfig& cfg = {}) {
  cfg.validate();
  const double width = std::min(cfg.max_panel, cfg.panel_scale / std::max(sharpness, 1e-300));
  const int panels = std::max(1, int(std::ceil(2 * cfg.half_width / width)));
  const double h = 2 * cfg.half_width / panels;
  const NormalRule base = gauss_legendre(cfg.nodes_per_panel);
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2 * std::numbers::pi);
  NormalRule r;
  r.nodes.resize(Eigen::Index(panels) * cfg.nodes_per_panel);
  r.weights.resize(r.nodes.size());
  Eigen::Index idx = 0;
  for (int p = 0; p < panels; ++p) {
    const double mid = -cfg.half_width + (p + 0.5) * h;
    for (Eigen::Index j = 0; j < base.nodes.size(); ++j, ++idx) {
      const double t = mid + 0.5 * h * base.nodes[j];
      r.nodes[idx] = t;
      r.weights[idx] = 0.5 * h * base.weights[j] * inv_sqrt_2pi * std::exp(-0.5 * t * t);
    }
  }
  return r;
}

}  // namespace moem
