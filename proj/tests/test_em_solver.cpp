#include <doctest.h>

#include <cmath>

#include <Eigen/QR>

#include "test_util.hpp"

using namespace moem;
using namespace moem::test;

namespace {

double gating_loss(const DataSetd& data, const Eigen::VectorXd& r, const Eigen::VectorXd& w) {
  const Eigen::VectorXd s = data.features * w;
  double f = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) f += softplus(s[i]) - r[i] * s[i];
  return f / double(s.size());
}

// Plain gradient descent on a logistic-type loss, step 4 / lambda_max.
Eigen::VectorXd gd_oracle(const DataSetd& data, const Eigen::VectorXd& target, int iters) {
  const auto& X = data.features;
  const double n = double(X.rows());
  const double top =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(X.transpose() * X / n, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(X.cols());
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd s = X * u;
    Eigen::VectorXd c(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) c[i] = sigmoid(s[i]) - target[i];
    u -= (4.0 / top) * (X.transpose() * c) / n;
  }
  return u;
}

Responsibilitiesd constant_resp(Eigen::Index n, double r1) {
  Responsibilitiesd r;
  r.weights.resize(n, 2);
  r.weights.col(0).setConstant(r1);
  r.weights.col(1).setConstant(1 - r1);
  return r;
}

}  // namespace

TEST_CASE("uniform responsibilities give zero gating and zero experts") {
  for (const ModelKind& kind : kSymKinds) {
    const auto inst = random_instance(1, kind);
    const auto resp = constant_resp(inst.data.n(), 0.5);
    const Eigen::MatrixXd init = Eigen::MatrixXd::Constant(inst.data.d(), 1, 0.7);
    const auto w = solve_w_subproblem<double>(inst.data, resp, init, SolverOptions{});
    CHECK(w.converged);
    CHECK(w.solution.cwiseAbs().maxCoeff() <= 1e-9);
    const auto b = solve_beta_subproblem<double>(inst.data, resp, kind, init, SolverOptions{});
    CHECK(b.solution.cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("gating subproblem agrees with a slow first-order oracle and is locally optimal") {
  const auto inst = random_instance(2, ModelKind::sym_linear(), 3, 200);
  Philox4x32 rng(3);
  const Thetad anchor = random_theta(rng, 3, ModelKind::sym_linear());
  const auto resp = responsibilities(inst.data, anchor, ModelKind::sym_linear());
  const auto w = solve_w_subproblem<double>(inst.data, resp, Eigen::MatrixXd::Zero(3, 1), SolverOptions{});
  REQUIRE(w.converged);
  const Eigen::VectorXd oracle = gd_oracle(inst.data, resp.weights.col(0), 20000);
  CHECK((w.solution.col(0) - oracle).cwiseAbs().maxCoeff() <= 1e-6);

  const Eigen::VectorXd r = resp.weights.col(0);
  const double f0 = gating_loss(inst.data, r, w.solution.col(0));
  NormalSampler normal(rng);
  for (int probe = 0; probe < 64; ++probe) {
    const Eigen::VectorXd delta = 1e-3 * normal.unit_vector(3);
    REQUIRE(gating_loss(inst.data, r, w.solution.col(0) + delta) >= f0 - 1e-14);
  }
}

TEST_CASE("logistic expert subproblem agrees with the oracle") {
  const ModelKind kind = ModelKind::sym_logistic();
  const auto inst = random_instance(4, kind, 3, 200);
  Philox4x32 rng(5);
  const auto resp = responsibilities(inst.data, random_theta(rng, 3, kind), kind);
  const auto b = solve_beta_subproblem<double>(inst.data, resp, kind, Eigen::MatrixXd::Zero(3, 1), SolverOptions{});
  REQUIRE(b.converged);
  const Eigen::VectorXd t =
      ((inst.data.targets.array() * (2 * resp.weights.col(0).array() - 1) + 1) / 2).matrix();
  CHECK((b.solution.col(0) - gd_oracle(inst.data, t, 20000)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("certain responsibilities reduce the linear expert step to least squares") {
  const ModelKind kind = ModelKind::sym_linear();
  const auto inst = random_instance(6, kind, 4, 150);
  const auto resp = constant_resp(inst.data.n(), 1.0);
  const auto b = solve_beta_subproblem<double>(inst.data, resp, kind, Eigen::MatrixXd::Zero(4, 1), SolverOptions{});
  const Eigen::VectorXd ols = inst.data.features.colPivHouseholderQr().solve(inst.data.targets);
  CHECK((b.solution.col(0) - ols).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("literal expert update coincides with the exact one under whitened features") {
  const ModelKind kind = ModelKind::sym_linear();
  auto inst = random_instance(7, kind, 3, 100);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(inst.data.features);
  inst.data.features = std::sqrt(100.0) * Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(100, 3));
  Philox4x32 rng(8);
  const auto resp = responsibilities(inst.data, random_theta(rng, 3, kind), kind);
  SolverOptions literal;
  literal.literal_beta_update = true;
  const auto a = solve_beta_subproblem<double>(inst.data, resp, kind, Eigen::MatrixXd::Zero(3, 1), SolverOptions{});
  const auto b = solve_beta_subproblem<double>(inst.data, resp, kind, Eigen::MatrixXd::Zero(3, 1), literal);
  CHECK((a.solution - b.solution).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("EM never increases the objective") {
  int checked = 0;
  for (int idx = 0; idx < 100; ++idx) {
    const ModelKind& kind = kAllKinds[idx % 4];
    const auto inst = random_instance(100 + idx, kind, 3, 150);
    Philox4x32 rng(200 + idx);
    const auto trace = fit(inst.data, random_theta(rng, 3, kind), kind, Method::EM, 8);
    REQUIRE_FALSE(trace.truncated);
    for (std::size_t t = 0; t + 1 < trace.objective.size(); ++t) {
      const double prev = trace.objective[t], next = trace.objective[t + 1];
      REQUIRE(next <= prev + 1e-12 * std::max(1.0, std::abs(prev)));
      ++checked;
    }
  }
  CHECK(checked == 800);
}

TEST_CASE("EM converges to a stationary fixed point") {
  for (const ModelKind& kind : kAllKinds) {
    const auto inst = random_instance(9, kind, 3, 400, 3.0);
    Thetad theta = inst.truth;
    for (int t = 0; t < 2000; ++t) theta = em_step(inst.data, theta, kind, SolverOptions{});
    const Eigen::VectorXd g = grad_neg_log_lik(inst.data, theta, kind).flat();
    CHECK(g.cwiseAbs().maxCoeff() <= 1e-6);
    const Thetad again = em_step(inst.data, theta, kind, SolverOptions{});
    if (kind.symmetric()) {
      CHECK((again - theta).max_abs() <= 1e-8);
    } else {
      // Softmax gating is defined up to a shared column shift.
      Eigen::MatrixXd a = again.gating, b = theta.gating;
      a.colwise() -= a.rowwise().mean();
      b.colwise() -= b.rowwise().mean();
      CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-8);
      CHECK((again.experts - theta.experts).cwiseAbs().maxCoeff() <= 1e-8);
    }
  }
}

TEST_CASE("EM traces are reproducible") {
  const ModelKind kind = ModelKind::general_logistic(3);
  const auto inst = random_instance(10, kind);
  Philox4x32 rng(11);
  const Thetad start = random_theta(rng, inst.data.d(), kind);
  const auto a = fit(inst.data, start, kind, Method::EM, 5);
  const auto b = fit(inst.data, start, kind, Method::EM, 5);
  for (std::size_t t = 0; t < a.thetas.size(); ++t) CHECK(a.thetas[t] == b.thetas[t]);
}

TEST_CASE("more features than samples still yields a finite step") {
  const ModelKind kind = ModelKind::sym_linear();
  const auto inst = random_instance(12, kind, 6, 4);
  const Thetad next = em_step(inst.data, Thetad::zeros(6, kind), kind, SolverOptions{});
  CHECK(next.all_finite());
}

TEST_CASE("an exhausted inner budget is reported, not thrown") {
  const ModelKind kind = ModelKind::sym_logistic();
  const auto inst = random_instance(13, kind);
  SolverOptions opts;
  opts.inner_max_iter = 1;
  StepReport report;
  Thetad start = Thetad::zeros(inst.data.d(), kind);
  start.gating.setConstant(3.0);
  const Thetad next = em_step(inst.data, start, kind, opts, &report);
  CHECK(next.all_finite());
  CHECK_FALSE(report.converged);
  CHECK(report.note.find("iteration limit") != std::string::npos);
}

TEST_CASE("solver options are validated") {
  SolverOptions opts;
  opts.inner_tol = 0;
  CHECK_THROWS_AS(opts.validate(), Error);
  opts = {};
  opts.ridge = -1;
  CHECK_THROWS_AS(opts.validate(), Error);
}
