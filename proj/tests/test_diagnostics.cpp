#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "moem/diagnostics.hpp"

using namespace moem;
using namespace moem::test;

namespace {

Thetad sym(double w0, double b0, Eigen::Index d = 1, Eigen::Index axis_b = 0) {
  Thetad t = Thetad::zeros(d, ModelKind::sym_logistic());
  t.gating(0, 0) = w0;
  t.experts(axis_b, 0) = b0;
  return t;
}

bool is_psd(const Eigen::MatrixXd& M, double tol) {
  const Eigen::MatrixXd S = 0.5 * (M + M.transpose());
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() >= -tol;
}

}  // namespace

TEST_CASE("population Fisher information at zero") {
  const Eigen::Index d = 3;
  const Thetad zero = Thetad::zeros(d, ModelKind::sym_logistic());
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2 * d, 2 * d);
  CHECK((fisher_complete_population(zero, ModelKind::sym_logistic()) - I / 4).cwiseAbs().maxCoeff() <= 1e-13);
  const auto missing = fisher_missing_population(zero, ModelKind::sym_logistic());
  CHECK((missing.value - I / 4).cwiseAbs().maxCoeff() <= 1e-13);
  const auto rep = mim_certificate(zero, ModelKind::sym_logistic());
  CHECK((rep.mim - I).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(rep.lambda_max == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(rep.alpha_certificate.has_value());
}

TEST_CASE("sigmoid block bounds at norm four") {
  const Eigen::MatrixXd B = population_sigmoid_block(Eigen::Vector3d(0, 4, 0));
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(B).eigenvalues();
  CHECK(ev.minCoeff() > 0);
  CHECK(B(1, 1) <= 4.0 / 64);
  CHECK(B(0, 0) <= 1.0 / 4);
  CHECK(B(0, 0) == doctest::Approx(B(2, 2)).epsilon(1e-15));
}

TEST_CASE("logistic missing information by quadrature agrees with Monte Carlo") {
  const ModelKind kind = ModelKind::sym_logistic();
  Thetad theta = Thetad::zeros(3, kind);
  theta.gating.col(0) << 1.5, -0.5, 0.8;
  theta.experts.col(0) << -0.4, 2.0, 0.3;
  const Eigen::MatrixXd quad = fisher_missing_population(theta, kind).value;
  const DataSetd data = sample_dataset(kind, 1'000'000, 3, theta, 1000);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(6, 6), sum_sq = Eigen::MatrixXd::Zero(6, 6);
  Eigen::VectorXd v(6);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const Eigen::VectorXd x = data.features.row(i).transpose();
    const double y = data.targets[i];
    v << x, y * x;
    const Eigen::MatrixXd term = sigmoid_prime(x.dot(theta.w()) + y * x.dot(theta.beta())) * v * v.transpose();
    sum += term;
    sum_sq += term.cwiseAbs2();
  }
  const double n = double(data.n());
  const Eigen::MatrixXd mean = sum / n;
  const Eigen::MatrixXd se = ((sum_sq / n - mean.cwiseAbs2()) / (n - 1)).cwiseSqrt();
  CHECK(((quad - mean).cwiseAbs().array() <= 4 * se.array()).all());
}

TEST_CASE("linear missing information carries standard errors") {
  Thetad theta = Thetad::zeros(2, ModelKind::sym_linear());
  theta.gating(0, 0) = 1.0;
  theta.experts(1, 0) = 1.0;
  DiagnosticConfig cfg;
  cfg.monte_carlo.samples = 200000;
  const auto a = fisher_missing_population(theta, ModelKind::sym_linear(), cfg);
  REQUIRE(a.stderr_.has_value());
  CHECK(a.stderr_->maxCoeff() > 0);
  CHECK(a.stderr_->maxCoeff() < 0.01);
  const auto b = fisher_missing_population(theta, ModelKind::sym_linear(), cfg);
  CHECK(a.value == b.value);
}

TEST_CASE("Fisher matrices are positive semidefinite") {
  for (const ModelKind& kind : kSymKinds) {
    const auto inst = random_instance(1, kind, 4, 300);
    Philox4x32 rng(2);
    for (int rep = 0; rep < 20; ++rep) {
      const Thetad theta = sample_theta_in_ball(rng, 4, kind, 8.0);
      CHECK(is_psd(fisher_complete(inst.data, theta, kind), 1e-12));
      CHECK(is_psd(fisher_missing(inst.data, theta, kind), 1e-12));
    }
  }
  Philox4x32 rng(3);
  const Thetad theta = sample_theta_in_ball(rng, 3, ModelKind::sym_logistic(), 8.0);
  CHECK(is_psd(fisher_missing_population(theta, ModelKind::sym_logistic()).value, 1e-12));
}

TEST_CASE("empirical complete information is the mirror Hessian") {
  const auto inst = random_instance(4, ModelKind::sym_linear());
  Philox4x32 rng(5);
  const Thetad theta = random_theta(rng, inst.data.d(), ModelKind::sym_linear());
  CHECK(fisher_complete(inst.data, theta, ModelKind::sym_linear()) ==
        mirror_map_eval(inst.data, theta, ModelKind::sym_linear()).hessian);
}

TEST_CASE("empirical missing information is the Hessian of the posterior entropy") {
  for (const ModelKind& kind : kSymKinds) {
    const auto inst = random_instance(6, kind, 2, 200);
    Philox4x32 rng(7);
    const Thetad anchor = random_theta(rng, 2, kind);
    const Eigen::MatrixXd M = fisher_missing(inst.data, anchor, kind);
    for (Eigen::Index j = 0; j < anchor.size(); ++j) {
      const Eigen::VectorXd col = finite_difference(
          [&](const Thetad& t) {
            return finite_difference(
                [&](const Thetad& u) { return entropy_h(inst.data, u, anchor, kind).value; }, t, 1e-4)[j];
          },
          anchor, 1e-4);
      REQUIRE((M.col(j) - col).cwiseAbs().maxCoeff() <= 1e-5);
    }
  }
}

TEST_CASE("population MIM top eigenvalue shrinks with the parameter norm") {
  const ModelKind kind = ModelKind::sym_logistic();
  Philox4x32 rng(8);
  NormalSampler normal(rng);
  const Eigen::VectorXd dir = normal.unit_vector(10);
  double prev = 1 + 1e-12;
  for (double r : {1.0, 2.0, 4.0, 8.0}) {
    const Thetad theta = Thetad::from_flat(r * dir, 5, 1);
    const auto rep = mim_certificate(theta, kind);
    CHECK(rep.lambda_max < prev);
    CHECK(rep.eigenvalues.minCoeff() >= -1e-12);
    prev = rep.lambda_max;
    if (r >= 4) {
      REQUIRE(rep.alpha_certificate.has_value());
      CHECK(*rep.alpha_certificate == doctest::Approx(1 - rep.lambda_max));
    }
  }
}

TEST_CASE("ill-conditioned complete information is rejected") {
  Eigen::MatrixXd C = Eigen::MatrixXd::Identity(2, 2);
  C(1, 1) = 1e-14;
  try {
    mim_from_pair(C, Eigen::MatrixXd::Identity(2, 2));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IllConditioned);
  }
}

TEST_CASE("empirical mode needs a dataset") {
  DiagnosticConfig cfg;
  cfg.mode = FisherMode::Empirical;
  CHECK_THROWS_AS(mim_certificate(Thetad::zeros(2, ModelKind::sym_logistic()), ModelKind::sym_logistic(), cfg),
                  Error);
}

TEST_CASE("eigenvalue scaling sweep") {
  const ScalingTable table = eig_scaling_check({2, 4, 8, 16});
  CHECK(table.pass);
  REQUIRE(table.rows.size() == 4);
  for (const auto& row : table.rows) {
    CHECK(row.lambda1 <= 4 / std::pow(row.norm, 3));
    CHECK(row.lambda2 <= 1 / row.norm);
  }
  CHECK(table.band_lambda1 <= 10);
  CHECK(table.band_lambda2 <= 10);
  try {
    eig_scaling_check({1.0, 4.0});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PreconditionViolated);
  }
}

TEST_CASE("scalar missing-information bound") {
  MonteCarloConfig mc;
  mc.samples = 200000;
  SUBCASE("right-hand side closed forms") {
    CHECK(scalar_mim_bound(sym(0, 0), mc).rhs == doctest::Approx(16.0));
    const auto b = scalar_mim_bound(sym(0, 9), mc);
    CHECK(b.rhs == doctest::Approx(0.016).epsilon(1e-12));
    CHECK(b.pass);
  }
  SUBCASE("holds across seeds and parameters") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      mc.seed = seed;
      for (auto [w, b] : {std::pair{0.0, 0.0}, {1.0, 2.0}, {-3.0, 0.5}, {5.0, -5.0}, {0.0, 9.0}}) {
        const auto res = scalar_mim_bound(sym(w, b), mc);
        REQUIRE(res.pass);
      }
    }
  }
  SUBCASE("higher dimensions are rejected") {
    try {
      scalar_mim_bound(sym(1, 1, 2), mc);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::WrongDimension);
    }
  }
}

TEST_CASE("observed EM contraction respects the certified rate") {
  const ModelKind kind = ModelKind::sym_logistic();
  const auto inst = random_instance(21, kind, 2, 4000, 4.0);
  DiagnosticConfig cfg;
  cfg.mode = FisherMode::Empirical;
  Thetad limit = inst.truth;
  for (int t = 0; t < 400; ++t) limit = em_step(inst.data, limit, kind, SolverOptions{});
  const double L_star = neg_log_lik(inst.data, limit, kind).value;

  Thetad theta = inst.truth + 0.3 * Thetad::from_flat(Eigen::VectorXd::Ones(4).normalized(), 2, 1);
  double alpha = 1;
  std::vector<double> gaps;
  for (int t = 0; t < 12; ++t) {
    const auto rep = mim_certificate(theta, kind, cfg, &inst.data);
    REQUIRE(rep.alpha_certificate.has_value());
    alpha = std::min(alpha, *rep.alpha_certificate);
    gaps.push_back(neg_log_lik(inst.data, theta, kind).value - L_star);
    theta = em_step(inst.data, theta, kind, SolverOptions{});
  }
  for (std::size_t t = 0; t + 1 < gaps.size(); ++t) {
    if (gaps[t] < 1e-11) break;
    CHECK(gaps[t + 1] / gaps[t] <= 1 - alpha + 0.05);
  }
}
