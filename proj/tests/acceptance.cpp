// Acceptance checks. Usage: moem_acceptance <1..10|all> [--cli path/to/moem]
// Prints one "criterion N PASS|FAIL: details" line per criterion run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "moem/diagnostics.hpp"
#include "moem/harness.hpp"

using namespace moem;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const ModelKind kSym[] = {ModelKind::sym_linear(), ModelKind::sym_logistic()};

DataSetd fixed_dataset(const ModelKind& kind, std::uint64_t seed, Eigen::Index d = 5, Eigen::Index n = 500) {
  Philox4x32 rng(seed, 7);
  const Thetad truth = sample_theta_in_ball(rng, d, kind, 6.0);
  return sample_dataset(kind, n, d, truth, seed);
}

Outcome em_equals_md() {
  double worst = 0;
  int passed = 0, total = 0;
  for (const ModelKind& kind : kSym) {
    const DataSetd data = fixed_dataset(kind, 101);
    Philox4x32 rng(202);
    for (int s = 0; s < 20; ++s) {
      const Thetad theta = sample_theta_in_ball(rng, 5, kind, 8.0);
      const auto rep = verify_em_equals_md(data, theta, kind, 1e-6);
      worst = std::max(worst, rep.rel_gap);
      passed += rep.pass ? 1 : 0;
      ++total;
    }
  }
  return {passed == total, std::to_string(passed) + "/" + std::to_string(total) + " states, max rel_gap " + fmt(worst)};
}

Outcome bregman_is_kl() {
  double worst = 0;
  for (const ModelKind& kind : kSym) {
    const DataSetd data = fixed_dataset(kind, 303);
    Philox4x32 rng(404);
    for (int p = 0; p < 50; ++p) {
      const Thetad theta = sample_theta_in_ball(rng, 5, kind, 8.0);
      const Thetad phi = sample_theta_in_ball(rng, 5, kind, 8.0);
      worst = std::max(worst, std::abs(bregman(data, phi, theta, kind) - complete_data_kl(data, theta, phi, kind)));
    }
  }
  return {worst <= 1e-10, "100 pairs, max |D_A - KL| " + fmt(worst)};
}

Outcome descent_and_progress() {
  double worst_rise = -INFINITY, worst_gap = -INFINITY;
  long steps = 0, em_steps = 0;
  std::vector<ExperimentConfig> configs(2);
  configs[1].kind = ModelKind::sym_logistic();
  configs[1].instances = 20;
  for (const auto& cfg : configs) {
    const ExperimentResult res = run_experiment(cfg);
    for (const auto& inst : res.instances) {
      if (inst.error) return {false, "instance " + std::to_string(inst.index) + " failed: " + *inst.error};
      for (const auto& run : inst.runs) {
        const auto& tr = run.trace;
        for (std::size_t t = 0; t + 1 < tr.objective.size(); ++t) {
          const double drop = tr.objective[t] - tr.objective[t + 1];
          worst_rise = std::max(worst_rise, -drop);
          ++steps;
          if (run.method == Method::EM) {
            worst_gap = std::max(worst_gap, tr.bregman_steps[t] - drop);
            ++em_steps;
          }
        }
      }
    }
  }
  const bool pass = worst_rise <= 1e-10 && worst_gap <= 1e-8;
  return {pass, std::to_string(steps) + " steps, max rise " + fmt(worst_rise) + "; " + std::to_string(em_steps) +
                    " EM steps, max D_A - decrease " + fmt(worst_gap)};
}

Outcome gradient_identities() {
  const ModelKind kinds[] = {ModelKind::sym_linear(), ModelKind::sym_logistic(), ModelKind::general_linear(3),
                             ModelKind::general_logistic(3)};
  double worst_fd = 0, worst_q = 0;
  bool pass = true;
  for (int i = 0; i < 50; ++i) {
    const ModelKind& kind = kinds[i % 4];
    const DataSetd data = fixed_dataset(kind, 500 + i, 4, 200);
    Philox4x32 rng(600 + i);
    NormalSampler normal(rng);
    const Eigen::Index cols = kind.columns();
    const Thetad theta = Thetad::from_flat(normal.vector(2 * 4 * cols), 4, cols);
    const Eigen::VectorXd g = grad_neg_log_lik(data, theta, kind).flat();
    const Eigen::VectorXd x = theta.flat();
    Eigen::VectorXd fd(x.size());
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      fd[j] = (neg_log_lik(data, Thetad::from_flat(xp, 4, cols), kind).value -
               neg_log_lik(data, Thetad::from_flat(xm, 4, cols), kind).value) /
              (2 * h);
    }
    const double e_fd = (g - fd).cwiseAbs().maxCoeff();
    const double e_q = (g - grad_surrogate_q(data, theta, theta, kind).flat()).cwiseAbs().maxCoeff();
    pass = pass && e_fd <= 1e-5 * (1 + g.cwiseAbs().maxCoeff()) && e_q <= 1e-8;
    worst_fd = std::max(worst_fd, e_fd);
    worst_q = std::max(worst_q, e_q);
  }
  return {pass, "50 instances, max |grad - fd| " + fmt(worst_fd) + ", max |grad L - grad Q| " + fmt(worst_q)};
}

Outcome relative_smoothness() {
  double worst = -INFINITY;
  for (const ModelKind& kind : kSym) worst = std::max(worst, relative_smoothness_probe(fixed_dataset(kind, 707), 500, kind, 808));
  return {worst <= 1e-8, "1000 pairs, max violation " + fmt(worst)};
}

Outcome synthetic_reproduction() {
  const ExperimentConfig cfg;  // SymMoLinE, d=10, n=1000, norms 4, T=50, 50 instances, rho=0.5
  const ExperimentResult res = run_experiment(cfg);
  for (const auto& inst : res.instances)
    if (inst.error) return {false, "instance " + std::to_string(inst.index) + " failed: " + *inst.error};
  const auto em = final_values(res, Method::EM, &MetricRow::beta_rel_err);
  const auto gd = final_values(res, Method::GD, &MetricRow::beta_rel_err);
  const double med_em = median(em), med_gd = median(gd);
  const TTest t = paired_t_test(gd, em);

  int decayed = 0, counted = 0;
  for (const auto& inst : res.instances)
    for (const auto& run : inst.runs) {
      if (run.method != Method::EM) continue;
      const auto& obj = run.trace.objective;
      const double gap0 = obj.front() - obj.back();
      const double gap_last = obj[obj.size() - 2] - obj.back();
      decayed += gap_last <= gap0 / 1e3 ? 1 : 0;
      ++counted;
    }
  const double frac = double(decayed) / counted;

  const bool a = med_em <= 0.15, b = med_em < med_gd, c = t.t_stat >= 3 && t.p_value < 0.01, d = frac >= 0.8;
  std::string detail = std::string("(a) ") + (a ? "ok" : "fail") + " EM median beta err " + fmt(med_em) + "; (b) " +
                       (b ? "ok" : "fail") + " GD median " + fmt(med_gd) + "; (c) " + (c ? "ok" : "fail") +
                       " paired t " + fmt(t.t_stat) + " p " + fmt(t.p_value) + "; (d) " + (d ? "ok" : "fail") +
                       " gap decay fraction " + fmt(frac);
  return {a && b && c && d, detail};
}

Outcome mim_bounds() {
  const ScalingTable table = eig_scaling_check({2, 4, 8, 16});
  std::string detail;
  for (const auto& row : table.rows)
    detail += "|u|=" + fmt(row.norm) + " l1=" + fmt(row.lambda1) + " l2=" + fmt(row.lambda2) + "; ";
  detail += "bands " + fmt(table.band_lambda1) + ", " + fmt(table.band_lambda2);
  return {table.pass, detail};
}

Outcome mim_structure() {
  const ModelKind kind = ModelKind::sym_logistic();
  const Eigen::Index d = 5;
  const MimReport zero = mim_certificate(Thetad::zeros(d, kind), kind);
  const double id_err = (zero.mim - Eigen::MatrixXd::Identity(2 * d, 2 * d)).cwiseAbs().maxCoeff();
  const bool zero_ok = id_err <= 1e-6 && std::abs(zero.lambda_max - 1) <= 1e-6 && !zero.alpha_certificate;

  Philox4x32 rng(909);
  double worst_asym = 0;
  for (int i = 0; i < 20; ++i)
    worst_asym = std::max(worst_asym, mim_certificate(sample_theta_in_ball(rng, d, kind, 8.0), kind).asymmetry);
  const bool asym_ok = worst_asym <= 1e-6;

  NormalSampler normal(rng);
  const Eigen::VectorXd dir = normal.unit_vector(2 * d);
  bool monotone = true;
  double prev = INFINITY;
  std::string sweep;
  for (double r : {1.0, 2.0, 4.0, 8.0}) {
    const double lm = mim_certificate(Thetad::from_flat(r * dir, d, 1), kind).lambda_max;
    monotone = monotone && lm < prev;
    prev = lm;
    sweep += (sweep.empty() ? "" : " ") + fmt(lm);
  }
  const std::string detail = std::string("theta=0 ") + (zero_ok ? "ok" : "fail") + " (|M - I| " + fmt(id_err) +
                             ", lambda_max " + fmt(zero.lambda_max) + "); asymmetry " + (asym_ok ? "ok" : "fail") +
                             " (max " + fmt(worst_asym) + " over 20 thetas); sweep " + (monotone ? "ok" : "fail") +
                             " (lambda_max " + sweep + ")";
  return {zero_ok && asym_ok && monotone, detail};
}

Outcome strict_convexity() {
  double smallest = INFINITY;
  for (const ModelKind& kind : kSym) {
    const DataSetd data = fixed_dataset(kind, 1001);
    Philox4x32 rng(1002);
    for (int i = 0; i < 100; ++i) {
      const Thetad theta = sample_theta_in_ball(rng, 5, kind, 16.0);
      const Eigen::MatrixXd H = mirror_map_eval(data, theta, kind).hessian;
      smallest = std::min(smallest, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H, Eigen::EigenvaluesOnly)
                                        .eigenvalues()
                                        .minCoeff());
    }
  }
  return {smallest > 0, "200 thetas, smallest Hessian eigenvalue " + fmt(smallest)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(const std::string& cli) {
  if (cli.empty()) return {false, "no --cli given"};
  const fs::path root = fs::current_path() / "acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "experiment.cfg";
  std::ofstream(cfg) << "instances = 8\niters = 30\nseed = 7\n";
  const std::string files[] = {"metrics.csv", "summary.txt", "objective_gap.svg", "param_errors.svg"};
  std::string runs[2];
  for (int r = 0; r < 2; ++r) {
    const fs::path out = root / ("run" + std::to_string(r));
    const std::string cmd = "\"" + cli + "\" compare --config \"" + cfg.string() + "\" --out \"" + out.string() +
                            "\" > \"" + (root / ("log" + std::to_string(r))).string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "compare exited non-zero (run " + std::to_string(r) + ")"};
  }
  int identical = 0;
  for (const auto& f : files) {
    const std::string a = slurp(root / "run0" / f), b = slurp(root / "run1" / f);
    if (!a.empty() && a == b) ++identical;
  }
  return {identical == 4, std::to_string(identical) + "/4 artifacts byte-identical across reruns"};
}

struct Criterion {
  const char* name;
  double budget_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::string which = argc > 1 ? argv[1] : "all";
  std::string cli;
  for (int i = 2; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--cli") cli = argv[i + 1];

  const Criterion criteria[] = {
      {"EM equals mirror descent", 10, em_equals_md},
      {"Bregman divergence equals complete-data KL", 2, bregman_is_kl},
      {"descent and progress bound", 0, descent_and_progress},
      {"gradient identities", 0, gradient_identities},
      {"relative smoothness", 0, relative_smoothness},
      {"synthetic reproduction", 120, synthetic_reproduction},
      {"MIM eigenvalue bounds", 1, mim_bounds},
      {"MIM structure", 30, mim_structure},
      {"strict convexity of the mirror map", 0, strict_convexity},
      {"determinism", 0, [&] { return determinism(cli); }},
  };

  bool all_pass = true;
  for (int i = 1; i <= 10; ++i) {
    if (which != "all" && which != std::to_string(i)) continue;
    const Criterion& c = criteria[i - 1];
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = fmt(secs) + " s";
    if (c.budget_s > 0) {
      timing += " (budget " + fmt(c.budget_s) + " s)";
      if (secs > c.budget_s) out.pass = false;
    }
    std::cout << "criterion " << i << " " << (out.pass ? "PASS" : "FAIL") << ": " << c.name << "; " << out.detail
              << "; " << timing << std::endl;
    all_pass = all_pass && out.pass;
  }
  return all_pass ? 0 : 1;
}
