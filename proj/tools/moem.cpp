// moem command-line front end: generate, fit, compare, verify, diagnose.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moem/diagnostics.hpp"
#include "moem/harness.hpp"

namespace fs = std::filesystem;
using namespace moem;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitSolver = 2;
constexpr int kExitVerifyFail = 3;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::SingularSystem:
    case ErrorCode::IterationLimit:
    case ErrorCode::IllConditioned:
    case ErrorCode::AllDiverged:
    case ErrorCode::NonFinite:
      return kExitSolver;
    default:
      return kExitValidation;
  }
}

struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> kind;
  std::optional<int> d, n, iters, instances;
  std::optional<std::string> method;
  std::optional<double> rho;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "flat key = value config file");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--out", out, "output directory");
    app->add_option("--kind", kind, "SymMoLinE, SymMoLogE, GeneralMoLinE or GeneralMoLogE");
    app->add_option("--d", d, "feature dimension");
    app->add_option("--n", n, "samples per dataset");
    app->add_option("--iters", iters, "iterations per fit");
    app->add_option("--instances", instances, "number of instances");
    app->add_option("--method", method, "method, or comma-separated methods for compare");
    app->add_option("--rho", rho, "relative initialisation radius");
  }

  // Config file first, then flags on top.
  ExperimentConfig resolve(ExperimentConfig base = {}) const {
    ExperimentConfig cfg = config ? load_config(*config, base) : base;
    if (kind) apply_config_value(cfg, "kind", *kind);
    if (seed) cfg.master_seed = *seed;
    if (out) cfg.output_dir = *out;
    if (d) cfg.d = *d;
    if (n) cfg.n = *n;
    if (iters) cfg.T = *iters;
    if (instances) cfg.instances = *instances;
    if (method) apply_config_value(cfg, "methods", *method);
    if (rho) cfg.rho = *rho;
    cfg.validate();
    return cfg;
  }
};

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

int cmd_generate(const CommonFlags& flags) {
  const ExperimentConfig cfg = flags.resolve();
  const InstanceSetup setup = make_instance(cfg, 0);
  const fs::path dir = ensure_dir(cfg.output_dir);
  write_file(dir / "dataset.csv", dataset_csv(setup.data));
  write_file(dir / "truth.csv", theta_csv(setup.truth));
  std::cout << "wrote " << (dir / "dataset.csv").string() << " (" << setup.data.n() << " x " << setup.data.d()
            << ") and " << (dir / "truth.csv").string() << "\n";
  return 0;
}

int cmd_fit(const CommonFlags& flags, const std::optional<std::string>& data_path,
            const std::optional<std::string>& truth_path) {
  ExperimentConfig cfg = flags.resolve();
  if (cfg.methods.size() != 1) {
    ExperimentConfig one = cfg;
    one.methods = {cfg.methods.front()};
    cfg = one;
  }
  InstanceResult inst;
  inst.index = 0;
  if (data_path) {
    DataSetd data = read_dataset_csv(*data_path, cfg.kind);
    if (truth_path) data.truth = read_theta_csv(*truth_path, cfg.kind);
    cfg.d = int(data.d());
    cfg.n = int(data.n());
    Philox4x32 rng(cfg.master_seed);
    NormalSampler normal(rng);
    const Eigen::Index size = 2 * data.d() * cfg.kind.columns();
    if (data.truth) {
      inst.truth = *data.truth;
      inst.theta_1 = inst.truth + Thetad::from_flat(cfg.rho * inst.truth.norm() * normal.unit_vector(size), data.d(),
                                                    cfg.kind.columns());
    } else {
      inst.theta_1 = Thetad::from_flat(normal.unit_vector(size), data.d(), cfg.kind.columns());
    }
    MethodRun run;
    run.method = cfg.methods.front();
    FitOptions opts;
    opts.solver = cfg.solver;
    opts.record_timing = cfg.record_timing;
    if (run.method == Method::GD)
      opts.steps = select_step_size(data, inst.theta_1, cfg.kind, cfg.step_grid, cfg.probe_iters);
    if (run.method == Method::GradientEM) opts.steps = default_gradient_em_steps(data, cfg.kind);
    run.steps = opts.steps;
    run.trace = fit(data, inst.theta_1, cfg.kind, run.method, cfg.T, opts);
    inst.runs.push_back(std::move(run));
  } else {
    inst = run_instance(cfg, 0);
    if (inst.error) throw Error(ErrorCode::SingularSystem, *inst.error);
  }
  const fs::path dir = ensure_dir(cfg.output_dir);
  write_file(dir / "trace.csv", metrics_csv(metric_rows(inst)));
  const auto& tr = inst.runs.front().trace;
  std::cout << to_string(inst.runs.front().method) << ": " << tr.iterations() << " iterations, objective "
            << format_double(tr.objective.front()) << " -> " << format_double(tr.objective.back()) << "\n";
  if (!tr.param_errors.empty())
    std::cout << "final beta_rel_err " << format_double(tr.param_errors.back().beta_rel_err) << ", w_rel_err "
              << format_double(tr.param_errors.back().w_rel_err) << "\n";
  std::cout << "wrote " << (dir / "trace.csv").string() << "\n";
  if (tr.truncated) {
    std::cerr << "fit stopped early: " << tr.message << "\n";
    return kExitSolver;
  }
  return 0;
}

int cmd_compare(const CommonFlags& flags) {
  const ExperimentConfig cfg = flags.resolve();
  const ExperimentResult result = run_experiment(cfg);
  for (const auto& path : emit_report(result)) std::cout << "wrote " << path.string() << "\n";
  std::cout << summary_text(result);
  for (const auto& inst : result.instances)
    if (inst.error) return kExitSolver;
  return 0;
}

struct VerifyFlags {
  int states = 20;
  int pairs = 500;
  double tol = 1e-6;
  double radius = 8.0;
};

int cmd_verify(const CommonFlags& flags, const VerifyFlags& vf) {
  ExperimentConfig base;
  base.d = 5;
  base.n = 500;
  const ExperimentConfig cfg = flags.resolve(base);
  std::vector<ModelKind> kinds{ModelKind::sym_linear(), ModelKind::sym_logistic()};
  if (flags.kind) {
    if (!cfg.kind.symmetric()) throw Error(ErrorCode::WrongKind, "verify needs a symmetric model kind");
    kinds = {cfg.kind};
  }
  std::ostringstream report;
  bool all_pass = true;
  for (const ModelKind& kind : kinds) {
    ExperimentConfig kc = cfg;
    kc.kind = kind;
    const InstanceSetup setup = make_instance(kc, 0);
    Philox4x32 rng(derive_seed(cfg.master_seed, 0x5eed));
    double worst_gap = 0, worst_residual = 0;
    bool converged = true;
    for (int s = 0; s < vf.states; ++s) {
      const Thetad theta = sample_theta_in_ball(rng, cfg.d, kind, vf.radius);
      const auto rep = verify_em_equals_md(setup.data, theta, kind, vf.tol, cfg.solver);
      worst_gap = std::max(worst_gap, rep.rel_gap);
      worst_residual = std::max(worst_residual, rep.md.optimality_residual);
      converged = converged && rep.em.converged && rep.md.converged;
    }
    const double violation = relative_smoothness_probe(setup.data, vf.pairs, kind, derive_seed(cfg.master_seed, 7),
                                                       vf.radius);
    const bool em_md = worst_gap <= vf.tol;
    const bool smooth = violation <= 1e-8;
    all_pass = all_pass && em_md && smooth;
    report << to_string(kind.family) << " (d = " << cfg.d << ", n = " << cfg.n << ")\n"
           << "  EM = MD over " << vf.states << " states: max rel_gap " << format_double(worst_gap)
           << ", max MD residual " << format_double(worst_residual) << (converged ? "" : ", inner limit reached")
           << " -> " << (em_md ? "PASS" : "FAIL") << "\n"
           << "  relative smoothness over " << vf.pairs << " pairs: max violation " << format_double(violation)
           << " -> " << (smooth ? "PASS" : "FAIL") << "\n";
  }
  report << (all_pass ? "PASS" : "FAIL") << "\n";
  std::cout << report.str();
  if (flags.out) write_file(ensure_dir(*flags.out) / "verify.txt", report.str());
  return all_pass ? 0 : kExitVerifyFail;
}

struct DiagnoseFlags {
  std::vector<double> norms{1, 2, 4, 8};
  std::string mode = "population";
  std::int64_t mc_samples = 1'000'000;
};

int cmd_diagnose(const CommonFlags& flags, const DiagnoseFlags& df) {
  ExperimentConfig base;
  base.kind = ModelKind::sym_logistic();
  base.d = 5;
  const ExperimentConfig cfg = flags.resolve(base);
  if (!cfg.kind.symmetric()) throw Error(ErrorCode::WrongKind, "diagnose needs a symmetric model kind");
  DiagnosticConfig dc;
  if (df.mode == "empirical")
    dc.mode = FisherMode::Empirical;
  else if (df.mode != "population")
    throw Error(ErrorCode::Validation, "mode must be population or empirical");
  dc.monte_carlo.samples = df.mc_samples;
  dc.monte_carlo.seed = cfg.master_seed;

  Philox4x32 rng(cfg.master_seed);
  NormalSampler normal(rng);
  const Eigen::VectorXd u = normal.unit_vector(cfg.d), v = normal.unit_vector(cfg.d);

  std::ostringstream report, spectrum;
  spectrum << "norm,index,eigenvalue\n";
  report << "MIM along w = s u, beta = s v (" << to_string(cfg.kind.family) << ", d = " << cfg.d << ", "
         << df.mode << ")\n";
  report << "s  lambda_max  alpha  asymmetry  cond(complete)\n";
  for (double s : df.norms) {
    const Thetad theta(s * u, s * v);
    std::optional<DataSetd> data;
    if (dc.mode == FisherMode::Empirical) data = sample_dataset(cfg.kind, cfg.n, cfg.d, theta, cfg.master_seed);
    const MimReport rep = mim_certificate(theta, cfg.kind, dc, data ? &*data : nullptr);
    report << format_double(s) << "  " << format_double(rep.lambda_max) << "  "
           << (rep.alpha_certificate ? format_double(*rep.alpha_certificate) : std::string("none")) << "  "
           << format_double(rep.asymmetry) << "  " << format_double(rep.condition_complete) << "\n";
    for (Eigen::Index i = 0; i < rep.eigenvalues.size(); ++i)
      spectrum << format_double(s) << "," << i << "," << format_double(rep.eigenvalues[i]) << "\n";
  }

  std::vector<double> sweep;
  for (double s : df.norms)
    if (s >= std::sqrt(2.0)) sweep.push_back(s);
  if (!sweep.empty()) {
    const ScalingTable table = eig_scaling_check(sweep);
    report << "\nsigmoid-block eigenvalues (lambda1 <= 4/s^3, lambda2 <= 1/s)\n";
    for (const auto& row : table.rows)
      report << format_double(row.norm) << "  " << format_double(row.lambda1) << "  " << format_double(row.lambda2)
             << "  " << (row.within_bounds ? "ok" : "VIOLATED") << "\n";
    report << "bands: lambda1 s^3 " << format_double(table.band_lambda1) << ", lambda2 s "
           << format_double(table.band_lambda2) << " -> " << (table.pass ? "PASS" : "FAIL") << "\n";
  }

  report << "\nd = 1 bound, w = 0, beta = s (trace <= 8/(1+|w-beta|)^3 + 8/(1+|w+beta|)^3)\n";
  for (double s : df.norms) {
    MonteCarloConfig mc = dc.monte_carlo;
    const ScalarBound b =
        scalar_mim_bound(Thetad(Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Constant(1, 1, s)), mc);
    report << format_double(s) << "  " << format_double(b.lhs) << " +- " << format_double(b.stderr_) << "  <=  "
           << format_double(b.rhs) << "  " << (b.pass ? "ok" : "VIOLATED") << "\n";
  }

  std::cout << report.str();
  if (flags.out) {
    const fs::path dir = ensure_dir(*flags.out);
    write_file(dir / "diagnose.txt", report.str());
    write_file(dir / "spectrum.csv", spectrum.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EM, gradient EM and gradient descent for mixtures of experts, with mirror-descent and Fisher diagnostics"};
  app.require_subcommand(1);

  CommonFlags gen_flags, fit_flags, cmp_flags, ver_flags, diag_flags;
  auto* gen = app.add_subcommand("generate", "sample a dataset and its true parameters");
  gen_flags.attach(gen);

  auto* fit_cmd = app.add_subcommand("fit", "run one method on one dataset and write its trace");
  fit_flags.attach(fit_cmd);
  std::optional<std::string> data_path, truth_path;
  fit_cmd->add_option("--data", data_path, "dataset CSV (from generate); synthetic instance 0 if omitted");
  fit_cmd->add_option("--truth", truth_path, "true parameters CSV for error metrics and initialisation");

  auto* cmp = app.add_subcommand("compare", "run the full experiment and write metrics, summary and plots");
  cmp_flags.attach(cmp);

  auto* ver = app.add_subcommand("verify", "check EM = mirror descent and relative smoothness");
  ver_flags.attach(ver);
  VerifyFlags vf;
  ver->add_option("--states", vf.states, "random states for the EM = MD check");
  ver->add_option("--pairs", vf.pairs, "random pairs for the smoothness probe");
  ver->add_option("--tol", vf.tol, "relative gap tolerance");
  ver->add_option("--radius", vf.radius, "radius of the parameter ball");

  auto* diag = app.add_subcommand("diagnose", "Fisher information and missing-information report");
  diag_flags.attach(diag);
  DiagnoseFlags df;
  diag->add_option("--norms", df.norms, "parameter norms to sweep")->delimiter(',');
  diag->add_option("--mode", df.mode, "population or empirical");
  diag->add_option("--mc-samples", df.mc_samples, "Monte Carlo samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_flags);
    if (fit_cmd->parsed()) return cmd_fit(fit_flags, data_path, truth_path);
    if (cmp->parsed()) return cmd_compare(cmp_flags);
    if (ver->parsed()) return cmd_verify(ver_flags, vf);
    if (diag->parsed()) return cmd_diagnose(diag_flags, df);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitValidation;
}
