#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "moem/harness.hpp"

namespace moem {

namespace {

Eigen::MatrixXd on_sphere(NormalSampler& normal, Eigen::Index rows, Eigen::Index cols, double radius) {
  return (radius * normal.unit_vector(rows * cols)).reshaped(rows, cols);
}

}  // namespace

InstanceSetup make_instance(const ExperimentConfig& cfg, int index) {
  const std::uint64_t seed = derive_seed(cfg.master_seed, std::uint64_t(index));
  Philox4x32 rng(seed);
  NormalSampler normal(rng);
  const int cols = cfg.kind.columns();

  InstanceSetup s;
  s.truth.gating = on_sphere(normal, cfg.d, cols, cfg.w_norm);
  s.truth.experts = on_sphere(normal, cfg.d, cols, cfg.beta_norm);
  const Eigen::VectorXd direction = normal.unit_vector(s.truth.size());
  s.theta_1 = s.truth + Thetad::from_flat(cfg.rho * s.truth.norm() * direction, cfg.d, cols);
  const std::uint64_t data_seed = (std::uint64_t(rng()) << 32) | rng();
  s.data = sample_dataset(cfg.kind, cfg.n, cfg.d, s.truth, data_seed);
  return s;
}

InstanceResult run_instance(const ExperimentConfig& cfg, int index) {
  InstanceResult out;
  out.index = index;
  out.seed = derive_seed(cfg.master_seed, std::uint64_t(index));
  try {
    InstanceSetup setup = make_instance(cfg, index);
    out.truth = setup.truth;
    out.theta_1 = setup.theta_1;
    for (Method method : cfg.methods) {
      FitOptions opts;
      opts.solver = cfg.solver;
      opts.record_timing = cfg.record_timing;
      if (method == Method::GD) {
        if (cfg.step_policy == StepPolicy::Grid) {
          opts.steps = select_step_size(setup.data, setup.theta_1, cfg.kind, cfg.step_grid, cfg.probe_iters);
        } else {
          opts.steps.gamma = cfg.gd_gamma;
          opts.steps.mode = cfg.step_policy == StepPolicy::Backtracking ? StepMode::Backtracking : StepMode::Fixed;
        }
      } else if (method == Method::GradientEM) {
        opts.steps = default_gradient_em_steps(setup.data, cfg.kind);
        if (cfg.gem_gamma1) opts.steps.gamma1 = *cfg.gem_gamma1;
        if (cfg.gem_gamma2) opts.steps.gamma2 = *cfg.gem_gamma2;
        if (cfg.step_policy == StepPolicy::Backtracking) opts.steps.mode = StepMode::Backtracking;
      }
      MethodRun run;
      run.method = method;
      run.steps = opts.steps;
      run.trace = fit(setup.data, setup.theta_1, cfg.kind, method, cfg.T, opts);
      out.runs.push_back(std::move(run));
    }
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

std::vector<MetricRow> metric_rows(const InstanceResult& inst) {
  std::vector<MetricRow> rows;
  for (const MethodRun& run : inst.runs) {
    const auto& tr = run.trace;
    const double final_objective = tr.objective.back();
    for (std::size_t t = 0; t < tr.objective.size(); ++t) {
      MetricRow r;
      r.instance = inst.index;
      r.method = run.method;
      r.iteration = int(t);
      r.objective = tr.objective[t];
      r.objective_gap_to_final = tr.objective[t] - final_objective;
      if (t < tr.param_errors.size()) {
        r.beta_rel_err = tr.param_errors[t].beta_rel_err;
        r.w_rel_err = tr.param_errors[t].w_rel_err;
      }
      if (t == 0)
        r.bregman_step = 0.0;
      else if (t - 1 < tr.bregman_steps.size())
        r.bregman_step = tr.bregman_steps[t - 1];
      else
        r.bregman_step = std::numeric_limits<double>::quiet_NaN();
      r.wall_ms = t == 0 ? 0.0 : tr.wall_times[t - 1];
      rows.push_back(r);
    }
  }
  return rows;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.config = cfg;
  result.instances.resize(std::size_t(cfg.instances));

  // Each worker claims instance indices and writes only its own slot, so the
  // output does not depend on the thread count or scheduling.
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < cfg.instances; i = next++) result.instances[std::size_t(i)] = run_instance(cfg, i);
  };
  const int workers = std::min(cfg.threads, cfg.instances);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (const auto& inst : result.instances) {
    auto rows = metric_rows(inst);
    result.rows.insert(result.rows.end(), rows.begin(), rows.end());
  }
  return result;
}

std::vector<double> final_values(const ExperimentResult& result, Method method, double MetricRow::*field) {
  std::vector<double> out;
  for (const auto& inst : result.instances) {
    if (inst.error) continue;
    for (const auto& run : inst.runs) {
      if (run.method != method) continue;
      const auto rows = metric_rows(InstanceResult{inst.index, inst.seed, inst.truth, inst.theta_1, {run}, {}});
      out.push_back(rows.back().*field);
    }
  }
  return out;
}

}  // namespace moem
