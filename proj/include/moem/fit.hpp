#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "moem/baselines.hpp"
#include "moem/em_solver.hpp"
#include "moem/metrics.hpp"
#include "moem/mirror.hpp"

namespace moem {

enum class Method { EM, GradientEM, GD };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::EM: return "EM";
    case Method::GradientEM: return "GradientEM";
    case Method::GD: return "GD";
  }
  return "unknown";
}

inline std::optional<Method> parse_method(const std::string& name) {
  for (Method m : {Method::EM, Method::GradientEM, Method::GD})
    if (to_string(m) == name) return m;
  return std::nullopt;
}

struct FitOptions {
  SolverOptions solver;
  StepSizes steps;
  bool record_timing = false;
};

/// thetas[t], objective[t] for t = 0..T (index 0 is the initial point).
/// bregman_steps[t] = D_A(theta_t, theta_{t+1}) for symmetric kinds, empty otherwise.
template <typename Scalar>
struct FitTrace {
  std::vector<Theta<Scalar>> thetas;
  std::vector<Scalar> objective;
  std::vector<Scalar> bregman_steps;
  std::vector<ParamError> param_errors;
  std::vector<double> wall_times;  // milliseconds per step; zeros unless timing is recorded
  bool inner_converged = true;
  bool truncated = false;
  std::string message;

  std::size_t iterations() const { return thetas.empty() ? 0 : thetas.size() - 1; }
};

template <typename Scalar>
Theta<Scalar> take_step(const DataSet<Scalar>& data, const Theta<Scalar>& theta, const ModelKind& kind, Method method,
                        const FitOptions& opts, StepReport* report = nullptr) {
  switch (method) {
    case Method::EM: return em_step(data, theta, kind, opts.solver, report);
    case Method::GradientEM: return gradient_em_step(data, theta, kind, opts.steps);
    case Method::GD: return gd_step(data, theta, kind, opts.steps);
  }
  throw Error(ErrorCode::Validation, "unknown method");
}

/// Applies `method` T times from theta_1. A step that fails, produces
/// non-finite values, or leaves the feasibility ball ends the trace early with
/// `truncated` set; the iterates recorded so far are kept.
template <typename Scalar>
FitTrace<Scalar> fit(const DataSet<Scalar>& data, const Theta<Scalar>& theta_1, const ModelKind& kind, Method method,
                     int T, const FitOptions& opts = {}) {
  if (T < 1) throw Error(ErrorCode::Validation, "fit: T must be at least 1");
  opts.solver.validate();
  check_dataset(data, kind);
  check_theta(theta_1, data.d(), kind);

  FitTrace<Scalar> trace;
  auto record = [&](const Theta<Scalar>& theta) {
    trace.thetas.push_back(theta);
    trace.objective.push_back(neg_log_lik(data, theta, kind).value);
    if (data.truth) trace.param_errors.push_back(align_to_truth(theta, data.truth, kind));
  };
  record(theta_1);

  for (int t = 0; t < T; ++t) {
    const Theta<Scalar>& current = trace.thetas.back();
    const auto start = std::chrono::steady_clock::now();
    Theta<Scalar> next;
    StepReport report;
    try {
      next = take_step(data, current, kind, method, opts, &report);
    } catch (const Error& e) {
      trace.truncated = true;
      trace.message = "step " + std::to_string(t + 1) + ": " + e.what();
      break;
    }
    const auto stop = std::chrono::steady_clock::now();
    if (!next.all_finite()) {
      trace.truncated = true;
      trace.message = "step " + std::to_string(t + 1) + ": non-finite parameters";
      break;
    }
    if (double(next.norm()) > opts.solver.feasibility_radius) {
      trace.truncated = true;
      trace.message = "step " + std::to_string(t + 1) + ": iterate left the feasibility ball";
      break;
    }
    if (!report.converged) {
      trace.inner_converged = false;
      if (trace.message.empty()) trace.message = "step " + std::to_string(t + 1) + ": " + report.note;
    }
    if (kind.symmetric()) trace.bregman_steps.push_back(bregman(data, current, next, kind));
    trace.wall_times.push_back(
        opts.record_timing ? std::chrono::duration<double, std::milli>(stop - start).count() : 0.0);
    record(next);
  }
  return trace;
}

}  // namespace moem
