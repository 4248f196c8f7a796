#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moem/fit.hpp"

namespace moem {

enum class StepPolicy { Grid, Fixed, Backtracking };

std::string to_string(StepPolicy p);
std::optional<StepPolicy> parse_step_policy(const std::string& name);

struct ExperimentConfig {
  ModelKind kind = ModelKind::sym_linear();
  int d = 10;
  int n = 1000;
  int T = 50;
  double beta_norm = 4.0;
  double w_norm = 4.0;
  int instances = 50;
  double rho = 0.5;
  std::vector<Method> methods{Method::EM, Method::GradientEM, Method::GD};

  // Gradient descent: grid selection (default), or a fixed / backtracking gamma.
  StepPolicy step_policy = StepPolicy::Grid;
  std::vector<double> step_grid{1.0, 0.3, 0.1, 0.03};
  int probe_iters = 10;
  double gd_gamma = 0.1;
  // Gradient EM block steps; unset means derived from the data (see default_gradient_em_steps).
  std::optional<double> gem_gamma1;
  std::optional<double> gem_gamma2;

  SolverOptions solver;
  std::uint64_t master_seed = 2024;
  std::filesystem::path output_dir = "out";
  int threads = 1;
  bool record_timing = false;

  void validate() const;
};

/// Parses flat `key = value` text (UTF-8, `#` starts a comment) on top of
/// `base`. Unknown keys and malformed values throw Error(Validation) naming
/// the line.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});
/// Applies one key/value pair with the same rules as the config file.
void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// The config rendered back as `key = value` lines.
std::string format_config(const ExperimentConfig& cfg);

struct MetricRow {
  int instance = 0;
  Method method = Method::EM;
  int iteration = 0;
  double objective = 0;
  double objective_gap_to_final = 0;
  double beta_rel_err = 0;
  double w_rel_err = 0;
  double bregman_step = 0;  // D_A(theta_{t-1}, theta_t); 0 at t = 0, NaN for general kinds
  double wall_ms = 0;
};

struct MethodRun {
  Method method = Method::EM;
  FitTrace<double> trace;
  StepSizes steps;
};

struct InstanceResult {
  int index = 0;
  std::uint64_t seed = 0;
  Thetad truth;
  Thetad theta_1;
  std::vector<MethodRun> runs;
  std::optional<std::string> error;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<InstanceResult> instances;
  std::vector<MetricRow> rows;
};

/// Draws the truth, dataset and shared starting point of one instance.
struct InstanceSetup {
  Thetad truth;
  Thetad theta_1;
  DataSetd data;
};
InstanceSetup make_instance(const ExperimentConfig& cfg, int index);

InstanceResult run_instance(const ExperimentConfig& cfg, int index);
ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::vector<MetricRow> metric_rows(const InstanceResult& inst);

struct TTest {
  double t_stat = 0;
  double p_value = 1;
  int dof = 0;
  bool zero_variance = false;
};

/// Paired t-test on a - b (two-sided p from Student's t with n - 1 dof).
TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

double median(std::vector<double> v);

/// Final-iterate metric per successful instance for one method, in instance order.
std::vector<double> final_values(const ExperimentResult& result, Method method, double MetricRow::*field);

std::string csv_header();
std::string format_double(double v);
std::string metrics_csv(const std::vector<MetricRow>& rows);
std::string summary_text(const ExperimentResult& result);
std::string objective_gap_svg(const ExperimentResult& result);
std::string param_errors_svg(const ExperimentResult& result);

/// Writes metrics.csv, summary.txt, objective_gap.svg and param_errors.svg
/// into cfg.output_dir and returns the paths written.
std::vector<std::filesystem::path> emit_report(const ExperimentResult& result);

void write_file(const std::filesystem::path& path, const std::string& contents);

/// Dataset CSV: header x1..xd,y[,z]; one sample per row.
std::string dataset_csv(const DataSetd& data);
DataSetd read_dataset_csv(const std::filesystem::path& path, const ModelKind& kind);
/// Parameter CSV: header w1..wc,beta1..betac (c columns per block); one feature per row.
std::string theta_csv(const Thetad& theta);
Thetad read_theta_csv(const std::filesystem::path& path, const ModelKind& kind);

}  // namespace moem
