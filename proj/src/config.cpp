#include <charconv>
#include <fstream>
#include <sstream>

#include "moem/harness.hpp"

namespace moem {

std::string to_string(StepPolicy p) {
  switch (p) {
    case StepPolicy::Grid: return "grid";
    case StepPolicy::Fixed: return "fixed";
    case StepPolicy::Backtracking: return "backtracking";
  }
  return "unknown";
}

std::optional<StepPolicy> parse_step_policy(const std::string& name) {
  for (StepPolicy p : {StepPolicy::Grid, StepPolicy::Fixed, StepPolicy::Backtracking})
    if (to_string(p) == name) return p;
  return std::nullopt;
}

void ExperimentConfig::validate() const {
  kind.validate();
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::Validation, msg); };
  if (d < 1) fail("d must be at least 1");
  if (n < 1) fail("n must be at least 1");
  if (T < 1) fail("iters must be at least 1");
  if (instances < 1) fail("instances must be at least 1");
  if (!(rho >= 0)) fail("rho must be non-negative");
  if (!(beta_norm > 0) || !(w_norm > 0)) fail("truth norms must be positive");
  if (methods.empty()) fail("at least one method is required");
  if (step_grid.empty()) fail("step_grid must not be empty");
  for (double g : step_grid)
    if (!(g > 0)) fail("step_grid values must be positive");
  if (probe_iters < 1) fail("probe_iters must be at least 1");
  if (!(gd_gamma > 0)) fail("gd_gamma must be positive");
  if (gem_gamma1 && !(*gem_gamma1 > 0)) fail("gem_gamma1 must be positive");
  if (gem_gamma2 && !(*gem_gamma2 > 0)) fail("gem_gamma2 must be positive");
  if (threads < 1) fail("threads must be at least 1");
  solver.validate();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last)
    throw Error(ErrorCode::Validation, "invalid value '" + value + "' for key '" + key + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw Error(ErrorCode::Validation, "invalid boolean '" + value + "' for key '" + key + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "kind") {
    const auto f = parse_family(value);
    if (!f) throw Error(ErrorCode::Validation, "unknown kind '" + value + "'");
    cfg.kind.family = *f;
    if (cfg.kind.symmetric()) cfg.kind.k = 2;
  } else if (key == "k") {
    cfg.kind.k = parse_number<int>(key, value);
  } else if (key == "d") {
    cfg.d = parse_number<int>(key, value);
  } else if (key == "n") {
    cfg.n = parse_number<int>(key, value);
  } else if (key == "iters") {
    cfg.T = parse_number<int>(key, value);
  } else if (key == "instances") {
    cfg.instances = parse_number<int>(key, value);
  } else if (key == "rho") {
    cfg.rho = parse_number<double>(key, value);
  } else if (key == "beta_norm") {
    cfg.beta_norm = parse_number<double>(key, value);
  } else if (key == "w_norm") {
    cfg.w_norm = parse_number<double>(key, value);
  } else if (key == "methods" || key == "method") {
    cfg.methods.clear();
    for (const auto& name : split_list(value)) {
      const auto m = parse_method(name);
      if (!m) throw Error(ErrorCode::Validation, "unknown method '" + name + "'");
      cfg.methods.push_back(*m);
    }
  } else if (key == "step_policy") {
    const auto p = parse_step_policy(value);
    if (!p) throw Error(ErrorCode::Validation, "unknown step_policy '" + value + "'");
    cfg.step_policy = *p;
  } else if (key == "step_grid") {
    cfg.step_grid.clear();
    for (const auto& item : split_list(value)) cfg.step_grid.push_back(parse_number<double>(key, item));
  } else if (key == "probe_iters") {
    cfg.probe_iters = parse_number<int>(key, value);
  } else if (key == "gd_gamma") {
    cfg.gd_gamma = parse_number<double>(key, value);
  } else if (key == "gem_gamma1") {
    cfg.gem_gamma1 = parse_number<double>(key, value);
  } else if (key == "gem_gamma2") {
    cfg.gem_gamma2 = parse_number<double>(key, value);
  } else if (key == "seed") {
    cfg.master_seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "out") {
    cfg.output_dir = value;
  } else if (key == "threads") {
    cfg.threads = parse_number<int>(key, value);
  } else if (key == "timing") {
    cfg.record_timing = parse_bool(key, value);
  } else if (key == "literal_beta_update") {
    cfg.solver.literal_beta_update = parse_bool(key, value);
  } else if (key == "inner_tol") {
    cfg.solver.inner_tol = parse_number<double>(key, value);
  } else if (key == "inner_max_iter") {
    cfg.solver.inner_max_iter = parse_number<int>(key, value);
  } else if (key == "ridge") {
    cfg.solver.ridge = parse_number<double>(key, value);
  } else if (key == "feasibility_radius") {
    cfg.solver.feasibility_radius = parse_number<double>(key, value);
  } else {
    throw Error(ErrorCode::Validation, "unknown config key '" + key + "'");
  }
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::Validation, "line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::Validation, "line " + std::to_string(lineno) + ": empty key");
    try {
      apply_config_value(base, key, value);
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string format_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  auto list = [](const auto& items, auto fmt) {
    std::string s;
    for (const auto& item : items) s += (s.empty() ? "" : ",") + fmt(item);
    return s;
  };
  out << "kind = " << to_string(cfg.kind.family) << "\n";
  if (!cfg.kind.symmetric()) out << "k = " << cfg.kind.k << "\n";
  out << "d = " << cfg.d << "\n"
      << "n = " << cfg.n << "\n"
      << "iters = " << cfg.T << "\n"
      << "instances = " << cfg.instances << "\n"
      << "rho = " << format_double(cfg.rho) << "\n"
      << "beta_norm = " << format_double(cfg.beta_norm) << "\n"
      << "w_norm = " << format_double(cfg.w_norm) << "\n"
      << "methods = " << list(cfg.methods, [](Method m) { return to_string(m); }) << "\n"
      << "step_policy = " << to_string(cfg.step_policy) << "\n"
      << "step_grid = " << list(cfg.step_grid, format_double) << "\n"
      << "probe_iters = " << cfg.probe_iters << "\n"
      << "gd_gamma = " << format_double(cfg.gd_gamma) << "\n";
  if (cfg.gem_gamma1) out << "gem_gamma1 = " << format_double(*cfg.gem_gamma1) << "\n";
  if (cfg.gem_gamma2) out << "gem_gamma2 = " << format_double(*cfg.gem_gamma2) << "\n";
  out << "seed = " << cfg.master_seed << "\n"
      << "literal_beta_update = " << (cfg.solver.literal_beta_update ? "true" : "false") << "\n"
      << "inner_tol = " << format_double(cfg.solver.inner_tol) << "\n"
      << "inner_max_iter = " << cfg.solver.inner_max_iter << "\n"
      << "ridge = " << format_double(cfg.solver.ridge) << "\n"
      << "feasibility_radius = " << format_double(cfg.solver.feasibility_radius) << "\n";
  return out.str();
}

}  // namespace moem
