#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "moem/harness.hpp"

namespace moem {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string csv_header() {
  return "instance,method,iteration,objective,objective_gap_to_final,beta_rel_err,w_rel_err,bregman_step,wall_ms";
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = csv_header() + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.instance) + "," + to_string(r.method) + "," + std::to_string(r.iteration) + "," +
           format_double(r.objective) + "," + format_double(r.objective_gap_to_final) + "," +
           format_double(r.beta_rel_err) + "," + format_double(r.w_rel_err) + "," + format_double(r.bregman_step) +
           "," + format_double(r.wall_ms) + "\n";
  }
  return out;
}

namespace {

// Per-method, per-iteration values of one metric across instances.
std::map<Method, std::vector<std::vector<double>>> by_iteration(const ExperimentResult& result,
                                                                double MetricRow::*field) {
  std::map<Method, std::vector<std::vector<double>>> out;
  for (const auto& r : result.rows) {
    auto& series = out[r.method];
    if (series.size() <= std::size_t(r.iteration)) series.resize(std::size_t(r.iteration) + 1);
    series[std::size_t(r.iteration)].push_back(r.*field);
  }
  return out;
}

std::vector<double> median_curve(const std::vector<std::vector<double>>& series) {
  std::vector<double> out;
  for (const auto& values : series) out.push_back(median(values));
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(digits);
  s << v;
  return s.str();
}

// Fraction of instances whose objective gap to the final value shrinks by at
// least `factor` between the first and the second-to-last iterate.
double gap_decay_fraction(const ExperimentResult& result, Method method, double factor) {
  int total = 0, good = 0;
  for (const auto& inst : result.instances) {
    for (const auto& run : inst.runs) {
      if (run.method != method) continue;
      const auto& obj = run.trace.objective;
      if (obj.size() < 3) continue;
      ++total;
      const double first = obj.front() - obj.back();
      const double last = obj[obj.size() - 2] - obj.back();
      if (last <= first / factor) ++good;
    }
  }
  return total ? double(good) / total : std::nan("");
}

}  // namespace

std::string summary_text(const ExperimentResult& result) {
  const auto& cfg = result.config;
  std::ostringstream out;
  out << "# configuration\n" << format_config(cfg) << "\n";

  int failed = 0;
  for (const auto& inst : result.instances) failed += inst.error ? 1 : 0;
  out << "# instances\n"
      << "total = " << result.instances.size() << "\n"
      << "failed = " << failed << "\n";
  for (const auto& inst : result.instances)
    if (inst.error) out << "instance " << inst.index << ": " << *inst.error << "\n";
  out << "\n# final iterate, medians over instances\n";
  out << "method        runs  objective               beta_rel_err            w_rel_err               "
         "gap_decay_1e3  truncated  inner_limit\n";
  for (Method m : cfg.methods) {
    const auto obj = final_values(result, m, &MetricRow::objective);
    const auto berr = final_values(result, m, &MetricRow::beta_rel_err);
    const auto werr = final_values(result, m, &MetricRow::w_rel_err);
    int truncated = 0, inner = 0;
    for (const auto& inst : result.instances)
      for (const auto& run : inst.runs)
        if (run.method == m) {
          truncated += run.trace.truncated ? 1 : 0;
          inner += run.trace.inner_converged ? 0 : 1;
        }
    std::string name = to_string(m);
    name.resize(12, ' ');
    out << name << "  " << obj.size() << "  " << format_double(median(obj)) << "  " << format_double(median(berr))
        << "  " << format_double(median(werr)) << "  " << format_double(gap_decay_fraction(result, m, 1e3)) << "  "
        << truncated << "  " << inner << "\n";
  }

  const bool has_em = std::find(cfg.methods.begin(), cfg.methods.end(), Method::EM) != cfg.methods.end();
  if (has_em) {
    out << "\n# paired t-tests on final errors (difference = other - EM)\n";
    for (Method m : cfg.methods) {
      if (m == Method::EM) continue;
      for (auto [label, field] : {std::pair{"beta_rel_err", &MetricRow::beta_rel_err},
                                  std::pair{"w_rel_err", &MetricRow::w_rel_err}}) {
        const auto a = final_values(result, m, field);
        const auto b = final_values(result, Method::EM, field);
        if (a.size() != b.size() || a.size() < 2) {
          out << to_string(m) << " vs EM " << label << ": not enough paired instances\n";
          continue;
        }
        const TTest t = paired_t_test(a, b);
        out << to_string(m) << " vs EM " << label << ": t = " << fixed(t.t_stat, 4) << ", p = " << fixed(t.p_value, 4)
            << ", dof = " << t.dof << (t.zero_variance ? ", zero variance" : "") << "\n";
      }
    }
  }
  return out.str();
}

namespace {

const char* method_color(Method m) {
  switch (m) {
    case Method::EM: return "#1f77b4";
    case Method::GradientEM: return "#2ca02c";
    case Method::GD: return "#d62728";
  }
  return "#000000";
}

struct Curve {
  std::string label;
  std::string color;
  bool dashed = false;
  std::vector<double> values;
};

// Line chart with a linear iteration axis and a log10 vertical axis.
// Non-positive values are drawn at the floor.
std::string line_chart_svg(const std::string& title, const std::string& ylabel, const std::vector<Curve>& curves,
                           double floor) {
  const double W = 720, H = 440, left = 80, right = 170, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  std::size_t iters = 1;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& c : curves) {
    iters = std::max(iters, c.values.size());
    for (double v : c.values) {
      if (!std::isfinite(v)) continue;
      const double lv = std::log10(std::max(v, floor));
      lo = std::min(lo, lv);
      hi = std::max(hi, lv);
    }
  }
  if (!std::isfinite(lo)) lo = hi = std::log10(floor);
  lo = std::floor(lo);
  hi = std::ceil(hi);
  if (hi <= lo) hi = lo + 1;
  const double tmax = double(std::max<std::size_t>(iters - 1, 1));
  auto px = [&](double t) { return left + pw * t / tmax; };
  auto py = [&](double v) { return top + ph * (hi - std::log10(std::max(v, floor))) / (hi - lo); };

  std::ostringstream s;
  s.precision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  const int step = int(std::ceil((hi - lo) / 10));
  for (int e = int(lo); e <= int(hi); e += step) {
    const double y = top + ph * (hi - e) / (hi - lo);
    s << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y
      << "\" stroke=\"#dddddd\"/>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">1e" << e << "</text>\n";
  }
  const int xticks = std::min<int>(10, int(tmax));
  for (int i = 0; i <= xticks; ++i) {
    const double t = std::round(tmax * i / std::max(xticks, 1));
    s << "<text x=\"" << px(t) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << t << "</text>\n";
  }
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">iteration</text>\n";
  s << "<text transform=\"translate(20 " << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << ylabel
    << "</text>\n";

  double ly = top + 10;
  for (const auto& c : curves) {
    s << "<polyline fill=\"none\" stroke=\"" << c.color << "\" stroke-width=\"1.8\""
      << (c.dashed ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
    for (std::size_t t = 0; t < c.values.size(); ++t)
      if (std::isfinite(c.values[t])) s << px(double(t)) << "," << py(c.values[t]) << " ";
    s << "\"/>\n";
    s << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 40 << "\" y2=\"" << ly
      << "\" stroke=\"" << c.color << "\" stroke-width=\"1.8\"" << (c.dashed ? " stroke-dasharray=\"6 4\"" : "")
      << "/>\n";
    s << "<text x=\"" << left + pw + 46 << "\" y=\"" << ly + 4 << "\">" << c.label << "</text>\n";
    ly += 20;
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

std::string objective_gap_svg(const ExperimentResult& result) {
  const auto series = by_iteration(result, &MetricRow::objective_gap_to_final);
  std::vector<Curve> curves;
  for (Method m : result.config.methods) {
    const auto it = series.find(m);
    if (it == series.end()) continue;
    curves.push_back({to_string(m), method_color(m), false, median_curve(it->second)});
  }
  return line_chart_svg("Objective gap L(theta_t) - L(theta_T), median over instances", "objective gap", curves,
                        1e-16);
}

std::string param_errors_svg(const ExperimentResult& result) {
  const auto beta = by_iteration(result, &MetricRow::beta_rel_err);
  const auto w = by_iteration(result, &MetricRow::w_rel_err);
  std::vector<Curve> curves;
  for (Method m : result.config.methods) {
    if (const auto it = beta.find(m); it != beta.end())
      curves.push_back({to_string(m) + " beta", method_color(m), false, median_curve(it->second)});
    if (const auto it = w.find(m); it != w.end())
      curves.push_back({to_string(m) + " w", method_color(m), true, median_curve(it->second)});
  }
  return line_chart_svg("Relative parameter error, median over instances", "relative error", curves, 1e-16);
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << contents;
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

std::vector<std::filesystem::path> emit_report(const ExperimentResult& result) {
  const auto& dir = result.config.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create output directory " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto emit = [&](const char* name, const std::string& contents) {
    const auto path = dir / name;
    write_file(path, contents);
    written.push_back(path);
  };
  emit("metrics.csv", metrics_csv(result.rows));
  emit("summary.txt", summary_text(result));
  emit("objective_gap.svg", objective_gap_svg(result));
  emit("param_errors.svg", param_errors_svg(result));
  return written;
}

}  // namespace moem
