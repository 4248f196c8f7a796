#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

#include "moem/harness.hpp"

namespace moem {

TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "paired_t_test: samples have different lengths");
  if (a.size() < 2) throw Error(ErrorCode::LengthMismatch, "paired_t_test: need at least two pairs");
  const std::size_t n = a.size();
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= double(n);
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = a[i] - b[i] - mean;
    ss += r * r;
  }
  TTest out;
  out.dof = int(n) - 1;
  const double sd = std::sqrt(ss / double(n - 1));
  if (sd == 0) {
    out.zero_variance = true;
    if (mean == 0) {
      out.t_stat = 0;
      out.p_value = 1;
    } else {
      out.t_stat = std::copysign(std::numeric_limits<double>::infinity(), mean);
      out.p_value = 0;
    }
    return out;
  }
  out.t_stat = mean / (sd / std::sqrt(double(n)));
  const boost::math::students_t dist(out.dof);
  out.p_value = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t_stat)));
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace moem
