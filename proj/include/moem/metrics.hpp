#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "moem/types.hpp"

namespace moem {

struct ParamError {
  double beta_rel_err = 0;
  double w_rel_err = 0;
};

/// Relative parameter errors against the truth, up to label relabelling.
///
/// Symmetric kinds: swapping z -> -z negates w and beta together, so the
/// result is the better of s = +1 and s = -1 applied to both blocks (chosen by
/// the summed error). General kinds: the best permutation of expert columns,
/// applied to gating and experts jointly. Gating columns are compared after
/// removing their mean, since softmax is invariant to a common shift.
template <typename Scalar>
ParamError align_to_truth(const Theta<Scalar>& theta, const std::optional<Theta<Scalar>>& truth,
                          const ModelKind& kind) {
  if (!truth) throw Error(ErrorCode::MissingTruth, "align_to_truth: dataset has no ground-truth parameters");
  const Theta<Scalar>& ref = *truth;
  if (theta.gating.rows() != ref.gating.rows() || theta.gating.cols() != ref.gating.cols())
    throw Error(ErrorCode::DimensionMismatch, "align_to_truth: shapes differ");

  auto rel = [](const auto& diff, const auto& base) {
    const double nb = double(base.norm());
    return nb > 0 ? double(diff.norm()) / nb : double(diff.norm());
  };

  if (kind.symmetric()) {
    ParamError best{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (int s : {1, -1}) {
      const ParamError e{rel(Scalar(s) * theta.experts - ref.experts, ref.experts),
                         rel(Scalar(s) * theta.gating - ref.gating, ref.gating)};
      if (e.beta_rel_err + e.w_rel_err < best.beta_rel_err + best.w_rel_err) best = e;
    }
    return best;
  }

  using Matrix = typename Theta<Scalar>::Matrix;
  auto centred = [](const Matrix& m) {
    Matrix c = m;
    c.colwise() -= m.rowwise().mean();
    return c;
  };
  const Matrix ref_w = centred(ref.gating);
  const Eigen::Index k = theta.gating.cols();
  std::vector<Eigen::Index> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  ParamError best{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  do {
    Matrix w(theta.gating.rows(), k), b(theta.experts.rows(), k);
    for (Eigen::Index j = 0; j < k; ++j) {
      w.col(j) = theta.gating.col(perm[j]);
      b.col(j) = theta.experts.col(perm[j]);
    }
    const ParamError e{rel(b - ref.experts, ref.experts), rel(centred(w) - ref_w, ref_w)};
    if (e.beta_rel_err + e.w_rel_err < best.beta_rel_err + best.w_rel_err) best = e;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace moem
