#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace moem {

enum class ErrorCode {
  DimensionMismatch,
  NonFinite,
  InvalidTarget,
  IterationLimit,
  SingularSystem,
  WrongKind,
  WrongDimension,
  PreconditionViolated,
  IllConditioned,
  AllDiverged,
  LengthMismatch,
  MissingTruth,
  Validation,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

enum class Family { GeneralMoLinE, GeneralMoLogE, SymMoLinE, SymMoLogE };

// Model family plus expert count. Symmetric families always have two experts,
// labelled z = +1 (index 0) and z = -1 (index 1).
struct ModelKind {
  Family family = Family::SymMoLinE;
  int k = 2;

  static ModelKind general_linear(int experts) { return {Family::GeneralMoLinE, experts}; }
  static ModelKind general_logistic(int experts) { return {Family::GeneralMoLogE, experts}; }
  static ModelKind sym_linear() { return {Family::SymMoLinE, 2}; }
  static ModelKind sym_logistic() { return {Family::SymMoLogE, 2}; }

  bool symmetric() const { return family == Family::SymMoLinE || family == Family::SymMoLogE; }
  bool logistic() const { return family == Family::GeneralMoLogE || family == Family::SymMoLogE; }
  bool linear() const { return !logistic(); }
  // Columns stored per parameter block: one for symmetric models, k otherwise.
  int columns() const { return symmetric() ? 1 : k; }

  void validate() const {
    if (symmetric() && k != 2) throw Error(ErrorCode::Validation, "symmetric models have exactly 2 experts");
    if (!symmetric() && k < 2) throw Error(ErrorCode::Validation, "general models need k >= 2");
  }

  friend bool operator==(const ModelKind&, const ModelKind&) = default;
};

inline std::string to_string(Family f) {
  switch (f) {
    case Family::GeneralMoLinE: return "GeneralMoLinE";
    case Family::GeneralMoLogE: return "GeneralMoLogE";
    case Family::SymMoLinE: return "SymMoLinE";
    case Family::SymMoLogE: return "SymMoLogE";
  }
  return "unknown";
}

inline std::optional<Family> parse_family(const std::string& name) {
  for (Family f : {Family::GeneralMoLinE, Family::GeneralMoLogE, Family::SymMoLinE, Family::SymMoLogE})
    if (to_string(f) == name) return f;
  return std::nullopt;
}

// theta = (w, beta). Symmetric models store d x 1 blocks; general ones d x k.
template <typename Scalar>
struct Theta {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix gating;
  Matrix experts;

  Theta() = default;
  Theta(Matrix w, Matrix beta) : gating(std::move(w)), experts(std::move(beta)) {}

  static Theta zeros(Eigen::Index d, const ModelKind& kind) {
    return Theta(Matrix::Zero(d, kind.columns()), Matrix::Zero(d, kind.columns()));
  }
  static Theta symmetric(const Vector& w, const Vector& beta) { return Theta(w, beta); }

  Eigen::Index dim() const { return gating.rows(); }
  Eigen::Index size() const { return gating.size() + experts.size(); }

  // Gating block first, then experts, each column-major.
  Vector flat() const {
    Vector v(size());
    v.head(gating.size()) = gating.reshaped();
    v.tail(experts.size()) = experts.reshaped();
    return v;
  }
  static Theta from_flat(const Vector& v, Eigen::Index d, Eigen::Index cols) {
    Theta t;
    t.gating = v.head(d * cols).reshaped(d, cols);
    t.experts = v.tail(d * cols).reshaped(d, cols);
    return t;
  }

  Vector w() const { return gating.col(0); }
  Vector beta() const { return experts.col(0); }

  Scalar norm() const { return std::sqrt(gating.squaredNorm() + experts.squaredNorm()); }
  bool all_finite() const { return gating.allFinite() && experts.allFinite(); }

  Theta operator+(const Theta& o) const { return Theta(gating + o.gating, experts + o.experts); }
  Theta operator-(const Theta& o) const { return Theta(gating - o.gating, experts - o.experts); }
  Theta operator-() const { return Theta(-gating, -experts); }
  friend Theta operator*(Scalar s, const Theta& t) { return Theta(s * t.gating, s * t.experts); }

  Scalar dot(const Theta& o) const {
    return (gating.array() * o.gating.array()).sum() + (experts.array() * o.experts.array()).sum();
  }
  Scalar max_abs() const {
    Scalar m = 0;
    if (gating.size()) m = std::max(m, gating.cwiseAbs().maxCoeff());
    if (experts.size()) m = std::max(m, experts.cwiseAbs().maxCoeff());
    return m;
  }

  bool operator==(const Theta& o) const {
    return gating.rows() == o.gating.rows() && gating.cols() == o.gating.cols() &&
           experts.rows() == o.experts.rows() && experts.cols() == o.experts.cols() &&
           gating == o.gating && experts == o.experts;
  }
};

template <typename Scalar>
struct DataSet {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix features;  // n x d
  Vector targets;   // n
  std::optional<Eigen::VectorXi> latents;  // symmetric: +1/-1, general: 0..k-1
  std::optional<Theta<Scalar>> truth;

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index d() const { return features.cols(); }
};

// n x k posterior P(z | x_i, y_i). Symmetric models order columns (z=+1, z=-1).
template <typename Scalar>
struct Responsibilities {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> weights;
};

template <typename Scalar>
void check_dataset(const DataSet<Scalar>& data, const ModelKind& kind) {
  kind.validate();
  if (data.n() < 1) throw Error(ErrorCode::Validation, "dataset must contain at least one row");
  if (data.targets.size() != data.n())
    throw Error(ErrorCode::DimensionMismatch, "targets length does not match feature rows");
  if (!data.features.allFinite() || !data.targets.allFinite())
    throw Error(ErrorCode::NonFinite, "dataset contains non-finite values");
  if (kind.logistic()) {
    for (Eigen::Index i = 0; i < data.n(); ++i)
      if (data.targets[i] != Scalar(1) && data.targets[i] != Scalar(-1))
        throw Error(ErrorCode::InvalidTarget, "logistic targets must be +1 or -1");
  }
  if (data.latents) {
    if (data.latents->size() != data.n())
      throw Error(ErrorCode::DimensionMismatch, "latents length does not match feature rows");
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      const int z = (*data.latents)[i];
      const bool ok = kind.symmetric() ? (z == 1 || z == -1) : (z >= 0 && z < kind.k);
      if (!ok) throw Error(ErrorCode::Validation, "latent label outside the model's label space");
    }
  }
}

template <typename Scalar>
void check_theta(const Theta<Scalar>& theta, Eigen::Index d, const ModelKind& kind) {
  if (theta.gating.rows() != d || theta.experts.rows() != d || theta.gating.cols() != kind.columns() ||
      theta.experts.cols() != kind.columns())
    throw Error(ErrorCode::DimensionMismatch, "theta shape does not match model and feature dimension");
  if (!theta.all_finite()) throw Error(ErrorCode::NonFinite, "theta contains non-finite entries");
}

using Thetad = Theta<double>;
using DataSetd = DataSet<double>;
using Responsibilitiesd = Responsibilities<double>;

}  // namespace moem
