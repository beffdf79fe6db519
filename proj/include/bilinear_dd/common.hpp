#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace bdd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error taxonomy shared by all modules. Argument errors derive from
// std::invalid_argument, everything raised by a numerical procedure from
// std::runtime_error.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& what, Index time_index)
      : std::runtime_error(what), time(time_index) {}
  Index time;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ArgumentError(message);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// x ⊗ u with the block order x1*u, x2*u, ..., xn*u.
inline Vector kron(const Vector& x, const Vector& u) {
  Vector out(x.size() * u.size());
  for (Index j = 0; j < x.size(); ++j) out.segment(j * u.size(), u.size()) = x(j) * u;
  return out;
}

// Rank decisions and pseudo-inverses share one truncation rule so that a
// matrix declared full-row-rank is also inverted on its full row space.
struct RankPolicy {
  double rel_tol = 1e-9;
  double tolerance(double sigma_max, Index rows, Index cols) const {
    return rel_tol * sigma_max * static_cast<double>(std::max(rows, cols));
  }
};

struct ThinSvd {
  Matrix U;
  Vector sigma;
  Matrix V;
  double tol = 0.0;
  Index rank = 0;
};

inline ThinSvd thin_svd(const Matrix& m, const RankPolicy& policy = {}) {
  if (m.rows() == 0 || m.cols() == 0) throw ArgumentError("thin_svd: empty matrix");
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericError("singular value decomposition failed");
  ThinSvd out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
  if (!out.sigma.allFinite()) throw NumericError("singular value decomposition produced non-finite values");
  const double smax = out.sigma.size() ? out.sigma(0) : 0.0;
  out.tol = policy.tolerance(smax, m.rows(), m.cols());
  out.rank = 0;
  for (Index i = 0; i < out.sigma.size(); ++i)
    if (out.sigma(i) > out.tol) ++out.rank;
  return out;
}

inline Matrix pseudo_inverse(const ThinSvd& s) {
  const Index r = s.rank;
  return s.V.leftCols(r) * s.sigma.head(r).cwiseInverse().asDiagonal() * s.U.leftCols(r).transpose();
}

inline Matrix pseudo_inverse(const Matrix& m, const RankPolicy& policy = {}) {
  return pseudo_inverse(thin_svd(m, policy));
}

// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) throw NumericError("number formatting failed");
  return std::string(buf, res.ptr);
}

inline double round_significant(double v, int digits) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::scientific, digits - 1);
  double out = 0.0;
  std::from_chars(buf, res.ptr, out);
  return out;
}

using Rng = std::mt19937_64;

inline Vector gaussian_vector(Index d, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = nd(rng);
  return v;
}

// Uniform draw on the sphere of the given radius.
inline Vector sphere_sample(Index d, double radius, Rng& rng) {
  Vector v;
  do {
    v = gaussian_vector(d, rng);
  } while (v.norm() < 1e-12);
  return radius * v / v.norm();
}

inline Vector uniform_vector(Index d, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> ud(lo, hi);
  Vector v(d);
  for (Index i = 0; i < d; ++i) v(i) = ud(rng);
  return v;
}

}  // namespace bdd
