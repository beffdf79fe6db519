#pragma once

// Hand-rolled generators for the property tests. Every generator draws from
// a seeded engine so failures replay exactly; the failing case index and
// seed are reported through doctest's INFO.

// glog (pulled in by Ceres) defines its own CHECK family; doctest's wins here.
#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_GT
#undef CHECK_LT
#undef CHECK_GE
#undef CHECK_LE
#include <doctest.h>

#include "bilinear_dd/bilinear_core.hpp"
#include "bilinear_dd/hankel_data.hpp"

namespace bdd::test {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  Index integer(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
  std::uint64_t seed() { return rng_(); }

  Matrix matrix(Index r, Index c, double scale = 1.0) {
    return Matrix::NullaryExpr(r, c, [&] { return scale * normal(); });
  }
  Vector vector(Index d, double scale = 1.0) { return Vector::NullaryExpr(d, [&] { return scale * normal(); }); }

  // Symmetric PSD matrix of the requested rank.
  Matrix psd(Index n, Index rank) {
    const Matrix F = matrix(n, rank);
    return F * F.transpose();
  }

  BilinearSystem system(Index n, Index m, double radius = 0.8, double bilinear = 0.3) {
    return random_system(n, m, seed(), radius, bilinear);
  }

  // Random-input trajectory of length L from x0; inputs uniform in [-amp, amp].
  Trajectory trajectory(const BilinearSystem& sys, Index L, double amp, const Vector& x0) {
    Matrix U(sys.m(), L);
    for (Index i = 0; i < U.size(); ++i) U(i) = uniform(-amp, amp);
    return simulate(sys, x0, U);
  }

  Rng& engine() { return rng_; }

 private:
  Rng rng_;
};

// Random-input data set that is T-persistently exciting for sys; the input
// amplitude is reduced until the data is well conditioned and the rank test
// passes with margin.
inline Trajectory exciting_data(Gen& g, const BilinearSystem& sys, Index T, Index extra = 0) {
  const Index L = min_data_length(sys.n(), sys.m(), T) + extra;
  for (double amp : {1.0, 0.5, 0.25}) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const Trajectory tr = g.trajectory(sys, L, amp, g.vector(sys.n()));
      const DataMatrices dm = build_data_matrices(tr, T);
      const RankCertificate c = rank_certificate(dm.GT);
      if (c.full_row_rank && c.singular_values(c.rows - 1) > 1e3 * c.tolerance) return tr;
    }
  }
  FAIL("could not generate exciting data");
  return {};
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace bdd::test
