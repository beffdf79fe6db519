#pragma once

#include <ostream>

#include "bilinear_dd/hankel_data.hpp"

namespace bdd {

// Coefficients α over the L-T+1 data windows. Carried as a plain vector; each
// operation checks its length against the DataMatrices it is paired with.
using Alpha = Vector;

struct ReconstructedTrajectory {
  Matrix xbar;  // n × (T+1)
  Matrix ubar;  // m × T
  double consistency_residual = 0.0;
};

namespace detail {
inline void check_alpha(const Alpha& alpha, const DataMatrices& dm, const char* who) {
  if (alpha.size() != dm.columns())
    throw ArgumentError(std::string(who) + ": alpha has length " + std::to_string(alpha.size()) + ", expected " +
                        std::to_string(dm.columns()));
}
}  // namespace detail

inline double check_bilinear_consistency(const Alpha& alpha, const DataMatrices& dm) {
  detail::check_alpha(alpha, dm, "check_bilinear_consistency");
  const Vector xs = dm.HT1x * alpha;
  const Vector us = dm.HTu * alpha;
  const Vector ws = dm.HTxu * alpha;
  const Index n = dm.n, m = dm.m;
  double worst = 0.0;
  for (Index t = 0; t < dm.T; ++t) {
    const Vector w = kron(xs.segment(t * n, n), us.segment(t * m, m));
    worst = std::max(worst, (w - ws.segment(t * n * m, n * m)).cwiseAbs().maxCoeff());
  }
  return worst;
}

inline ReconstructedTrajectory reconstruct(const Alpha& alpha, const DataMatrices& dm) {
  detail::check_alpha(alpha, dm, "reconstruct");
  const Vector xs = dm.HT1x * alpha;
  const Vector us = dm.HTu * alpha;
  ReconstructedTrajectory r;
  r.xbar = Eigen::Map<const Matrix>(xs.data(), dm.n, dm.T + 1);
  r.ubar = Eigen::Map<const Matrix>(us.data(), dm.m, dm.T);
  r.consistency_residual = check_bilinear_consistency(alpha, dm);
  return r;
}

// Minimum-norm α with G_T α = [x(0); u_[0,T-1]; x⊗u_[0,T-1]] for a length-T trajectory.
inline Alpha represent(const Trajectory& tr, const DataMatrices& dm, const RankPolicy& policy = {}) {
  require(tr.length() == dm.T, "represent: trajectory length must equal the horizon T");
  require(tr.states.rows() == dm.n && tr.inputs.rows() == dm.m, "represent: trajectory dimensions mismatch");
  const ThinSvd svd = thin_svd(dm.GT, policy);
  if (svd.rank != dm.rows())
    throw RankDeficiencyError("represent: stacked data matrix is rank deficient", rank_certificate(dm.GT, policy));
  Vector target(dm.rows());
  const Matrix us = tr.inputs;
  const Matrix ws = kron_signal(tr);
  target << tr.states.col(0), Eigen::Map<const Vector>(us.data(), us.size()),
      Eigen::Map<const Vector>(ws.data(), ws.size());
  return pseudo_inverse(svd) * target;
}

inline void write_trajectory_csv(std::ostream& out, const Matrix& xbar, const Matrix& ubar) {
  const Index n = xbar.rows(), m = ubar.rows();
  out << "t";
  for (Index i = 0; i < n; ++i) out << ",x_" << i + 1;
  for (Index i = 0; i < m; ++i) out << ",u_" << i + 1;
  out << '\n';
  for (Index t = 0; t < xbar.cols(); ++t) {
    out << t;
    for (Index i = 0; i < n; ++i) out << ',' << format_double(xbar(i, t));
    for (Index i = 0; i < m; ++i) out << ',' << (t < ubar.cols() ? format_double(ubar(i, t)) : std::string());
    out << '\n';
  }
}

}  // namespace bdd
