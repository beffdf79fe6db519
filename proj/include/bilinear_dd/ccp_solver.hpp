#pragma once

#include <Eigen/QR>

#include <functional>
#include <memory>
#include <ostream>

#include "bilinear_dd/convex_qcqp.hpp"
#include "bilinear_dd/trajectory_rep.hpp"

namespace bdd {

// Data-based problem in the coefficients α:
//   min αᵀ H α  s.t.  x̄(0) = x0, x̄(T) = xf, x̄(t) ⊗ ū(t) = w̄(t),
// with x̄ = HT1x α, ū = HTu α, w̄ = HTxu α.
struct P2Instance {
  DataMatrices dm;
  OcProblem prob;
  Matrix H;  // M × M, PSD
  RankPolicy policy;

  Index M() const { return dm.columns(); }
  double cost(const Alpha& a) const { return a.dot(H * a); }
};

// S with SᵀS = M for a symmetric PSD matrix M.
inline Matrix psd_square_root(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(M);
  const Vector l = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return l.asDiagonal() * es.eigenvectors().transpose();
}

// Σ_t X_tᵀ Q X_t + U_tᵀ R U_t formed as a Gram matrix, so it stays PSD in
// floating point. X stacks n rows per time step, U stacks m rows.
inline Matrix stage_cost_gram(const Matrix& X, const Matrix& U, const OcProblem& prob, Index n, Index m) {
  const Matrix SQ = psd_square_root(prob.Q), SR = psd_square_root(prob.R);
  Matrix Y(prob.T * (n + m), X.cols());
  for (Index t = 0; t < prob.T; ++t) {
    Y.middleRows(t * (n + m), n).noalias() = SQ * X.middleRows(t * n, n);
    Y.middleRows(t * (n + m) + n, m).noalias() = SR * U.middleRows(t * m, m);
  }
  Matrix G = Matrix::Zero(X.cols(), X.cols());
  G.selfadjointView<Eigen::Lower>().rankUpdate(Y.transpose());
  return G.selfadjointView<Eigen::Lower>();
}

inline P2Instance build_p2(const DataMatrices& dm, const OcProblem& prob, const RankPolicy& policy = {}) {
  require(prob.T == dm.T, "build_p2: problem horizon differs from the data horizon");
  prob.validate(dm.n, dm.m);
  require_full_row_rank(dm, policy, "build_p2");
  P2Instance p{dm, prob, Matrix(), policy};
  p.H = stage_cost_gram(dm.HT1x, dm.HTu, prob, dm.n, dm.m);
  return p;
}

struct P2Violation {
  double initial = 0.0;
  double terminal = 0.0;
  double consistency = 0.0;
  double max() const { return std::max({initial, terminal, consistency}); }
};

inline P2Violation p2_violation(const P2Instance& p2, const Alpha& a) {
  const Vector xs = p2.dm.HT1x * a;
  const Index n = p2.dm.n, T = p2.dm.T;
  return {(xs.head(n) - p2.prob.x0).cwiseAbs().maxCoeff(), (xs.segment(T * n, n) - p2.prob.xf).cwiseAbs().maxCoeff(),
          check_bilinear_consistency(a, p2.dm)};
}

enum class LiftingBasis {
  Whitened,  // α = V Σ⁻¹ γ from the thin SVD of G_T (default)
  RawAlpha,  // α = γ
};

// Lifted problem in coordinates γ̂ with α = W γ̂ and r_pq = γ̂_p γ̂_q.
struct LiftedProblem {
  struct PairData {
    std::vector<std::pair<Index, Index>> pairs;  // p ≤ q
    Matrix C;                                    // equality rows × pairs, coefficients of r
    Matrix D;                                    // equality rows × dim, coefficients of γ (with sign +)
    std::vector<Index> row_a, row_b, row_w;      // rows of Xmap / Umap / Wmap per consistency row
  };

  LiftingBasis basis = LiftingBasis::Whitened;
  double scale = 1.0;
  Matrix W;     // M × dim
  Matrix Xmap;  // n(T+1) × dim
  Matrix Umap;  // mT × dim
  Matrix Wmap;  // mnT × dim
  Matrix Pobj;  // dim × dim, objective γ̂ᵀ Pobj γ̂ + qobjᵀ γ̂ + cobj
  Vector qobj;
  double cobj = 0.0;
  double objective_scale = 1.0;  // subproblems minimise objective / objective_scale
  bool include_initial = true;
  bool include_terminal = true;
  Vector x0, xf;
  Index n = 0, m = 0, T = 0;
  std::shared_ptr<const PairData> eq;
  Matrix to_gamma;  // dim × M, maps α (in the row space of G) back to γ̂

  Index dim() const { return W.cols(); }
  Index num_pairs() const { return static_cast<Index>(eq->pairs.size()); }
  Index num_boundary_rows() const { return (include_initial ? n : 0) + (include_terminal ? n : 0); }
  Index num_consistency_rows() const { return eq->C.rows(); }
  Index num_equalities() const { return num_boundary_rows() + num_consistency_rows(); }

  double objective(const Vector& g) const { return g.dot(Pobj * g) + qobj.dot(g) + cobj; }
  Alpha alpha(const Vector& g) const { return W * g; }
  Vector gamma(const Alpha& a) const { return to_gamma * a; }

  // Residual of all equality constraints at γ̂ (boundary rows first).
  Vector constraint_residual(const Vector& g) const {
    Vector F(num_equalities());
    const Vector xs = Xmap * g, us = Umap * g, ws = Wmap * g;
    Index off = 0;
    if (include_initial) {
      F.segment(off, n) = xs.head(n) - x0;
      off += n;
    }
    if (include_terminal) {
      F.segment(off, n) = xs.segment(T * n, n) - xf;
      off += n;
    }
    for (Index r = 0; r < num_consistency_rows(); ++r)
      F(off + r) = xs(eq->row_a[r]) * us(eq->row_b[r]) - ws(eq->row_w[r]);
    return F;
  }

  Matrix constraint_jacobian(const Vector& g) const {
    Matrix J(num_equalities(), dim());
    const Vector xs = Xmap * g, us = Umap * g;
    Index off = 0;
    if (include_initial) {
      J.middleRows(off, n) = Xmap.topRows(n);
      off += n;
    }
    if (include_terminal) {
      J.middleRows(off, n) = Xmap.middleRows(T * n, n);
      off += n;
    }
    for (Index r = 0; r < num_consistency_rows(); ++r)
      J.row(off + r) = us(eq->row_b[r]) * Xmap.row(eq->row_a[r]) + xs(eq->row_a[r]) * Umap.row(eq->row_b[r]) -
                       Wmap.row(eq->row_w[r]);
    return J;
  }

  LiftedProblem without_terminal() const {
    LiftedProblem q = *this;
    q.include_terminal = false;
    return q;
  }

  // Only the bilinear consistency rows; used to sample genuine trajectories.
  LiftedProblem consistency_only() const {
    LiftedProblem q = *this;
    q.include_initial = false;
    q.include_terminal = false;
    return q;
  }
};

struct LiftOptions {
  LiftingBasis basis = LiftingBasis::Whitened;
  double scale = 0.0;  // ≤ 0: chosen from the boundary data
};

inline LiftedProblem lift_to_p3(const P2Instance& p2, const LiftOptions& opt = {}) {
  const DataMatrices& dm = p2.dm;
  LiftedProblem lp;
  lp.basis = opt.basis;
  lp.n = dm.n;
  lp.m = dm.m;
  lp.T = dm.T;
  lp.x0 = p2.prob.x0;
  lp.xf = p2.prob.xf;
  double sigma = opt.scale;
  if (sigma <= 0.0) sigma = std::max(p2.prob.x0.norm(), p2.prob.xf.norm());
  if (sigma <= 0.0) sigma = 1.0;
  lp.scale = sigma;
  if (opt.basis == LiftingBasis::Whitened) {
    const ThinSvd svd = thin_svd(dm.GT, p2.policy);
    const Index r = svd.rank;
    lp.W = sigma * svd.V.leftCols(r) * svd.sigma.head(r).cwiseInverse().asDiagonal();
    lp.to_gamma = (1.0 / sigma) * svd.U.leftCols(r).transpose() * dm.GT;
  } else {
    lp.W = sigma * Matrix::Identity(dm.columns(), dm.columns());
    lp.to_gamma = (1.0 / sigma) * Matrix::Identity(dm.columns(), dm.columns());
  }
  lp.Xmap = dm.HT1x * lp.W;
  lp.Umap = dm.HTu * lp.W;
  lp.Wmap = dm.HTxu * lp.W;
  lp.Pobj = stage_cost_gram(lp.Xmap, lp.Umap, p2.prob, dm.n, dm.m);
  lp.qobj = Vector::Zero(lp.dim());
  lp.cobj = 0.0;
  const double pmax = lp.Pobj.cwiseAbs().maxCoeff();
  lp.objective_scale = pmax > 0.0 ? pmax : 1.0;

  auto eq = std::make_shared<LiftedProblem::PairData>();
  const Index n = dm.n, m = dm.m, T = dm.T, d = lp.dim();
  for (Index t = 0; t < T; ++t)
    for (Index j = 0; j < n; ++j)
      for (Index k = 0; k < m; ++k) {
        eq->row_a.push_back(t * n + j);
        eq->row_b.push_back(t * m + k);
        eq->row_w.push_back(t * n * m + j * m + k);
      }
  const Index rows = static_cast<Index>(eq->row_a.size());
  // Symmetrised coefficient of γ̂_p γ̂_q in each consistency row.
  std::vector<Matrix> coef(static_cast<std::size_t>(rows));
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> occurs = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(d, d, false);
  for (Index r = 0; r < rows; ++r) {
    const Vector a = lp.Xmap.row(eq->row_a[r]).transpose();
    const Vector b = lp.Umap.row(eq->row_b[r]).transpose();
    Matrix S = a * b.transpose();
    S = S + S.transpose().eval();  // S_pq = a_p b_q + a_q b_p
    S.diagonal() *= 0.5;
    for (Index q = 0; q < d; ++q)
      for (Index p = 0; p <= q; ++p)
        if (S(p, q) != 0.0) occurs(p, q) = true;
    coef[static_cast<std::size_t>(r)] = std::move(S);
  }
  for (Index q = 0; q < d; ++q)
    for (Index p = 0; p <= q; ++p)
      if (occurs(p, q)) eq->pairs.emplace_back(p, q);
  const Index P = static_cast<Index>(eq->pairs.size());
  eq->C.resize(rows, P);
  eq->D.resize(rows, d);
  for (Index r = 0; r < rows; ++r) {
    const Matrix& S = coef[static_cast<std::size_t>(r)];
    for (Index k = 0; k < P; ++k) eq->C(r, k) = S(eq->pairs[k].first, eq->pairs[k].second);
    eq->D.row(r) = lp.Wmap.row(eq->row_w[r]);
    coef[static_cast<std::size_t>(r)] = Matrix();
  }
  lp.eq = std::move(eq);
  return lp;
}

// Surrogate objective ‖x̄(T) − xf‖² used to reach the terminal state.
inline LiftedProblem terminal_surrogate(const LiftedProblem& lp) {
  LiftedProblem q = lp.without_terminal();
  const Matrix BT = lp.Xmap.middleRows(lp.T * lp.n, lp.n);
  q.Pobj = Matrix::Zero(BT.cols(), BT.cols());
  q.Pobj.selfadjointView<Eigen::Lower>().rankUpdate(BT.transpose());
  q.Pobj = q.Pobj.selfadjointView<Eigen::Lower>();
  q.qobj = -2.0 * BT.transpose() * lp.xf;
  q.cobj = lp.xf.squaredNorm();
  const double pmax = q.Pobj.cwiseAbs().maxCoeff();
  q.objective_scale = pmax > 0.0 ? pmax : 1.0;
  return q;
}

struct ProjectionResult {
  bool converged = false;
  Vector gamma;
  double residual = 0.0;
  int iterations = 0;
};

// Minimum-norm Gauss–Newton projection onto {F(γ̂) = 0}.
inline ProjectionResult project_onto_constraints(const LiftedProblem& lp, const Vector& g0, double tol = 1e-12,
                                                 int max_iter = 30) {
  ProjectionResult res;
  res.gamma = g0;
  Vector F = lp.constraint_residual(res.gamma);
  double fn = F.cwiseAbs().maxCoeff();
  for (; res.iterations < max_iter && fn > tol; ++res.iterations) {
    const Matrix J = lp.constraint_jacobian(res.gamma);
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(J);
    const Vector delta = cod.solve(F);
    double step = 1.0;
    bool improved = false;
    for (int bt = 0; bt < 12; ++bt) {
      const Vector trial = res.gamma - step * delta;
      const Vector Ft = lp.constraint_residual(trial);
      const double ft = Ft.cwiseAbs().maxCoeff();
      if (ft < fn || ft <= tol) {
        res.gamma = trial;
        F = Ft;
        fn = ft;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
  }
  res.residual = fn;
  res.converged = fn <= tol && res.gamma.allFinite();
  return res;
}

// ---- Algorithm loop ------------------------------------------------------

enum class CcpStatus { Converged, MaxIter, SubproblemFailed };

inline const char* to_string(CcpStatus s) {
  switch (s) {
    case CcpStatus::Converged: return "Converged";
    case CcpStatus::MaxIter: return "MaxIter";
    case CcpStatus::SubproblemFailed: return "SubproblemFailed";
  }
  return "Unknown";
}

inline QcqpSettings subproblem_defaults() {
  QcqpSettings q;
  q.gap_tol = 1e-9;
  return q;
}

struct CcpSettings {
  int max_outer = 300;
  double tau_init = 5e-4;
  double tau_min = 1e-8;
  double tau_max = 1e8;
  double tau_increase = 10.0;
  double tau_decrease = 0.5;
  double cost_rel_tol = 1e-8;
  double step_tol = 1e-7;
  double feasibility_tol = 1e-6;
  double restoration_tol = 1e-12;
  bool extrapolate = true;
  int max_extrapolation = 10;
  double certificate_step_tol = 1e-6;
  QcqpSettings qcqp = subproblem_defaults();
  // Called after every accepted iterate; returning true ends the run.
  std::function<bool(const Vector& gamma)> stop_when;
};

struct CcpIterate {
  int k = 0;
  double cost = 0.0;           // objective at the iterate, original units
  double violation = 0.0;      // P2 violation of the iterate, original units
  double step_norm = 0.0;      // ‖γ̂_{k+1} − γ̂_k‖₂
  int subproblem_iters = 0;
  double tau = 0.0;
  bool accepted = false;
  double pinch = 0.0;  // max |r − γ̂γ̂| at the subproblem solution
  double extrapolation = 1.0;
};

struct CcpSolution {
  Alpha alpha;
  Vector gamma;
  ReconstructedTrajectory trajectory;
  double cost = 0.0;
  std::vector<CcpIterate> trace;
  CcpStatus status = CcpStatus::MaxIter;
  double certificate_step = 0.0;
  double certificate_tau = 0.0;
  double certificate_pinch = 0.0;
  Index num_pairs = 0;
  Index num_equalities = 0;
  Index qcqp_core_dim = 0;
  Index qcqp_inequalities = 0;
  std::string message;
};

namespace ccp_detail {

// Penalised convexified subproblem at the linearisation point gk.
// Variables: [γ̂ (d) | (r, s1, s2) per pair].
struct Subproblem {
  ConvexQcqp qp;
  Index d = 0;
  Index P = 0;

  Subproblem(const LiftedProblem& lp) {
    d = lp.dim();
    P = lp.num_pairs();
    const Index N = d + 3 * P;
    qp.dim = N;
    std::vector<Eigen::Triplet<double>> trip;
    const double cs = lp.objective_scale;
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j)
        if (lp.Pobj(i, j) != 0.0) trip.emplace_back(i, j, 2.0 * lp.Pobj(i, j) / cs);
    qp.P0.resize(N, N);
    qp.P0.setFromTriplets(trip.begin(), trip.end());
    qp.q0 = Vector::Zero(N);
    qp.q0.head(d) = lp.qobj / cs;
    qp.r0 = lp.cobj / cs;

    const Index nb = lp.num_boundary_rows();
    const Index nr = lp.num_consistency_rows();
    std::vector<Eigen::Triplet<double>> at;
    at.reserve(static_cast<std::size_t>((nb + nr) * d + nr * P));
    Vector b = Vector::Zero(nb + nr);
    Index row = 0;
    auto boundary = [&](Index first_map_row, const Vector& target) {
      for (Index i = 0; i < lp.n; ++i, ++row) {
        for (Index c = 0; c < d; ++c) at.emplace_back(row, c, lp.Xmap(first_map_row + i, c));
        b(row) = target(i);
      }
    };
    if (lp.include_initial) boundary(0, lp.x0);
    if (lp.include_terminal) boundary(lp.T * lp.n, lp.xf);
    const auto& eq = *lp.eq;
    for (Index r = 0; r < nr; ++r) {
      for (Index c = 0; c < d; ++c)
        if (eq.D(r, c) != 0.0) at.emplace_back(nb + r, c, -eq.D(r, c));
      for (Index k = 0; k < P; ++k)
        if (eq.C(r, k) != 0.0) at.emplace_back(nb + r, d + 3 * k, eq.C(r, k));
    }
    qp.Aeq.resize(nb + nr, N);
    qp.Aeq.setFromTriplets(at.begin(), at.end());
    qp.beq = b;
    qp.local_candidates.assign(static_cast<std::size_t>(N), false);
    for (Index k = d; k < N; ++k) qp.local_candidates[static_cast<std::size_t>(k)] = true;
    qp.inequalities.resize(static_cast<std::size_t>(4 * P));
  }

  // Linearise the concave parts at gk and set the slack penalty τ.
  void update(const LiftedProblem& lp, const Vector& gk, double tau) {
    const auto& pairs = lp.eq->pairs;
    for (Index k = 0; k < P; ++k) {
      const Index p = pairs[k].first, q = pairs[k].second;
      const Index r = d + 3 * k, s1 = r + 1, s2 = r + 2;
      auto& c1 = qp.inequalities[static_cast<std::size_t>(4 * k)];
      auto& c2 = qp.inequalities[static_cast<std::size_t>(4 * k + 1)];
      auto& c3 = qp.inequalities[static_cast<std::size_t>(4 * k + 2)];
      auto& c4 = qp.inequalities[static_cast<std::size_t>(4 * k + 3)];
      const double gp = gk(p), gq = gk(q);
      if (p != q) {
        // (γp+γq)² − [γp²+γq²]_lin − 2r − s1 ≤ 0
        c1.P = {{p, p, 2.0}, {q, q, 2.0}, {p, q, 2.0}};
        c1.q = {{p, -2.0 * gp}, {q, -2.0 * gq}, {r, -2.0}, {s1, -1.0}};
        c1.r = gp * gp + gq * gq;
        // γp²+γq² − [(γp+γq)²]_lin + 2r − s2 ≤ 0
        const double sk = gp + gq;
        c2.P = {{p, p, 2.0}, {q, q, 2.0}};
        c2.q = {{p, -2.0 * sk}, {q, -2.0 * sk}, {r, 2.0}, {s2, -1.0}};
        c2.r = sk * sk;
      } else {
        // Same pair with p = q: (2γp)² − [2γp²]_lin − 2r and its reverse.
        c1.P = {{p, p, 8.0}};
        c1.q = {{p, -4.0 * gp}, {r, -2.0}, {s1, -1.0}};
        c1.r = 2.0 * gp * gp;
        c2.P = {{p, p, 4.0}};
        c2.q = {{p, -8.0 * gp}, {r, 2.0}, {s2, -1.0}};
        c2.r = 4.0 * gp * gp;
      }
      c3.P.clear();
      c3.q = {{s1, -1.0}};
      c3.r = 0.0;
      c4.P.clear();
      c4.q = {{s2, -1.0}};
      c4.r = 0.0;
      qp.q0(s1) = tau;
      qp.q0(s2) = tau;
    }
  }

  Vector warm_start(const LiftedProblem& lp, const Vector& gk, double slack) const {
    Vector z(qp.dim);
    z.head(d) = gk;
    for (Index k = 0; k < P; ++k) {
      const auto [p, q] = lp.eq->pairs[k];
      z(d + 3 * k) = gk(p) * gk(q);
      z(d + 3 * k + 1) = slack;
      z(d + 3 * k + 2) = slack;
    }
    return z;
  }

  double pinch(const LiftedProblem& lp, const Vector& z) const {
    double worst = 0.0;
    for (Index k = 0; k < P; ++k) {
      const auto [p, q] = lp.eq->pairs[k];
      worst = std::max(worst, std::abs(z(d + 3 * k) - z(p) * z(q)));
    }
    return worst;
  }
};

}  // namespace ccp_detail

struct SubproblemStep {
  SolveReport report;
  Vector candidate;  // γ̂ part of the subproblem solution
  double step = 0.0;
  double pinch = 0.0;
};

class CcpRunner {
 public:
  CcpRunner(const LiftedProblem& lp, const P2Instance* p2, CcpSettings settings)
      : lp_(lp), p2_(p2), s_(std::move(settings)), sub_(lp) {}

  SubproblemStep solve_subproblem(const Vector& gk, double tau) {
    sub_.update(lp_, gk, tau);
    const Vector z0 = sub_.warm_start(lp_, gk, 1.0);
    SubproblemStep out;
    out.report = solve(sub_.qp, z0, s_.qcqp, !validated_);
    validated_ = true;
    out.candidate = out.report.z.head(sub_.d);
    out.step = (out.candidate - gk).norm();
    out.pinch = sub_.pinch(lp_, out.report.z);
    core_dim_ = out.report.effective_core_dim;
    return out;
  }

  double original_cost(const Vector& g) const {
    if (p2_ && lp_.include_terminal) return p2_->cost(lp_.alpha(g));
    return lp_.objective(g);
  }

  double violation(const Vector& g) const {
    if (p2_) {
      const P2Violation v = p2_violation(*p2_, lp_.alpha(g));
      return lp_.include_terminal ? v.max() : std::max(v.initial, v.consistency);
    }
    return lp_.scale * lp_.constraint_residual(g).cwiseAbs().maxCoeff();
  }

  CcpSolution run(const Vector& g0);

  // An iteration-capped solve still counts when it is primal feasible and
  // nearly stationary; the outer loop only needs a descent candidate.
  static bool usable(const SolveReport& r) {
    if (r.status == QcqpStatus::Optimal) return true;
    return r.status == QcqpStatus::MaxIter && r.eq_residual < 1e-8 && r.max_violation <= 0.0 &&
           r.kkt_residual < 1e-6 && r.complementarity < 1e-6;
  }

  Index core_dim() const { return core_dim_; }

 private:
  const LiftedProblem& lp_;
  const P2Instance* p2_;
  CcpSettings s_;
  ccp_detail::Subproblem sub_;
  bool validated_ = false;
  Index core_dim_ = 0;
};

inline CcpSolution CcpRunner::run(const Vector& g_start) {
  CcpSolution sol;
  sol.num_pairs = lp_.num_pairs();
  sol.num_equalities = lp_.num_equalities();
  sol.qcqp_inequalities = 4 * lp_.num_pairs();

  Vector g = g_start;
  {
    const double v0 = violation(g);
    if (v0 > s_.feasibility_tol) {
      const ProjectionResult pr = project_onto_constraints(lp_, g, s_.restoration_tol);
      if (!pr.converged) {
        sol.status = CcpStatus::SubproblemFailed;
        sol.message = "initial point violates the constraints by " + format_double(v0);
        sol.gamma = g;
        return sol;
      }
      g = pr.gamma;
    }
  }
  auto scaled = [&](const Vector& v) { return lp_.objective(v) / lp_.objective_scale; };
  double f = scaled(g);
  double tau = s_.tau_init;
  sol.trace.push_back({0, original_cost(g), violation(g), 0.0, 0, tau, true, 0.0, 1.0});
  bool converged = false;
  bool stopped = false;
  int k = 0;
  for (; k < s_.max_outer; ++k) {
    if (s_.stop_when && s_.stop_when(g)) {
      stopped = true;
      break;
    }
    SubproblemStep st = solve_subproblem(g, tau);
    if (!usable(st.report)) {
      sol.status = CcpStatus::SubproblemFailed;
      const auto& r = st.report;
      sol.message = std::string("convex subproblem ended with status ") + to_string(r.status) +
                    " (equality residual " + format_double(r.eq_residual) + ", KKT residual " +
                    format_double(r.kkt_residual) + ", complementarity " + format_double(r.complementarity) + ")";
      break;
    }
    CcpIterate rec;
    rec.k = k + 1;
    rec.tau = tau;
    rec.subproblem_iters = st.report.iterations;
    rec.pinch = st.pinch;

    ProjectionResult pr = project_onto_constraints(lp_, st.candidate, s_.restoration_tol);
    double fc = pr.converged ? scaled(pr.gamma) : std::numeric_limits<double>::infinity();
    if (!(fc <= f)) {
      rec.accepted = false;
      rec.cost = original_cost(g);
      rec.violation = violation(g);
      sol.trace.push_back(rec);
      if (st.step <= s_.step_tol) {
        converged = true;
        break;
      }
      tau *= s_.tau_increase;
      if (tau > s_.tau_max) {
        converged = true;
        break;
      }
      continue;
    }
    Vector best = pr.gamma;
    double fbest = fc;
    double factor = 1.0;
    if (s_.extrapolate) {
      const Vector dir = pr.gamma - g;
      double sfac = 2.0;
      for (int e = 0; e < s_.max_extrapolation; ++e, sfac *= 2.0) {
        const ProjectionResult pe = project_onto_constraints(lp_, g + sfac * dir, s_.restoration_tol);
        if (!pe.converged) break;
        const double fe = scaled(pe.gamma);
        if (!(fe < fbest)) break;
        best = pe.gamma;
        fbest = fe;
        factor = sfac;
      }
    }
    const double step = (best - g).norm();
    const double decrease = f - fbest;
    g = best;
    f = fbest;
    tau = std::max(tau * s_.tau_decrease, s_.tau_min);
    rec.accepted = true;
    rec.cost = original_cost(g);
    rec.violation = violation(g);
    rec.step_norm = step;
    rec.extrapolation = factor;
    sol.trace.push_back(rec);
    if (rec.violation > s_.feasibility_tol) {
      sol.status = CcpStatus::SubproblemFailed;
      sol.message = "restored iterate violates the constraints by " + format_double(rec.violation);
      break;
    }
    if (std::abs(decrease) < s_.cost_rel_tol * (1.0 + std::abs(f)) && step < s_.step_tol) {
      converged = true;
      break;
    }
  }
  if (stopped || converged) sol.status = CcpStatus::Converged;
  else if (sol.message.empty()) sol.status = CcpStatus::MaxIter;

  sol.gamma = g;
  sol.alpha = lp_.alpha(g);
  sol.cost = original_cost(g);
  if (p2_) sol.trajectory = reconstruct(sol.alpha, p2_->dm);

  if (sol.status == CcpStatus::Converged && !stopped) {
    // Fixed-point check: the convexified problem at the final point should
    // not move it once the penalty is large enough to be exact.
    double t = std::max(tau, s_.tau_init);
    for (int e = 0; e < 8; ++e, t *= s_.tau_increase) {
      SubproblemStep st = solve_subproblem(g, std::min(t, s_.tau_max));
      sol.certificate_step = st.step;
      sol.certificate_tau = std::min(t, s_.tau_max);
      sol.certificate_pinch = st.pinch;
      if (st.step < s_.certificate_step_tol || t >= s_.tau_max) break;
    }
  }
  sol.qcqp_core_dim = core_dim_;
  return sol;
}

inline CcpSolution ccp_solve(const LiftedProblem& lp, const P2Instance& p2, const Alpha& alpha0,
                             const CcpSettings& settings = {}) {
  CcpRunner runner(lp, &p2, settings);
  return runner.run(lp.gamma(alpha0));
}

// ---- Initial feasible point ---------------------------------------------

struct InitialPointReport {
  Alpha alpha;
  double phase_a_terminal_error = 0.0;
  double phase_a_violation = 0.0;
  double phase_b_terminal_error = 0.0;
  double final_violation = 0.0;
  int phase_b_iterations = 0;
  bool phase_a_sufficient = false;
  std::string phase_a_source;
};

struct InitializationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Phase A: a genuine trajectory from x0 (a recorded window starting at x0, or
// the zero-input response), represented through the data. Phase B: drive the
// terminal error down with the same convexify-and-restore loop.
inline InitialPointReport find_initial_alpha(const P2Instance& p2, const LiftedProblem& lp,
                                             const CcpSettings& settings = {}, double terminal_tol = 1e-7) {
  const DataMatrices& dm = p2.dm;
  const Index n = dm.n;
  InitialPointReport rep;

  const ThinSvd svd = thin_svd(dm.GT, p2.policy);
  const Matrix Gpinv = pseudo_inverse(svd);
  Vector target = Vector::Zero(dm.rows());
  target.head(n) = p2.prob.x0;
  Alpha best = Gpinv * target;  // zero-input response from x0
  double best_err = p2_violation(p2, best).terminal;
  rep.phase_a_source = "zero-input response";
  for (Index j = 0; j < dm.columns(); ++j) {
    if ((dm.H1x.col(j) - p2.prob.x0).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + p2.prob.x0.cwiseAbs().maxCoeff()))
      continue;
    Alpha e = Alpha::Zero(dm.columns());
    e(j) = 1.0;
    const double err = p2_violation(p2, e).terminal;
    if (err < best_err) {
      best = e;
      best_err = err;
      rep.phase_a_source = "recorded window " + std::to_string(j);
    }
  }
  rep.phase_a_terminal_error = best_err;
  rep.phase_a_violation = p2_violation(p2, best).max();
  if (best_err < terminal_tol) {
    rep.alpha = best;
    rep.phase_a_sufficient = true;
    rep.final_violation = rep.phase_a_violation;
    return rep;
  }

  // Phase B.
  const LiftedProblem surrogate = terminal_surrogate(lp);
  Vector finished;
  bool done = false;
  auto try_finish = [&](const Vector& g) {
    const ProjectionResult pr = project_onto_constraints(lp, g, settings.restoration_tol);
    if (pr.converged && p2_violation(p2, lp.alpha(pr.gamma)).max() < terminal_tol) {
      finished = pr.gamma;
      done = true;
      return true;
    }
    return false;
  };
  CcpSettings sb = settings;
  sb.stop_when = try_finish;
  CcpRunner runner(surrogate, &p2, sb);
  const CcpSolution phase_b = runner.run(lp.gamma(best));
  rep.phase_b_iterations = static_cast<int>(phase_b.trace.size()) - 1;
  if (!done) {
    const double err = p2_violation(p2, phase_b.alpha).terminal;
    if (err < terminal_tol) {
      done = try_finish(phase_b.gamma) || true;
      if (finished.size() == 0) finished = phase_b.gamma;
    } else {
      throw InitializationError("find_initial_alpha: terminal error stalled at " + format_double(err) +
                                " (target may be unreachable in T steps)");
    }
  }
  rep.alpha = lp.alpha(finished);
  const P2Violation v = p2_violation(p2, rep.alpha);
  rep.phase_b_terminal_error = v.terminal;
  rep.final_violation = v.max();
  return rep;
}

// ---- Extraction and export ---------------------------------------------

struct ExtractedControl {
  Matrix u;     // m × T
  Matrix xbar;  // n × (T+1)
  Matrix replay;  // states from an open-loop replay (empty without a model)
  double replay_max_error = 0.0;
  double replay_terminal_error = 0.0;
};

inline ExtractedControl extract_control(const Alpha& alpha, const DataMatrices& dm,
                                        const BilinearSystem* plant_model = nullptr) {
  const ReconstructedTrajectory r = reconstruct(alpha, dm);
  ExtractedControl out{r.ubar, r.xbar, Matrix(), 0.0, 0.0};
  if (plant_model) {
    const Trajectory tr = simulate(*plant_model, r.xbar.col(0), r.ubar);
    out.replay = tr.states;
    out.replay_max_error = (tr.states - r.xbar).cwiseAbs().maxCoeff();
  }
  return out;
}

inline void write_trace_csv(std::ostream& out, const std::vector<CcpIterate>& trace) {
  out << "k,cost,violation,step_norm,subproblem_iters,tau,accepted,pinch,extrapolation\n";
  for (const auto& it : trace)
    out << it.k << ',' << format_double(it.cost) << ',' << format_double(it.violation) << ','
        << format_double(it.step_norm) << ',' << it.subproblem_iters << ',' << format_double(it.tau) << ','
        << (it.accepted ? 1 : 0) << ',' << format_double(it.pinch) << ',' << format_double(it.extrapolation)
        << '\n';
}

inline nlohmann::json solution_to_json(const CcpSolution& sol) {
  nlohmann::json j;
  j["alpha"] = vector_to_json(sol.alpha);
  j["u_star"] = matrix_to_json(sol.trajectory.ubar);
  j["x_bar"] = matrix_to_json(sol.trajectory.xbar);
  j["cost"] = sol.cost;
  j["status"] = to_string(sol.status);
  j["iterations"] = sol.trace.empty() ? 0 : static_cast<int>(sol.trace.size()) - 1;
  j["certificate"] = {{"step", sol.certificate_step}, {"tau", sol.certificate_tau}, {"pinch", sol.certificate_pinch}};
  j["sizes"] = {{"pairs", sol.num_pairs},
                {"equalities", sol.num_equalities},
                {"qcqp_core_dim", sol.qcqp_core_dim},
                {"qcqp_inequalities", sol.qcqp_inequalities}};
  return j;
}

}  // namespace bdd
