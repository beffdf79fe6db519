#pragma once

#include <Eigen/Sparse>

#include <limits>
#include <numeric>
#include <optional>
#include <ostream>

#include "bilinear_dd/bilinear_core.hpp"

namespace bdd {

// One constraint ½ zᵀ P z + qᵀ z + r ≤ 0. P is given by its upper triangle:
// an entry (i, j, v) with i ≤ j means P_ij = P_ji = v.
struct QuadraticInequality {
  std::vector<Eigen::Triplet<double, Index>> P;
  std::vector<std::pair<Index, double>> q;
  double r = 0.0;
};

struct ConvexQcqp {
  Index dim = 0;
  Eigen::SparseMatrix<double> P0;  // full symmetric storage
  Vector q0;
  double r0 = 0.0;
  Eigen::SparseMatrix<double, Eigen::RowMajor> Aeq;
  Vector beq;
  std::vector<QuadraticInequality> inequalities;
  // Variables flagged here may be eliminated block-wise inside each Newton
  // step when they only interact through a few small inequality groups.
  std::vector<bool> local_candidates;

  Index num_equalities() const { return Aeq.rows(); }

  double objective(const Vector& z) const { return 0.5 * z.dot(P0 * z) + q0.dot(z) + r0; }

  void validate() const;
};

inline double eval_inequality(const QuadraticInequality& g, const Vector& z) {
  double v = g.r;
  for (const auto& [i, qi] : g.q) v += qi * z(i);
  for (const auto& e : g.P) {
    const double f = e.row() == e.col() ? 0.5 : 1.0;
    v += f * e.value() * z(e.row()) * z(e.col());
  }
  return v;
}

inline void ConvexQcqp::validate() const {
  require(dim >= 1, "ConvexQcqp: dimension must be positive");
  require(P0.rows() == dim && P0.cols() == dim, "ConvexQcqp: P0 must be dim×dim");
  require(q0.size() == dim, "ConvexQcqp: q0 must have length dim");
  require(Aeq.cols() == dim || Aeq.rows() == 0, "ConvexQcqp: equality matrix must have dim columns");
  require(beq.size() == Aeq.rows(), "ConvexQcqp: equality right-hand side length mismatch");
  require(local_candidates.empty() || static_cast<Index>(local_candidates.size()) == dim,
          "ConvexQcqp: local_candidates must be empty or have length dim");
  {
    const Eigen::SparseMatrix<double> asym = P0 - Eigen::SparseMatrix<double>(P0.transpose());
    double pmax = 0.0, amax = 0.0;
    std::vector<Index> support;
    for (Index k = 0; k < P0.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(P0, k); it; ++it)
        if (it.value() != 0.0) {
          pmax = std::max(pmax, std::abs(it.value()));
          support.push_back(it.row());
        }
    for (Index k = 0; k < asym.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(asym, k); it; ++it) amax = std::max(amax, std::abs(it.value()));
    require(amax <= 1e-12 * std::max(1.0, pmax), "ConvexQcqp: P0 must be symmetric");
    std::sort(support.begin(), support.end());
    support.erase(std::unique(support.begin(), support.end()), support.end());
    // The PSD test runs on the nonzero block; very large blocks are trusted.
    if (!support.empty() && support.size() <= 2000) {
      const Index ns = static_cast<Index>(support.size());
      Matrix D = Matrix::Zero(ns, ns);
      auto pos = [&](Index v) { return std::lower_bound(support.begin(), support.end(), v) - support.begin(); };
      for (Index k = 0; k < P0.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(P0, k); it; ++it) D(pos(it.row()), pos(it.col())) = it.value();
      Eigen::SelfAdjointEigenSolver<Matrix> es(D, Eigen::EigenvaluesOnly);
      require(es.eigenvalues().minCoeff() >= -1e-10 * std::max(1.0, D.norm()), "ConvexQcqp: P0 must be PSD");
    }
  }
  for (const auto& g : inequalities) {
    std::vector<Index> sup;
    for (const auto& e : g.P) {
      require(e.row() >= 0 && e.col() < dim && e.row() <= e.col(),
              "ConvexQcqp: inequality Hessian entries must be upper-triangular and in range");
      sup.push_back(e.row());
      sup.push_back(e.col());
    }
    for (const auto& [i, v] : g.q) require(i >= 0 && i < dim, "ConvexQcqp: inequality linear term out of range");
    if (g.P.empty()) continue;
    std::sort(sup.begin(), sup.end());
    sup.erase(std::unique(sup.begin(), sup.end()), sup.end());
    Matrix S = Matrix::Zero(static_cast<Index>(sup.size()), static_cast<Index>(sup.size()));
    auto pos = [&](Index v) { return std::lower_bound(sup.begin(), sup.end(), v) - sup.begin(); };
    for (const auto& e : g.P) {
      S(pos(e.row()), pos(e.col())) += e.value();
      if (e.row() != e.col()) S(pos(e.col()), pos(e.row())) += e.value();
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    require(es.eigenvalues().minCoeff() >= -1e-10 * std::max(1e-300, S.norm()),
            "ConvexQcqp: inequality Hessian is not positive semidefinite");
  }
}

enum class QcqpStatus { Optimal, MaxIter, Infeasible };

inline const char* to_string(QcqpStatus s) {
  switch (s) {
    case QcqpStatus::Optimal: return "Optimal";
    case QcqpStatus::MaxIter: return "MaxIter";
    case QcqpStatus::Infeasible: return "Infeasible";
  }
  return "Unknown";
}

struct QcqpSettings {
  int max_iter = 200;
  double feas_tol = 1e-10;  // relative primal and dual residual target
  double gap_tol = 1e-11;   // relative surrogate duality gap target
  double mu = 10.0;
  double ls_alpha = 0.01;
  double ls_beta = 0.5;
};

struct SolveReport {
  Vector z;
  Vector lambda;
  Vector nu;
  double objective = 0.0;
  double eq_residual = 0.0;      // ‖A z − b‖∞ / (1 + ‖b‖∞)
  double max_violation = 0.0;    // max(0, g_i(z))
  double kkt_residual = 0.0;     // stationarity ∞-norm over the dual scale
  double complementarity = 0.0;  // max |λ_i g_i(z)| over the objective scale
  double gap = 0.0;              // −Σ λ_i g_i
  int iterations = 0;
  QcqpStatus status = QcqpStatus::MaxIter;
  Index effective_core_dim = 0;
  Index eliminated_dim = 0;
  Index num_inequalities = 0;
  std::string message;
};

namespace qcqp_detail {

// Compact, flat copy of the inequality data used inside the Newton loop.
struct FlatInequalities {
  std::vector<Index> start;  // support offsets, size m+1
  std::vector<Index> vars;   // global variable index per support slot
  std::vector<Index> pstart;
  std::vector<int> pa, pb;  // support positions, pa ≤ pb
  std::vector<double> pv;
  std::vector<Index> qstart;
  std::vector<int> qa;
  std::vector<double> qv;
  std::vector<double> r;
  Index max_support = 0;

  Index size() const { return static_cast<Index>(r.size()); }

  explicit FlatInequalities(const std::vector<QuadraticInequality>& ineq) {
    start.push_back(0);
    pstart.push_back(0);
    qstart.push_back(0);
    std::vector<Index> sup;
    for (const auto& g : ineq) {
      sup.clear();
      for (const auto& e : g.P) {
        sup.push_back(e.row());
        sup.push_back(e.col());
      }
      for (const auto& [i, v] : g.q) sup.push_back(i);
      std::sort(sup.begin(), sup.end());
      sup.erase(std::unique(sup.begin(), sup.end()), sup.end());
      auto pos = [&](Index v) { return static_cast<int>(std::lower_bound(sup.begin(), sup.end(), v) - sup.begin()); };
      vars.insert(vars.end(), sup.begin(), sup.end());
      start.push_back(static_cast<Index>(vars.size()));
      for (const auto& e : g.P) {
        pa.push_back(pos(e.row()));
        pb.push_back(pos(e.col()));
        pv.push_back(e.value());
      }
      pstart.push_back(static_cast<Index>(pv.size()));
      for (const auto& [i, v] : g.q) {
        qa.push_back(pos(i));
        qv.push_back(v);
      }
      qstart.push_back(static_cast<Index>(qv.size()));
      r.push_back(g.r);
      max_support = std::max<Index>(max_support, static_cast<Index>(sup.size()));
    }
  }

  // Value of constraint i and its gradient on the support (written to grad).
  double eval(Index i, const Vector& z, double* grad) const {
    const Index s0 = start[i], ns = start[i + 1] - s0;
    for (Index a = 0; a < ns; ++a) grad[a] = 0.0;
    double v = r[static_cast<std::size_t>(i)];
    for (Index k = qstart[i]; k < qstart[i + 1]; ++k) {
      grad[qa[k]] += qv[k];
      v += qv[k] * z(vars[s0 + qa[k]]);
    }
    for (Index k = pstart[i]; k < pstart[i + 1]; ++k) {
      const double za = z(vars[s0 + pa[k]]), zb = z(vars[s0 + pb[k]]);
      if (pa[k] == pb[k]) {
        v += 0.5 * pv[k] * za * za;
        grad[pa[k]] += pv[k] * za;
      } else {
        v += pv[k] * za * zb;
        grad[pa[k]] += pv[k] * zb;
        grad[pb[k]] += pv[k] * za;
      }
    }
    return v;
  }

  double value(Index i, const Vector& z) const {
    const Index s0 = start[i];
    double v = r[static_cast<std::size_t>(i)];
    for (Index k = qstart[i]; k < qstart[i + 1]; ++k) v += qv[k] * z(vars[s0 + qa[k]]);
    for (Index k = pstart[i]; k < pstart[i + 1]; ++k) {
      const double za = z(vars[s0 + pa[k]]), zb = z(vars[s0 + pb[k]]);
      v += (pa[k] == pb[k] ? 0.5 : 1.0) * pv[k] * za * zb;
    }
    return v;
  }
};

// Partition into dense core variables and small groups of local variables.
struct Partition {
  std::vector<Index> core;       // global indices
  std::vector<Index> core_pos;   // global → core position or −1
  std::vector<Index> group_of;   // global → group or −1
  std::vector<Index> pos_in_group;
  struct Group {
    std::vector<Index> vars;
    std::vector<Index> coupled;      // core positions
    std::vector<Index> active;       // positions in group with nonzero equality column
    Index active_offset = 0;         // first column in the dense local equality block
    Index hgg = 0, hgc = 0;          // offsets in flat storage
  };
  std::vector<Group> groups;
  Index total_active = 0;
  Index hgg_size = 0, hgc_size = 0;
};

inline Partition make_partition(const ConvexQcqp& p, const FlatInequalities& fi, Index max_group = 16) {
  const Index dim = p.dim;
  Partition part;
  std::vector<bool> local(static_cast<std::size_t>(dim), false);
  if (!p.local_candidates.empty()) {
    std::vector<bool> touched(static_cast<std::size_t>(dim), false);
    for (Index v : fi.vars) touched[static_cast<std::size_t>(v)] = true;
    for (Index v = 0; v < dim; ++v) local[v] = p.local_candidates[v] && touched[v];
  }
  std::vector<Index> parent(static_cast<std::size_t>(dim));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](Index v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  auto unite = [&](Index a, Index b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  for (Index i = 0; i < fi.size(); ++i) {
    Index first = -1;
    for (Index s = fi.start[i]; s < fi.start[i + 1]; ++s) {
      const Index v = fi.vars[s];
      if (!local[v]) continue;
      if (first < 0) first = v;
      else unite(first, v);
    }
  }
  for (Index k = 0; k < p.P0.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p.P0, k); it; ++it)
      if (local[it.row()] && local[it.col()] && it.value() != 0.0) unite(it.row(), it.col());

  std::vector<Index> root_group(static_cast<std::size_t>(dim), -1);
  std::vector<std::vector<Index>> members;
  for (Index v = 0; v < dim; ++v) {
    if (!local[v]) continue;
    const Index r = find(v);
    if (root_group[r] < 0) {
      root_group[r] = static_cast<Index>(members.size());
      members.emplace_back();
    }
    members[root_group[r]].push_back(v);
  }
  for (auto& mem : members)
    if (static_cast<Index>(mem.size()) > max_group)
      for (Index v : mem) local[v] = false;

  part.core_pos.assign(static_cast<std::size_t>(dim), -1);
  part.group_of.assign(static_cast<std::size_t>(dim), -1);
  part.pos_in_group.assign(static_cast<std::size_t>(dim), -1);
  for (Index v = 0; v < dim; ++v)
    if (!local[v]) {
      part.core_pos[v] = static_cast<Index>(part.core.size());
      part.core.push_back(v);
    }
  for (auto& mem : members) {
    if (!local[mem.front()]) continue;
    Partition::Group g;
    g.vars = mem;
    const Index id = static_cast<Index>(part.groups.size());
    for (std::size_t k = 0; k < mem.size(); ++k) {
      part.group_of[mem[k]] = id;
      part.pos_in_group[mem[k]] = static_cast<Index>(k);
    }
    part.groups.push_back(std::move(g));
  }
  // Coupled core variables per group.
  for (Index i = 0; i < fi.size(); ++i) {
    Index grp = -1;
    for (Index s = fi.start[i]; s < fi.start[i + 1]; ++s)
      if (part.group_of[fi.vars[s]] >= 0) grp = part.group_of[fi.vars[s]];
    if (grp < 0) continue;
    auto& cpl = part.groups[grp].coupled;
    for (Index s = fi.start[i]; s < fi.start[i + 1]; ++s) {
      const Index c = part.core_pos[fi.vars[s]];
      if (c >= 0 && std::find(cpl.begin(), cpl.end(), c) == cpl.end()) cpl.push_back(c);
    }
  }
  for (Index k = 0; k < p.P0.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p.P0, k); it; ++it) {
      const Index a = it.row(), b = it.col();
      if (part.group_of[a] >= 0 && part.core_pos[b] >= 0) {
        auto& cpl = part.groups[part.group_of[a]].coupled;
        if (std::find(cpl.begin(), cpl.end(), part.core_pos[b]) == cpl.end()) cpl.push_back(part.core_pos[b]);
      }
    }
  // Active equality columns.
  std::vector<bool> in_eq(static_cast<std::size_t>(dim), false);
  for (Index k = 0; k < p.Aeq.outerSize(); ++k)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(p.Aeq, k); it; ++it)
      if (it.value() != 0.0) in_eq[it.col()] = true;
  for (auto& g : part.groups) {
    std::sort(g.coupled.begin(), g.coupled.end());
    for (std::size_t k = 0; k < g.vars.size(); ++k)
      if (in_eq[g.vars[k]]) g.active.push_back(static_cast<Index>(k));
    g.active_offset = part.total_active;
    part.total_active += static_cast<Index>(g.active.size());
    const Index s = static_cast<Index>(g.vars.size()), kc = static_cast<Index>(g.coupled.size());
    g.hgg = part.hgg_size;
    g.hgc = part.hgc_size;
    part.hgg_size += s * s;
    part.hgc_size += s * kc;
  }
  return part;
}

// True when report a should replace report b.
inline bool better(const SolveReport& a, const SolveReport& b) {
  if (a.status == QcqpStatus::Optimal) return true;
  return std::isfinite(a.kkt_residual) && !(a.kkt_residual >= b.kkt_residual);
}

struct Workspace {
  const ConvexQcqp& p;
  const FlatInequalities& fi;
  const Partition& part;
  Matrix Ac;    // n_eq × n_core
  Matrix Aloc;  // n_eq × total_active
  double primal_scale = 1.0;

  Workspace(const ConvexQcqp& prob, const FlatInequalities& f, const Partition& pa) : p(prob), fi(f), part(pa) {
    const Index neq = p.num_equalities();
    const Index nc = static_cast<Index>(part.core.size());
    Ac = Matrix::Zero(neq, nc);
    Aloc = Matrix::Zero(neq, part.total_active);
    std::vector<Index> active_col(static_cast<std::size_t>(p.dim), -1);
    for (const auto& g : part.groups)
      for (std::size_t k = 0; k < g.active.size(); ++k)
        active_col[g.vars[g.active[k]]] = g.active_offset + static_cast<Index>(k);
    for (Index r = 0; r < neq; ++r)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(p.Aeq, r); it; ++it) {
        const Index c = it.col();
        if (part.core_pos[c] >= 0) Ac(r, part.core_pos[c]) += it.value();
        else if (active_col[c] >= 0) Aloc(r, active_col[c]) += it.value();
      }
    primal_scale = 1.0 + (p.beq.size() ? p.beq.cwiseAbs().maxCoeff() : 0.0);
  }
};

}  // namespace qcqp_detail

class QcqpSolver {
 public:
  QcqpSolver(const ConvexQcqp& problem, QcqpSettings settings = {})
      : p_(problem), s_(settings), fi_(problem.inequalities), part_(qcqp_detail::make_partition(problem, fi_)),
        ws_(problem, fi_, part_) {}

  // Runs the interior-point iteration from a point with all g_i(z) < 0.
  // Multipliers may be supplied; otherwise they start on the central path.
  SolveReport solve_from_interior(const Vector& z0, const Vector* lam0 = nullptr, const Vector* nu0 = nullptr) const;
  // Log-barrier path following from the same kind of start, run until the
  // gap is below handoff_gap relative to the objective, then finished by
  // the primal-dual iteration. Slower, but monotone in the barrier value, so
  // it does not stall when the linearised constraints misjudge the curvature.
  SolveReport solve_barrier(const Vector& z0, double handoff_gap = 1e-6) const;

  const qcqp_detail::Partition& partition() const { return part_; }

 private:
  struct Residuals {
    Vector rd;  // dual residual
    Vector rp;  // primal residual
    Vector g;   // constraint values
    double cent_norm2 = 0.0;
  };

  void residuals(const Vector& z, const Vector& lam, const Vector& nu, double t, Residuals& out) const;
  double merit(const Residuals& r) const {
    return std::sqrt(r.rd.squaredNorm() + r.rp.squaredNorm() + r.cent_norm2);
  }
  // Newton direction for the primal-dual system at barrier parameter t.
  void newton_direction(const Vector& z, const Vector& lam, const Vector& nu, double t, const Residuals& res,
                        Vector& dz, Vector& dlam, Vector& dnu) const;
  void finalize(SolveReport& rep, const Vector& z, const Vector& lam, const Vector& nu) const;

  const ConvexQcqp& p_;
  QcqpSettings s_;
  qcqp_detail::FlatInequalities fi_;
  qcqp_detail::Partition part_;
  qcqp_detail::Workspace ws_;
};

inline void QcqpSolver::residuals(const Vector& z, const Vector& lam, const Vector& nu, double t,
                                  Residuals& out) const {
  const Index m = fi_.size();
  out.rd = p_.P0 * z + p_.q0;
  if (p_.num_equalities() > 0) {
    out.rd.noalias() += p_.Aeq.transpose() * nu;
    out.rp = p_.Aeq * z - p_.beq;
  } else {
    out.rp.resize(0);
  }
  out.g.resize(m);
  std::vector<double> grad(static_cast<std::size_t>(std::max<Index>(fi_.max_support, 1)));
  double cent = 0.0;
  for (Index i = 0; i < m; ++i) {
    const double gi = fi_.eval(i, z, grad.data());
    out.g(i) = gi;
    const Index s0 = fi_.start[i];
    for (Index a = 0; a < fi_.start[i + 1] - s0; ++a) out.rd(fi_.vars[s0 + a]) += lam(i) * grad[a];
    const double rc = -lam(i) * gi - 1.0 / t;
    cent += rc * rc;
  }
  out.cent_norm2 = cent;
}

inline void QcqpSolver::newton_direction(const Vector& z, const Vector& lam, const Vector& nu, double t,
                                         const Residuals& res, Vector& dz, Vector& dlam, Vector& dnu) const {
  (void)nu;
  const Index m = fi_.size();
  const Index nc = static_cast<Index>(part_.core.size());
  const Index neq = p_.num_equalities();
  const auto& groups = part_.groups;

  // Right-hand side of the reduced system: dual residual with the
  // complementarity rows folded in (barrier gradient form).
  Vector rhs = res.rd;
  std::vector<double> grad(static_cast<std::size_t>(std::max<Index>(fi_.max_support, 1)));
  Matrix Hcc = Matrix::Zero(nc, nc);
  std::vector<double> hgg(static_cast<std::size_t>(part_.hgg_size), 0.0);
  std::vector<double> hgc(static_cast<std::size_t>(part_.hgc_size), 0.0);

  auto add_entry = [&](Index a, Index b, double v) {
    const Index ca = part_.core_pos[a], cb = part_.core_pos[b];
    if (ca >= 0 && cb >= 0) {
      Hcc(ca, cb) += v;
      return;
    }
    if (ca < 0 && cb < 0) {
      const auto& g = groups[part_.group_of[a]];
      const Index s = static_cast<Index>(g.vars.size());
      hgg[static_cast<std::size_t>(g.hgg + part_.pos_in_group[a] + s * part_.pos_in_group[b])] += v;
      return;
    }
    if (ca >= 0) return;  // the (local, core) twin carries this entry
    const auto& g = groups[part_.group_of[a]];
    const Index s = static_cast<Index>(g.vars.size());
    const Index slot = std::lower_bound(g.coupled.begin(), g.coupled.end(), cb) - g.coupled.begin();
    hgc[static_cast<std::size_t>(g.hgc + part_.pos_in_group[a] + s * slot)] += v;
  };

  for (Index k = 0; k < p_.P0.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p_.P0, k); it; ++it) add_entry(it.row(), it.col(), it.value());

  for (Index i = 0; i < m; ++i) {
    const double gi = fi_.eval(i, z, grad.data());
    const double w = lam(i) / (-gi);
    const Index s0 = fi_.start[i], ns = fi_.start[i + 1] - s0;
    const double corr = -lam(i) - 1.0 / (t * gi);  // folds r_cent into the dual rows
    for (Index a = 0; a < ns; ++a) {
      rhs(fi_.vars[s0 + a]) += corr * grad[a];
      for (Index b = 0; b < ns; ++b) add_entry(fi_.vars[s0 + a], fi_.vars[s0 + b], w * grad[a] * grad[b]);
    }
    if (lam(i) != 0.0)
      for (Index k = fi_.pstart[i]; k < fi_.pstart[i + 1]; ++k) {
        const Index a = fi_.vars[s0 + fi_.pa[k]], b = fi_.vars[s0 + fi_.pb[k]];
        add_entry(a, b, lam(i) * fi_.pv[k]);
        if (a != b) add_entry(b, a, lam(i) * fi_.pv[k]);
      }
  }

  // Block elimination of the local groups.
  Matrix At = ws_.Ac;  // Ã
  Vector f1(nc), f2 = -res.rp;
  for (Index c = 0; c < nc; ++c) f1(c) = -rhs(part_.core[c]);
  Matrix C = Matrix::Zero(neq, neq);
  std::vector<double> dvec(static_cast<std::size_t>(part_.total_active), 0.0);
  struct GroupFactor {
    Eigen::LLT<Matrix> llt;
    Matrix X;  // F^{-1} H_Gc
    Vector y;  // F^{-1} rhs_G
  };
  std::vector<GroupFactor> factors(groups.size());
  Matrix Wfull;  // only used for groups with several active columns
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const Index s = static_cast<Index>(g.vars.size()), kc = static_cast<Index>(g.coupled.size());
    Matrix F = Eigen::Map<const Matrix>(&hgg[static_cast<std::size_t>(g.hgg)], s, s);
    const Eigen::Map<const Matrix> Hgc(kc ? &hgc[static_cast<std::size_t>(g.hgc)] : nullptr, s, kc);
    auto& fac = factors[gi];
    const double dmax = 1.0 + F.diagonal().cwiseAbs().maxCoeff();
    for (double rel = 1e-14;; rel *= 100.0) {
      Matrix Fr = F;
      Fr.diagonal().array() += rel * dmax;
      fac.llt.compute(Fr);
      if (fac.llt.info() == Eigen::Success) break;
      if (rel > 1e-6) throw NumericError("convex_qcqp: local block is not positive definite");
    }
    Vector rg(s);
    for (Index k = 0; k < s; ++k) rg(k) = rhs(g.vars[k]);
    fac.y = fac.llt.solve(rg);
    fac.X = kc ? Matrix(fac.llt.solve(Matrix(Hgc))) : Matrix(s, 0);
    for (Index a = 0; a < kc; ++a) {
      f1(g.coupled[a]) += Hgc.col(a).dot(fac.y);
      for (Index b = 0; b < kc; ++b) Hcc(g.coupled[a], g.coupled[b]) -= Hgc.col(a).dot(fac.X.col(b));
    }
    const Index na = static_cast<Index>(g.active.size());
    if (na == 0 || neq == 0) continue;
    for (Index k = 0; k < na; ++k) {
      const auto col = ws_.Aloc.col(g.active_offset + k);
      const Index pk = g.active[k];
      f2.noalias() += col * fac.y(pk);
      for (Index b = 0; b < kc; ++b) At.col(g.coupled[b]).noalias() -= col * fac.X(pk, b);
    }
    if (na == 1) {
      Vector e = Vector::Zero(s);
      e(g.active[0]) = 1.0;
      dvec[static_cast<std::size_t>(g.active_offset)] = fac.llt.solve(e)(g.active[0]);
    } else {
      Matrix E = Matrix::Zero(s, na);
      for (Index k = 0; k < na; ++k) E(g.active[k], k) = 1.0;
      Matrix Finv = E.transpose() * fac.llt.solve(E);
      const Matrix Ablk = ws_.Aloc.middleCols(g.active_offset, na);
      C.noalias() += Ablk * Finv * Ablk.transpose();
    }
  }
  if (neq > 0 && part_.total_active > 0) {
    const Index chunk = 2048;
    for (Index c0 = 0; c0 < part_.total_active; c0 += chunk) {
      const Index w = std::min(chunk, part_.total_active - c0);
      Matrix Wc = ws_.Aloc.middleCols(c0, w);
      bool any = false;
      for (Index k = 0; k < w; ++k) {
        const double d = dvec[static_cast<std::size_t>(c0 + k)];
        if (d != 0.0) any = true;
        Wc.col(k) *= std::sqrt(std::max(d, 0.0));
      }
      if (any) C.selfadjointView<Eigen::Lower>().rankUpdate(Wc);
    }
    C = C.selfadjointView<Eigen::Lower>();
  }

  // Reduced KKT system [S Ãᵀ; Ã −C].
  Matrix K(nc + neq, nc + neq);
  K.topLeftCorner(nc, nc) = Hcc;
  if (neq > 0) {
    K.topRightCorner(nc, neq) = At.transpose();
    K.bottomLeftCorner(neq, nc) = At;
    K.bottomRightCorner(neq, neq) = -C;
  }
  Vector f(nc + neq);
  f << f1, f2;
  Eigen::PartialPivLU<Matrix> lu(K);
  Vector sol = lu.solve(f);
  for (int refine = 0; refine < 2; ++refine) sol += lu.solve(f - K * sol);
  const Vector dzc = sol.head(nc);
  dnu = sol.tail(neq);

  dz = Vector::Zero(p_.dim);
  for (Index c = 0; c < nc; ++c) dz(part_.core[c]) = dzc(c);
  const Vector u = neq > 0 && part_.total_active > 0 ? Vector(ws_.Aloc.transpose() * dnu) : Vector();
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const auto& fac = factors[gi];
    const Index s = static_cast<Index>(g.vars.size());
    Vector dzg = -fac.y;
    for (std::size_t b = 0; b < g.coupled.size(); ++b) dzg.noalias() -= fac.X.col(static_cast<Index>(b)) * dzc(g.coupled[b]);
    if (!g.active.empty() && neq > 0) {
      Vector e = Vector::Zero(s);
      for (std::size_t k = 0; k < g.active.size(); ++k) e(g.active[k]) = u(g.active_offset + static_cast<Index>(k));
      dzg.noalias() -= fac.llt.solve(e);
    }
    for (Index k = 0; k < s; ++k) dz(g.vars[k]) = dzg(k);
  }

  dlam.resize(m);
  for (Index i = 0; i < m; ++i) {
    const double gi = res.g(i);
    fi_.eval(i, z, grad.data());
    const Index s0 = fi_.start[i], ns = fi_.start[i + 1] - s0;
    double gd = 0.0;
    for (Index a = 0; a < ns; ++a) gd += grad[a] * dz(fi_.vars[s0 + a]);
    const double rc = -lam(i) * gi - 1.0 / t;
    dlam(i) = (-lam(i) * gd + rc) / gi;
  }
}

inline void QcqpSolver::finalize(SolveReport& rep, const Vector& z, const Vector& lam, const Vector& nu) const {
  const Index m = fi_.size();
  rep.z = z;
  rep.lambda = lam;
  rep.nu = nu;
  rep.objective = p_.objective(z);
  Vector stat = p_.P0 * z + p_.q0;
  double dual_scale = 1.0 + std::max(p_.q0.size() ? p_.q0.cwiseAbs().maxCoeff() : 0.0,
                                     stat.size() ? (p_.P0 * z).cwiseAbs().maxCoeff() : 0.0);
  if (p_.num_equalities() > 0) {
    stat += p_.Aeq.transpose() * nu;
    rep.eq_residual = (p_.Aeq * z - p_.beq).cwiseAbs().maxCoeff() / ws_.primal_scale;
  }
  rep.max_violation = 0.0;
  rep.complementarity = 0.0;
  rep.gap = 0.0;
  for (Index i = 0; i < m; ++i) {
    const double gi = eval_inequality(p_.inequalities[static_cast<std::size_t>(i)], z);
    const auto& g = p_.inequalities[static_cast<std::size_t>(i)];
    for (const auto& [k, v] : g.q) stat(k) += lam(i) * v;
    for (const auto& e : g.P) {
      stat(e.row()) += lam(i) * e.value() * z(e.col());
      if (e.row() != e.col()) stat(e.col()) += lam(i) * e.value() * z(e.row());
    }
    rep.max_violation = std::max(rep.max_violation, gi);
    rep.complementarity = std::max(rep.complementarity, std::abs(lam(i) * gi));
    rep.gap += -lam(i) * gi;
  }
  rep.kkt_residual = stat.size() ? stat.cwiseAbs().maxCoeff() / dual_scale : 0.0;
  rep.complementarity /= 1.0 + std::abs(rep.objective);
  rep.effective_core_dim = static_cast<Index>(part_.core.size());
  rep.eliminated_dim = p_.dim - rep.effective_core_dim;
  rep.num_inequalities = m;
}

inline SolveReport QcqpSolver::solve_from_interior(const Vector& z0, const Vector* lam0, const Vector* nu0) const {
  const Index m = fi_.size();
  const Index neq = p_.num_equalities();
  SolveReport rep;
  Vector z = z0;
  for (Index i = 0; i < m; ++i)
    if (!(fi_.value(i, z) < 0.0)) throw ArgumentError("solve_from_interior: start point is not strictly feasible");
  const double f_scale = 1.0 + std::abs(p_.objective(z));
  const double t0 = m > 0 ? static_cast<double>(m) / f_scale : 1.0;
  Vector lam(m);
  for (Index i = 0; i < m; ++i) lam(i) = 1.0 / (t0 * -fi_.value(i, z));
  if (lam0) lam = *lam0;
  Vector nu = nu0 ? *nu0 : Vector::Zero(neq);
  const double dual_scale =
      1.0 + std::max(p_.q0.size() ? p_.q0.cwiseAbs().maxCoeff() : 0.0, (p_.P0 * z).cwiseAbs().maxCoeff());

  Residuals res;
  Vector dz, dlam, dnu;
  int it = 0;
  double t = 0.0, last_step = 1.0;
  for (; it < s_.max_iter; ++it) {
    double eta = 0.0;
    for (Index i = 0; i < m; ++i) eta -= lam(i) * fi_.value(i, z);
    // After a short step the barrier target stays put, so the next step
    // recentres instead of chasing a gap that shrank only because the
    // iterate ran into the boundary.
    const double t_cand = m > 0 ? s_.mu * static_cast<double>(m) / std::max(eta, 1e-300) : 1.0;
    if (it == 0 || last_step >= 0.5) t = std::max(t, t_cand);
    residuals(z, lam, nu, t, res);
    const double rp = neq ? res.rp.cwiseAbs().maxCoeff() / ws_.primal_scale : 0.0;
    // Stationarity with the true multipliers.
    const double rd = res.rd.size() ? res.rd.cwiseAbs().maxCoeff() / dual_scale : 0.0;
    const double fz = std::abs(p_.objective(z));
    if (rp <= s_.feas_tol && rd <= s_.feas_tol && eta <= s_.gap_tol * (1.0 + fz)) {
      rep.status = QcqpStatus::Optimal;
      break;
    }
    newton_direction(z, lam, nu, t, res, dz, dlam, dnu);
    // A singular system near the solution; keep the last good iterate.
    if (!dz.allFinite() || !dlam.allFinite() || !dnu.allFinite()) break;
    double step = 1.0;
    for (Index i = 0; i < m; ++i)
      if (dlam(i) < 0.0) step = std::min(step, -lam(i) / dlam(i));
    step *= 0.99;
    step = std::min(step, 1.0);
    Vector zn;
    // Fraction to the boundary on the slacks −g_i as well as on λ.
    auto feasible = [&](const Vector& zc) {
      for (Index i = 0; i < m; ++i)
        if (!(fi_.value(i, zc) < 0.01 * res.g(i))) return false;
      return true;
    };
    for (int bt = 0; bt < 60; ++bt) {
      zn = z + step * dz;
      if (feasible(zn)) break;
      step *= s_.ls_beta;
    }
    const double merit0 = merit(res);
    Residuals rn;
    Vector ln, nn;
    for (int bt = 0; bt < 60; ++bt) {
      zn = z + step * dz;
      ln = lam + step * dlam;
      nn = nu + step * dnu;
      residuals(zn, ln, nn, t, rn);
      if (merit(rn) <= (1.0 - s_.ls_alpha * step) * merit0) break;
      step *= s_.ls_beta;
    }
    z = zn;
    lam = ln;
    nu = nn;
    last_step = step;
    if (step < 1e-14) break;
  }
  rep.iterations = it;
  finalize(rep, z, lam, nu);
  return rep;
}

inline SolveReport QcqpSolver::solve_barrier(const Vector& z0, double handoff_gap) const {
  const Index m = fi_.size();
  const Index neq = p_.num_equalities();
  SolveReport rep;
  Vector z = z0;
  std::vector<double> grad(static_cast<std::size_t>(std::max<Index>(fi_.max_support, 1)));
  auto barrier = [&](const Vector& zc, double t, double& out) {
    double phi = 0.0;
    for (Index i = 0; i < m; ++i) {
      const double gi = fi_.value(i, zc);
      if (!(gi < 0.0)) return false;
      phi -= std::log(-gi);
    }
    out = t * p_.objective(zc) + phi;
    return true;
  };
  const double dual_scale =
      1.0 + std::max(p_.q0.size() ? p_.q0.cwiseAbs().maxCoeff() : 0.0, (p_.P0 * z).cwiseAbs().maxCoeff());
  double t = m > 0 ? static_cast<double>(m) / (1.0 + std::abs(p_.objective(z))) : 1.0;
  Vector lam(m), nu = Vector::Zero(neq), dz, dlam, dnu;
  Residuals res;
  int it = 0;
  for (; it < 4 * s_.max_iter; ++it) {
    for (Index i = 0; i < m; ++i) lam(i) = 1.0 / (t * -fi_.value(i, z));
    residuals(z, lam, nu, t, res);
    newton_direction(z, lam, nu, t, res, dz, dlam, dnu);
    if (!dz.allFinite() || !dnu.allFinite()) break;
    nu += dnu;
    double slope = t * (p_.P0 * z + p_.q0).dot(dz);
    for (Index i = 0; i < m; ++i) {
      const double gi = fi_.eval(i, z, grad.data());
      const Index s0 = fi_.start[i];
      double gd = 0.0;
      for (Index a = 0; a < fi_.start[i + 1] - s0; ++a) gd += grad[a] * dz(fi_.vars[s0 + a]);
      slope += gd / -gi;
    }
    const double decrement = -slope;
    const double rp = neq ? res.rp.cwiseAbs().maxCoeff() / ws_.primal_scale : 0.0;
    double psi0 = 0.0, psi = 0.0;
    barrier(z, t, psi0);
    bool moved = false;
    if (decrement > 1e-10 || rp > s_.feas_tol) {
      double step = 1.0;
      for (int bt = 0; bt < 80; ++bt, step *= s_.ls_beta) {
        const Vector zn = z + step * dz;
        if (barrier(zn, t, psi) && psi <= psi0 + s_.ls_alpha * step * std::min(slope, 0.0)) {
          z = zn;
          moved = true;
          break;
        }
      }
      // Round-off can block the last few digits of centring.
      if (!moved && (decrement > 1e-6 || rp > s_.feas_tol)) break;
    }
    if (!moved) {
      // Centred: the multipliers 1/(t·(−g)) and ν are dual feasible with gap m/t.
      for (Index i = 0; i < m; ++i) lam(i) = 1.0 / (t * -fi_.value(i, z));
      Residuals rc;
      residuals(z, lam, nu, t, rc);
      const double rd = rc.rd.size() ? rc.rd.cwiseAbs().maxCoeff() / dual_scale : 0.0;
      if (m == 0 || (static_cast<double>(m) / t <= handoff_gap * (1.0 + std::abs(p_.objective(z))) &&
                     rd <= 1e3 * s_.feas_tol)) {
        rep.iterations = it;
        finalize(rep, z, lam, nu);
        SolveReport pd = solve_from_interior(z, &lam, &nu);
        pd.iterations += it;
        return qcqp_detail::better(pd, rep) ? pd : rep;
      }
      t *= s_.mu;
    }
  }
  for (Index i = 0; i < m; ++i) lam(i) = 1.0 / (t * -fi_.value(i, z));
  rep.iterations = it;
  finalize(rep, z, lam, nu);
  return rep;
}

struct Phase1Result {
  bool feasible = false;
  Vector z;
  double slack = 0.0;
  SolveReport report;
};

// Slack minimisation: min s s.t. g_i(z) ≤ s, A z = b, s ≥ −1, with a tiny
// proximal term keeping the auxiliary problem bounded.
inline Phase1Result phase1(const ConvexQcqp& p, const Vector& z_start, const QcqpSettings& settings = {}) {
  const Index n = p.dim;
  require(z_start.size() == n, "phase1: start point has wrong dimension");
  ConvexQcqp aux;
  aux.dim = n + 1;
  const double rho = 1e-6 / (1.0 + z_start.squaredNorm());
  std::vector<Eigen::Triplet<double>> trip;
  for (Index i = 0; i < n; ++i) trip.emplace_back(i, i, rho);
  aux.P0.resize(n + 1, n + 1);
  aux.P0.setFromTriplets(trip.begin(), trip.end());
  aux.q0 = Vector::Zero(n + 1);
  aux.q0.head(n) = -rho * z_start;
  aux.q0(n) = 1.0;
  aux.r0 = 0.5 * rho * z_start.squaredNorm();
  aux.Aeq.resize(p.num_equalities(), n + 1);
  if (p.num_equalities() > 0) {
    std::vector<Eigen::Triplet<double>> at;
    for (Index r = 0; r < p.Aeq.rows(); ++r)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(p.Aeq, r); it; ++it)
        at.emplace_back(r, it.col(), it.value());
    aux.Aeq.setFromTriplets(at.begin(), at.end());
  }
  aux.beq = p.beq;
  aux.inequalities = p.inequalities;
  for (auto& g : aux.inequalities) g.q.emplace_back(n, -1.0);
  aux.inequalities.push_back({{}, {{n, -1.0}}, -1.0});
  if (!p.local_candidates.empty()) {
    aux.local_candidates = p.local_candidates;
    aux.local_candidates.push_back(false);
  }
  double gmax = 0.0;
  for (const auto& g : p.inequalities) gmax = std::max(gmax, eval_inequality(g, z_start));
  Vector w(n + 1);
  w << z_start, std::max(gmax, 0.0) + 1.0;

  QcqpSettings s1 = settings;
  s1.gap_tol = std::max(settings.gap_tol, 1e-10);
  Phase1Result out;
  out.report = QcqpSolver(aux, s1).solve_from_interior(w);
  out.z = out.report.z.head(n);
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& g : p.inequalities) worst = std::max(worst, eval_inequality(g, out.z));
  out.slack = p.inequalities.empty() ? out.report.z(n) : worst;
  const bool eq_ok = out.report.eq_residual <= 1e-8;
  out.feasible = eq_ok && (p.inequalities.empty() || worst <= -1e-9);
  return out;
}

inline SolveReport solve(const ConvexQcqp& p, const std::optional<Vector>& warm_start = std::nullopt,
                         const QcqpSettings& settings = {}, bool check_problem = true) {
  if (check_problem) p.validate();
  Vector z0 = warm_start ? *warm_start : Vector::Zero(p.dim);
  require(z0.size() == p.dim, "solve: warm start has wrong dimension");
  bool interior = true;
  for (const auto& g : p.inequalities)
    if (!(eval_inequality(g, z0) < 0.0)) {
      interior = false;
      break;
    }
  if (!interior) {
    Phase1Result ph = phase1(p, z0, settings);
    if (!ph.feasible) {
      SolveReport rep;
      rep.z = ph.z;
      rep.status = QcqpStatus::Infeasible;
      rep.iterations = ph.report.iterations;
      rep.max_violation = std::max(0.0, ph.slack);
      rep.num_inequalities = static_cast<Index>(p.inequalities.size());
      rep.message = "phase 1 left slack " + format_double(ph.slack);
      return rep;
    }
    z0 = ph.z;
  }
  const QcqpSolver solver(p, settings);
  SolveReport rep = solver.solve_from_interior(z0);
  // A capped run that is already nearly stationary is kept as it is.
  const bool stalled = !(rep.kkt_residual <= 1e-6 && rep.complementarity <= 1e-6);
  if (rep.status != QcqpStatus::Optimal && stalled && !p.inequalities.empty()) {
    SolveReport alt = solver.solve_barrier(z0);
    alt.iterations += rep.iterations;
    if (qcqp_detail::better(alt, rep)) rep = alt;
  }
  if (rep.status != QcqpStatus::Optimal && interior && rep.eq_residual > 1e-8) {
    // The equalities may not meet the interior at all; let phase 1 decide.
    Phase1Result ph = phase1(p, z0, settings);
    if (!ph.feasible) {
      rep.status = QcqpStatus::Infeasible;
      rep.message = "phase 1 left slack " + format_double(ph.slack);
    }
  }
  return rep;
}

inline nlohmann::json qcqp_to_json(const ConvexQcqp& p) {
  nlohmann::json j;
  j["dim"] = p.dim;
  auto P0 = nlohmann::json::array();
  for (Index k = 0; k < p.P0.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p.P0, k); it; ++it)
      P0.push_back({it.row(), it.col(), it.value()});
  j["P0"] = P0;
  j["q0"] = vector_to_json(p.q0);
  j["r0"] = p.r0;
  auto A = nlohmann::json::array();
  for (Index r = 0; r < p.Aeq.rows(); ++r)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(p.Aeq, r); it; ++it)
      A.push_back({it.row(), it.col(), it.value()});
  j["Aeq"] = A;
  j["beq"] = vector_to_json(p.beq);
  auto G = nlohmann::json::array();
  for (const auto& g : p.inequalities) {
    auto P = nlohmann::json::array();
    for (const auto& e : g.P) P.push_back({e.row(), e.col(), e.value()});
    auto q = nlohmann::json::array();
    for (const auto& [i, v] : g.q) q.push_back({i, v});
    G.push_back({{"P", P}, {"q", q}, {"r", g.r}});
  }
  j["inequalities"] = G;
  return j;
}

inline nlohmann::json report_to_json(const SolveReport& r) {
  return {{"status", to_string(r.status)},
          {"objective", r.objective},
          {"eq_residual", r.eq_residual},
          {"max_violation", r.max_violation},
          {"kkt_residual", r.kkt_residual},
          {"complementarity", r.complementarity},
          {"iterations", r.iterations},
          {"effective_core_dim", r.effective_core_dim},
          {"eliminated_dim", r.eliminated_dim},
          {"num_inequalities", r.num_inequalities},
          {"z", vector_to_json(r.z)}};
}

}  // namespace bdd
