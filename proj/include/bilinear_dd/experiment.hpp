#pragma once

#include <Eigen/Eigenvalues>

#include <memory>
#include <optional>
#include <ostream>

#include "bilinear_dd/hankel_data.hpp"

namespace bdd {

// The experiment only sees the plant through reset/step.
class Plant {
 public:
  virtual ~Plant() = default;
  virtual Vector reset() = 0;
  virtual Vector step(const Vector& u) = 0;
  virtual Index state_dim() const = 0;
  virtual Index input_dim() const = 0;
};

class SimulatedPlant final : public Plant {
 public:
  explicit SimulatedPlant(BilinearSystem sys, Vector x0 = {}) : sys_(std::move(sys)), x0_(std::move(x0)) {
    if (x0_.size() == 0) x0_ = Vector::Zero(sys_.n());
    require(x0_.size() == sys_.n(), "SimulatedPlant: initial state dimension mismatch");
    x_ = x0_;
  }
  Vector reset() override {
    x_ = x0_;
    t_ = 0;
    return x_;
  }
  Vector step(const Vector& u) override {
    Vector next = bdd::step(sys_, x_, u);
    ++t_;
    if (!next.allFinite() || next.norm() > kDivergenceBound)
      throw DivergenceError("plant state diverged at time index " + std::to_string(t_), t_);
    x_ = next;
    return x_;
  }
  Index state_dim() const override { return sys_.n(); }
  Index input_dim() const override { return sys_.m(); }

 private:
  BilinearSystem sys_;
  Vector x0_;
  Vector x_;
  Index t_ = 0;
};

struct ExperimentConfig {
  Index T = 1;
  double epsilon = 1e-2;
  double rel_rank_tol = 1e-9;
  Index max_steps = 0;  // 0: ten times the minimal data length
  std::uint64_t seed = 0;
  // Upper cap on the input bound; the first attempt uses min(epsilon, cap).
  double scaling_eps_bar = 1.0;
  double member_tol = 1e-8;
  double gradient_tol = 1e-10;
  int max_restarts = 6;
};

struct KernelDirection {
  Vector xi;   // n
  Vector eta;  // mT, blocks eta_1..eta_T
  Vector chi;  // mnT, blocks chi_1..chi_T

  Vector eta_last(Index m) const { return eta.tail(m); }
  Vector chi_last(Index m, Index n) const { return chi.tail(m * n); }
  Vector stacked() const {
    Vector d(xi.size() + eta.size() + chi.size());
    d << xi, eta, chi;
    return d;
  }
};

enum class Branch { Seed = 0, KernelStep = 8, Fallback = 11, Arbitrary = 14 };

struct StepRecord {
  Index t = 0;
  double u_norm = 0.0;
  Branch branch = Branch::Seed;
  Index rank_before = 0;
  Index rank_after = 0;
  std::optional<bool> membership;
  Index k = 0;
  double epsilon = 0.0;
  int attempt = 0;
};

struct ExperimentResult {
  Trajectory data;
  DataMatrices matrices;
  RankCertificate certificate;
  std::vector<StepRecord> log;
  double epsilon_used = 0.0;
  int restarts = 0;
};

struct NonTerminationError : std::runtime_error {
  NonTerminationError(const std::string& what, RankCertificate cert)
      : std::runtime_error(what), certificate(std::move(cert)) {}
  RankCertificate certificate;
};

struct ContradictionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateExcitationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Stacked matrix G_T(t) built from x(0..t) and u(0..t-1); requires t ≥ T.
inline Matrix stacked_matrix(const Matrix& X, const Matrix& U, Index T) {
  Trajectory tr{X, U, false};
  return build_data_matrices(tr, T).GT;
}

inline Index numerical_rank(const Matrix& M, const RankPolicy& policy) {
  if (M.rows() == 0 || M.cols() == 0 || M.cwiseAbs().maxCoeff() == 0.0) return 0;
  return rank_certificate(M, policy).rank;
}

// True when v lies (numerically) in the column space of M.
inline bool in_column_space(const Matrix& M, const Vector& v, const RankPolicy& policy, double member_tol) {
  const double scale = v.norm();
  if (scale == 0.0) return true;
  if (M.cols() == 0 || M.cwiseAbs().maxCoeff() == 0.0) return false;
  const ThinSvd svd = thin_svd(M, policy);
  const Matrix Ur = svd.U.leftCols(svd.rank);
  const Vector residual = v - Ur * (Ur.transpose() * v);
  return residual.norm() < member_tol * scale;
}

// Membership test at time t: is [x(t-T+1); u_[t-T+1,t-1]; x⊗u_[t-T+1,t-1]] in the
// image of the depth-(T-1) data matrix built from the first t-T+1 windows?
inline bool membership_check(const Matrix& X, const Matrix& U, Index T, const RankPolicy& policy = {},
                             double member_tol = 1e-8) {
  const Index t = U.cols();
  require(t >= T, "membership_check: need t ≥ T");
  const Index n = X.rows(), m = U.rows();
  const Index cols = t - T + 1;
  const Index depth = T - 1;
  Matrix W(n * m, t);
  for (Index s = 0; s < t; ++s) W.col(s) = kron(X.col(s), U.col(s));
  const Index rows = n + (m + m * n) * depth;
  Matrix M(rows, cols);
  Vector v(rows);
  M.topRows(n) = X.leftCols(cols);
  v.head(n) = X.col(t - T + 1);
  for (Index s = 0; s < depth; ++s) {
    M.block(n + s * m, 0, m, cols) = U.middleCols(s, cols);
    M.block(n + m * depth + s * m * n, 0, m * n, cols) = W.middleCols(s, cols);
    v.segment(n + s * m, m) = U.col(t - T + 1 + s);
    v.segment(n + m * depth + s * m * n, m * n) = W.col(t - T + 1 + s);
  }
  return in_column_space(M, v, policy, member_tol);
}

// Unit left-kernel vector of G whose tail blocks (eta_T, chi_T) have maximal norm.
inline KernelDirection find_kernel_direction(const Matrix& G, Index n, Index m, Index T,
                                             const RankPolicy& policy = {}) {
  require(G.rows() == n + m * T + m * n * T, "find_kernel_direction: row count does not match (n, m, T)");
  Eigen::JacobiSVD<Matrix> svd(G, Eigen::ComputeFullU);
  const Vector& s = svd.singularValues();
  const double tol = policy.tolerance(s.size() ? s(0) : 0.0, G.rows(), G.cols());
  Index rank = 0;
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > tol) ++rank;
  if (rank == G.rows()) throw ArgumentError("find_kernel_direction: matrix has full row rank");
  const Matrix basis = svd.matrixU().rightCols(G.rows() - rank);

  std::vector<Index> tail;
  for (Index i = n + m * (T - 1); i < n + m * T; ++i) tail.push_back(i);
  for (Index i = n + m * T + m * n * (T - 1); i < G.rows(); ++i) tail.push_back(i);
  Matrix Bt(static_cast<Index>(tail.size()), basis.cols());
  for (std::size_t r = 0; r < tail.size(); ++r) Bt.row(static_cast<Index>(r)) = basis.row(tail[r]);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(Bt.transpose() * Bt);
  const Index top = basis.cols() - 1;
  if (eig.eigenvalues()(top) <= 1e-24)
    throw ContradictionError("find_kernel_direction: left kernel has no component on the last input blocks");
  Vector d = basis * eig.eigenvectors().col(top);
  d.normalize();
  return {d.head(n), d.segment(n, m * T), d.tail(m * n * T)};
}

// Value at u(t) = 0 of the scalar d^T [x(t-T+1); u_[t-T+1,t]; x⊗u_[t-T+1,t]].
inline double kernel_scalar_offset(const KernelDirection& dir, const Matrix& X, const Matrix& U, Index T) {
  const Index t = U.cols();
  const Index n = X.rows(), m = U.rows();
  const Index j = t - T + 1;
  double c = dir.xi.dot(X.col(j));
  for (Index s = 0; s + 1 < T; ++s) {
    c += dir.eta.segment(s * m, m).dot(U.col(j + s));
    c += dir.chi.segment(s * m * n, m * n).dot(kron(X.col(j + s), U.col(j + s)));
  }
  return c;
}

// g = eta_T + (x ⊗ I_m)^T chi_T.
inline Vector kernel_input_gradient(const KernelDirection& dir, const Vector& x_t, Index m) {
  const Index n = x_t.size();
  Vector g = dir.eta_last(m);
  const Vector chi = dir.chi_last(m, n);
  for (Index j = 0; j < n; ++j) g += x_t(j) * chi.segment(j * m, m);
  return g;
}

// Returns nullopt when the gradient vanishes and the fallback input must be used.
inline std::optional<Vector> select_input(const KernelDirection& dir, const Vector& x_t, double offset, double epsilon,
                                          Index m, double gradient_tol = 1e-10) {
  const Vector g = kernel_input_gradient(dir, x_t, m);
  const double gn = g.norm();
  if (gn <= gradient_tol) return std::nullopt;
  const double sign = offset < 0.0 ? -1.0 : 1.0;
  return Vector(sign * 0.5 * epsilon * g / gn);
}

inline Vector pe_fallback_input(const Matrix& U_hist, Index m, Index k, Index n, double epsilon, Rng& rng,
                                const RankPolicy& policy = {}) {
  const Index depth = n + k;
  const Index t = U_hist.cols();
  auto rank_of = [&](const Matrix& U) -> Index {
    if (U.cols() < depth) return 0;
    return numerical_rank(hankel(U, depth), policy);
  };
  const Index before = rank_of(U_hist);
  if (before == m * depth) throw ArgumentError("pe_fallback_input: input Hankel matrix already has full row rank");
  Matrix extended(m, t + 1);
  if (t > 0) extended.leftCols(t) = U_hist;
  for (int draw = 0; draw < 50; ++draw) {
    const Vector u = sphere_sample(m, 0.5 * epsilon, rng);
    extended.col(t) = u;
    if (rank_of(extended) > before) return u;
  }
  throw DegenerateExcitationError("pe_fallback_input: 50 draws failed to raise the input Hankel rank");
}

namespace detail {

struct AttemptOutcome {
  bool done = false;
  bool restart = false;
  std::string reason;
  Matrix X, U;
};

inline AttemptOutcome run_attempt(Plant& plant, const ExperimentConfig& cfg, double eps, int attempt, Index max_steps,
                                  Rng& rng, std::vector<StepRecord>& log) {
  const RankPolicy policy{cfg.rel_rank_tol};
  const Index n = plant.state_dim(), m = plant.input_dim(), T = cfg.T;
  const Index rows = n + m * T + m * n * T;
  const Index stall_limit = 5 * rows;

  AttemptOutcome out;
  Matrix X(n, max_steps + 1);
  Matrix U(m, max_steps);
  X.col(0) = plant.reset();
  if (X.col(0).norm() != 0.0) throw ArgumentError("design_experiment: plant must start at the origin");

  auto current = [&](Index t) { return std::pair<Matrix, Matrix>(X.leftCols(t + 1), U.leftCols(t)); };
  try {
    for (Index t = 0; t < T; ++t) {
      U.col(t) = sphere_sample(m, 0.5 * eps, rng);
      X.col(t + 1) = plant.step(U.col(t));
      log.push_back({t, U.col(t).norm(), Branch::Seed, 0, 0, std::nullopt, 0, eps, attempt});
    }
    Index t = T;
    Index k = 1;
    auto [X0, U0] = current(t);
    Index rank = numerical_rank(stacked_matrix(X0, U0, T), policy);
    Index stall = 0;
    while (rank < rows) {
      if (t >= max_steps) {
        out.reason = "step budget exhausted";
        out.X = X.leftCols(t + 1);
        out.U = U.leftCols(t);
        return out;
      }
      auto [Xt, Ut] = current(t);
      while (n + k <= t && numerical_rank(hankel(Ut, n + k), policy) == m * (n + k)) ++k;

      const bool member = membership_check(Xt, Ut, T, policy, cfg.member_tol);
      Vector u;
      Branch branch;
      if (member) {
        const Matrix G = stacked_matrix(Xt, Ut, T);
        const KernelDirection dir = find_kernel_direction(G, n, m, T, policy);
        const double c = kernel_scalar_offset(dir, Xt, Ut, T);
        if (auto sel = select_input(dir, Xt.col(t), c, eps, m, cfg.gradient_tol)) {
          u = *sel;
          branch = Branch::KernelStep;
        } else {
          u = pe_fallback_input(Ut, m, k, n, eps, rng, policy);
          branch = Branch::Fallback;
        }
      } else {
        u = sphere_sample(m, 0.5 * eps, rng);
        branch = Branch::Arbitrary;
      }
      U.col(t) = u;
      X.col(t + 1) = plant.step(u);
      ++t;
      auto [Xn, Un] = current(t);
      const Index new_rank = numerical_rank(stacked_matrix(Xn, Un, T), policy);
      log.push_back({t - 1, u.norm(), branch, rank, new_rank, member, k, eps, attempt});
      stall = new_rank > rank ? 0 : stall + 1;
      rank = new_rank;
      if (stall >= stall_limit) {
        out.restart = true;
        out.reason = "rank stalled for " + std::to_string(stall) + " steps";
        out.X = Xn;
        out.U = Un;
        return out;
      }
    }
    out.done = true;
    out.X = X.leftCols(t + 1);
    out.U = U.leftCols(t);
  } catch (const DivergenceError& e) {
    out.restart = true;
    out.reason = e.what();
  }
  return out;
}

}  // namespace detail

// Online experiment: drives the plant until G_T(L) has full row rank.
inline ExperimentResult design_experiment(Plant& plant, const ExperimentConfig& cfg) {
  require(cfg.T >= 1, "design_experiment: T must be positive");
  require(cfg.epsilon > 0.0 && cfg.scaling_eps_bar > 0.0, "design_experiment: epsilon must be positive");
  const Index n = plant.state_dim(), m = plant.input_dim();
  const Index lmin = min_data_length(n, m, cfg.T);
  const Index max_steps = cfg.max_steps > 0 ? cfg.max_steps : 10 * lmin;
  require(max_steps >= lmin, "design_experiment: max_steps below the minimal data length");

  Rng rng(cfg.seed);
  ExperimentResult res;
  double eps = std::min(cfg.epsilon, cfg.scaling_eps_bar);
  std::string last_reason;
  detail::AttemptOutcome last;
  for (int attempt = 0; attempt <= cfg.max_restarts; ++attempt) {
    last = detail::run_attempt(plant, cfg, eps, attempt, max_steps, rng, res.log);
    if (last.done) {
      res.data = Trajectory{last.X, last.U, true};
      res.matrices = build_data_matrices(res.data, cfg.T);
      res.certificate = rank_certificate(res.matrices.GT, RankPolicy{cfg.rel_rank_tol});
      res.epsilon_used = eps;
      res.restarts = attempt;
      return res;
    }
    last_reason = last.reason;
    if (!last.restart) break;
    eps /= 10.0;
  }
  RankCertificate cert;
  if (last.U.cols() >= cfg.T) cert = rank_certificate(stacked_matrix(last.X, last.U, cfg.T), RankPolicy{cfg.rel_rank_tol});
  throw NonTerminationError("design_experiment: no full-row-rank data (" + last_reason + ")", cert);
}

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::Seed: return "seed";
    case Branch::KernelStep: return "step8";
    case Branch::Fallback: return "step11";
    case Branch::Arbitrary: return "step14";
  }
  return "unknown";
}

inline void write_experiment_log(std::ostream& out, const std::vector<StepRecord>& log) {
  for (const auto& r : log) {
    nlohmann::json j{{"t", r.t},
                     {"u_norm", r.u_norm},
                     {"branch", branch_name(r.branch)},
                     {"rank_before", r.rank_before},
                     {"rank_after", r.rank_after},
                     {"k", r.k},
                     {"epsilon", r.epsilon},
                     {"attempt", r.attempt}};
    j["membership"] = r.membership ? nlohmann::json(*r.membership) : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
}

}  // namespace bdd
