#pragma once

// Model-based baselines that use the true system matrices. Nothing in the
// data-driven path includes this header.

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>

#include <limits>

#include "bilinear_dd/bilinear_core.hpp"

namespace bdd {

struct PenalizedValue {
  double value = 0.0;
  Matrix gradient;  // m × T
  Vector terminal;  // x(T)
};

// Stage cost plus λᵀ(x(T) − xf) + μ‖x(T) − xf‖², with its gradient with
// respect to every input obtained by one reverse sweep.
inline PenalizedValue adjoint_gradient(const BilinearSystem& sys, const OcProblem& prob, const Matrix& U, double mu,
                                       const Vector& lambda = Vector()) {
  const Index n = sys.n(), m = sys.m(), T = U.cols();
  require(U.rows() == m, "adjoint_gradient: input dimension mismatch");
  const Trajectory tr = simulate(sys, prob.x0, U);
  PenalizedValue out;
  out.terminal = tr.states.col(T);
  const Vector c = out.terminal - prob.xf;
  out.value = trajectory_cost(prob, tr.states, U) + mu * c.squaredNorm();
  Vector p = 2.0 * mu * c;
  if (lambda.size() == n) {
    out.value += lambda.dot(c);
    p += lambda;
  }
  out.gradient.resize(m, T);
  std::vector<Matrix> Nj(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) Nj[static_cast<std::size_t>(j)] = sys.block(j);
  for (Index t = T - 1; t >= 0; --t) {
    const Vector x = tr.states.col(t), u = U.col(t);
    Matrix Ju = sys.B;  // ∂x(t+1)/∂u(t) = B + Σ_j x_j N_j
    Matrix Jx = sys.A;  // ∂x(t+1)/∂x(t) = A + [N_1 u … N_n u]
    for (Index j = 0; j < n; ++j) {
      Ju.noalias() += x(j) * Nj[static_cast<std::size_t>(j)];
      Jx.col(j).noalias() += Nj[static_cast<std::size_t>(j)] * u;
    }
    out.gradient.col(t) = 2.0 * prob.R * u + Ju.transpose() * p;
    p = 2.0 * prob.Q * x + Jx.transpose() * p;
  }
  return out;
}

struct ShootingSettings {
  double mu_init = 1.0;
  double mu_factor = 10.0;
  double mu_max = 1e12;
  double terminal_tol = 1e-6;
  int restarts = 5;
  double jitter = 1e-3;
  std::uint64_t seed = 0;
  int max_inner_iterations = 5000;
  std::optional<Matrix> warm_start;  // tried in addition to the jittered zero starts
};

struct ShootingResult {
  Matrix u;  // m × T
  Matrix x;  // n × (T+1)
  double cost = 0.0;
  double terminal_error = 0.0;
  int outer_iterations = 0;
  int best_start = -1;
  bool converged = false;
};

struct UnreachableTargetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace oracle_detail {

class ShootingFunction final : public ceres::FirstOrderFunction {
 public:
  ShootingFunction(const BilinearSystem& sys, const OcProblem& prob, double mu, const Vector& lambda)
      : sys_(sys), prob_(prob), mu_(mu), lambda_(lambda) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    const Eigen::Map<const Matrix> U(parameters, sys_.m(), prob_.T);
    try {
      const PenalizedValue v = adjoint_gradient(sys_, prob_, U, mu_, lambda_);
      if (!std::isfinite(v.value)) return false;
      *cost = v.value;
      if (gradient) Eigen::Map<Matrix>(gradient, sys_.m(), prob_.T) = v.gradient;
      return true;
    } catch (const DivergenceError&) {
      return false;
    }
  }

  int NumParameters() const override { return static_cast<int>(sys_.m() * prob_.T); }

 private:
  const BilinearSystem& sys_;
  const OcProblem& prob_;
  double mu_;
  Vector lambda_;
};

struct RunOutcome {
  Matrix u;
  int outer = 0;
  bool converged = false;
};

inline RunOutcome run_from(const BilinearSystem& sys, const OcProblem& prob, Matrix u, const ShootingSettings& s) {
  RunOutcome out;
  double mu = s.mu_init;
  Vector lambda = Vector::Zero(sys.n());
  ceres::GradientProblemSolver::Options opt;
  opt.line_search_direction_type = ceres::LBFGS;
  opt.max_num_iterations = s.max_inner_iterations;
  opt.function_tolerance = 1e-15;
  opt.gradient_tolerance = 1e-16;
  opt.parameter_tolerance = 1e-15;
  opt.logging_type = ceres::SILENT;
  for (; mu <= s.mu_max; mu *= s.mu_factor) {
    ++out.outer;
    ceres::GradientProblem problem(new ShootingFunction(sys, prob, mu, lambda));
    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(opt, problem, u.data(), &summary);
    Vector xT;
    try {
      xT = simulate(sys, prob.x0, u).states.col(prob.T);
    } catch (const DivergenceError&) {
      break;
    }
    const Vector c = xT - prob.xf;
    if (c.cwiseAbs().maxCoeff() < s.terminal_tol * 1e-3) {
      out.converged = true;
      break;
    }
    lambda += 2.0 * mu * c;
  }
  out.u = std::move(u);
  if (!out.converged) {
    try {
      const Vector xT = simulate(sys, prob.x0, out.u).states.col(prob.T);
      out.converged = (xT - prob.xf).cwiseAbs().maxCoeff() < s.terminal_tol;
    } catch (const DivergenceError&) {
    }
  }
  return out;
}

}  // namespace oracle_detail

// Direct single shooting: penalty on the terminal constraint with
// multiplier updates, μ growing tenfold per outer round.
inline ShootingResult shooting_solve(const BilinearSystem& sys, const OcProblem& prob,
                                     const ShootingSettings& s = {}) {
  prob.validate(sys.n(), sys.m());
  std::vector<Matrix> starts;
  Rng rng(s.seed);
  for (int r = 0; r < s.restarts; ++r) {
    Matrix u(sys.m(), prob.T);
    for (Index i = 0; i < u.size(); ++i) u(i) = s.jitter * std::normal_distribution<double>(0.0, 1.0)(rng);
    starts.push_back(std::move(u));
  }
  if (s.warm_start) {
    require(s.warm_start->rows() == sys.m() && s.warm_start->cols() == prob.T,
            "shooting_solve: warm start must be m×T");
    starts.push_back(*s.warm_start);
  }
  ShootingResult best;
  best.cost = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const oracle_detail::RunOutcome run = oracle_detail::run_from(sys, prob, starts[k], s);
    if (!run.converged) continue;
    const Trajectory tr = simulate(sys, prob.x0, run.u);
    const double cost = trajectory_cost(prob, tr.states, run.u);
    if (cost < best.cost) {
      best.u = run.u;
      best.x = tr.states;
      best.cost = cost;
      best.terminal_error = (tr.states.col(prob.T) - prob.xf).norm();
      best.outer_iterations = run.outer;
      best.best_start = static_cast<int>(k);
      best.converged = true;
    }
  }
  if (!best.converged)
    throw UnreachableTargetError("shooting_solve: terminal error stayed above " + format_double(s.terminal_tol) +
                                 " up to penalty weight " + format_double(s.mu_max));
  return best;
}

inline nlohmann::json shooting_to_json(const ShootingResult& r) {
  return {{"u_star", matrix_to_json(r.u)},
          {"x_bar", matrix_to_json(r.x)},
          {"cost", r.cost},
          {"status", r.converged ? "Converged" : "MaxIter"},
          {"terminal_error", r.terminal_error},
          {"iterations", r.outer_iterations}};
}

// Exhaustive check for scalar systems over two steps: u(1) is eliminated
// through the terminal constraint, u(0) is gridded over [−bound, bound] and
// the best cell is refined by golden-section search.
struct TwoStepOracleResult {
  double u0 = 0.0;
  double u1 = 0.0;
  double cost = std::numeric_limits<double>::infinity();
  bool found = false;
};

inline TwoStepOracleResult two_step_scalar_oracle(const BilinearSystem& sys, const OcProblem& prob, double bound,
                                                  Index grid = 200001) {
  require(sys.n() == 1 && sys.m() == 1 && prob.T == 2, "two_step_scalar_oracle: needs n = m = 1 and T = 2");
  const double a = sys.A(0, 0), b = sys.B(0, 0), nn = sys.N(0, 0);
  const double q = prob.Q(0, 0), r = prob.R(0, 0), x0 = prob.x0(0), xf = prob.xf(0);
  auto eval = [&](double u0, double& u1) {
    const double x1 = a * x0 + b * u0 + nn * x0 * u0;
    const double den = b + nn * x1;
    if (std::abs(den) < 1e-12) return std::numeric_limits<double>::infinity();
    u1 = (xf - a * x1) / den;
    if (std::abs(u1) > bound) return std::numeric_limits<double>::infinity();
    return q * x0 * x0 + r * u0 * u0 + q * x1 * x1 + r * u1 * u1;
  };
  TwoStepOracleResult best;
  const double h = 2.0 * bound / static_cast<double>(grid - 1);
  Index best_i = -1;
  for (Index i = 0; i < grid; ++i) {
    double u1 = 0.0;
    const double u0 = -bound + h * static_cast<double>(i);
    const double c = eval(u0, u1);
    if (c < best.cost) {
      best = {u0, u1, c, true};
      best_i = i;
    }
  }
  if (!best.found) return best;
  double lo = -bound + h * static_cast<double>(std::max<Index>(best_i - 1, 0));
  double hi = -bound + h * static_cast<double>(std::min<Index>(best_i + 1, grid - 1));
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c1 = hi - phi * (hi - lo), c2 = lo + phi * (hi - lo), u1 = 0.0;
  double f1 = eval(c1, u1), f2 = eval(c2, u1);
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++it) {
    if (f1 < f2) {
      hi = c2;
      c2 = c1;
      f2 = f1;
      c1 = hi - phi * (hi - lo);
      f1 = eval(c1, u1);
    } else {
      lo = c1;
      c1 = c2;
      f1 = f2;
      c2 = lo + phi * (hi - lo);
      f2 = eval(c2, u1);
    }
  }
  const double um = 0.5 * (lo + hi);
  const double cm = eval(um, u1);
  if (cm < best.cost) best = {um, u1, cm, true};
  return best;
}

}  // namespace bdd
