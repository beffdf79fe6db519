#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "bilinear_dd/ccp_solver.hpp"
#include "bilinear_dd/examples.hpp"
#include "bilinear_dd/oracle.hpp"
#include "support.hpp"

#include <sstream>

using namespace bdd;
using bdd::test::Gen;

namespace {

struct Instance {
  BilinearSystem sys;
  P2Instance p2;
};

Instance random_instance(Gen& g, Index n, Index m, Index T, const Vector& x0, const Vector& xf) {
  const auto sys = g.system(n, m);
  OcProblem prob{Matrix::Identity(n, n), Matrix::Identity(m, m), x0, xf, T};
  const DataMatrices dm = build_data_matrices(test::exciting_data(g, sys, T, 2), T);
  return {sys, build_p2(dm, prob)};
}

P2Instance example_p2(int id) {
  const ExampleSetup ex = example_setup(id);
  return build_p2(build_data_matrices(example_dataset(ex), ex.problem.T), ex.problem);
}

}  // namespace

TEST_CASE("the scalar fixture lifts to the expected sizes") {
  const P2Instance p2 = example_p2(1);
  CHECK(p2.M() == 41);
  CHECK(p2.H.rows() == 41);
  CHECK((p2.H - p2.H.transpose()).norm() == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(p2.H).eigenvalues().minCoeff() >= -1e-10 * p2.H.norm());
  const LiftedProblem lp = lift_to_p3(p2);
  CHECK(lp.dim() == 41);
  CHECK(lp.num_pairs() == 861);
  CHECK(lp.num_equalities() == 2 + 20);
  CHECK(lp.num_consistency_rows() == 20);
  CHECK(lp.without_terminal().num_equalities() == 21);
  CHECK(lp.consistency_only().num_equalities() == 20);
}

TEST_CASE("property: lifted objective and residuals agree with the coefficient form") {
  Gen g(81);
  for (int c = 0; c < 10; ++c) {
    INFO("case " << c);
    const Index n = g.integer(1, 2), m = g.integer(1, 2), T = g.integer(1, 3);
    const Instance in = random_instance(g, n, m, T, g.vector(n), g.vector(n));
    for (LiftingBasis basis : {LiftingBasis::Whitened, LiftingBasis::RawAlpha}) {
      const LiftedProblem lp = lift_to_p3(in.p2, {basis, 0.0});
      const Vector gam = g.vector(lp.dim());
      const Alpha a = lp.alpha(gam);
      CHECK(lp.objective(gam) == doctest::Approx(in.p2.cost(a)).epsilon(1e-10));
      const auto rec = reconstruct(a, in.p2.dm);
      CHECK(in.p2.cost(a) == doctest::Approx(trajectory_cost(in.p2.prob, rec.xbar, rec.ubar)).epsilon(1e-9));

      const Vector F = lp.constraint_residual(gam);
      CHECK((F.head(n) - (rec.xbar.col(0) - in.p2.prob.x0)).norm() < 1e-10 * (1 + F.norm()));
      CHECK((F.segment(n, n) - (rec.xbar.col(T) - in.p2.prob.xf)).norm() < 1e-10 * (1 + F.norm()));
      CHECK(F.tail(lp.num_consistency_rows()).cwiseAbs().maxCoeff() ==
            doctest::Approx(check_bilinear_consistency(a, in.p2.dm)).epsilon(1e-8));

      // Replacing each product γ_p γ_q by its lifted variable r_pq.
      const auto& eq = *lp.eq;
      Vector r(lp.num_pairs());
      for (Index k = 0; k < lp.num_pairs(); ++k) r(k) = gam(eq.pairs[k].first) * gam(eq.pairs[k].second);
      const Vector lifted = eq.C * r - eq.D * gam;
      CHECK((lifted - F.tail(lp.num_consistency_rows())).norm() < 1e-10 * (1 + F.norm()));

      // Jacobian against central differences.
      const Matrix J = lp.constraint_jacobian(gam);
      Matrix Jfd(J.rows(), J.cols());
      const double h = 1e-6;
      for (Index i = 0; i < lp.dim(); ++i) {
        Vector e = Vector::Zero(lp.dim());
        e(i) = h;
        Jfd.col(i) = (lp.constraint_residual(gam + e) - lp.constraint_residual(gam - e)) / (2 * h);
      }
      CHECK((J - Jfd).cwiseAbs().maxCoeff() < 1e-6 * (1 + J.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("the algebraic split behind the convexification") {
  Gen g(82);
  for (int c = 0; c < 100; ++c) {
    const double p = g.normal(), q = g.normal();
    CHECK((p + q) * (p + q) - (p * p + q * q) == doctest::Approx(2 * p * q));
  }
}

TEST_CASE("coefficients in the row space round-trip through the lifting") {
  Gen g(83);
  const Instance in = random_instance(g, 2, 1, 3, g.vector(2), g.vector(2));
  const LiftedProblem lp = lift_to_p3(in.p2);
  const Trajectory tr = g.trajectory(in.sys, 3, 0.5, g.vector(2));
  const Alpha a = represent(tr, in.p2.dm);
  CHECK((lp.alpha(lp.gamma(a)) - a).norm() < 1e-9 * (1 + a.norm()));
  const Vector gam = g.vector(lp.dim());
  CHECK((lp.gamma(lp.alpha(gam)) - gam).norm() < 1e-9 * (1 + gam.norm()));
}

TEST_CASE("zero boundary data gives the zero solution") {
  Gen g(84);
  const Instance in = random_instance(g, 2, 1, 3, Vector::Zero(2), Vector::Zero(2));
  const LiftedProblem lp = lift_to_p3(in.p2);
  const InitialPointReport init = find_initial_alpha(in.p2, lp);
  CHECK(init.phase_a_sufficient);
  CHECK(init.alpha.norm() == 0.0);
  const CcpSolution sol = ccp_solve(lp, in.p2, init.alpha);
  CHECK(sol.status == CcpStatus::Converged);
  CHECK(sol.cost <= 1e-14);
  CHECK(sol.trajectory.ubar.cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("an unreachable target is reported by the initialisation") {
  // x⁺ = x + 0.1 x u never leaves the origin.
  const P2Instance fixture = example_p2(1);
  OcProblem prob = fixture.prob;
  prob.x0 = Vector::Zero(1);
  prob.xf = Vector::Ones(1);
  const P2Instance p2 = build_p2(fixture.dm, prob);
  const LiftedProblem lp = lift_to_p3(p2);
  CcpSettings s;
  s.max_outer = 40;
  CHECK_THROWS_AS(find_initial_alpha(p2, lp, s), InitializationError);
}

TEST_CASE("projection lands on genuine trajectories") {
  Gen g(85);
  const Instance in = random_instance(g, 2, 1, 2, Vector::Zero(2), Vector::Zero(2));
  const LiftedProblem lp = lift_to_p3(in.p2, {LiftingBasis::Whitened, 1.0}).consistency_only();
  int ok = 0;
  for (int c = 0; c < 20; ++c) {
    const ProjectionResult pr = project_onto_constraints(lp, g.vector(lp.dim(), 0.1));
    if (!pr.converged) continue;
    ++ok;
    CHECK(pr.residual <= 1e-12);
    const ExtractedControl ec = extract_control(lp.alpha(pr.gamma), in.p2.dm, &in.sys);
    CHECK(ec.replay_max_error < 1e-8);
  }
  CHECK(ok >= 18);
}

TEST_CASE("property: two-step scalar problems match exhaustive search") {
  Gen g(86);
  int compared = 0;
  for (int c = 0; c < 4; ++c) {
    INFO("case " << c);
    const Vector x0 = Vector::Constant(1, g.uniform(0.5, 1.0));
    const Vector xf = Vector::Constant(1, g.uniform(-1.0, 1.0));
    const Instance in = random_instance(g, 1, 1, 2, x0, xf);
    const LiftedProblem lp = lift_to_p3(in.p2);
    CcpSettings s;
    InitialPointReport init;
    try {
      init = find_initial_alpha(in.p2, lp, s);
    } catch (const InitializationError&) {
      continue;
    }
    const CcpSolution sol = ccp_solve(lp, in.p2, init.alpha, s);
    INFO(sol.message);
    CHECK(sol.status == CcpStatus::Converged);
    const double bound = 10.0 * (1.0 + sol.trajectory.ubar.cwiseAbs().maxCoeff());
    const TwoStepOracleResult ref = two_step_scalar_oracle(in.sys, in.p2.prob, bound);
    REQUIRE(ref.found);
    // A local method may stop at a worse stationary point; it must never beat
    // the global optimum by more than the tolerance.
    CHECK(sol.cost >= ref.cost * (1 - 1e-6) - 1e-9);
    CHECK(p2_violation(in.p2, sol.alpha).max() < 1e-6);
    ++compared;
  }
  CHECK(compared >= 3);
}

TEST_CASE("solution export") {
  Gen g(87);
  const Instance in = random_instance(g, 1, 1, 2, Vector::Constant(1, 0.8), Vector::Constant(1, 0.3));
  const LiftedProblem lp = lift_to_p3(in.p2);
  const CcpSolution sol = ccp_solve(lp, in.p2, find_initial_alpha(in.p2, lp).alpha);
  std::ostringstream os;
  write_trace_csv(os, sol.trace);
  std::istringstream is(os.str());
  std::string header, line;
  std::getline(is, header);
  CHECK(header == "k,cost,violation,step_norm,subproblem_iters,tau,accepted,pinch,extrapolation");
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == sol.trace.size());
  const auto j = solution_to_json(sol);
  for (const char* key : {"alpha", "u_star", "x_bar", "cost", "status", "iterations", "certificate", "sizes"})
    CHECK(j.contains(key));
  CHECK(j["alpha"].size() == static_cast<std::size_t>(in.p2.M()));
  CHECK(j["sizes"]["pairs"] == lp.num_pairs());
  CHECK(std::string(to_string(CcpStatus::SubproblemFailed)) == "SubproblemFailed");
}
