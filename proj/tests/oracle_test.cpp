#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "bilinear_dd/oracle.hpp"
#include "support.hpp"

using namespace bdd;
using bdd::test::Gen;

namespace {

OcProblem random_problem(Gen& g, Index n, Index m, Index T) {
  return {g.psd(n, n), g.psd(m, m) + 0.1 * Matrix::Identity(m, m), g.vector(n), g.vector(n), T};
}

}  // namespace

TEST_CASE("property: adjoint gradient matches central differences") {
  Gen g(91);
  for (int c = 0; c < 20; ++c) {
    INFO("case " << c);
    const Index n = g.integer(1, 3), m = g.integer(1, 2), T = g.integer(1, 8);
    const auto sys = g.system(n, m);
    const OcProblem prob = random_problem(g, n, m, T);
    const Matrix U = g.matrix(m, T, 0.5);
    const double mu = g.uniform(0.0, 10.0);
    const Vector lam = g.vector(n);
    const PenalizedValue pv = adjoint_gradient(sys, prob, U, mu, lam);
    const double h = 1e-6;
    double worst = 0.0;
    for (Index i = 0; i < U.size(); ++i) {
      Matrix up = U, dn = U;
      up(i) += h;
      dn(i) -= h;
      const double fd =
          (adjoint_gradient(sys, prob, up, mu, lam).value - adjoint_gradient(sys, prob, dn, mu, lam).value) / (2 * h);
      worst = std::max(worst, std::abs(fd - pv.gradient(i)) / (1.0 + std::abs(fd)));
    }
    CHECK(worst < 1e-6);
    const Trajectory tr = simulate(sys, prob.x0, U);
    const Vector cvec = tr.states.col(T) - prob.xf;
    CHECK(pv.value == doctest::Approx(trajectory_cost(prob, tr.states, U) + mu * cvec.squaredNorm() + lam.dot(cvec)));
  }
}

TEST_CASE("linear quadratic gradient in closed form") {
  // T = 1, x⁺ = a x + b u, cost q x0² + r u² + μ(x1 − xf)².
  BilinearSystem sys(Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 2.0), Matrix::Zero(1, 1));
  OcProblem prob{Matrix::Constant(1, 1, 3.0), Matrix::Constant(1, 1, 0.7), Vector::Constant(1, 1.0),
                 Vector::Constant(1, 4.0), 1};
  const double u = 0.3, mu = 2.0;
  const PenalizedValue pv = adjoint_gradient(sys, prob, Matrix::Constant(1, 1, u), mu);
  const double x1 = 0.5 + 2.0 * u;
  CHECK(pv.gradient(0, 0) == doctest::Approx(2 * 0.7 * u + 2 * mu * (x1 - 4.0) * 2.0));
  CHECK(pv.value == doctest::Approx(3.0 + 0.7 * u * u + mu * (x1 - 4.0) * (x1 - 4.0)));
}

TEST_CASE("the zero problem is solved by zero input") {
  Gen g(92);
  const auto sys = g.system(2, 1);
  OcProblem prob{Matrix::Identity(2, 2), Matrix::Identity(1, 1), Vector::Zero(2), Vector::Zero(2), 5};
  const ShootingResult r = shooting_solve(sys, prob);
  CHECK(r.converged);
  CHECK(r.cost < 1e-10);
  CHECK(r.terminal_error < 1e-6);
}

TEST_CASE("shooting matches the linear minimum-energy solution") {
  // With N = 0, Q = 0 and R = I the optimum is the minimum-norm input that
  // reaches xf: U = Cᵀ(CCᵀ)⁻¹(xf − Aᵀx0).
  Gen g(93);
  for (int c = 0; c < 5; ++c) {
    INFO("case " << c);
    const Index n = 2, m = 1, T = 4;
    const Matrix A = g.matrix(n, n, 0.4), B = g.matrix(n, m);
    BilinearSystem sys(A, B, Matrix::Zero(n, n * m));
    OcProblem prob{Matrix::Zero(n, n), Matrix::Identity(m, m), g.vector(n), g.vector(n), T};
    Matrix C(n, m * T);
    Matrix Ap = Matrix::Identity(n, n);
    for (Index t = T - 1; t >= 0; --t, Ap = A * Ap) C.middleCols(t * m, m) = Ap * B;
    Matrix AT = Matrix::Identity(n, n);
    for (Index t = 0; t < T; ++t) AT = A * AT;
    const Vector ustar = C.transpose() * (C * C.transpose()).ldlt().solve(prob.xf - AT * prob.x0);
    const ShootingResult r = shooting_solve(sys, prob);
    REQUIRE(r.converged);
    CHECK(r.cost == doctest::Approx(ustar.squaredNorm()).epsilon(1e-5));
    CHECK(r.terminal_error < 1e-6);
  }
}

TEST_CASE("the scalar fixture reaches its terminal state") {
  BilinearSystem sys(Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 1), Matrix::Constant(1, 1, 0.1));
  OcProblem prob{Matrix::Identity(1, 1), Matrix::Identity(1, 1), Vector::Constant(1, 1.0),
                 Vector::Constant(1, 1.0 / 3.0), 20};
  const ShootingResult r = shooting_solve(sys, prob);
  CHECK(r.converged);
  CHECK(r.terminal_error < 1e-6);
  CHECK(r.cost > 0.0);
  const auto j = shooting_to_json(r);
  CHECK(j["status"] == "Converged");
  CHECK(j["u_star"].size() == 1);
}

TEST_CASE("unreachable targets raise") {
  BilinearSystem sys(Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 1), Matrix::Constant(1, 1, 0.1));
  OcProblem prob{Matrix::Identity(1, 1), Matrix::Identity(1, 1), Vector::Zero(1), Vector::Ones(1), 5};
  ShootingSettings s;
  s.restarts = 2;
  CHECK_THROWS_AS(shooting_solve(sys, prob, s), UnreachableTargetError);
}

TEST_CASE("two-step scalar oracle") {
  // x⁺ = x + u: the optimum of x0² + u0² + x1² + u1² with x2 = xf is found
  // by hand from the reduced quadratic in u0.
  BilinearSystem sys(Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 1));
  OcProblem prob{Matrix::Identity(1, 1), Matrix::Identity(1, 1), Vector::Constant(1, 1.0), Vector::Constant(1, 0.0),
                 2};
  // u1 = −x1 = −1 − u0; cost = 1 + u0² + 2(1 + u0)², minimised at u0 = −2/3.
  const TwoStepOracleResult r = two_step_scalar_oracle(sys, prob, 5.0);
  REQUIRE(r.found);
  CHECK(r.u0 == doctest::Approx(-2.0 / 3.0).epsilon(1e-8));
  CHECK(r.cost == doctest::Approx(1.0 + 4.0 / 9.0 + 2.0 / 9.0).epsilon(1e-10));
  CHECK_THROWS_AS(two_step_scalar_oracle(random_system(2, 1, 1), prob, 1.0), ArgumentError);
}
