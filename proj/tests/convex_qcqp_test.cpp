#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "bilinear_dd/convex_qcqp.hpp"
#include "support.hpp"

using namespace bdd;
using bdd::test::Gen;

namespace {

Eigen::SparseMatrix<double> sparse(const Matrix& M) { return M.sparseView(); }

ConvexQcqp unconstrained(const Matrix& P, const Vector& q) {
  ConvexQcqp p;
  p.dim = q.size();
  p.P0 = sparse(P);
  p.q0 = q;
  p.Aeq.resize(0, p.dim);
  p.beq.resize(0);
  return p;
}

// ‖z − c‖² ≤ ρ² written as ½ zᵀ(2I)z − 2cᵀz + ‖c‖² − ρ² ≤ 0.
QuadraticInequality ball(const Vector& c, double rho) {
  QuadraticInequality g;
  for (Index i = 0; i < c.size(); ++i) {
    g.P.emplace_back(i, i, 2.0);
    g.q.emplace_back(i, -2.0 * c(i));
  }
  g.r = c.squaredNorm() - rho * rho;
  return g;
}

// Projected gradient on the ball, used as an independent reference.
Vector projected_gradient(const Matrix& P, const Vector& q, double rho) {
  const double L = Eigen::SelfAdjointEigenSolver<Matrix>(P).eigenvalues().maxCoeff();
  Vector z = Vector::Zero(q.size());
  for (int k = 0; k < 200000; ++k) {
    Vector y = z - (P * z + q) / L;
    if (y.norm() > rho) y *= rho / y.norm();
    if ((y - z).norm() < 1e-15) return y;
    z = y;
  }
  return z;
}

}  // namespace

TEST_CASE("equality-constrained QP against the KKT system") {
  Gen g(71);
  for (int c = 0; c < 10; ++c) {
    const Index n = g.integer(2, 8), k = g.integer(1, n - 1);
    const Matrix P = g.psd(n, n) + Matrix::Identity(n, n);
    const Vector q = g.vector(n);
    const Matrix A = g.matrix(k, n);
    const Vector b = g.vector(k);
    ConvexQcqp p = unconstrained(P, q);
    p.Aeq = A.sparseView();
    p.beq = b;
    const SolveReport r = solve(p);
    REQUIRE(r.status == QcqpStatus::Optimal);
    Matrix K = Matrix::Zero(n + k, n + k);
    K << P, A.transpose(), A, Matrix::Zero(k, k);
    Vector rhs(n + k);
    rhs << -q, b;
    const Vector sol = K.fullPivLu().solve(rhs);
    CHECK((r.z - sol.head(n)).norm() < 1e-7 * (1 + sol.norm()));
  }
}

TEST_CASE("scalar toys") {
  // min z s.t. z² ≤ 1.
  ConvexQcqp p = unconstrained(Matrix::Zero(1, 1), Vector::Ones(1));
  p.inequalities.push_back({{{0, 0, 2.0}}, {}, -1.0});
  SolveReport r = solve(p);
  CHECK(r.status == QcqpStatus::Optimal);
  CHECK(r.z(0) == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(r.lambda(0) == doctest::Approx(0.5).epsilon(1e-5));

  // min (z − 3)² s.t. z ≤ 1 (linear constraint) from an infeasible warm start.
  ConvexQcqp lin = unconstrained(Matrix::Constant(1, 1, 2.0), Vector::Constant(1, -6.0));
  lin.inequalities.push_back({{}, {{0, 1.0}}, -1.0});
  r = solve(lin, Vector::Constant(1, 5.0));
  CHECK(r.status == QcqpStatus::Optimal);
  CHECK(r.z(0) == doctest::Approx(1.0).epsilon(1e-7));

  // Inactive constraint: the unconstrained minimiser is interior.
  ConvexQcqp in = unconstrained(Matrix::Constant(1, 1, 2.0), Vector::Constant(1, -1.0));
  in.inequalities.push_back(ball(Vector::Zero(1), 4.0));
  r = solve(in);
  CHECK(r.z(0) == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(r.lambda(0) < 1e-6);
}

TEST_CASE("infeasible problems are reported") {
  ConvexQcqp p = unconstrained(Matrix::Identity(1, 1), Vector::Zero(1));
  p.inequalities.push_back({{{0, 0, 2.0}}, {}, 1.0});  // z² + 1 ≤ 0
  CHECK(solve(p).status == QcqpStatus::Infeasible);

  ConvexQcqp q = unconstrained(Matrix::Identity(2, 2), Vector::Zero(2));
  q.inequalities.push_back(ball(Vector::Zero(2), 1.0));
  Matrix A(1, 2);
  A << 1, 0;
  q.Aeq = A.sparseView();
  q.beq = Vector::Constant(1, 5.0);
  CHECK(solve(q).status == QcqpStatus::Infeasible);
}

TEST_CASE("a tangent pair of convex constraints has no interior") {
  // γ² ≤ r together with r ≤ 2γ₀γ − γ₀² pins γ = γ₀: the feasible set is a
  // single point and the interior-point method cannot start.
  const double g0 = 0.7;
  ConvexQcqp p = unconstrained(Matrix::Identity(2, 2), Vector::Zero(2));
  p.inequalities.push_back({{{0, 0, 2.0}}, {{1, -1.0}}, 0.0});
  p.inequalities.push_back({{}, {{0, -2.0 * g0}, {1, 1.0}}, g0 * g0});
  const SolveReport r = solve(p);
  CHECK(r.status == QcqpStatus::Infeasible);
  CHECK(r.max_violation < 1e-4);
}

TEST_CASE("property: ball-constrained QPs match projected gradient") {
  Gen g(72);
  for (int c = 0; c < 20; ++c) {
    INFO("case " << c);
    const Index n = g.integer(1, 6);
    const Matrix P = g.psd(n, n) + 0.1 * Matrix::Identity(n, n);
    const Vector q = g.vector(n, 3.0);
    const double rho = g.uniform(0.2, 2.0);
    ConvexQcqp p = unconstrained(P, q);
    p.inequalities.push_back(ball(Vector::Zero(n), rho));
    const SolveReport r = solve(p);
    INFO(report_to_json(r).dump());
    REQUIRE(r.status == QcqpStatus::Optimal);
    const Vector ref = projected_gradient(P, q, rho);
    CHECK((r.z - ref).norm() < 1e-6 * (1 + ref.norm()));
    CHECK(r.kkt_residual < 1e-8);
    CHECK(r.max_violation <= 1e-12);
    CHECK(r.eq_residual == 0.0);
  }
}

TEST_CASE("property: random feasible QCQPs satisfy KKT") {
  Gen g(73);
  for (int c = 0; c < 20; ++c) {
    INFO("case " << c);
    const Index n = g.integer(2, 8), ni = g.integer(1, 5), ne = g.integer(0, n - 1);
    const Vector feasible = g.vector(n);
    ConvexQcqp p = unconstrained(g.psd(n, g.integer(1, n)), g.vector(n));
    for (Index i = 0; i < ni; ++i) {
      const Vector centre = feasible + g.vector(n, 0.3);
      p.inequalities.push_back(ball(centre, (feasible - centre).norm() + g.uniform(0.1, 1.0)));
    }
    const Matrix A = g.matrix(ne, n);
    p.Aeq = A.sparseView();
    p.beq = A * feasible;
    const SolveReport r = solve(p);
    INFO(report_to_json(r).dump());
    REQUIRE(r.status == QcqpStatus::Optimal);
    CHECK(r.kkt_residual < 1e-7);
    CHECK(r.complementarity < 1e-7);
    CHECK(r.eq_residual < 1e-9);
    CHECK(r.max_violation <= 1e-12);
    CHECK(r.lambda.minCoeff() >= 0.0);
    // The optimum cannot be worse than the known feasible point.
    CHECK(r.objective <= p.objective(feasible) + 1e-9 * (1 + std::abs(r.objective)));
  }
}

TEST_CASE("block elimination of local variables gives the same optimum") {
  // Each pair (z_i, w_i) only meets the rest through w_i ≥ z_i², with the
  // objective pulling w_i down; w is eligible for elimination.
  Gen g(74);
  for (int c = 0; c < 5; ++c) {
    const Index k = g.integer(2, 12);
    ConvexQcqp p;
    p.dim = 2 * k;
    const Matrix Pz = g.psd(k, k) + Matrix::Identity(k, k);
    Matrix P = Matrix::Zero(2 * k, 2 * k);
    P.topLeftCorner(k, k) = Pz;
    p.P0 = sparse(P);
    p.q0 = Vector::Zero(2 * k);
    p.q0.head(k) = g.vector(k);
    p.q0.tail(k).setConstant(1.0);
    p.Aeq.resize(0, 2 * k);
    p.beq.resize(0);
    for (Index i = 0; i < k; ++i) p.inequalities.push_back({{{i, i, 2.0}}, {{k + i, -1.0}}, 0.0});
    const SolveReport dense = solve(p, Vector::Constant(2 * k, 1.0));
    p.local_candidates.assign(2 * k, false);
    for (Index i = 0; i < k; ++i) p.local_candidates[k + i] = true;
    const SolveReport local = solve(p, Vector::Constant(2 * k, 1.0));
    REQUIRE(dense.status == QcqpStatus::Optimal);
    REQUIRE(local.status == QcqpStatus::Optimal);
    CHECK(local.eliminated_dim > 0);
    CHECK((dense.z - local.z).norm() < 1e-6 * (1 + dense.z.norm()));
  }
}

TEST_CASE("validation") {
  ConvexQcqp p = unconstrained(Matrix::Identity(2, 2), Vector::Zero(2));
  Matrix bad(2, 2);
  bad << 1, 2, 0, 1;
  p.P0 = sparse(bad);
  CHECK_THROWS_AS(solve(p), ArgumentError);
  p.P0 = sparse(-Matrix::Identity(2, 2));
  CHECK_THROWS_AS(solve(p), ArgumentError);
  p.P0 = sparse(Matrix::Identity(2, 2));
  p.inequalities.push_back({{{0, 0, -1.0}}, {}, -1.0});
  CHECK_THROWS_AS(solve(p), ArgumentError);
  p.inequalities.back().P = {{1, 0, 1.0}};
  CHECK_THROWS_AS(solve(p), ArgumentError);
  p.inequalities.clear();
  p.local_candidates = {true};
  CHECK_THROWS_AS(solve(p), ArgumentError);
  p.local_candidates.clear();
  CHECK_THROWS_AS(solve(p, Vector::Zero(3)), ArgumentError);
}

TEST_CASE("JSON dumps list every nonzero") {
  ConvexQcqp p = unconstrained(Matrix::Identity(2, 2), Vector::Ones(2));
  p.inequalities.push_back(ball(Vector::Zero(2), 1.0));
  const auto j = qcqp_to_json(p);
  CHECK(j["dim"] == 2);
  CHECK(j["P0"].size() == 2);
  CHECK(j["inequalities"][0]["P"].size() == 2);
  const auto rj = report_to_json(solve(p));
  CHECK(rj["status"] == "Optimal");
  CHECK(rj["z"].size() == 2);
}
