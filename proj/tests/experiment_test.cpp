#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "bilinear_dd/examples.hpp"
#include "support.hpp"

#include <sstream>

using namespace bdd;
using bdd::test::Gen;

namespace {

// Plant that counts calls so the tests can see how the design drives it.
class CountingPlant final : public Plant {
 public:
  explicit CountingPlant(BilinearSystem sys) : inner_(std::move(sys)) {}
  Vector reset() override {
    ++resets;
    return inner_.reset();
  }
  Vector step(const Vector& u) override {
    ++steps;
    max_input = std::max(max_input, u.norm());
    return inner_.step(u);
  }
  Index state_dim() const override { return inner_.state_dim(); }
  Index input_dim() const override { return inner_.input_dim(); }
  int resets = 0;
  int steps = 0;
  double max_input = 0.0;

 private:
  SimulatedPlant inner_;
};

}  // namespace

TEST_CASE("SimulatedPlant follows the simulator") {
  Gen g(61);
  const auto sys = g.system(2, 1);
  SimulatedPlant plant(sys);
  CHECK(plant.reset().norm() == 0.0);
  const Matrix U = g.matrix(1, 5);
  const Trajectory tr = simulate(sys, Vector::Zero(2), U);
  for (Index t = 0; t < 5; ++t) CHECK((plant.step(U.col(t)) - tr.states.col(t + 1)).norm() == 0.0);
  CHECK(plant.reset().norm() == 0.0);
}

TEST_CASE("stacked_matrix agrees with build_data_matrices") {
  Gen g(62);
  const auto sys = g.system(2, 2);
  const Trajectory tr = g.trajectory(sys, 20, 0.5, g.vector(2));
  for (Index T : {1, 2, 4}) CHECK(stacked_matrix(tr.states, tr.inputs, T) == build_data_matrices(tr, T).GT);
}

TEST_CASE("membership check on hand-built data") {
  // Two steps of x+ = u from the origin with T = 1: the stacked matrix is
  // just x(0..t-T), whose columns span {0} and then the first input.
  Matrix X(1, 3), U(1, 2);
  X << 0, 1, 2;
  U << 1, 1;
  CHECK_FALSE(membership_check(X.leftCols(2), U.leftCols(1), 1));
  CHECK(membership_check(X, U, 1));
  Matrix X2(2, 3), U2(1, 2);
  X2 << 0, 1, 0, 0, 0, 1;
  U2 << 1, 1;
  CHECK_FALSE(membership_check(X2, U2, 1));
}

TEST_CASE("kernel direction is a unit left-kernel vector with a nonzero tail") {
  Gen g(63);
  for (int c = 0; c < 20; ++c) {
    INFO("case " << c);
    const Index n = g.integer(1, 3), m = g.integer(1, 2), T = g.integer(1, 3);
    const Index rows = n + m * T + m * n * T;
    const Matrix G = g.matrix(rows, rows - g.integer(1, 3));
    const KernelDirection d = find_kernel_direction(G, n, m, T);
    CHECK(std::abs(d.stacked().norm() - 1.0) < 1e-12);
    CHECK((G.transpose() * d.stacked()).norm() < 1e-10 * G.norm());
    CHECK(d.eta_last(m).norm() + d.chi_last(m, n).norm() > 1e-6);
  }
  CHECK_THROWS_AS(find_kernel_direction(Matrix::Identity(3, 3), 1, 1, 1), ArgumentError);
  // Left kernel confined to the state row: no usable tail.
  Matrix G(3, 2);
  G << 0, 0, 1, 0, 0, 1;
  CHECK_THROWS_AS(find_kernel_direction(G, 1, 1, 1), ContradictionError);
}

TEST_CASE("selected input has half the bound and moves the scalar away from zero") {
  Gen g(64);
  for (int c = 0; c < 30; ++c) {
    const Index n = g.integer(1, 3), m = g.integer(1, 2);
    KernelDirection d{g.vector(n), g.vector(m), g.vector(m * n)};
    const Vector x = g.vector(n);
    const double offset = g.uniform(-1, 1), eps = g.uniform(0.01, 1.0);
    const auto u = select_input(d, x, offset, eps, m);
    REQUIRE(u.has_value());
    CHECK(u->norm() == doctest::Approx(0.5 * eps));
    // The kernel scalar is affine in u with slope kernel_input_gradient.
    const double value = offset + kernel_input_gradient(d, x, m).dot(*u);
    CHECK(std::abs(value) >= std::abs(offset));
    const Vector direct = d.eta_last(m) + d.chi_last(m, n).reshaped(m, n) * x;
    CHECK((kernel_input_gradient(d, x, m) - direct).norm() < 1e-12);
  }
  KernelDirection flat{Vector::Zero(1), Vector::Zero(1), Vector::Zero(1)};
  CHECK_FALSE(select_input(flat, Vector::Ones(1), 0.0, 1.0, 1).has_value());
}

TEST_CASE("fallback input raises the input Hankel rank") {
  Gen g(65);
  Rng rng(7);
  Matrix U = Matrix::Zero(1, 6);
  const Index before = numerical_rank(hankel(U, 3), RankPolicy{});
  const Vector u = pe_fallback_input(U, 1, 1, 2, 0.2, rng);
  CHECK(u.norm() == doctest::Approx(0.1));
  Matrix ext(1, 7);
  ext << U, u;
  CHECK(numerical_rank(hankel(ext, 3), RankPolicy{}) > before);
  CHECK_THROWS_AS(pe_fallback_input(g.matrix(1, 10), 1, 1, 1, 0.2, rng), ArgumentError);
}

TEST_CASE("online design on the five-state fixture reaches the minimal length") {
  const ExampleSetup ex = example_setup(2);
  CountingPlant plant(ex.system);
  ExperimentConfig cfg;
  cfg.T = ex.problem.T;
  cfg.epsilon = ex.epsilon;
  cfg.seed = ex.data_seed;
  const ExperimentResult r = design_experiment(plant, cfg);
  CHECK(r.data.length() == min_data_length(5, 1, 10));
  CHECK(r.certificate.full_row_rank);
  CHECK(r.matrices.GT.rows() == 65);
  CHECK(plant.max_input <= 0.5 * cfg.epsilon * (1 + 1e-12));
  CHECK(plant.steps == r.data.length());
  Index prev = 0;
  bool monotone = true;
  for (const auto& rec : r.log)
    if (rec.branch != Branch::Seed) {
      monotone = monotone && rec.rank_after == rec.rank_before + 1 && rec.rank_before >= prev;
      prev = rec.rank_after;
    }
  CHECK(monotone);
  std::ostringstream os;
  write_experiment_log(os, r.log);
  std::istringstream is(os.str());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("branch"));
    ++lines;
  }
  CHECK(lines == r.log.size());
}

TEST_CASE("property: online design produces exciting data on random systems") {
  Gen g(66);
  for (int c = 0; c < 10; ++c) {
    INFO("case " << c);
    const Index n = g.integer(1, 3), m = g.integer(1, 2), T = g.integer(1, 3);
    const auto sys = g.system(n, m);
    SimulatedPlant plant(sys);
    ExperimentConfig cfg;
    cfg.T = T;
    cfg.epsilon = 0.1;
    cfg.seed = g.seed();
    const ExperimentResult r = design_experiment(plant, cfg);
    CHECK(r.certificate.full_row_rank);
    CHECK(r.data.length() >= min_data_length(n, m, T));
    const auto again = simulate(sys, Vector::Zero(n), r.data.inputs);
    CHECK((again.states - r.data.states).norm() == 0.0);
  }
}

TEST_CASE("design is deterministic for a fixed seed") {
  Gen g(67);
  const auto sys = g.system(2, 1);
  ExperimentConfig cfg;
  cfg.T = 2;
  cfg.seed = 99;
  SimulatedPlant p1(sys), p2(sys);
  CHECK(design_experiment(p1, cfg).data.inputs == design_experiment(p2, cfg).data.inputs);
}

TEST_CASE("design errors") {
  ExperimentConfig cfg;
  cfg.T = 0;
  SimulatedPlant plant(random_system(1, 1, 3));
  CHECK_THROWS_AS(design_experiment(plant, cfg), ArgumentError);

  SimulatedPlant moved(random_system(1, 1, 3), Vector::Ones(1));
  cfg.T = 1;
  CHECK_THROWS_AS(design_experiment(moved, cfg), ArgumentError);

  // B = 0 and N = 0 keep the state at the origin, so the state row can never
  // gain rank.
  SimulatedPlant dead(BilinearSystem(Matrix::Constant(1, 1, 0.5), Matrix::Zero(1, 1), Matrix::Zero(1, 1)));
  cfg.max_restarts = 1;
  CHECK_THROWS(design_experiment(dead, cfg));
}
