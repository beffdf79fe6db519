#pragma once

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <fstream>
#include <sstream>

#include "bilinear_dd/common.hpp"

namespace bdd {

// x(t+1) = A x(t) + B u(t) + N (x(t) ⊗ u(t)),  N = [N_1 ... N_n].
struct BilinearSystem {
  Matrix A;
  Matrix B;
  Matrix N;

  BilinearSystem() = default;
  BilinearSystem(Matrix a, Matrix b, Matrix n) : A(std::move(a)), B(std::move(b)), N(std::move(n)) {
    validate();
  }

  Index n() const { return A.rows(); }
  Index m() const { return B.cols(); }

  // N_j, the n×m block multiplying x_j.
  Matrix block(Index j) const { return N.middleCols(j * m(), m()); }

  void validate() const {
    require(A.rows() >= 1 && A.rows() == A.cols(), "BilinearSystem: A must be square and nonempty");
    require(B.rows() == A.rows() && B.cols() >= 1, "BilinearSystem: B must be n×m with m ≥ 1");
    require(N.rows() == A.rows() && N.cols() == A.rows() * B.cols(), "BilinearSystem: N must be n×(m·n)");
    require(all_finite(A) && all_finite(B) && all_finite(N), "BilinearSystem: entries must be finite");
  }
};

// Columns are samples: states is n×(K+1), inputs is m×K.
struct Trajectory {
  Matrix states;
  Matrix inputs;
  bool simulated = false;

  Index length() const { return inputs.cols(); }
  Vector x(Index t) const { return states.col(t); }
  Vector u(Index t) const { return inputs.col(t); }
};

inline Vector step(const BilinearSystem& sys, const Vector& x, const Vector& u) {
  if (x.size() != sys.n() || u.size() != sys.m())
    throw ArgumentError("step: expected x of size " + std::to_string(sys.n()) + " and u of size " +
                        std::to_string(sys.m()));
  return sys.A * x + sys.B * u + sys.N * kron(x, u);
}

inline constexpr double kDivergenceBound = 1e12;

inline Trajectory simulate(const BilinearSystem& sys, const Vector& x0, const Matrix& inputs) {
  require(inputs.cols() >= 1, "simulate: input sequence must be nonempty");
  require(inputs.rows() == sys.m(), "simulate: input dimension mismatch");
  require(x0.size() == sys.n(), "simulate: initial state dimension mismatch");
  Trajectory tr;
  tr.inputs = inputs;
  tr.states.resize(sys.n(), inputs.cols() + 1);
  tr.states.col(0) = x0;
  for (Index t = 0; t < inputs.cols(); ++t) {
    Vector next = step(sys, tr.states.col(t), inputs.col(t));
    if (!next.allFinite() || next.norm() > kDivergenceBound)
      throw DivergenceError("simulate: state diverged at time index " + std::to_string(t + 1), t + 1);
    tr.states.col(t + 1) = next;
  }
  tr.simulated = true;
  return tr;
}

// Point-to-point problem: steer x0 to xf in T steps minimising
// sum_{t=0}^{T-1} x(t)^T Q x(t) + u(t)^T R u(t).
struct OcProblem {
  Matrix Q;
  Matrix R;
  Vector x0;
  Vector xf;
  Index T = 1;

  void validate(Index n, Index m) const {
    require(T >= 1, "OcProblem: horizon must be positive");
    require(Q.rows() == n && Q.cols() == n, "OcProblem: Q must be n×n");
    require(R.rows() == m && R.cols() == m, "OcProblem: R must be m×m");
    require(x0.size() == n && xf.size() == n, "OcProblem: boundary states must have length n");
    for (const Matrix* M : {&Q, &R}) {
      require((*M - M->transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, M->cwiseAbs().maxCoeff()),
              "OcProblem: Q and R must be symmetric");
      if (M->size() > 0) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(*M);
        require(es.eigenvalues().minCoeff() >= -1e-10 * std::max(1.0, M->norm()),
                "OcProblem: Q and R must be positive semidefinite");
      }
    }
  }
};

// Stage cost of an input/state sequence; the terminal state is not charged.
inline double trajectory_cost(const OcProblem& prob, const Matrix& X, const Matrix& U) {
  double c = 0.0;
  for (Index t = 0; t < U.cols(); ++t) {
    c += X.col(t).dot(prob.Q * X.col(t));
    c += U.col(t).dot(prob.R * U.col(t));
  }
  return c;
}

struct ControllabilityResult {
  bool controllable = false;
  Index rank = 0;
};

inline Matrix kalman_matrix(const Matrix& A, const Matrix& B2) {
  const Index n = A.rows();
  Matrix K(n, n * B2.cols());
  Matrix block = B2;
  for (Index i = 0; i < n; ++i) {
    K.middleCols(i * B2.cols(), B2.cols()) = block;
    block = A * block;
  }
  return K;
}

inline ControllabilityResult is_pair_controllable(const Matrix& A, const Matrix& B2, const RankPolicy& policy = {}) {
  require(A.rows() == A.cols() && A.rows() >= 1, "is_pair_controllable: A must be square");
  require(B2.rows() == A.rows() && B2.cols() >= 1, "is_pair_controllable: B2 row count must match A");
  const Matrix K = kalman_matrix(A, B2);
  if (K.norm() == 0.0) return {false, 0};
  const Index r = thin_svd(K, policy).rank;
  return {r == A.rows(), r};
}

inline double spectral_radius(const Matrix& A) {
  Eigen::EigenSolver<Matrix> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Seeded random system with (A,B) controllable and ρ(A) ≤ bound.
inline BilinearSystem random_system(Index n, Index m, std::uint64_t seed, double spectral_radius_bound = 0.9,
                                    double bilinear_scale = 0.3) {
  require(n >= 1 && m >= 1, "random_system: n and m must be positive");
  require(spectral_radius_bound > 0.0, "random_system: spectral radius bound must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<double> shrink(0.5, 1.0);
  for (int draw = 0; draw < 100; ++draw) {
    Matrix A = Matrix::NullaryExpr(n, n, [&] { return std::normal_distribution<double>(0.0, 1.0)(rng); });
    Matrix B = Matrix::NullaryExpr(n, m, [&] { return std::normal_distribution<double>(0.0, 1.0)(rng); });
    Matrix N = Matrix::NullaryExpr(n, n * m, [&] { return std::normal_distribution<double>(0.0, 1.0)(rng); });
    const double rho = spectral_radius(A);
    if (rho > 0.0) A *= spectral_radius_bound * shrink(rng) / rho;
    N *= bilinear_scale / std::sqrt(static_cast<double>(n));
    if (spectral_radius(A) > spectral_radius_bound * (1.0 + 1e-12)) continue;
    if (!is_pair_controllable(A, B).controllable) continue;
    return BilinearSystem(A, B, N);
  }
  throw GenerationError("random_system: no controllable draw within 100 attempts");
}

// ---- JSON ---------------------------------------------------------------

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& name) {
  if (!j.is_array() || j.empty()) throw ArgumentError("matrix '" + name + "' must be a nonempty array of rows");
  const auto rows = static_cast<Index>(j.size());
  const auto cols = static_cast<Index>(j.at(0).size());
  Matrix M(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<Index>(row.size()) != cols)
      throw ArgumentError("matrix '" + name + "' has ragged rows");
    for (Index c = 0; c < cols; ++c) {
      const auto& v = row.at(static_cast<std::size_t>(c));
      if (!v.is_number()) throw ArgumentError("matrix '" + name + "' has a non-numeric entry");
      M(r, c) = v.get<double>();
    }
  }
  return M;
}

inline nlohmann::json matrix_to_json(const Matrix& M) {
  auto out = nlohmann::json::array();
  for (Index r = 0; r < M.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    out.push_back(row);
  }
  return out;
}

inline nlohmann::json vector_to_json(const Vector& v) {
  auto out = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Vector vector_from_json(const nlohmann::json& j, const std::string& name) {
  if (!j.is_array()) throw ArgumentError("vector '" + name + "' must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ArgumentError("vector '" + name + "' has a non-numeric entry");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline BilinearSystem system_from_json(const nlohmann::json& j) {
  for (const char* key : {"A", "B", "N"})
    if (!j.contains(key)) throw ArgumentError(std::string("system JSON lacks key '") + key + "'");
  return BilinearSystem(matrix_from_json(j["A"], "A"), matrix_from_json(j["B"], "B"), matrix_from_json(j["N"], "N"));
}

inline nlohmann::json system_to_json(const BilinearSystem& sys) {
  return {{"A", matrix_to_json(sys.A)}, {"B", matrix_to_json(sys.B)}, {"N", matrix_to_json(sys.N)}};
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError("malformed JSON in '" + path + "': " + e.what());
  }
}

inline BilinearSystem load_system(const std::string& path) { return system_from_json(read_json_file(path)); }

}  // namespace bdd
