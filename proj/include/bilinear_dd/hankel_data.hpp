#pragma once

#include "bilinear_dd/bilinear_core.hpp"

namespace bdd {

// Column j stacks signal(:, j .. j+k-1). `signal` holds one sample per column.
inline Matrix hankel(const Matrix& signal, Index depth) {
  const Index d = signal.rows();
  const Index len = signal.cols();
  if (depth < 1 || depth > len)
    throw ArgumentError("hankel: depth " + std::to_string(depth) + " outside [1, " + std::to_string(len) + "]");
  Matrix H(d * depth, len - depth + 1);
  for (Index j = 0; j < H.cols(); ++j)
    for (Index i = 0; i < depth; ++i) H.block(i * d, j, d, 1) = signal.col(j + i);
  return H;
}

// Per-sample x(t) ⊗ u(t) for t = 0..L-1.
inline Matrix kron_signal(const Trajectory& tr) {
  const Index n = tr.states.rows();
  const Index m = tr.inputs.rows();
  Matrix W(n * m, tr.length());
  for (Index t = 0; t < tr.length(); ++t) W.col(t) = kron(tr.states.col(t), tr.inputs.col(t));
  return W;
}

inline Index min_data_length(Index n, Index m, Index T) { return (m * n + m + 1) * T + n - 1; }

struct DataMatrices {
  Index n = 0;
  Index m = 0;
  Index T = 0;
  Index L = 0;
  Matrix H1x;   // n × (L-T+1)
  Matrix HTu;   // mT × (L-T+1)
  Matrix HTxu;  // mnT × (L-T+1)
  Matrix HT1x;  // n(T+1) × (L-T+1)
  Matrix GT;    // [H1x; HTu; HTxu]
  Trajectory data;

  Index columns() const { return L - T + 1; }
  Index rows() const { return GT.rows(); }
  // H_T(x_{[1,L]}): the last nT rows of HT1x.
  Matrix shifted_states() const { return HT1x.bottomRows(n * T); }
};

inline DataMatrices build_data_matrices(const Trajectory& tr, Index T) {
  const Index L = tr.length();
  require(T >= 1, "build_data_matrices: horizon must be positive");
  require(tr.states.cols() == L + 1, "build_data_matrices: trajectory needs L+1 states for L inputs");
  if (T > L)
    throw ArgumentError("build_data_matrices: horizon " + std::to_string(T) + " exceeds data length " +
                        std::to_string(L));
  DataMatrices dm;
  dm.n = tr.states.rows();
  dm.m = tr.inputs.rows();
  dm.T = T;
  dm.L = L;
  const Index cols = L - T + 1;
  dm.H1x = tr.states.leftCols(cols);
  dm.HTu = hankel(tr.inputs, T);
  dm.HTxu = hankel(kron_signal(tr), T);
  dm.HT1x = hankel(tr.states, T + 1);
  dm.GT.resize(dm.H1x.rows() + dm.HTu.rows() + dm.HTxu.rows(), cols);
  dm.GT << dm.H1x, dm.HTu, dm.HTxu;
  dm.data = tr;
  return dm;
}

struct RankCertificate {
  Index rows = 0;
  Index cols = 0;
  Vector singular_values;
  Index rank = 0;
  double tolerance = 0.0;
  bool full_row_rank = false;
};

inline RankCertificate rank_certificate(const Matrix& M, const RankPolicy& policy = {}) {
  if (M.rows() == 0 || M.cols() == 0) throw ArgumentError("rank_certificate: empty matrix");
  Eigen::BDCSVD<Matrix> svd(M);
  if (svd.info() != Eigen::Success || !svd.singularValues().allFinite())
    throw NumericError("rank_certificate: singular value decomposition failed");
  RankCertificate c;
  c.rows = M.rows();
  c.cols = M.cols();
  c.singular_values = svd.singularValues();
  c.tolerance = policy.tolerance(c.singular_values(0), M.rows(), M.cols());
  c.rank = (c.singular_values.array() > c.tolerance).count();
  c.full_row_rank = c.rank == c.rows;
  return c;
}

inline nlohmann::json certificate_to_json(const RankCertificate& c) {
  auto sv = nlohmann::json::array();
  for (Index i = 0; i < c.singular_values.size(); ++i) sv.push_back(round_significant(c.singular_values(i), 16));
  return {{"rows", c.rows},
          {"cols", c.cols},
          {"rank", c.rank},
          {"tolerance", round_significant(c.tolerance, 16)},
          {"full_row_rank", c.full_row_rank},
          {"singular_values", sv}};
}

struct RankDeficiencyError : std::runtime_error {
  RankDeficiencyError(const std::string& what, RankCertificate cert)
      : std::runtime_error(what), certificate(std::move(cert)) {}
  RankCertificate certificate;
};

inline void require_full_row_rank(const DataMatrices& dm, const RankPolicy& policy, const char* who) {
  auto cert = rank_certificate(dm.GT, policy);
  if (!cert.full_row_rank)
    throw RankDeficiencyError(std::string(who) + ": stacked data matrix has rank " + std::to_string(cert.rank) +
                                  " < " + std::to_string(cert.rows) + " rows",
                              cert);
}

struct MarkovBlocks {
  Matrix O;  // nT × n
  Matrix P;  // nT × mT
  Matrix Q;  // nT × mnT
  Matrix stacked() const {
    Matrix S(O.rows(), O.cols() + P.cols() + Q.cols());
    S << O, P, Q;
    return S;
  }
};

// [O_T P_T Q_T] = H_T(x_[1,L]) · G_T(L)^†, valid when G_T(L) has full row rank.
inline MarkovBlocks recover_markov_blocks(const DataMatrices& dm, const RankPolicy& policy = {}) {
  const ThinSvd svd = thin_svd(dm.GT, policy);
  if (svd.rank != dm.rows()) {
    throw RankDeficiencyError("recover_markov_blocks: stacked data matrix is rank deficient",
                              rank_certificate(dm.GT, policy));
  }
  const Matrix S = dm.shifted_states() * pseudo_inverse(svd);
  const Index n = dm.n, m = dm.m, T = dm.T;
  return {S.leftCols(n), S.middleCols(n, m * T), S.rightCols(m * n * T)};
}

// Block lower-triangular layout built from known (A, B, N); used only as a
// reference in tests and diagnostics.
inline MarkovBlocks true_markov_blocks(const BilinearSystem& sys, Index T) {
  const Index n = sys.n(), m = sys.m();
  MarkovBlocks mb{Matrix::Zero(n * T, n), Matrix::Zero(n * T, m * T), Matrix::Zero(n * T, m * n * T)};
  std::vector<Matrix> powers{Matrix::Identity(n, n)};
  for (Index s = 1; s <= T; ++s) powers.push_back(sys.A * powers.back());
  for (Index s = 1; s <= T; ++s) {
    mb.O.middleRows((s - 1) * n, n) = powers[static_cast<std::size_t>(s)];
    for (Index q = 0; q < s; ++q) {
      const Matrix& Ap = powers[static_cast<std::size_t>(s - 1 - q)];
      mb.P.block((s - 1) * n, q * m, n, m) = Ap * sys.B;
      mb.Q.block((s - 1) * n, q * m * n, n, m * n) = Ap * sys.N;
    }
  }
  return mb;
}

}  // namespace bdd
