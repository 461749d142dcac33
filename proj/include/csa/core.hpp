#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace csa {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using Rng = std::mt19937_64;

inline constexpr double kPi = std::numbers::pi;
inline constexpr cplx kI{0.0, 1.0};

// Eigenvalues below this fraction of the largest are treated as zero.
inline constexpr double kRankTolerance = 1e-10;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based seed split: independent streams for (master, stream, index).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(master ^ splitmix64(stream + 0x632be59bd9b4e019ULL)) ^ index);
}

// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
inline cplx complex_normal(Rng& rng, double variance) {
  std::normal_distribution<double> n(0.0, std::sqrt(variance / 2.0));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

struct HermitianEig {
  RVec values;   // descending
  CMat vectors;  // columns match values
};

inline HermitianEig hermitian_eig_desc(const CMat& a) {
  Eigen::SelfAdjointEigenSolver<CMat> solver(a);
  if (solver.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const Eigen::Index n = a.rows();
  HermitianEig out{RVec(n), CMat(n, n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    out.values(j) = solver.eigenvalues()(n - 1 - j);
    out.vectors.col(j) = solver.eigenvectors().col(n - 1 - j);
  }
  return out;
}

inline int numerical_rank(const RVec& desc_values, double tol = kRankTolerance) {
  if (desc_values.size() == 0 || desc_values(0) <= 0.0) return 0;
  const double floor = tol * desc_values(0);
  int r = 0;
  while (r < desc_values.size() && desc_values(r) > floor) ++r;
  return r;
}

// F with F R F^H = I_r on the retained eigenspace of a Hermitian PSD R.
struct Whitener {
  CMat factor;
  RVec retained;
  int rank = 0;
  bool truncated = false;
};

inline Whitener whitening_factor(const CMat& r, double tol = kRankTolerance) {
  const HermitianEig eig = hermitian_eig_desc(r);
  Whitener w;
  w.rank = numerical_rank(eig.values, tol);
  w.truncated = w.rank < r.rows();
  w.retained = eig.values.head(w.rank);
  w.factor = eig.values.head(w.rank).cwiseSqrt().cwiseInverse().asDiagonal() *
             eig.vectors.leftCols(w.rank).adjoint();
  return w;
}

}  // namespace csa
