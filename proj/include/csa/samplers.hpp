#pragma once

#include "csa/core.hpp"
#include "csa/dictionary.hpp"

#include <optional>
#include <string>
#include <vector>

namespace csa {

enum class SamplerKind { kl_optimal, gaussian, bernoulli, partial_dft, identity };

inline std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::kl_optimal: return "kl-optimal";
    case SamplerKind::gaussian: return "gaussian";
    case SamplerKind::bernoulli: return "bernoulli";
    case SamplerKind::partial_dft: return "partial-dft";
    case SamplerKind::identity: return "identity";
  }
  return "unknown";
}

inline SamplerKind sampler_kind_from_string(const std::string& s) {
  for (auto k : {SamplerKind::kl_optimal, SamplerKind::gaussian, SamplerKind::bernoulli, SamplerKind::partial_dft,
                 SamplerKind::identity})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown sampler kind '" + s + "'");
}

struct SparkBound {
  int value = 0;
  bool exact = false;
  double coherence = 0.0;
};

struct KlReport {
  double average_kl = 0.0;
  RVec eigenvalues;  // eigenvalues of the whitened geometry that carry the KL mass
  std::optional<SparkBound> spark;
  bool pseudo_inverse = false;
};

struct NoiseCovariance {
  CMat gram;      // R = B M B^H
  CMat whitener;  // F, F R F^H = I_rank
  int rank = 0;
  bool truncated = false;
};

inline NoiseCovariance noise_cov(const CMat& b, const CMat& m) {
  if (b.cols() != m.rows()) throw std::invalid_argument("sampler width does not match the Gram matrix");
  NoiseCovariance nc;
  nc.gram = b * m * b.adjoint();
  nc.gram = 0.5 * (nc.gram + nc.gram.adjoint()).eval();
  Whitener w = whitening_factor(nc.gram);
  if (w.rank == 0) throw std::invalid_argument("sampler bank annihilates every template");
  nc.whitener = std::move(w.factor);
  nc.rank = w.rank;
  nc.truncated = w.truncated;
  return nc;
}

// Smallest number of linearly dependent columns. Exhaustive for up to 12
// columns, otherwise the mutual-coherence bound ceil(1 + 1/mu).
inline SparkBound spark_lower_bound(const CMat& a, double tol = 1e-9) {
  const int n = static_cast<int>(a.cols());
  const int rows = static_cast<int>(a.rows());
  SparkBound out;
  RVec norms = a.colwise().norm();
  const double scale = norms.size() ? norms.maxCoeff() : 0.0;
  for (int j = 0; j < n; ++j)
    if (norms(j) <= tol * std::max(scale, 1.0)) return {1, true, 1.0};

  CMat unit = a;
  for (int j = 0; j < n; ++j) unit.col(j) /= norms(j);
  const CMat g = unit.adjoint() * unit;
  double mu = 0.0;
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < c; ++r) mu = std::max(mu, std::abs(g(r, c)));
  out.coherence = mu;

  if (n <= 12) {
    out.exact = true;
    const int kmax = std::min(n, rows + 1);
    for (int k = 2; k <= kmax; ++k) {
      std::vector<int> idx(k);
      for (int i = 0; i < k; ++i) idx[i] = i;
      while (true) {
        CMat sub(rows, k);
        for (int i = 0; i < k; ++i) sub.col(i) = unit.col(idx[i]);
        Eigen::JacobiSVD<CMat> svd(sub);
        const RVec s = svd.singularValues();
        if (s.size() < k || s(s.size() - 1) <= tol * s(0)) {
          out.value = k;
          return out;
        }
        int p = k - 1;
        while (p >= 0 && idx[p] == n - k + p) --p;
        if (p < 0) break;
        ++idx[p];
        for (int i = p + 1; i < k; ++i) idx[i] = idx[i - 1] + 1;
      }
    }
    out.value = n + 1;
    return out;
  }
  const int cap = std::min(n, rows) + 1;
  out.value = mu <= 0.0 ? cap : std::min(cap, static_cast<int>(std::ceil(1.0 + 1.0 / mu - 1e-12)));
  return out;
}

// Whitened KL geometry: the matrix F B M maps a link vector to the
// noise-whitened observation space.
class KlGeometry {
 public:
  KlGeometry(const CMat& b, const CMat& m) : cov_(noise_cov(b, m)), map_(cov_.whitener * b * m) {}

  double pairwise(const CVec& beta, const CVec& beta2, double sigma2 = 1.0) const {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("noise variance must be positive");
    return (map_ * (beta - beta2)).squaredNorm() / sigma2;
  }
  // Sparse link vectors given as (index, value) lists.
  double pairwise(const std::vector<std::pair<int, cplx>>& beta, const std::vector<std::pair<int, cplx>>& beta2,
                  double sigma2 = 1.0) const {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("noise variance must be positive");
    CVec acc = CVec::Zero(map_.rows());
    for (const auto& [j, v] : beta) acc += v * map_.col(j);
    for (const auto& [j, v] : beta2) acc -= v * map_.col(j);
    return acc.squaredNorm() / sigma2;
  }
  double average(double sigma_beta2 = 1.0, double sigma2 = 1.0) const {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("noise variance must be positive");
    return map_.squaredNorm() * sigma_beta2 / sigma2;
  }
  const NoiseCovariance& covariance() const { return cov_; }
  const CMat& map() const { return map_; }

 private:
  NoiseCovariance cov_;
  CMat map_;
};

inline double pairwise_kl(const CMat& b, const CMat& m, const CVec& beta, const CVec& beta2, double sigma2 = 1.0) {
  return KlGeometry(b, m).pairwise(beta, beta2, sigma2);
}

// Weighted-average KL over pairs of i.i.d. link vectors: ||F B M||_F^2 sigma_beta^2 / sigma^2.
inline KlReport avg_kl(const CMat& b, const CMat& m, double sigma_beta2 = 1.0, double sigma2 = 1.0) {
  const KlGeometry geo(b, m);
  KlReport rep;
  rep.average_kl = geo.average(sigma_beta2, sigma2);
  rep.pseudo_inverse = geo.covariance().truncated;
  const CMat& f = geo.map();
  const CMat inner = f * f.adjoint();
  rep.eigenvalues = hermitian_eig_desc(0.5 * (inner + inner.adjoint())).values;
  return rep;
}

class SamplerBank {
 public:
  SamplerBank(CMat b, const GramMatrix& gram, SamplerKind kind) : b_(std::move(b)), kind_(kind) {
    if (kind_ == SamplerKind::identity) {
      // R = M: reuse the Gram eigenpairs instead of a G x G eigensolve.
      if (b_.rows() != gram.size() || !b_.isIdentity()) throw std::invalid_argument("identity bank must be I_G");
      if (gram.rank() == 0) throw std::invalid_argument("Gram matrix is zero");
      cov_.gram = gram.matrix();
      cov_.whitener = gram.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * gram.eigenvectors().adjoint();
      cov_.rank = gram.rank();
      cov_.truncated = gram.rank() < gram.size();
    } else {
      cov_ = noise_cov(b_, gram.matrix());
    }
  }

  const CMat& matrix() const { return b_; }
  int channels() const { return static_cast<int>(b_.rows()); }
  int grid_size() const { return static_cast<int>(b_.cols()); }
  SamplerKind kind() const { return kind_; }
  const NoiseCovariance& noise() const { return cov_; }
  bool rank_truncated() const { return cov_.truncated; }
  const std::optional<KlReport>& design_report() const { return report_; }
  void set_design_report(KlReport r) { report_ = std::move(r); }

 private:
  CMat b_;
  SamplerKind kind_;
  NoiseCovariance cov_;
  std::optional<KlReport> report_;
};

namespace detail {

inline CMat haar_unitary(int d, Rng& rng) {
  CMat z(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) z(r, c) = complex_normal(rng, 1.0);
  Eigen::HouseholderQR<CMat> qr(z);
  CMat q = qr.householderQ() * CMat::Identity(d, d);
  const CMat rr = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < d; ++c) {
    const double a = std::abs(rr(c, c));
    if (a > 0.0) q.col(c) *= rr(c, c) / a;
  }
  return q;
}

inline bool spark_better(const SparkBound& a, const SparkBound& b) {
  if (a.value != b.value) return a.value > b.value;
  return a.coherence < b.coherence - 1e-12;
}

}  // namespace detail

// B = Sigma_P^{-1/2} U_P^H. When the P-th eigenvalue is tied with the
// (P+1)-th, the tied eigenspace is rotated and the candidate with the best
// spark surrogate of U_P^H is kept (canonical basis first, then 16 draws).
inline SamplerBank kl_optimal_B(const GramMatrix& gram, int p, std::uint64_t seed = 0, bool with_spark = true) {
  if (p < 1) throw std::invalid_argument("need at least one sampling channel");
  if (p > gram.rank())
    throw std::invalid_argument("P = " + std::to_string(p) + " exceeds rank(M) = " + std::to_string(gram.rank()));
  const RVec& vals = gram.eigenvalues();
  const CMat& vecs = gram.eigenvectors();
  CMat u = vecs.leftCols(p);

  const double tie = 1e-9 * vals(0);
  int lo = p - 1;
  while (lo > 0 && std::abs(vals(lo - 1) - vals(p - 1)) <= tie) --lo;
  int hi = p;
  while (hi < vals.size() && std::abs(vals(hi) - vals(p - 1)) <= tie) ++hi;

  std::optional<SparkBound> spark;
  if (hi > p) {
    Rng rng(seed);
    const int d = hi - lo;
    const int keep = p - lo;
    CMat best = u;
    SparkBound best_spark = spark_lower_bound(u.adjoint());
    for (int draw = 0; draw < 16; ++draw) {
      CMat cand = u;
      cand.middleCols(lo, keep) = vecs.middleCols(lo, d) * detail::haar_unitary(d, rng).leftCols(keep);
      const SparkBound s = spark_lower_bound(cand.adjoint());
      if (detail::spark_better(s, best_spark)) {
        best = std::move(cand);
        best_spark = s;
      }
    }
    u = std::move(best);
    spark = best_spark;
  } else if (with_spark) {
    spark = spark_lower_bound(u.adjoint());
  }

  const RVec top = vals.head(p);
  CMat b = top.cwiseSqrt().cwiseInverse().asDiagonal() * u.adjoint();
  SamplerBank bank(std::move(b), gram, SamplerKind::kl_optimal);
  KlReport rep;
  rep.average_kl = top.sum();
  rep.eigenvalues = top;
  rep.spark = spark;
  rep.pseudo_inverse = bank.rank_truncated();
  bank.set_design_report(std::move(rep));
  return bank;
}

// Gaussian entries are CN(0, 1/P), Bernoulli entries are +-1/sqrt(P) and
// partial-DFT rows are unit-norm rows of the unitary G-point DFT.
inline CMat random_sampler_matrix(SamplerKind kind, int p, int g, Rng& rng) {
  if (p < 1 || g < 1) throw std::invalid_argument("sampler dimensions must be positive");
  CMat b(p, g);
  switch (kind) {
    case SamplerKind::gaussian:
      for (int c = 0; c < g; ++c)
        for (int r = 0; r < p; ++r) b(r, c) = complex_normal(rng, 1.0 / p);
      break;
    case SamplerKind::bernoulli: {
      std::bernoulli_distribution coin(0.5);
      const double a = 1.0 / std::sqrt(static_cast<double>(p));
      for (int c = 0; c < g; ++c)
        for (int r = 0; r < p; ++r) b(r, c) = coin(rng) ? a : -a;
      break;
    }
    case SamplerKind::partial_dft: {
      if (p > g) throw std::invalid_argument("partial DFT needs P <= G");
      std::vector<int> rows(g);
      for (int i = 0; i < g; ++i) rows[i] = i;
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(p);
      std::sort(rows.begin(), rows.end());
      const double a = 1.0 / std::sqrt(static_cast<double>(g));
      for (int r = 0; r < p; ++r)
        for (int c = 0; c < g; ++c) b(r, c) = a * std::exp(-kI * (2.0 * kPi * rows[r] * c / g));
      break;
    }
    default:
      throw std::invalid_argument("not a random sampler kind: " + to_string(kind));
  }
  return b;
}

inline SamplerBank random_B(SamplerKind kind, int p, const GramMatrix& gram, Rng& rng) {
  return SamplerBank(random_sampler_matrix(kind, p, gram.size(), rng), gram, kind);
}

// P = G, c = c_MF. R = M is singular, so whitening is a pseudo-inverse.
inline SamplerBank identity_B(const GramMatrix& gram) {
  return SamplerBank(CMat::Identity(gram.size(), gram.size()), gram, SamplerKind::identity);
}

}  // namespace csa
