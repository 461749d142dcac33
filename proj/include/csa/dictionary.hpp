#pragma once

#include "csa/core.hpp"
#include "csa/waveforms.hpp"

#include <compare>
#include <map>
#include <span>
#include <vector>

namespace csa {

// Discretized (user, Doppler, delay) grid. Delay cells are `delay_step_samples`
// samples wide and a shift D spans `shift_cells` delay cells.
struct GridConfig {
  int users = 1;
  int doppler_half_width = 0;  // K
  int delay_cells = 1;         // |Q|
  int delay_step_samples = 1;  // delta_tau / Ts
  int shift_cells = 1;         // D / delta_tau
  double sample_period = 1.0;  // Ts
  double doppler_step = 0.0;   // delta_omega, rad/s

  int doppler_cells() const { return 2 * doppler_half_width + 1; }
  int size() const { return users * doppler_cells() * delay_cells; }
  double delay_step() const { return delay_step_samples * sample_period; }
  int shift_samples() const { return shift_cells * delay_step_samples; }
  double shift_duration() const { return shift_samples() * sample_period; }

  void validate() const {
    if (users < 1) throw std::invalid_argument("grid needs at least one user");
    if (doppler_half_width < 0) throw std::invalid_argument("Doppler half-width must be >= 0");
    if (delay_cells < 1) throw std::invalid_argument("grid needs at least one delay cell");
    if (delay_step_samples < 1) throw std::invalid_argument("delay step must be a positive number of samples");
    if (shift_cells < 1) throw std::invalid_argument("shift must span a positive number of delay cells");
    if (!(sample_period > 0.0)) throw std::invalid_argument("sample period must be positive");
    if (doppler_half_width > 0 && !(doppler_step > 0.0))
      throw std::invalid_argument("Doppler step must be positive when K > 0");
  }

  // Every composite delay up to D + spread must land on a cell.
  bool covers(double multipath_spread) const {
    return delay_cells * delay_step() + 1e-12 >= shift_duration() + multipath_spread;
  }

  bool operator==(const GridConfig&) const = default;
};

struct Triplet {
  int user = 1;     // 1..I
  int doppler = 0;  // -K..K
  int delay = 0;    // 0..|Q|-1

  auto operator<=>(const Triplet&) const = default;
};

inline bool in_grid(const Triplet& t, const GridConfig& g) {
  return t.user >= 1 && t.user <= g.users && std::abs(t.doppler) <= g.doppler_half_width && t.delay >= 0 &&
         t.delay < g.delay_cells;
}

inline int linear_index(const Triplet& t, const GridConfig& g) {
  if (!in_grid(t, g)) throw std::out_of_range("triplet outside the grid");
  return ((t.user - 1) * g.doppler_cells() + (t.doppler + g.doppler_half_width)) * g.delay_cells + t.delay;
}

inline Triplet triplet_at(int index, const GridConfig& g) {
  if (index < 0 || index >= g.size()) throw std::out_of_range("linear index outside the grid");
  const int q = index % g.delay_cells;
  const int rest = index / g.delay_cells;
  return {rest / g.doppler_cells() + 1, rest % g.doppler_cells() - g.doppler_half_width, q};
}

// Ts * sum_m conj(a[m]) b[m - lag] exp(i kappa dw m Ts), over the sample overlap.
inline cplx ambiguity_samples(const Preamble& a, const Preamble& b, int kappa, long lag, double doppler_step) {
  const double ts = a.sample_period;
  const long lo = std::max(0L, lag);
  const long hi = std::min<long>(a.length(), b.length() + lag);
  cplx acc{0.0, 0.0};
  const double w = kappa * doppler_step * ts;
  for (long m = lo; m < hi; ++m) acc += std::conj(a.samples(m)) * b.samples(m - lag) * std::exp(kI * (w * m));
  return acc * ts;
}

class TemplateBank {
 public:
  TemplateBank(std::vector<Preamble> preambles, GridConfig grid)
      : preambles_(std::move(preambles)), grid_(grid) {
    grid_.validate();
    if (static_cast<int>(preambles_.size()) != grid_.users)
      throw std::invalid_argument("need exactly one preamble per grid user");
    int longest = 0;
    for (int i = 0; i < grid_.users; ++i) {
      if (preambles_[i].user != i + 1) throw std::invalid_argument("preambles must be ordered by user id");
      if (std::abs(preambles_[i].sample_period - grid_.sample_period) > 1e-12 * grid_.sample_period)
        throw std::invalid_argument("preamble sample period does not match the grid");
      longest = std::max(longest, preambles_[i].length());
    }
    window_ = longest + (grid_.delay_cells - 1) * grid_.delay_step_samples;
    phi_ = CMat::Zero(window_, grid_.size());
    for (int j = 0; j < grid_.size(); ++j) {
      const Triplet t = triplet_at(j, grid_);
      const Preamble& p = preambles_[t.user - 1];
      const int off = t.delay * grid_.delay_step_samples;
      const double w = t.doppler * grid_.doppler_step * grid_.sample_period;
      for (int m = 0; m < p.length(); ++m) phi_(off + m, j) = p.samples(m) * std::exp(kI * (w * (off + m)));
    }
  }

  const GridConfig& grid() const { return grid_; }
  const std::vector<Preamble>& preambles() const { return preambles_; }
  const Preamble& preamble(int user) const { return preambles_.at(user - 1); }
  // Columns are templates in linear-index order, phase referenced to the window start.
  const CMat& matrix() const { return phi_; }
  int window_samples() const { return window_; }
  int size() const { return grid_.size(); }
  double sample_period() const { return grid_.sample_period; }

 private:
  std::vector<Preamble> preambles_;
  GridConfig grid_;
  int window_ = 0;
  CMat phi_;
};

// Cross-ambiguity R^{(kappa)}_{i', i}(dt); dt must sit on the sample grid.
inline cplx ambiguity(const TemplateBank& bank, int user_row, int user_col, int kappa, double dt) {
  const double ts = bank.sample_period();
  const double lag = dt / ts;
  if (std::abs(lag - std::round(lag)) > 1e-9) throw std::invalid_argument("delay offset is off the sample grid");
  return ambiguity_samples(bank.preamble(user_row), bank.preamble(user_col), kappa, std::lround(lag),
                           bank.grid().doppler_step);
}

// <template(col) shifted by `lag` shifts, template(row)>: the Gram entry at
// window lag n - l. The column phase also carries exp(i k dw lag D).
inline cplx template_cross(const TemplateBank& bank, const Triplet& row, const Triplet& col, int lag) {
  const GridConfig& g = bank.grid();
  const int kappa = col.doppler - row.doppler;
  const long offset = static_cast<long>(col.delay - lag * g.shift_cells - row.delay) * g.delay_step_samples;
  const double phase = col.doppler * g.doppler_step * lag * g.shift_duration() +
                       kappa * g.doppler_step * row.delay * g.delay_step();
  return std::exp(kI * phase) *
         ambiguity_samples(bank.preamble(row.user), bank.preamble(col.user), kappa, offset, g.doppler_step);
}

namespace detail {

// All ambiguity values needed for one lag, then a cheap G x G fill.
inline CMat gram_from_ambiguity(const TemplateBank& bank, int lag) {
  const GridConfig& g = bank.grid();
  const int users = g.users;
  const int kk = g.doppler_half_width;
  const int nq = g.delay_cells;
  const int nk = 4 * kk + 1;
  const int nd = 2 * nq - 1;
  std::vector<cplx> table(static_cast<std::size_t>(users) * users * nk * nd);
  auto at = [&](int ir, int ic, int kappa, int d) -> cplx& {
    return table[((static_cast<std::size_t>(ir) * users + ic) * nk + (kappa + 2 * kk)) * nd + (d + nq - 1)];
  };
  for (int ir = 0; ir < users; ++ir)
    for (int ic = 0; ic < users; ++ic)
      for (int kappa = -2 * kk; kappa <= 2 * kk; ++kappa)
        for (int d = -(nq - 1); d <= nq - 1; ++d) {
          const long offset = static_cast<long>(d - lag * g.shift_cells) * g.delay_step_samples;
          at(ir, ic, kappa, d) =
              ambiguity_samples(bank.preambles()[ir], bank.preambles()[ic], kappa, offset, g.doppler_step);
        }

  const int n = g.size();
  CMat m(n, n);
  for (int jc = 0; jc < n; ++jc) {
    const Triplet c = triplet_at(jc, g);
    const cplx col_phase = std::exp(kI * (c.doppler * g.doppler_step * lag * g.shift_duration()));
    for (int jr = 0; jr < n; ++jr) {
      const Triplet r = triplet_at(jr, g);
      const int kappa = c.doppler - r.doppler;
      const cplx row_phase = std::exp(kI * (kappa * g.doppler_step * r.delay * g.delay_step()));
      m(jr, jc) = col_phase * row_phase * at(r.user - 1, c.user - 1, kappa, c.delay - r.delay);
    }
  }
  return m;
}

}  // namespace detail

// Template Gram matrix with its retained eigenpairs (descending).
class GramMatrix {
 public:
  explicit GramMatrix(CMat m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols() || m_.rows() == 0) throw std::invalid_argument("Gram matrix must be square");
    const HermitianEig eig = hermitian_eig_desc(m_);
    const int r = numerical_rank(eig.values);
    values_ = eig.values.head(r);
    vectors_ = eig.vectors.leftCols(r);
  }

  // `decompose = false` skips the eigenpairs when only M itself is needed.
  explicit GramMatrix(const TemplateBank& bank, bool decompose = true) : m_(detail::gram_from_ambiguity(bank, 0)) {
    decomposed_ = decompose;
    if (!decompose) return;
    const CMat& phi = bank.matrix();
    const double ts = bank.sample_period();
    if (phi.rows() >= phi.cols()) {
      const HermitianEig eig = hermitian_eig_desc(m_);
      const int r = numerical_rank(eig.values);
      values_ = eig.values.head(r);
      vectors_ = eig.vectors.leftCols(r);
      return;
    }
    // rank(M) <= W < G: diagonalize Ts * Phi Phi^H and lift.
    CMat k = CMat::Zero(phi.rows(), phi.rows());
    k.selfadjointView<Eigen::Lower>().rankUpdate(phi, ts);
    k.triangularView<Eigen::StrictlyUpper>() = k.adjoint();
    const HermitianEig eig = hermitian_eig_desc(k);
    const int r = numerical_rank(eig.values);
    values_ = eig.values.head(r);
    vectors_ = (phi.adjoint() * eig.vectors.leftCols(r)) * std::sqrt(ts);
    for (int j = 0; j < r; ++j) vectors_.col(j) /= std::sqrt(values_(j));
  }

  // Restores a previously computed decomposition (cache path).
  GramMatrix(CMat m, RVec values, CMat vectors) : m_(std::move(m)), values_(std::move(values)), vectors_(std::move(vectors)) {
    if (vectors_.rows() != m_.rows() || vectors_.cols() != values_.size())
      throw std::invalid_argument("eigenpairs do not match the Gram matrix");
  }

  const CMat& matrix() const { return m_; }
  const RVec& eigenvalues() const { return require(), values_; }
  const CMat& eigenvectors() const { return require(), vectors_; }
  int rank() const { return require(), static_cast<int>(values_.size()); }
  int size() const { return static_cast<int>(m_.rows()); }
  bool decomposed() const { return decomposed_; }

 private:
  void require() const {
    if (!decomposed_) throw std::logic_error("Gram matrix was built without its eigendecomposition");
  }

  bool decomposed_ = true;
  CMat m_;
  RVec values_;
  CMat vectors_;
};

inline GramMatrix gram_matrix(const TemplateBank& bank) { return GramMatrix(bank); }

// Lagged Gram M_phiphi[lag]; all zeros once templates no longer overlap.
inline CMat cross_gram(const TemplateBank& bank, int lag) { return detail::gram_from_ambiguity(bank, lag); }

inline CVec cross_gram_column(const TemplateBank& bank, int lag, const Triplet& col) {
  const GridConfig& g = bank.grid();
  CVec out(g.size());
  for (int j = 0; j < g.size(); ++j) out(j) = template_cross(bank, triplet_at(j, g), col, lag);
  return out;
}

// Diagonal of Gamma[n]: exp(i k dw n D) in linear-index order.
inline CVec phase_rotation(int n, const GridConfig& g) {
  CVec d(g.size());
  for (int j = 0; j < g.size(); ++j)
    d(j) = std::exp(kI * (triplet_at(j, g).doppler * g.doppler_step * n * g.shift_duration()));
  return d;
}

class LinkVector {
 public:
  explicit LinkVector(const GridConfig& g) : grid_(g) {}

  void add(const Triplet& t, cplx v) { entries_[linear_index(t, grid_)] += v; }
  void add(int index, cplx v) {
    if (index < 0 || index >= grid_.size()) throw std::out_of_range("link index outside the grid");
    entries_[index] += v;
  }
  cplx at(const Triplet& t) const {
    auto it = entries_.find(linear_index(t, grid_));
    return it == entries_.end() ? cplx{} : it->second;
  }
  std::size_t support_size() const { return entries_.size(); }
  const std::map<int, cplx>& entries() const { return entries_; }
  const GridConfig& grid() const { return grid_; }

  CVec dense() const {
    CVec v = CVec::Zero(grid_.size());
    for (const auto& [j, a] : entries_) v(j) = a;
    return v;
  }

 private:
  GridConfig grid_;
  std::map<int, cplx> entries_;
};

// alpha[n] from alpha[l] with shift = n - l: delay cells move by -shift * N;
// components leaving the grid are dropped.
inline LinkVector shift_link_vector(const LinkVector& alpha, int shift) {
  const GridConfig& g = alpha.grid();
  LinkVector out(g);
  for (const auto& [j, a] : alpha.entries()) {
    Triplet t = triplet_at(j, g);
    t.delay -= shift * g.shift_cells;
    if (in_grid(t, g)) out.add(t, a);
  }
  return out;
}

struct GroundTruth {
  LinkVector alpha;
  int reference_shift = 0;
  bool collision = false;  // two paths merged into one cell
  int off_grid = 0;        // paths whose cell fell outside the grid
};

inline int reference_shift(const ChannelRealization& ch, const GridConfig& g) {
  return static_cast<int>(std::floor(ch.first_arrival() / g.shift_duration()));
}

// Grid cell of each path relative to shift `ref`; delays follow the
// synthesizer's nearest-sample placement.
inline Triplet path_cell(const Path& p, const GridConfig& g, int ref) {
  const long d = std::lround(p.delay / g.sample_period);
  const double rel = static_cast<double>(d - static_cast<long>(ref) * g.shift_samples()) / g.delay_step_samples;
  const int k = g.doppler_step > 0.0 ? static_cast<int>(std::lround(p.doppler / g.doppler_step)) : 0;
  return {p.user, k, static_cast<int>(std::lround(rel))};
}

inline GroundTruth ground_truth_link_vector(const ChannelRealization& ch, const GridConfig& g, int ref) {
  GroundTruth gt{LinkVector(g), ref, false, 0};
  for (const auto& p : ch.paths) {
    const Triplet t = path_cell(p, g, ref);
    if (!in_grid(t, g)) {
      ++gt.off_grid;
      continue;
    }
    if (gt.alpha.entries().count(linear_index(t, g))) gt.collision = true;
    gt.alpha.add(t, p.gain);
  }
  return gt;
}

}  // namespace csa
