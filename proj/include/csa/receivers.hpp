#pragma once

#include "csa/core.hpp"
#include "csa/dictionary.hpp"
#include "csa/samplers.hpp"
#include "csa/waveforms.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace csa {

// Complex multiply-accumulate tallies, split by pipeline stage.
struct OpCounter {
  std::uint64_t sampling = 0;
  std::uint64_t recovery = 0;

  std::uint64_t total() const { return sampling + recovery; }
  OpCounter& operator+=(const OpCounter& o) {
    sampling += o.sampling;
    recovery += o.recovery;
    return *this;
  }
};

inline void tally(OpCounter* ops, std::uint64_t OpCounter::*field, std::uint64_t n) {
  if (ops) ops->*field += n;
}

struct CmsObservation {
  int shift = 0;
  CVec samples;   // c = B c_MF, length P
  CVec whitened;  // F c, length rank(R)
};

// psi_p = sum_j conj(B_pj) phi_j, one kernel per column (W x P).
inline CMat sampling_kernels(const SamplerBank& bank, const TemplateBank& templates) {
  if (bank.grid_size() != templates.size()) throw std::invalid_argument("sampler bank and templates disagree on G");
  if (bank.kind() == SamplerKind::identity) return templates.matrix();
  return templates.matrix() * bank.matrix().adjoint();
}

inline CmsObservation cms_sample(const CVec& window, const SamplerBank& bank, const CMat& kernels, double ts,
                                 int shift = 0, OpCounter* ops = nullptr) {
  if (window.size() != kernels.rows()) throw std::invalid_argument("window length does not match the kernels");
  CmsObservation obs;
  obs.shift = shift;
  obs.samples = ts * (kernels.adjoint() * window);
  obs.whitened = bank.noise().whitener * obs.samples;
  tally(ops, &OpCounter::sampling, static_cast<std::uint64_t>(kernels.rows()) * kernels.cols());
  tally(ops, &OpCounter::recovery, static_cast<std::uint64_t>(bank.noise().whitener.size()));
  return obs;
}

// MF outputs in linear-index order.
inline CVec mf_sample_flat(const CVec& window, const TemplateBank& templates, OpCounter* ops = nullptr) {
  const CMat& phi = templates.matrix();
  if (window.size() != phi.rows()) throw std::invalid_argument("window length does not match the template bank");
  tally(ops, &OpCounter::sampling, static_cast<std::uint64_t>(phi.size()));
  return templates.sample_period() * (phi.adjoint() * window);
}

// Row (i-1)|K| + (k+K), column q.
inline CMat mf_sample(const CVec& window, const TemplateBank& templates, OpCounter* ops = nullptr) {
  const GridConfig& g = templates.grid();
  const CVec flat = mf_sample_flat(window, templates, ops);
  CMat out(g.users * g.doppler_cells(), g.delay_cells);
  for (int r = 0; r < out.rows(); ++r) out.row(r) = flat.segment(r * g.delay_cells, g.delay_cells).transpose();
  return out;
}

// Whitened recovery dictionary A = F B M with column energies and, when it
// fits, the Gram A^H A used to update correlations without touching A.
class SparseDictionary {
 public:
  SparseDictionary(const SamplerBank& bank, const GramMatrix& gram, bool precompute_gram = true)
      : channels_(bank.channels()) {
    const CMat& f = bank.noise().whitener;
    if (bank.kind() == SamplerKind::identity) {
      a_ = gram.eigenvalues().cwiseSqrt().asDiagonal() * gram.eigenvectors().adjoint();
      if (precompute_gram) gram_ = gram.matrix();
    } else {
      a_ = f * (bank.matrix() * gram.matrix());
      if (precompute_gram) gram_ = a_.adjoint() * a_;
    }
    norms2_ = a_.colwise().squaredNorm().transpose();
    floor_ = 1e-20 * (norms2_.size() ? norms2_.maxCoeff() : 0.0);
  }

  const CMat& matrix() const { return a_; }
  const RVec& column_energy() const { return norms2_; }
  bool usable(int j) const { return norms2_(j) > floor_; }
  const std::optional<CMat>& gram() const { return gram_; }
  int channels() const { return channels_; }
  int rows() const { return static_cast<int>(a_.rows()); }
  int size() const { return static_cast<int>(a_.cols()); }

 private:
  int channels_ = 0;
  CMat a_;
  RVec norms2_;
  double floor_ = 0.0;
  std::optional<CMat> gram_;
};

struct OmpOptions {
  int max_atoms = 8;
  // Absolute stop on the whitened residual norm; 0 means 1e-12 * ||y||.
  double tolerance = 0.0;
};

struct SparseEstimate {
  LinkVector beta;
  std::vector<int> support;             // selection order
  std::vector<double> residual_norms;   // [0] = ||y||, then one per accepted atom
  double observation_norm2 = 0.0;
  double residual_norm2 = 0.0;
  double noise_variance = 0.0;          // residual^2 / P
  bool rank_deficient = false;
  bool stalled = false;                 // newest atom did not reduce the residual
};

// OMP in whitened coordinates; z = A^H y is passed in so batched callers can
// compute it for many shifts with one product.
inline SparseEstimate omp_from_correlation(const CVec& y, const CVec& z, const SparseDictionary& dict,
                                           const GridConfig& grid, const OmpOptions& opt, OpCounter* ops = nullptr) {
  if (y.size() != dict.rows() || z.size() != dict.size()) throw std::invalid_argument("observation size mismatch");
  if (opt.max_atoms < 1) throw std::invalid_argument("OMP needs at least one iteration");
  if (grid.size() != dict.size()) throw std::invalid_argument("grid does not match the dictionary");
  SparseEstimate est{LinkVector(grid), {}, {}, 0.0, 0.0, 0.0, false, false};
  const double y2 = y.squaredNorm();
  est.observation_norm2 = y2;
  est.residual_norm2 = y2;
  est.residual_norms.push_back(std::sqrt(y2));
  if (y2 == 0.0) return est;

  const double tol = opt.tolerance > 0.0 ? opt.tolerance : 1e-12 * std::sqrt(y2);
  const CMat& a = dict.matrix();
  const RVec& energy = dict.column_energy();
  const int g = dict.size();
  const int r = dict.rows();
  std::vector<char> used(g, 0);
  CVec corr = z;
  CMat as(r, 0);
  CVec coef;
  double prev = std::sqrt(y2);

  for (int it = 0; it < opt.max_atoms && prev > tol; ++it) {
    int best = -1;
    double best_score = -1.0;
    for (int j = 0; j < g; ++j) {
      if (used[j] || !dict.usable(j)) continue;
      const double score = std::norm(corr(j)) / energy(j);
      if (score > best_score) {
        best_score = score;
        best = j;
      }
    }
    tally(ops, &OpCounter::recovery, g);
    if (best < 0) break;

    CMat trial(r, as.cols() + 1);
    trial << as, a.col(best);
    Eigen::ColPivHouseholderQR<CMat> qr(trial);
    qr.setThreshold(1e-10);
    const int k = static_cast<int>(trial.cols());
    tally(ops, &OpCounter::recovery, static_cast<std::uint64_t>(r) * k * k);
    if (qr.rank() < k) {
      est.rank_deficient = true;
      break;
    }
    const CVec c = qr.solve(y);
    const CVec resid = y - trial * c;
    const double norm = resid.norm();
    tally(ops, &OpCounter::recovery, static_cast<std::uint64_t>(r) * k);
    if (norm > prev) {
      est.stalled = true;
      break;
    }
    used[best] = 1;
    est.support.push_back(best);
    as = std::move(trial);
    coef = c;
    prev = norm;
    est.residual_norms.push_back(norm);

    if (dict.gram()) {
      corr = z;
      for (int s = 0; s < k; ++s) corr -= coef(s) * dict.gram()->col(est.support[s]);
      tally(ops, &OpCounter::recovery, static_cast<std::uint64_t>(g) * k);
    } else {
      corr = a.adjoint() * resid;
      tally(ops, &OpCounter::recovery, static_cast<std::uint64_t>(g) * r);
    }
  }

  for (std::size_t s = 0; s < est.support.size(); ++s) est.beta.add(est.support[s], coef(static_cast<Eigen::Index>(s)));
  est.residual_norm2 = prev * prev;
  est.noise_variance = est.residual_norm2 / dict.channels();
  return est;
}

inline SparseEstimate omp_solve(const CmsObservation& obs, const SparseDictionary& dict, const GridConfig& grid,
                                const OmpOptions& opt = {}, OpCounter* ops = nullptr) {
  if (obs.whitened.size() != dict.rows()) throw std::invalid_argument("observation size mismatch");
  tally(ops, &OpCounter::recovery, static_cast<std::uint64_t>(dict.matrix().size()));
  return omp_from_correlation(obs.whitened, dict.matrix().adjoint() * obs.whitened, dict, grid, opt, ops);
}

struct LogLikelihood {
  double value = 0.0;
  bool saturated = false;
};

// Residual floor: relative 1e-24 of the whitened energy (double-precision
// noise level of an exact fit), never below 1e-300.
inline double residual_floor(double observation_norm2) { return std::max(1e-300, 1e-24 * observation_norm2); }

inline LogLikelihood log_likelihood_ratio(double observation_norm2, double residual_norm2, int channels) {
  if (observation_norm2 <= 0.0) return {0.0, false};
  const double floor = residual_floor(observation_norm2);
  const bool saturated = residual_norm2 <= floor;
  return {channels * (std::log(observation_norm2) - std::log(std::max(residual_norm2, floor))), saturated};
}

// log eta = P (log ||c||^2_{R^-1} - log ||c - B M beta||^2_{R^-1}) with beta
// taken from the OMP output.
inline LogLikelihood likelihood_ratio(const CmsObservation& obs, const SparseEstimate& est, int channels) {
  return log_likelihood_ratio(obs.whitened.squaredNorm(), est.residual_norm2, channels);
}

// Same statistic with beta restricted to an extracted support subset.
inline LogLikelihood likelihood_ratio(const CmsObservation& obs, const SparseDictionary& dict, const LinkVector& beta,
                                      const std::vector<int>& subset) {
  CVec resid = obs.whitened;
  for (int j : subset) {
    auto it = beta.entries().find(j);
    if (it != beta.entries().end()) resid -= it->second * dict.matrix().col(j);
  }
  return log_likelihood_ratio(obs.whitened.squaredNorm(), resid.squaredNorm(), dict.channels());
}

enum class ExtractionMode { unknown, partial, known };

struct ExtractionRule {
  ExtractionMode mode = ExtractionMode::unknown;
  int paths = 1;                         // R strongest cells kept per user
  int active_users = 1;                  // |I| under partial knowledge
  std::vector<int> known_users;          // I under full knowledge
  double relative_threshold = 1.0 / 3.0; // unknown mode: fraction of the strongest power
};

struct CellScore {
  int index = 0;  // linear index
  double power = 0.0;
};

struct ComponentSet {
  std::vector<int> users;                   // ascending
  std::map<int, std::vector<int>> cells;    // user -> linear indices, strongest first

  bool operator==(const ComponentSet&) const = default;
};

// `power_floor` additionally gates users in unknown mode (the MF threshold).
inline ComponentSet extract_components(const std::vector<CellScore>& scores, const GridConfig& grid,
                                       const ExtractionRule& rule, double power_floor = 0.0) {
  if (rule.paths < 1) throw std::invalid_argument("need at least one path per user");
  std::map<int, std::vector<CellScore>> by_user;
  for (const auto& s : scores)
    if (s.power > 0.0) by_user[triplet_at(s.index, grid).user].push_back(s);
  std::map<int, double> peak;
  double global = 0.0;
  for (auto& [u, v] : by_user) {
    std::sort(v.begin(), v.end(), [](const CellScore& a, const CellScore& b) {
      return a.power != b.power ? a.power > b.power : a.index < b.index;
    });
    peak[u] = v.front().power;
    global = std::max(global, v.front().power);
  }

  ComponentSet out;
  switch (rule.mode) {
    case ExtractionMode::unknown:
      for (const auto& [u, p] : peak)
        if (p >= rule.relative_threshold * global && p >= power_floor) out.users.push_back(u);
      break;
    case ExtractionMode::partial: {
      if (rule.active_users < 1 || rule.active_users > grid.users)
        throw std::invalid_argument("active user count outside [1, I]");
      std::vector<int> order(grid.users);
      for (int i = 0; i < grid.users; ++i) order[i] = i + 1;
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double pa = peak.count(a) ? peak[a] : 0.0;
        const double pb = peak.count(b) ? peak[b] : 0.0;
        return pa > pb;
      });
      out.users.assign(order.begin(), order.begin() + rule.active_users);
      std::sort(out.users.begin(), out.users.end());
      break;
    }
    case ExtractionMode::known:
      out.users = rule.known_users;
      std::sort(out.users.begin(), out.users.end());
      break;
  }
  for (int u : out.users) {
    auto& dst = out.cells[u];
    auto it = by_user.find(u);
    if (it == by_user.end()) continue;
    for (std::size_t r = 0; r < it->second.size() && static_cast<int>(r) < rule.paths; ++r)
      dst.push_back(it->second[r].index);
  }
  return out;
}

inline ComponentSet extract_components(const LinkVector& beta, const ExtractionRule& rule) {
  std::vector<CellScore> scores;
  for (const auto& [j, v] : beta.entries()) scores.push_back({j, std::norm(v)});
  return extract_components(scores, beta.grid(), rule);
}

struct ShiftOutcome {
  int shift = 0;
  double statistic = 0.0;
  bool saturated = false;
  std::vector<CellScore> cells;
};

struct PathEstimate {
  int user = 0;
  int index = 0;
  double delay = 0.0;           // absolute: l* D + q delta_tau
  double relative_delay = 0.0;  // q delta_tau
  double doppler = 0.0;         // k delta_omega
};

struct AcquisitionResult {
  bool detected = false;
  int first_trigger = -1;  // N_eta
  int mlr_shift = -1;      // l*
  bool truncated = false;  // stream ended inside the horizon
  std::vector<double> statistics;
  ComponentSet components;
  std::vector<PathEstimate> estimates;
};

inline int default_horizon(const TemplateBank& bank) {
  const int n = bank.grid().shift_samples();
  return (bank.window_samples() + n - 1) / n;
}

inline int shift_count(const SampleStream& s, int window, int step) {
  return s.size() < window ? 0 : (s.size() - window) / step + 1;
}

// Threshold test on a scanned trace: first trigger, maximum-likelihood shift
// inside [N_eta, N_eta + horizon], then extraction at that shift.
inline AcquisitionResult decide(const std::vector<ShiftOutcome>& trace, double threshold, int horizon,
                                const GridConfig& grid, const ExtractionRule& rule, double power_floor = 0.0) {
  if (horizon < 0) throw std::invalid_argument("horizon must be nonnegative");
  AcquisitionResult res;
  for (const auto& s : trace) res.statistics.push_back(s.statistic);
  std::size_t first = trace.size();
  for (std::size_t i = 0; i < trace.size(); ++i)
    if (trace[i].statistic >= threshold) {
      first = i;
      break;
    }
  if (first == trace.size()) {
    if (rule.mode == ExtractionMode::known) res.components = extract_components({}, grid, rule);
    return res;
  }
  res.detected = true;
  res.first_trigger = trace[first].shift;
  std::size_t last = first + static_cast<std::size_t>(horizon);
  if (last >= trace.size()) {
    res.truncated = true;
    last = trace.size() - 1;
  }
  std::size_t best = first;
  for (std::size_t i = first; i <= last; ++i)
    if (trace[i].statistic > trace[best].statistic) best = i;
  res.mlr_shift = trace[best].shift;
  res.components = extract_components(trace[best].cells, grid, rule, power_floor);
  for (int u : res.components.users) {
    for (int j : res.components.cells[u]) {
      const Triplet t = triplet_at(j, grid);
      PathEstimate pe;
      pe.user = u;
      pe.index = j;
      pe.relative_delay = t.delay * grid.delay_step();
      pe.delay = res.mlr_shift * grid.shift_duration() + pe.relative_delay;
      pe.doppler = t.doppler * grid.doppler_step;
      res.estimates.push_back(pe);
    }
  }
  return res;
}

// Stacks `count` consecutive windows starting at shift `first` (W x count).
inline CMat window_block(const SampleStream& s, int first, int count, int width, int step) {
  CMat x(width, count);
  for (int c = 0; c < count; ++c) x.col(c) = stream_window(s, first + c, width, step);
  return x;
}

class CsaReceiver {
 public:
  CsaReceiver(const TemplateBank& templates, const GramMatrix& gram, SamplerBank bank, OmpOptions omp = {})
      : templates_(&templates),
        bank_(std::move(bank)),
        kernels_(sampling_kernels(bank_, templates)),
        dict_(bank_, gram),
        omp_(omp) {}

  const SamplerBank& bank() const { return bank_; }
  const SparseDictionary& dictionary() const { return dict_; }
  const CMat& kernels() const { return kernels_; }
  const TemplateBank& templates() const { return *templates_; }
  const OmpOptions& omp() const { return omp_; }
  int window_samples() const { return templates_->window_samples(); }
  double power_floor(double) const { return 0.0; }

  CmsObservation observe(const CVec& window, int shift, OpCounter* ops = nullptr) const {
    return cms_sample(window, bank_, kernels_, templates_->sample_period(), shift, ops);
  }

  ShiftOutcome evaluate(const CVec& window, int shift, OpCounter* ops = nullptr) const {
    const CmsObservation obs = observe(window, shift, ops);
    return finish(obs, omp_solve(obs, dict_, templates_->grid(), omp_, ops));
  }

  // Same result as evaluate() per shift, with the linear stages batched.
  std::vector<ShiftOutcome> scan(const SampleStream& s, OpCounter* ops = nullptr) const {
    const int w = window_samples();
    const int n = shift_count(s, w, templates_->grid().shift_samples());
    std::vector<ShiftOutcome> out;
    if (n == 0) return out;
    const CMat x = window_block(s, 0, n, w, templates_->grid().shift_samples());
    const CMat c = templates_->sample_period() * (kernels_.adjoint() * x);
    const CMat y = bank_.noise().whitener * c;
    const CMat z = dict_.matrix().adjoint() * y;
    tally(ops, &OpCounter::sampling, static_cast<std::uint64_t>(kernels_.size()) * n);
    tally(ops, &OpCounter::recovery,
          (static_cast<std::uint64_t>(bank_.noise().whitener.size()) + dict_.matrix().size()) * n);
    for (int i = 0; i < n; ++i) {
      CmsObservation obs{i, c.col(i), y.col(i)};
      out.push_back(finish(obs, omp_from_correlation(obs.whitened, z.col(i), dict_, templates_->grid(), omp_, ops)));
    }
    return out;
  }

 private:
  ShiftOutcome finish(const CmsObservation& obs, const SparseEstimate& est) const {
    const LogLikelihood lr = likelihood_ratio(obs, est, bank_.channels());
    ShiftOutcome o{obs.shift, lr.value, lr.saturated, {}};
    for (const auto& [j, v] : est.beta.entries()) o.cells.push_back({j, std::norm(v)});
    return o;
  }

  const TemplateBank* templates_;
  SamplerBank bank_;
  CMat kernels_;
  SparseDictionary dict_;
  OmpOptions omp_;
};

// Matched-filter array: statistic max |c|, and per user the `paths`
// strongest cells kept for extraction.
class MfReceiver {
 public:
  MfReceiver(const TemplateBank& templates, int paths) : templates_(&templates), paths_(paths) {
    if (paths < 1) throw std::invalid_argument("need at least one path per user");
  }

  int window_samples() const { return templates_->window_samples(); }
  const TemplateBank& templates() const { return *templates_; }
  double power_floor(double threshold) const { return threshold * threshold; }

  ShiftOutcome evaluate(const CVec& window, int shift, OpCounter* ops = nullptr) const {
    return summarize(mf_sample_flat(window, *templates_, ops), shift, ops);
  }

  std::vector<ShiftOutcome> scan(const SampleStream& s, OpCounter* ops = nullptr) const {
    const int w = window_samples();
    const int n = shift_count(s, w, templates_->grid().shift_samples());
    std::vector<ShiftOutcome> out;
    if (n == 0) return out;
    const CMat x = window_block(s, 0, n, w, templates_->grid().shift_samples());
    const CMat c = templates_->sample_period() * (templates_->matrix().adjoint() * x);
    tally(ops, &OpCounter::sampling, static_cast<std::uint64_t>(templates_->matrix().size()) * n);
    for (int i = 0; i < n; ++i) out.push_back(summarize(c.col(i), i, ops));
    return out;
  }

 private:
  ShiftOutcome summarize(const CVec& c, int shift, OpCounter* ops) const {
    const GridConfig& g = templates_->grid();
    const int per_user = g.doppler_cells() * g.delay_cells;
    ShiftOutcome o{shift, 0.0, false, {}};
    std::vector<CellScore> user_cells(per_user);
    for (int u = 0; u < g.users; ++u) {
      for (int j = 0; j < per_user; ++j) user_cells[j] = {u * per_user + j, std::norm(c(u * per_user + j))};
      const int keep = std::min(paths_, per_user);
      std::partial_sort(user_cells.begin(), user_cells.begin() + keep, user_cells.end(),
                        [](const CellScore& a, const CellScore& b) {
                          return a.power != b.power ? a.power > b.power : a.index < b.index;
                        });
      for (int r = 0; r < keep; ++r) o.cells.push_back(user_cells[r]);
      o.statistic = std::max(o.statistic, std::sqrt(user_cells[0].power));
    }
    tally(ops, &OpCounter::recovery, static_cast<std::uint64_t>(g.size()));
    return o;
  }

  const TemplateBank* templates_;
  int paths_;
};

// Shift-by-shift acquisition that stops once the horizon after the first
// trigger has been observed.
template <class Receiver>
AcquisitionResult acquire(const SampleStream& s, const Receiver& rx, double threshold, int horizon,
                          const ExtractionRule& rule, OpCounter* ops = nullptr) {
  const GridConfig& g = rx.templates().grid();
  const int w = rx.window_samples();
  const int n = shift_count(s, w, g.shift_samples());
  std::vector<ShiftOutcome> trace;
  int stop = n;
  for (int i = 0; i < n && i < stop; ++i) {
    trace.push_back(rx.evaluate(stream_window(s, i, w, g.shift_samples()), i, ops));
    if (stop == n && trace.back().statistic >= threshold) stop = std::min(n, i + horizon + 1);
  }
  return decide(trace, threshold, horizon, g, rule, rx.power_floor(threshold));
}

inline AcquisitionResult sequential_acquire(const SampleStream& s, const CsaReceiver& rx, double threshold,
                                            int horizon, const ExtractionRule& rule, OpCounter* ops = nullptr) {
  return acquire(s, rx, threshold, horizon, rule, ops);
}

inline AcquisitionResult mf_acquire(const SampleStream& s, const MfReceiver& rx, double threshold, int horizon,
                                    const ExtractionRule& rule, OpCounter* ops = nullptr) {
  return acquire(s, rx, threshold, horizon, rule, ops);
}

}  // namespace csa
