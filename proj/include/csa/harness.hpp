#pragma once

#include "csa/core.hpp"
#include "csa/dictionary.hpp"
#include "csa/receivers.hpp"
#include "csa/samplers.hpp"
#include "csa/waveforms.hpp"

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace csa {

// Physical scenario in chip units (T = chip duration).
struct ScenarioConfig {
  int users = 10;
  int active_users = 4;
  int paths = 2;
  int sequence_degree = 8;
  PulseShape pulse;
  double multipath_spread_chips = 4.0;
  double doppler_max_cycles_per_chip = 2.5e-3;
  int doppler_half_width = 5;
  double delay_step_chips = 0.5;
  double shift_chips = 10.0;

  int chips() const { return (1 << sequence_degree) - 1; }
  double chip_duration() const { return pulse.chip_duration; }
  double doppler_max() const { return 2.0 * kPi * doppler_max_cycles_per_chip / pulse.chip_duration; }

  GridConfig grid() const {
    pulse.validate();
    const double ts = pulse.sample_period();
    const double step_samples = delay_step_chips * pulse.chip_duration / ts;
    if (std::abs(step_samples - std::round(step_samples)) > 1e-9 || std::round(step_samples) < 1)
      throw std::invalid_argument("delay step must be a positive multiple of the sample period");
    const double cells = shift_chips / delay_step_chips;
    if (std::abs(cells - std::round(cells)) > 1e-9 || std::round(cells) < 1)
      throw std::invalid_argument("shift must be a positive multiple of the delay step");
    GridConfig g;
    g.users = users;
    g.doppler_half_width = doppler_half_width;
    g.delay_step_samples = static_cast<int>(std::lround(step_samples));
    g.shift_cells = static_cast<int>(std::lround(cells));
    g.sample_period = ts;
    g.delay_cells = static_cast<int>(std::ceil((shift_chips + multipath_spread_chips) / delay_step_chips - 1e-9));
    g.doppler_step = doppler_half_width > 0 ? doppler_max() / doppler_half_width : 0.0;
    g.validate();
    return g;
  }

  ChannelScenario channel(double noise_variance) const {
    ChannelScenario c;
    c.total_users = users;
    c.active_users = active_users;
    c.paths = paths;
    c.chips = chips();
    c.chip_duration = pulse.chip_duration;
    c.multipath_spread = multipath_spread_chips * pulse.chip_duration;
    c.doppler_max = doppler_max();
    c.noise_variance = noise_variance;
    return c;
  }
};

// Shifts per simulated stream: every start time in [0, M T) plus a full
// post-trigger horizon.
inline int stream_shifts(const ScenarioConfig& sc, const GridConfig& grid, int horizon) {
  const double preamble_span = sc.chips() * sc.chip_duration();
  return static_cast<int>(std::ceil(preamble_span / grid.shift_duration() - 1e-9)) + horizon + 1;
}

enum class ReceiverKind { mf, csa, dsa };

inline std::string to_string(ReceiverKind k) {
  switch (k) {
    case ReceiverKind::mf: return "mf";
    case ReceiverKind::csa: return "csa";
    case ReceiverKind::dsa: return "dsa";
  }
  return "unknown";
}

inline ReceiverKind receiver_kind_from_string(const std::string& s) {
  for (auto k : {ReceiverKind::mf, ReceiverKind::csa, ReceiverKind::dsa})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown receiver kind '" + s + "'");
}

struct ReceiverSpec {
  std::string name;
  ReceiverKind kind = ReceiverKind::mf;
  SamplerKind sampler = SamplerKind::kl_optimal;
  int channels = 0;
  std::uint64_t seed = 0;
};

inline std::string to_string(ExtractionMode m) {
  switch (m) {
    case ExtractionMode::unknown: return "unknown";
    case ExtractionMode::partial: return "partial";
    case ExtractionMode::known: return "known";
  }
  return "unknown";
}

inline ExtractionMode extraction_mode_from_string(const std::string& s) {
  for (auto m : {ExtractionMode::unknown, ExtractionMode::partial, ExtractionMode::known})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown extraction mode '" + s + "'");
}

struct ExperimentConfig {
  ScenarioConfig scenario;
  ExtractionMode extraction = ExtractionMode::unknown;
  double relative_threshold = 1.0 / 3.0;
  int max_atoms = 0;  // 0: active users * paths
  int horizon = 0;    // 0: ceil(W / N)
  std::vector<ReceiverSpec> receivers;
  std::vector<double> snr_db{-8.0};
  int trials = 200;  // per class (signal and noise-only)
  std::uint64_t seed = 1;
  double target_pf = 0.1;
  int threads = 0;  // 0: hardware concurrency
  std::string output_dir = "out";
};

// Everything shared across trials: templates, Gram, receivers. Heap-held
// pieces keep the receivers' template pointers valid if the context moves.
class ExperimentContext {
 public:
  explicit ExperimentContext(ExperimentConfig cfg, std::shared_ptr<const GramMatrix> gram = nullptr)
      : cfg_(std::move(cfg)), grid_(cfg_.scenario.grid()) {
    if (!grid_.covers(cfg_.scenario.multipath_spread_chips * cfg_.scenario.chip_duration()))
      throw std::invalid_argument("delay grid does not cover D + multipath spread");
    if (cfg_.receivers.empty()) throw std::invalid_argument("no receivers configured");
    templates_ = std::make_unique<TemplateBank>(
        make_preamble_family(cfg_.scenario.users, cfg_.scenario.sequence_degree, cfg_.scenario.pulse), grid_);
    horizon_ = cfg_.horizon > 0 ? cfg_.horizon : default_horizon(*templates_);
    shifts_ = stream_shifts(cfg_.scenario, grid_, horizon_);
    stream_length_ = (shifts_ - 1) * grid_.shift_samples() + templates_->window_samples();

    bool need_gram = false;
    for (const auto& r : cfg_.receivers) need_gram |= r.kind != ReceiverKind::mf;
    if (need_gram) gram_ = gram ? std::move(gram) : std::make_shared<GramMatrix>(*templates_);
    if (gram_ && gram_->size() != grid_.size()) throw std::invalid_argument("cached Gram does not match the grid");

    OmpOptions omp;
    omp.max_atoms = cfg_.max_atoms > 0 ? cfg_.max_atoms : cfg_.scenario.active_users * cfg_.scenario.paths;
    for (const auto& spec : cfg_.receivers) {
      Unit u{spec, nullptr, nullptr};
      switch (spec.kind) {
        case ReceiverKind::mf:
          u.mf = std::make_unique<MfReceiver>(*templates_, cfg_.scenario.paths);
          break;
        case ReceiverKind::dsa:
          u.csa = std::make_unique<CsaReceiver>(*templates_, *gram_, identity_B(*gram_), omp);
          break;
        case ReceiverKind::csa: {
          if (spec.channels < 1) throw std::invalid_argument("receiver '" + spec.name + "' needs channels >= 1");
          if (spec.sampler == SamplerKind::kl_optimal) {
            u.csa = std::make_unique<CsaReceiver>(*templates_, *gram_, kl_optimal_B(*gram_, spec.channels, spec.seed, false), omp);
          } else if (spec.sampler == SamplerKind::identity) {
            u.csa = std::make_unique<CsaReceiver>(*templates_, *gram_, identity_B(*gram_), omp);
          } else {
            Rng rng(spec.seed);
            u.csa = std::make_unique<CsaReceiver>(*templates_, *gram_, random_B(spec.sampler, spec.channels, *gram_, rng), omp);
          }
          break;
        }
      }
      units_.push_back(std::move(u));
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  const GridConfig& grid() const { return grid_; }
  const TemplateBank& templates() const { return *templates_; }
  const GramMatrix* gram() const { return gram_.get(); }
  std::shared_ptr<const GramMatrix> shared_gram() const { return gram_; }
  int horizon() const { return horizon_; }
  int shifts() const { return shifts_; }
  int stream_length() const { return stream_length_; }
  int receiver_count() const { return static_cast<int>(units_.size()); }
  const ReceiverSpec& receiver_spec(int i) const { return units_.at(i).spec; }
  const CsaReceiver* csa(int i) const { return units_.at(i).csa.get(); }
  const MfReceiver* mf(int i) const { return units_.at(i).mf.get(); }

  int receiver_index(const std::string& name) const {
    for (int i = 0; i < receiver_count(); ++i)
      if (units_[i].spec.name == name) return i;
    throw std::invalid_argument("no receiver named '" + name + "'");
  }

  double noise_variance(double snr_db) const { return noise_variance_for_snr(snr_db, cfg_.scenario.pulse); }

  ExtractionRule extraction_rule() const {
    ExtractionRule r;
    r.mode = cfg_.extraction;
    r.paths = cfg_.scenario.paths;
    r.active_users = cfg_.scenario.active_users;
    r.relative_threshold = cfg_.relative_threshold;
    return r;
  }

 private:
  struct Unit {
    ReceiverSpec spec;
    std::unique_ptr<MfReceiver> mf;
    std::unique_ptr<CsaReceiver> csa;
  };

  ExperimentConfig cfg_;
  GridConfig grid_;
  std::unique_ptr<TemplateBank> templates_;
  std::shared_ptr<const GramMatrix> gram_;
  std::vector<Unit> units_;
  int horizon_ = 0;
  int shifts_ = 0;
  int stream_length_ = 0;
};

struct ReceiverTrace {
  std::string name;
  std::vector<ShiftOutcome> shifts;
  double peak = 0.0;  // max statistic over the stream
  OpCounter ops;
  double seconds = 0.0;  // wall time, not part of the deterministic record
};

struct TrialRecord {
  std::uint64_t seed = 0;
  bool signal_present = false;
  double snr_db = 0.0;
  ChannelRealization channel;
  std::optional<GroundTruth> truth;
  std::vector<ReceiverTrace> traces;
  std::string error;  // nonempty: trial failed and is excluded from metrics
};

// Deterministic parts of two records agree bit for bit.
inline bool same_outcome(const TrialRecord& a, const TrialRecord& b) {
  if (a.seed != b.seed || a.signal_present != b.signal_present || a.snr_db != b.snr_db || a.error != b.error) return false;
  if (a.channel.active != b.channel.active || a.channel.paths.size() != b.channel.paths.size()) return false;
  for (std::size_t i = 0; i < a.channel.paths.size(); ++i) {
    const Path& p = a.channel.paths[i];
    const Path& q = b.channel.paths[i];
    if (p.user != q.user || p.gain != q.gain || p.delay != q.delay || p.doppler != q.doppler) return false;
  }
  if (a.traces.size() != b.traces.size()) return false;
  for (std::size_t r = 0; r < a.traces.size(); ++r) {
    const auto& x = a.traces[r];
    const auto& y = b.traces[r];
    if (x.name != y.name || x.peak != y.peak || x.shifts.size() != y.shifts.size() || x.ops.total() != y.ops.total())
      return false;
    for (std::size_t s = 0; s < x.shifts.size(); ++s) {
      if (x.shifts[s].statistic != y.shifts[s].statistic || x.shifts[s].cells.size() != y.shifts[s].cells.size())
        return false;
      for (std::size_t c = 0; c < x.shifts[s].cells.size(); ++c)
        if (x.shifts[s].cells[c].index != y.shifts[s].cells[c].index ||
            x.shifts[s].cells[c].power != y.shifts[s].cells[c].power)
          return false;
    }
  }
  return true;
}

// One stream, every configured receiver. Never throws: failures land in
// `error`.
inline TrialRecord run_trial(const ExperimentContext& ctx, std::uint64_t seed, bool signal_present, double snr_db) {
  TrialRecord rec;
  rec.seed = seed;
  rec.signal_present = signal_present;
  rec.snr_db = snr_db;
  try {
    if (!std::isfinite(snr_db)) throw std::invalid_argument("SNR must be finite");
    Rng rng(seed);
    const double sigma2 = ctx.noise_variance(snr_db);
    if (signal_present) {
      rec.channel = sample_channel(rng, ctx.config().scenario.channel(sigma2));
      const GridConfig& g = ctx.grid();
      rec.truth = ground_truth_link_vector(rec.channel, g, reference_shift(rec.channel, g));
    } else {
      rec.channel.noise_variance = sigma2;
    }
    const SampleStream stream =
        synthesize_received(ctx.templates().preambles(), rec.channel, rng, ctx.stream_length());
    for (int r = 0; r < ctx.receiver_count(); ++r) {
      ReceiverTrace tr;
      tr.name = ctx.receiver_spec(r).name;
      const auto t0 = std::chrono::steady_clock::now();
      tr.shifts = ctx.csa(r) ? ctx.csa(r)->scan(stream, &tr.ops) : ctx.mf(r)->scan(stream, &tr.ops);
      tr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      for (const auto& s : tr.shifts) tr.peak = std::max(tr.peak, s.statistic);
      rec.traces.push_back(std::move(tr));
    }
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  return rec;
}

inline void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::jthread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) body(i);
    });
}

// Signal and noise-only trials interleaved 1:1; seeds depend only on
// (master seed, SNR slot, trial index), never on thread scheduling.
inline std::vector<TrialRecord> run_trials(const ExperimentContext& ctx, double snr_db, int snr_slot,
                                           int trials_per_class, std::uint64_t master_seed, int threads = 0) {
  if (trials_per_class < 1) throw std::invalid_argument("need at least one trial per class");
  std::vector<TrialRecord> out(static_cast<std::size_t>(2 * trials_per_class));
  parallel_for(2 * trials_per_class, threads, [&](int t) {
    out[t] = run_trial(ctx, derive_seed(master_seed, static_cast<std::uint64_t>(snr_slot), t), t % 2 == 0, snr_db);
  });
  return out;
}

struct Threshold {
  double value = 0.0;
  bool extrapolated = false;
  double false_alarm_rate = 0.0;  // achieved on the calibration set
};

// Smallest threshold whose empirical false-alarm rate is at most `pf`.
inline Threshold calibrate_threshold(std::vector<double> noise_stats, double pf) {
  if (pf < 0.0 || pf > 1.0) throw std::invalid_argument("target false-alarm rate must lie in [0, 1]");
  if (noise_stats.size() < 100) throw std::invalid_argument("need at least 100 noise-only trials to calibrate");
  std::sort(noise_stats.begin(), noise_stats.end());
  const std::size_t n = noise_stats.size();
  const auto allowed = static_cast<std::size_t>(std::floor(pf * n + 1e-9));
  Threshold t;
  if (allowed == 0) {
    t.value = std::nextafter(noise_stats.back(), std::numeric_limits<double>::infinity());
    t.extrapolated = true;
    return t;
  }
  std::size_t idx = n - allowed;
  // Ties at the cut would push the rate above target; move up past them.
  while (idx > 0 && idx < n && noise_stats[idx - 1] == noise_stats[idx]) ++idx;
  if (idx >= n) {
    t.value = std::nextafter(noise_stats.back(), std::numeric_limits<double>::infinity());
    t.extrapolated = true;
    return t;
  }
  t.value = noise_stats[idx];
  t.false_alarm_rate = static_cast<double>(n - idx) / n;
  return t;
}

inline double detection_rate(const std::vector<double>& stats, double threshold) {
  if (stats.empty()) return 0.0;
  return static_cast<double>(std::count_if(stats.begin(), stats.end(), [&](double s) { return s >= threshold; })) /
         stats.size();
}

struct RocPoint {
  double threshold = 0.0;
  double pf = 0.0;
  double pd = 0.0;

  bool operator==(const RocPoint&) const = default;
};

// Empirical ROC over every observed statistic, from (0, 0) to (1, 1).
inline std::vector<RocPoint> roc_curve(std::vector<double> signal, std::vector<double> noise) {
  if (signal.empty() || noise.empty()) throw std::invalid_argument("ROC needs both signal and noise-only statistics");
  std::sort(signal.begin(), signal.end(), std::greater<>());
  std::sort(noise.begin(), noise.end(), std::greater<>());
  std::vector<double> cuts(signal);
  cuts.insert(cuts.end(), noise.begin(), noise.end());
  std::sort(cuts.begin(), cuts.end(), std::greater<>());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t is = 0, in = 0;
  for (double c : cuts) {
    while (is < signal.size() && signal[is] >= c) ++is;
    while (in < noise.size() && noise[in] >= c) ++in;
    out.push_back({c, static_cast<double>(in) / noise.size(), static_cast<double>(is) / signal.size()});
  }
  if (out.back().pf < 1.0 || out.back().pd < 1.0) out.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
  return out;
}

// Running maximum of P_d along increasing P_f.
inline std::vector<RocPoint> monotone_envelope(std::vector<RocPoint> roc) {
  std::stable_sort(roc.begin(), roc.end(), [](const RocPoint& a, const RocPoint& b) { return a.pf < b.pf; });
  double best = 0.0;
  for (auto& p : roc) {
    best = std::max(best, p.pd);
    p.pd = best;
  }
  return roc;
}

inline std::vector<double> peak_statistics(const std::vector<TrialRecord>& recs, int receiver, bool signal_present) {
  std::vector<double> out;
  for (const auto& r : recs)
    if (r.error.empty() && r.signal_present == signal_present) out.push_back(r.traces.at(receiver).peak);
  return out;
}

inline ExtractionRule rule_for(const ExperimentContext& ctx, const TrialRecord& rec) {
  ExtractionRule rule = ctx.extraction_rule();
  if (rule.mode == ExtractionMode::known) rule.known_users = rec.channel.active;
  return rule;
}

inline AcquisitionResult decide_trial(const ExperimentContext& ctx, const TrialRecord& rec, int receiver,
                                      double threshold) {
  const double floor = ctx.mf(receiver) ? ctx.mf(receiver)->power_floor(threshold) : 0.0;
  return decide(rec.traces.at(receiver).shifts, threshold, ctx.horizon(), ctx.grid(), rule_for(ctx, rec), floor);
}

// Fraction of signal trials whose detected user set equals the active set.
inline double identification_rate(const ExperimentContext& ctx, const std::vector<TrialRecord>& recs, int receiver,
                                  double threshold) {
  int n = 0, hit = 0;
  for (const auto& r : recs) {
    if (!r.error.empty() || !r.signal_present) continue;
    ++n;
    const AcquisitionResult a = decide_trial(ctx, r, receiver, threshold);
    if (a.components.users == r.channel.active) ++hit;
  }
  return n ? static_cast<double>(hit) / n : 0.0;
}

struct RmseResult {
  double delay = 0.0;
  double doppler = 0.0;
  int trials = 0;
};

// Per trial, each identified active user's true paths and estimated cells are
// sorted by delay and paired; a user with fewer estimates than paths reuses
// its strongest one. Trials with merged cells are skipped.
inline std::optional<RmseResult> rmse(const ExperimentContext& ctx, const std::vector<TrialRecord>& recs, int receiver,
                                      double threshold) {
  double sum_t = 0.0, sum_w = 0.0;
  int trials = 0;
  for (const auto& r : recs) {
    if (!r.error.empty() || !r.signal_present || (r.truth && r.truth->collision)) continue;
    const AcquisitionResult a = decide_trial(ctx, r, receiver, threshold);
    if (!a.detected) continue;
    double et = 0.0, ew = 0.0;
    int pairs = 0;
    for (int u : a.components.users) {
      if (!std::binary_search(r.channel.active.begin(), r.channel.active.end(), u)) continue;
      std::vector<PathEstimate> est;
      for (const auto& e : a.estimates)
        if (e.user == u) est.push_back(e);
      if (est.empty()) continue;
      std::vector<Path> truth;
      for (const auto& p : r.channel.paths)
        if (p.user == u) truth.push_back(p);
      while (est.size() < truth.size()) est.push_back(est.front());
      est.resize(truth.size());
      std::sort(truth.begin(), truth.end(), [](const Path& x, const Path& y) { return x.delay < y.delay; });
      std::sort(est.begin(), est.end(), [](const PathEstimate& x, const PathEstimate& y) { return x.delay < y.delay; });
      for (std::size_t k = 0; k < truth.size(); ++k) {
        et += std::pow(est[k].delay - truth[k].delay, 2);
        ew += std::pow(est[k].doppler - truth[k].doppler, 2);
        ++pairs;
      }
    }
    if (pairs == 0) continue;
    sum_t += et / pairs;
    sum_w += ew / pairs;
    ++trials;
  }
  if (trials == 0) return std::nullopt;
  return RmseResult{std::sqrt(sum_t / trials), std::sqrt(sum_w / trials), trials};
}

struct OperatingPoint {
  double pf = 0.0;
  double pd = 0.0;

  bool operator==(const OperatingPoint&) const = default;
};

struct ReceiverMetrics {
  std::string receiver;
  double snr_db = 0.0;
  double threshold = 0.0;
  bool threshold_extrapolated = false;
  double pd = 0.0;
  double pf = 0.0;
  double identification = 0.0;
  std::optional<double> rmse_delay;
  std::optional<double> rmse_doppler;
  int signal_trials = 0;
  int noise_trials = 0;
  int failed_trials = 0;
  double seconds_per_trial = 0.0;
  double ops_per_shift = 0.0;
  std::vector<OperatingPoint> roc;

  bool operator==(const ReceiverMetrics&) const = default;
};

using MetricsTable = std::vector<ReceiverMetrics>;

inline ReceiverMetrics compute_metrics(const ExperimentContext& ctx, const std::vector<TrialRecord>& recs, int receiver,
                                       double snr_db) {
  ReceiverMetrics m;
  m.receiver = ctx.receiver_spec(receiver).name;
  m.snr_db = snr_db;
  const auto sig = peak_statistics(recs, receiver, true);
  const auto noise = peak_statistics(recs, receiver, false);
  m.signal_trials = static_cast<int>(sig.size());
  m.noise_trials = static_cast<int>(noise.size());
  double secs = 0.0, ops = 0.0, shifts = 0.0;
  for (const auto& r : recs) {
    if (!r.error.empty()) {
      ++m.failed_trials;
      continue;
    }
    secs += r.traces[receiver].seconds;
    ops += static_cast<double>(r.traces[receiver].ops.total());
    shifts += static_cast<double>(r.traces[receiver].shifts.size());
  }
  const int ok = m.signal_trials + m.noise_trials;
  m.seconds_per_trial = ok ? secs / ok : 0.0;
  m.ops_per_shift = shifts > 0 ? ops / shifts : 0.0;
  const Threshold th = calibrate_threshold(noise, ctx.config().target_pf);
  m.threshold = th.value;
  m.threshold_extrapolated = th.extrapolated;
  m.pf = detection_rate(noise, th.value);
  m.pd = detection_rate(sig, th.value);
  m.identification = identification_rate(ctx, recs, receiver, th.value);
  if (auto e = rmse(ctx, recs, receiver, th.value)) {
    m.rmse_delay = e->delay;
    m.rmse_doppler = e->doppler;
  }
  for (const auto& p : roc_curve(sig, noise)) m.roc.push_back({p.pf, p.pd});
  return m;
}

}  // namespace csa
