#pragma once

#include "csa/core.hpp"

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace csa {

enum class PulseKind { rectangular, raised_cosine };

// Chip pulse sampled on [-Lg*T, (Lg+1)*T) at Ts = T / oversampling, scaled to
// unit energy (sum |g|^2 * Ts == 1). The raised cosine is centred on T/2 so a
// rectangular chip is the Lg = 0 special case of the same support rule.
struct PulseShape {
  PulseKind kind = PulseKind::rectangular;
  double chip_duration = 1.0;
  int truncation = 0;
  int oversampling = 2;
  double rolloff = 0.35;

  double sample_period() const { return chip_duration / oversampling; }

  void validate() const {
    if (!(chip_duration > 0.0)) throw std::invalid_argument("chip duration must be positive");
    if (oversampling < 1) throw std::invalid_argument("oversampling must be >= 1");
    if (truncation < 0) throw std::invalid_argument("pulse truncation must be >= 0");
    if (kind == PulseKind::raised_cosine && (rolloff < 0.0 || rolloff > 1.0))
      throw std::invalid_argument("raised-cosine rolloff must lie in [0, 1]");
  }

  RVec samples() const {
    validate();
    const int n = (2 * truncation + 1) * oversampling;
    const double ts = sample_period();
    RVec g(n);
    for (int m = 0; m < n; ++m) {
      const double t = (m - truncation * oversampling) * ts;
      if (kind == PulseKind::rectangular) {
        g(m) = (t >= 0.0 && t < chip_duration) ? 1.0 : 0.0;
        continue;
      }
      const double x = (t - 0.5 * chip_duration) / chip_duration;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(kPi * x) / (kPi * x);
      const double denom = 1.0 - 4.0 * rolloff * rolloff * x * x;
      g(m) = std::abs(denom) < 1e-10 ? (kPi / 4.0) * sinc : sinc * std::cos(kPi * rolloff * x) / denom;
    }
    const double energy = g.squaredNorm() * ts;
    if (!(energy > 0.0)) throw std::invalid_argument("pulse has no energy on its support");
    return g / std::sqrt(energy);
  }
};

// Fibonacci LFSR: bit (k-1) of `taps` selects exponent k, s[n] = xor_k s[n-k].
// The tap set must contain the degree itself and define a primitive
// polynomial; bit j of `state` seeds s[j]. Bits map to chips as 1 -> +1, 0 -> -1.
inline std::vector<int> gen_msequence(int degree, std::uint32_t taps, std::uint32_t state) {
  if (degree < 2 || degree > 16) throw std::invalid_argument("m-sequence degree must be in [2, 16]");
  const std::uint32_t mask = (1u << degree) - 1u;
  if ((taps & ~mask) != 0 || (taps & (1u << (degree - 1))) == 0)
    throw std::invalid_argument("tap mask must include the degree and no higher exponent");
  if ((state & mask) == 0) throw std::invalid_argument("LFSR initial state must be nonzero");

  const int period = (1 << degree) - 1;
  std::vector<std::uint8_t> s(static_cast<std::size_t>(period + degree));
  for (int j = 0; j < degree; ++j) s[j] = (state >> j) & 1u;
  for (int n = degree; n < period + degree; ++n) {
    std::uint8_t bit = 0;
    for (int k = 1; k <= degree; ++k)
      if (taps & (1u << (k - 1))) bit ^= s[n - k];
    s[n] = bit;
  }
  // A primitive recurrence revisits its seed window only after the full period.
  for (int n = 1; n <= period; ++n) {
    bool same = true;
    for (int j = 0; j < degree && same; ++j) same = s[n + j] == s[j];
    if (same && n < period) throw std::invalid_argument("tap mask is not primitive (short period)");
    if (same) break;
    if (n == period) throw std::invalid_argument("tap mask is not primitive");
  }

  std::vector<int> chips(static_cast<std::size_t>(period));
  for (int n = 0; n < period; ++n) chips[n] = s[n] ? 1 : -1;
  return chips;
}

inline bool is_primitive_taps(int degree, std::uint32_t taps) {
  try {
    gen_msequence(degree, taps, 1u);
    return true;
  } catch (const std::invalid_argument&) {
    return false;
  }
}

// The first `count` primitive tap masks of a degree, in ascending mask order.
inline std::vector<std::uint32_t> primitive_tap_family(int degree, int count) {
  if (degree < 2 || degree > 16) throw std::invalid_argument("m-sequence degree must be in [2, 16]");
  std::vector<std::uint32_t> out;
  const std::uint32_t top = 1u << (degree - 1);
  for (std::uint32_t low = 0; low < top && static_cast<int>(out.size()) < count; ++low) {
    if (is_primitive_taps(degree, top | low)) out.push_back(top | low);
  }
  if (static_cast<int>(out.size()) < count)
    throw std::invalid_argument("not enough primitive polynomials for the requested user count");
  return out;
}

struct Preamble {
  int user = 0;  // 1-based
  std::vector<int> chips;
  CVec samples;  // sample 0 sits at the start of the pulse support
  double sample_period = 0.0;

  int length() const { return static_cast<int>(samples.size()); }
  double energy() const { return samples.squaredNorm() * sample_period; }
};

inline Preamble make_preamble(int user, const std::vector<int>& chips, const PulseShape& pulse) {
  if (chips.empty()) throw std::invalid_argument("preamble needs at least one chip");
  for (int a : chips)
    if (a != 1 && a != -1) throw std::invalid_argument("chips must be +1 or -1");
  const RVec g = pulse.samples();
  const int nu = pulse.oversampling;
  const int m_chips = static_cast<int>(chips.size());
  Preamble p;
  p.user = user;
  p.chips = chips;
  p.sample_period = pulse.sample_period();
  p.samples = CVec::Zero((m_chips + 2 * pulse.truncation) * nu);
  for (int c = 0; c < m_chips; ++c)
    for (int j = 0; j < g.size(); ++j) p.samples(c * nu + j) += static_cast<double>(chips[c]) * g(j);
  return p;
}

// One preamble per user from distinct primitive polynomials of the same degree.
inline std::vector<Preamble> make_preamble_family(int users, int degree, const PulseShape& pulse) {
  std::vector<Preamble> out;
  const auto taps = primitive_tap_family(degree, users);
  for (int i = 0; i < users; ++i) out.push_back(make_preamble(i + 1, gen_msequence(degree, taps[i], 1u), pulse));
  return out;
}

struct ChannelScenario {
  int total_users = 1;
  int active_users = 1;
  int paths = 1;
  int chips = 1;
  double chip_duration = 1.0;
  double multipath_spread = 0.0;  // seconds
  double doppler_max = 0.0;       // rad/s
  double noise_variance = 0.0;

  void validate() const {
    if (total_users < 1 || active_users < 1 || active_users > total_users)
      throw std::invalid_argument("need 1 <= active users <= total users");
    if (paths < 1) throw std::invalid_argument("need at least one path");
    if (chips < 1 || !(chip_duration > 0.0)) throw std::invalid_argument("invalid preamble timing");
    if (multipath_spread < 0.0 || doppler_max < 0.0 || noise_variance < 0.0)
      throw std::invalid_argument("spread, Doppler and noise variance must be nonnegative");
  }
};

struct Path {
  int user = 0;
  cplx gain;
  double delay = 0.0;
  double doppler = 0.0;
};

struct ChannelRealization {
  std::vector<int> active;  // ascending user ids
  std::vector<Path> paths;
  double noise_variance = 0.0;

  double first_arrival() const {
    double t0 = std::numeric_limits<double>::infinity();
    for (const auto& p : paths) t0 = std::min(t0, p.delay);
    return t0;
  }
};

inline ChannelRealization sample_channel(Rng& rng, const ChannelScenario& sc) {
  sc.validate();
  ChannelRealization ch;
  ch.noise_variance = sc.noise_variance;

  std::vector<int> ids(sc.total_users);
  for (int i = 0; i < sc.total_users; ++i) ids[i] = i + 1;
  for (int i = 0; i < sc.active_users; ++i) {
    std::uniform_int_distribution<int> pick(i, sc.total_users - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ch.active.assign(ids.begin(), ids.begin() + sc.active_users);
  std::sort(ch.active.begin(), ch.active.end());

  std::uniform_real_distribution<double> start(0.0, sc.chips * sc.chip_duration);
  const double t_start = start(rng);
  std::uniform_real_distribution<double> spread(0.0, sc.multipath_spread);
  std::uniform_real_distribution<double> doppler(-sc.doppler_max, sc.doppler_max);
  const double gain_var = 1.0 / (sc.active_users * sc.paths);
  for (int user : ch.active) {
    for (int r = 0; r < sc.paths; ++r) {
      Path p;
      p.user = user;
      p.gain = complex_normal(rng, gain_var);
      p.delay = t_start + (sc.multipath_spread > 0.0 ? spread(rng) : 0.0);
      p.doppler = sc.doppler_max > 0.0 ? doppler(rng) : 0.0;
      ch.paths.push_back(p);
    }
  }
  return ch;
}

// Noise variance sigma^2 for which per-sample signal power over per-sample
// noise power (sigma^2 / Ts) equals the SNR, for unit total path power.
inline double noise_variance_for_snr(double snr_db, const PulseShape& pulse) {
  return pulse.sample_period() / (pulse.chip_duration * db_to_linear(snr_db));
}

struct SampleStream {
  CVec samples;
  double sample_period = 0.0;

  int size() const { return static_cast<int>(samples.size()); }
};

inline const Preamble& preamble_for(std::span<const Preamble> preambles, int user) {
  for (const auto& p : preambles)
    if (p.user == user) return p;
  throw std::invalid_argument("no preamble for user " + std::to_string(user));
}

// Delays are realized at the nearest sample; Doppler uses absolute time m*Ts.
inline SampleStream synthesize_received(std::span<const Preamble> preambles, const ChannelRealization& ch,
                                        Rng& rng, int length) {
  if (preambles.empty()) throw std::invalid_argument("no preambles");
  if (length < 1) throw std::invalid_argument("stream length must be positive");
  const double ts = preambles.front().sample_period;
  SampleStream out{CVec::Zero(length), ts};
  for (const auto& path : ch.paths) {
    const Preamble& pre = preamble_for(preambles, path.user);
    if (path.delay < 0.0) throw std::invalid_argument("path delay must be nonnegative");
    const long d = std::lround(path.delay / ts);
    if (d + pre.length() > length) throw std::invalid_argument("path delay places preamble beyond stream end");
    for (int m = 0; m < pre.length(); ++m) {
      const long idx = d + m;
      out.samples(idx) += path.gain * pre.samples(m) * std::exp(kI * (path.doppler * idx * ts));
    }
  }
  if (ch.noise_variance > 0.0) {
    const double var = ch.noise_variance / ts;
    for (int m = 0; m < length; ++m) out.samples(m) += complex_normal(rng, var);
  }
  return out;
}

// Window n covers samples [n*step, n*step + width).
inline CVec stream_window(const SampleStream& s, int n, int width, int step) {
  if (n < 0 || width < 1 || step < 1) throw std::out_of_range("invalid window request");
  const long start = static_cast<long>(n) * step;
  if (start + width > s.size()) throw std::out_of_range("window runs past the end of the stream");
  return s.samples.segment(start, width);
}

}  // namespace csa
