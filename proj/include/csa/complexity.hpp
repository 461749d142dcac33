#pragma once

#include "csa/harness.hpp"

#include <vector>

namespace csa {

// Closed-form per-shift digital cost of each receiver.
inline double csa_cost_formula(double chips, double channels, double grid) {
  return chips * channels + grid + channels * channels * channels;
}
inline double mf_cost_formula(double chips, double grid) { return chips * grid; }
inline double cost_ratio_formula(double chips, double channels, double grid) {
  return csa_cost_formula(chips, channels, grid) / mf_cost_formula(chips, grid);
}

struct ComplexityRow {
  int chips = 0;
  int channels = 0;
  int grid = 0;
  double formula_csa = 0.0;
  double formula_mf = 0.0;
  double measured_csa = 0.0;  // MACs per shift
  double measured_mf = 0.0;
  double measured_sampling_csa = 0.0;
  double measured_recovery_csa = 0.0;

  double formula_ratio() const { return formula_csa / formula_mf; }
  double measured_ratio() const { return measured_csa / measured_mf; }
};

// Instrumented scan of one signal-bearing stream per (M, P) point. The bank
// is Gaussian so no eigendecomposition of M is needed at large M; the counted
// stages are the same for every non-identity bank.
inline std::vector<ComplexityRow> complexity_report(const ScenarioConfig& base, const std::vector<int>& degrees,
                                                    const std::vector<int>& channels, double snr_db = 0.0,
                                                    std::uint64_t seed = 1) {
  std::vector<ComplexityRow> rows;
  for (int degree : degrees) {
    ScenarioConfig sc = base;
    sc.sequence_degree = degree;
    const GridConfig grid = sc.grid();
    const TemplateBank templates(make_preamble_family(sc.users, degree, sc.pulse), grid);
    const GramMatrix gram(templates, false);

    const int length = (stream_shifts(sc, grid, default_horizon(templates)) - 1) * grid.shift_samples() +
                       templates.window_samples();
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(degree), 0));
    const double sigma2 = noise_variance_for_snr(snr_db, sc.pulse);
    const ChannelRealization ch = sample_channel(rng, sc.channel(sigma2));
    const SampleStream stream = synthesize_received(templates.preambles(), ch, rng, length);

    OpCounter mf_ops;
    const auto mf_trace = MfReceiver(templates, sc.paths).scan(stream, &mf_ops);
    const double shifts = static_cast<double>(mf_trace.size());

    OmpOptions omp;
    omp.max_atoms = sc.active_users * sc.paths;
    for (int p : channels) {
      Rng bank_rng(derive_seed(seed, static_cast<std::uint64_t>(degree), static_cast<std::uint64_t>(p)));
      const CsaReceiver rx(templates, gram, random_B(SamplerKind::gaussian, p, gram, bank_rng), omp);
      OpCounter ops;
      (void)rx.scan(stream, &ops);
      ComplexityRow r;
      r.chips = sc.chips();
      r.channels = p;
      r.grid = grid.size();
      r.formula_csa = csa_cost_formula(r.chips, p, r.grid);
      r.formula_mf = mf_cost_formula(r.chips, r.grid);
      r.measured_csa = static_cast<double>(ops.total()) / shifts;
      r.measured_sampling_csa = static_cast<double>(ops.sampling) / shifts;
      r.measured_recovery_csa = static_cast<double>(ops.recovery) / shifts;
      r.measured_mf = static_cast<double>(mf_ops.total()) / shifts;
      rows.push_back(r);
    }
  }
  return rows;
}

}  // namespace csa
