// Command-line driver: design, acquire, sweep, bench, calibrate.
#include "csa/cache.hpp"
#include "csa/complexity.hpp"
#include "csa/config.hpp"
#include "csa/harness.hpp"
#include "csa/report.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace csa;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> trials;
  std::string receivers;
  std::vector<double> snr;
  std::string cache_dir;
  int threads = -1;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON experiment config")->required()->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "master seed (overrides the config)");
  app->add_option("--out", c.out, "output directory (overrides the config)");
  app->add_option("--trials", c.trials, "trials per class (overrides the config)")->check(CLI::PositiveNumber);
  app->add_option("--receivers", c.receivers, "comma-separated receiver names to keep");
  app->add_option("--snr", c.snr, "SNR list in dB (overrides the config)")->delimiter(',');
  app->add_option("--cache", c.cache_dir, "directory for the Gram/bank binary cache");
  app->add_option("--threads", c.threads, "worker threads (0 = all cores)");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.trials) cfg.trials = *c.trials;
  if (!c.snr.empty()) cfg.snr_db = c.snr;
  if (c.threads >= 0) cfg.threads = c.threads;
  if (!c.receivers.empty()) {
    std::vector<ReceiverSpec> keep;
    std::stringstream ss(c.receivers);
    std::string name;
    while (std::getline(ss, name, ',')) {
      auto it = std::find_if(cfg.receivers.begin(), cfg.receivers.end(), [&](const auto& r) { return r.name == name; });
      if (it == cfg.receivers.end()) throw std::invalid_argument("no receiver named '" + name + "' in the config");
      keep.push_back(*it);
    }
    cfg.receivers = keep;
  }
  validate(cfg);
  return cfg;
}

bool needs_gram(const ExperimentConfig& cfg) {
  return std::any_of(cfg.receivers.begin(), cfg.receivers.end(), [](const auto& r) { return r.kind != ReceiverKind::mf; });
}

// Loads M from the cache when possible, otherwise builds it (and stores it).
std::shared_ptr<const GramMatrix> gram_for(const ExperimentConfig& cfg, const std::string& cache_dir) {
  if (!needs_gram(cfg)) return nullptr;
  const TemplateBank templates(make_preamble_family(cfg.scenario.users, cfg.scenario.sequence_degree, cfg.scenario.pulse),
                               cfg.scenario.grid());
  const std::uint64_t key = content_key(templates);
  char name[40];
  std::snprintf(name, sizeof name, "gram-%016llx.bin", static_cast<unsigned long long>(key));
  if (!cache_dir.empty()) {
    if (auto g = load_gram(fs::path(cache_dir) / name, key)) {
      std::cerr << "loaded Gram matrix from cache " << (fs::path(cache_dir) / name).string() << "\n";
      return std::make_shared<GramMatrix>(std::move(*g));
    }
  }
  auto g = std::make_shared<GramMatrix>(templates);
  if (!cache_dir.empty()) save_gram(fs::path(cache_dir) / name, *g, key);
  return g;
}

// Console output; the CSV files keep full precision.
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int run_design(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  const std::string cache = c.cache_dir.empty() ? (fs::path(cfg.output_dir) / "cache").string() : c.cache_dir;
  const auto gram = gram_for(cfg, cache);
  if (!gram) {
    std::cout << "no compressive receivers configured; nothing to design\n";
    return 0;
  }
  const ExperimentContext ctx(cfg, gram);
  const std::uint64_t key = content_key(ctx.templates());
  std::cout << "grid " << ctx.grid().size() << " cells, window " << ctx.templates().window_samples()
            << " samples, rank(M) " << gram->rank() << "\n";

  std::vector<KlComparison> kl;
  for (int i = 0; i < ctx.receiver_count(); ++i) {
    const CsaReceiver* rx = ctx.csa(i);
    if (!rx) continue;
    const auto& spec = ctx.receiver_spec(i);
    const SamplerBank& bank = rx->bank();
    const double avg = spec.kind == ReceiverKind::dsa || bank.kind() == SamplerKind::identity
                           ? gram->eigenvalues().sum()
                           : avg_kl(bank.matrix(), gram->matrix()).average_kl;
    kl.push_back({spec.name, bank.kind(), bank.channels(), avg});
    if (bank.kind() != SamplerKind::identity) {
      const std::uint64_t bk = bank_key(key, bank.channels(), bank.kind(), spec.seed);
      char name[48];
      std::snprintf(name, sizeof name, "bank-%016llx.bin", static_cast<unsigned long long>(bk));
      save_bank(fs::path(cache) / name, bank, bk);
    }
    std::cout << spec.name << ": " << to_string(bank.kind()) << " P=" << bank.channels() << " avg_kl=" << fmt(avg)
              << (bank.rank_truncated() ? " (pseudo-inverse whitening)" : "") << "\n";
  }
  emit_results({}, cfg.output_dir, kl);
  write_manifest(cfg.output_dir, cfg, "design", {{"gram_key", key}, {"cache_dir", cache}});
  return 0;
}

std::vector<Threshold> calibrate_all(const ExperimentContext& ctx, double snr, int slot) {
  const auto recs = run_trials(ctx, snr, slot, ctx.config().trials, ctx.config().seed, ctx.config().threads);
  std::vector<Threshold> out;
  for (int r = 0; r < ctx.receiver_count(); ++r)
    out.push_back(calibrate_threshold(peak_statistics(recs, r, false), ctx.config().target_pf));
  return out;
}

int run_calibrate(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const ExperimentContext ctx(cfg, gram_for(cfg, c.cache_dir));
  fs::create_directories(cfg.output_dir);
  detail::CsvFile out(fs::path(cfg.output_dir) / "thresholds.csv", "receiver,snr_db,target_pf,threshold,achieved_pf,extrapolated");
  for (std::size_t s = 0; s < cfg.snr_db.size(); ++s) {
    const auto th = calibrate_all(ctx, cfg.snr_db[s], static_cast<int>(s));
    for (int r = 0; r < ctx.receiver_count(); ++r) {
      out.row({ctx.receiver_spec(r).name, format_double(cfg.snr_db[s]), format_double(cfg.target_pf),
               format_double(th[r].value), format_double(th[r].false_alarm_rate), th[r].extrapolated ? "1" : "0"});
      std::cout << ctx.receiver_spec(r).name << " @ " << cfg.snr_db[s] << " dB: threshold " << format_double(th[r].value)
                << (th[r].extrapolated ? " (extrapolated)" : "") << "\n";
    }
  }
  out.close();
  write_manifest(cfg.output_dir, cfg, "calibrate");
  return 0;
}

int run_acquire(const Common& c, const std::vector<double>& thresholds, std::uint64_t trial) {
  ExperimentConfig cfg = resolve(c);
  const ExperimentContext ctx(cfg, gram_for(cfg, c.cache_dir));
  const double snr = cfg.snr_db.front();
  std::vector<double> th = thresholds;
  if (th.empty())
    for (const auto& t : calibrate_all(ctx, snr, 1)) th.push_back(t.value);
  if (static_cast<int>(th.size()) != ctx.receiver_count())
    throw std::invalid_argument("need one threshold per receiver");

  const std::uint64_t seed = derive_seed(cfg.seed, 0, 2 * trial);
  const TrialRecord rec = run_trial(ctx, seed, true, snr);
  if (!rec.error.empty()) throw std::runtime_error("trial failed: " + rec.error);

  std::cout << "active users:";
  for (int u : rec.channel.active) std::cout << ' ' << u;
  std::cout << "\nreference shift " << rec.truth->reference_shift << "\n";
  for (const auto& p : rec.channel.paths)
    std::cout << "  user " << p.user << " delay " << fmt(p.delay) << " doppler " << fmt(p.doppler) << " |h|^2 "
              << fmt(std::norm(p.gain)) << "\n";

  fs::create_directories(cfg.output_dir);
  detail::CsvFile trace(fs::path(cfg.output_dir) / "trace.csv", "receiver,shift,statistic,saturated");
  for (int r = 0; r < ctx.receiver_count(); ++r) {
    for (const auto& s : rec.traces[r].shifts)
      trace.row({rec.traces[r].name, std::to_string(s.shift), format_double(s.statistic), s.saturated ? "1" : "0"});
    const AcquisitionResult a = decide_trial(ctx, rec, r, th[r]);
    std::cout << rec.traces[r].name << ": threshold " << fmt(th[r]) << ", ";
    if (!a.detected) {
      std::cout << "no detection\n";
      continue;
    }
    std::cout << "trigger at shift " << a.first_trigger << ", MLR shift " << a.mlr_shift
              << (a.truncated ? " (horizon truncated)" : "") << ", users";
    for (int u : a.components.users) std::cout << ' ' << u;
    std::cout << "\n";
    for (const auto& e : a.estimates)
      std::cout << "  user " << e.user << " delay " << fmt(e.delay) << " doppler " << fmt(e.doppler) << "\n";
  }
  trace.close();
  write_manifest(cfg.output_dir, cfg, "acquire", {{"trial_seed", seed}});
  return 0;
}

int run_sweep(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const ExperimentContext ctx(cfg, gram_for(cfg, c.cache_dir));
  MetricsTable table;
  for (std::size_t s = 0; s < cfg.snr_db.size(); ++s) {
    const auto recs = run_trials(ctx, cfg.snr_db[s], static_cast<int>(s), cfg.trials, cfg.seed, cfg.threads);
    for (int r = 0; r < ctx.receiver_count(); ++r) {
      table.push_back(compute_metrics(ctx, recs, r, cfg.snr_db[s]));
      const auto& m = table.back();
      std::cout << m.receiver << " @ " << m.snr_db << " dB: Pd " << fmt(m.pd) << " Pf " << fmt(m.pf) << " P(I) "
                << fmt(m.identification);
      if (m.rmse_delay)
        std::cout << " RMSE(tau)/dtau " << fmt(*m.rmse_delay / ctx.grid().delay_step());
      if (m.rmse_doppler && ctx.grid().doppler_step > 0)
        std::cout << " RMSE(w)/dw " << fmt(*m.rmse_doppler / ctx.grid().doppler_step);
      if (m.failed_trials) std::cout << " failed " << m.failed_trials;
      std::cout << "\n";
    }
  }
  emit_results(table, cfg.output_dir);
  write_manifest(cfg.output_dir, cfg, "sweep");
  return 0;
}

int run_bench(const Common& c, const std::vector<int>& degrees, const std::vector<int>& channels) {
  const ExperimentConfig cfg = resolve(c);
  const auto rows = complexity_report(cfg.scenario, degrees, channels, cfg.snr_db.front(), cfg.seed);
  fs::create_directories(cfg.output_dir);
  detail::CsvFile out(fs::path(cfg.output_dir) / "complexity.csv",
                      "chips,channels,grid,formula_csa,formula_mf,formula_ratio,measured_csa,measured_mf,measured_ratio");
  for (const auto& r : rows) {
    out.row({std::to_string(r.chips), std::to_string(r.channels), std::to_string(r.grid), format_double(r.formula_csa),
             format_double(r.formula_mf), format_double(r.formula_ratio()), format_double(r.measured_csa), format_double(r.measured_mf),
             format_double(r.measured_ratio())});
    std::cout << "M=" << r.chips << " P=" << r.channels << " G=" << r.grid << ": formula ratio " << fmt(r.formula_ratio())
              << ", measured ratio " << fmt(r.measured_ratio()) << "\n";
  }
  out.close();
  write_manifest(cfg.output_dir, cfg, "bench");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressive multiuser link acquisition simulator"};
  app.require_subcommand(1);

  Common design_c, acquire_c, sweep_c, bench_c, calib_c;
  auto* design = app.add_subcommand("design", "build and cache M, its eigendecomposition and the sampler banks");
  add_common(design, design_c);

  auto* acquire = app.add_subcommand("acquire", "simulate one stream and print the per-shift trace");
  add_common(acquire, acquire_c);
  std::vector<double> thresholds;
  std::uint64_t trial = 0;
  acquire->add_option("--threshold", thresholds, "one threshold per receiver (default: calibrate)")->delimiter(',');
  acquire->add_option("--trial", trial, "trial index used to derive the stream seed");

  auto* sweep = app.add_subcommand("sweep", "Monte Carlo detection/identification/RMSE sweep");
  add_common(sweep, sweep_c);

  auto* bench = app.add_subcommand("bench", "per-shift multiply-accumulate counts against the closed forms");
  add_common(bench, bench_c);
  std::vector<int> degrees{8, 10}, channels{60, 100};
  bench->add_option("--degrees", degrees, "m-sequence degrees (M = 2^d - 1)")->delimiter(',');
  bench->add_option("--channels", channels, "compressive channel counts P")->delimiter(',');

  auto* calibrate = app.add_subcommand("calibrate", "noise-only thresholds at the target false-alarm rate");
  add_common(calibrate, calib_c);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*design) return run_design(design_c);
    if (*acquire) return run_acquire(acquire_c, thresholds, trial);
    if (*sweep) return run_sweep(sweep_c);
    if (*bench) return run_bench(bench_c, degrees, channels);
    if (*calibrate) return run_calibrate(calib_c);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
