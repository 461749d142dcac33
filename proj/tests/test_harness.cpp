#include "csa/cache.hpp"
#include "csa/complexity.hpp"
#include "csa/config.hpp"
#include "csa/harness.hpp"
#include "csa/report.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

using namespace csa;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

const char* kToyConfig = R"({
  "scenario": {
    "users": 3, "active_users": 2, "paths": 1, "sequence_degree": 5,
    "pulse": { "kind": "rectangular", "chip_duration": 1.0, "oversampling": 2 },
    "multipath_spread_chips": 1.0, "doppler_max_cycles_per_chip": 0.03225806451612903,
    "doppler_half_width": 1, "delay_step_chips": 0.5, "shift_chips": 2.0
  },
  "detection": { "extraction": "partial", "target_pf": 0.1 },
  "receivers": [
    { "name": "mf", "kind": "mf" },
    { "name": "csa-kl-20", "kind": "csa", "sampler": "kl-optimal", "channels": 20 },
    { "name": "dsa", "kind": "dsa" }
  ],
  "run": { "snr_db": [-6, 0], "trials": 50, "seed": 7 }
})";

ExperimentConfig toy_config() { return parse_config(kToyConfig); }

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("csa-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("threshold calibration") {
  std::vector<double> stats(200);
  for (int i = 0; i < 200; ++i) stats[i] = i;
  const Threshold t = calibrate_threshold(stats, 0.1);
  CHECK(t.value == 180.0);
  CHECK(t.false_alarm_rate == Approx(0.1));
  CHECK_FALSE(t.extrapolated);
  CHECK(detection_rate(stats, t.value) == Approx(0.1));
  // P_f = 0 lies past every observed statistic.
  const Threshold zero = calibrate_threshold(stats, 0.0);
  CHECK(zero.extrapolated);
  CHECK(zero.value > 199.0);
  CHECK(detection_rate(stats, zero.value) == 0.0);
  CHECK(calibrate_threshold(stats, 1.0).value == 0.0);
  // Ties at the cut never push the rate above target.
  std::vector<double> tied(100, 1.0);
  tied[99] = 2.0;
  CHECK(detection_rate(tied, calibrate_threshold(tied, 0.05).value) <= 0.05);
  CHECK_THROWS_AS(calibrate_threshold(std::vector<double>(99, 0.0), 0.1), std::invalid_argument);
  CHECK_THROWS_AS(calibrate_threshold(stats, 1.5), std::invalid_argument);
}

TEST_CASE("ROC runs from (0, 0) to (1, 1) and its envelope is monotone") {
  Rng rng(5);
  std::normal_distribution<double> nd;
  std::vector<double> sig(300), noise(300);
  for (auto& s : sig) s = nd(rng) + 1.0;
  for (auto& s : noise) s = nd(rng);
  const auto roc = roc_curve(sig, noise);
  CHECK(roc.front().pf == 0.0);
  CHECK(roc.front().pd == 0.0);
  CHECK(roc.back().pf == 1.0);
  CHECK(roc.back().pd == 1.0);
  for (std::size_t i = 1; i < roc.size(); ++i) {
    CHECK(roc[i].pf >= roc[i - 1].pf);
    CHECK(roc[i].pd >= roc[i - 1].pd);
  }
  const auto env = monotone_envelope(roc);
  for (std::size_t i = 1; i < env.size(); ++i) CHECK(env[i].pd >= env[i - 1].pd);
  CHECK_THROWS_AS(roc_curve({}, noise), std::invalid_argument);
}

TEST_CASE("trials are reproducible from their seed") {
  const ExperimentContext ctx(toy_config());
  CHECK(ctx.shifts() == stream_shifts(ctx.config().scenario, ctx.grid(), ctx.horizon()));
  const TrialRecord a = run_trial(ctx, 99, true, 0.0);
  const TrialRecord b = run_trial(ctx, 99, true, 0.0);
  REQUIRE(a.error.empty());
  CHECK(same_outcome(a, b));
  CHECK_FALSE(same_outcome(a, run_trial(ctx, 100, true, 0.0)));
  CHECK(a.traces.size() == 3);
  CHECK(a.truth.has_value());
  CHECK(static_cast<int>(a.traces[0].shifts.size()) == ctx.shifts());
  // Thread count does not change the records.
  const auto one = run_trials(ctx, -3.0, 1, 6, 11, 1);
  const auto many = run_trials(ctx, -3.0, 1, 6, 11, 3);
  REQUIRE(one.size() == 12);
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].signal_present == (i % 2 == 0));
    CHECK(same_outcome(one[i], many[i]));
  }
}

TEST_CASE("a non-finite SNR is recorded as a failed trial") {
  const ExperimentContext ctx(toy_config());
  const TrialRecord r = run_trial(ctx, 1, true, std::numeric_limits<double>::quiet_NaN());
  CHECK_FALSE(r.error.empty());
  std::vector<TrialRecord> recs = run_trials(ctx, 0.0, 0, 100, 3, 1);
  recs.push_back(r);
  const ReceiverMetrics m = compute_metrics(ctx, recs, 0, 0.0);
  CHECK(m.failed_trials == 1);
  CHECK(m.signal_trials == 100);
  CHECK(m.noise_trials == 100);
}

TEST_CASE("known users give identification 1") {
  ExperimentConfig cfg = toy_config();
  cfg.extraction = ExtractionMode::known;
  const ExperimentContext ctx(cfg);
  const auto recs = run_trials(ctx, -10.0, 0, 20, 4, 1);
  for (int r = 0; r < ctx.receiver_count(); ++r) CHECK(identification_rate(ctx, recs, r, 1e9) == 1.0);
}

TEST_CASE("high-SNR delay estimates fall within half a delay cell") {
  ExperimentConfig cfg = toy_config();
  cfg.scenario.doppler_max_cycles_per_chip = 0.0;
  cfg.scenario.doppler_half_width = 0;
  cfg.receivers[1].channels = 10;
  const ExperimentContext ctx(cfg);
  const auto recs = run_trials(ctx, 40.0, 0, 20, 8, 1);
  for (int r = 0; r < ctx.receiver_count(); ++r) {
    const auto noise = peak_statistics(recs, r, false);
    const double th = *std::max_element(noise.begin(), noise.end()) * 1.01;
    const auto e = rmse(ctx, recs, r, th);
    INFO(ctx.receiver_spec(r).name);
    REQUIRE(e.has_value());
    CHECK(e->delay <= 0.5 * ctx.grid().delay_step() + 1e-12);
    CHECK(e->doppler == Approx(0.0).margin(1e-12));
    CHECK(identification_rate(ctx, recs, r, th) == 1.0);
  }
}

TEST_CASE("config parsing round-trips and rejects bad input") {
  const ExperimentConfig cfg = toy_config();
  CHECK(cfg.scenario.users == 3);
  CHECK(cfg.receivers.size() == 3);
  CHECK(cfg.receivers[1].sampler == SamplerKind::kl_optimal);
  CHECK(cfg.snr_db == std::vector<double>{-6.0, 0.0});
  CHECK(config_to_json(config_from_json(config_to_json(cfg))) == config_to_json(cfg));

  auto edited = [](const std::function<void(Json&)>& f) {
    Json j = Json::parse(kToyConfig);
    f(j);
    return j.dump();
  };
  CHECK_THROWS_AS(parse_config(edited([](Json& j) { j["scenario"]["userz"] = 3; })), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(edited([](Json& j) { j["run"]["snr_db"] = Json::array(); })), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(edited([](Json& j) { j["run"]["trials"] = 0; })), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(edited([](Json& j) { j["run"]["trials"] = "many"; })), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(edited([](Json& j) { j["receivers"][1]["channels"] = 0; })), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(edited([](Json& j) { j["receivers"][2]["name"] = "mf"; })), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("{ not json"), std::invalid_argument);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), std::runtime_error);
}

TEST_CASE("results survive a CSV round trip") {
  const ExperimentContext ctx(toy_config());
  const auto recs = run_trials(ctx, 0.0, 0, 100, 21, 1);
  MetricsTable table;
  for (int r = 0; r < ctx.receiver_count(); ++r) table.push_back(compute_metrics(ctx, recs, r, 0.0));
  const fs::path dir = scratch_dir("roundtrip");
  emit_results(table, dir);
  CHECK(read_results(dir) == table);
  for (const char* f : {"metrics.csv", "roc.csv", "uid.csv", "rmse.csv", "kl-compare.csv"}) CHECK(fs::exists(dir / f));

  const fs::path empty = scratch_dir("empty");
  emit_results({}, empty);
  std::ifstream in(empty / "metrics.csv");
  std::string line, rest;
  std::getline(in, line);
  CHECK(line == kMetricsHeader);
  CHECK_FALSE(std::getline(in, rest));
  CHECK(read_results(empty).empty());

  std::ofstream(dir / "metrics.csv") << "wrong,header\n";
  CHECK_THROWS(read_results(dir));
  CHECK(parse_double(format_double(0.1 + 0.2)) == 0.1 + 0.2);
}

TEST_CASE("Gram and sampler caches round-trip at single precision") {
  const ExperimentContext ctx(toy_config());
  const GramMatrix& gram = *ctx.gram();
  const std::uint64_t key = content_key(ctx.templates());
  CHECK(key == content_key(ctx.templates()));
  const fs::path dir = scratch_dir("cache");
  save_gram(dir / "gram.bin", gram, key);
  const auto back = load_gram(dir / "gram.bin", key);
  REQUIRE(back.has_value());
  const double scale = gram.matrix().cwiseAbs().maxCoeff();
  CHECK((back->matrix() - gram.matrix()).cwiseAbs().maxCoeff() < 1e-6 * scale);
  CHECK(back->rank() == gram.rank());
  CHECK_FALSE(load_gram(dir / "gram.bin", key + 1).has_value());
  CHECK_FALSE(load_gram(dir / "missing.bin", key).has_value());

  const SamplerBank bank = kl_optimal_B(gram, 12);
  const std::uint64_t bk = bank_key(key, 12, SamplerKind::kl_optimal, 0);
  CHECK(bk != bank_key(key, 13, SamplerKind::kl_optimal, 0));
  save_bank(dir / "bank.bin", bank, bk);
  const auto bb = load_bank(dir / "bank.bin", bk, gram);
  REQUIRE(bb.has_value());
  CHECK(bb->kind() == SamplerKind::kl_optimal);
  CHECK((bb->matrix() - bank.matrix()).cwiseAbs().maxCoeff() < 1e-6);
  // A Gram file is not a bank file.
  CHECK_FALSE(load_bank(dir / "gram.bin", key, gram).has_value());

  std::ofstream(dir / "junk.bin", std::ios::binary) << std::string(64, 'x');
  CHECK_THROWS_AS(load_gram(dir / "junk.bin", key), std::runtime_error);
  std::ofstream(dir / "short.bin", std::ios::binary) << "CSAC";
  CHECK_THROWS_AS(load_gram(dir / "short.bin", key), std::runtime_error);
}

TEST_CASE("complexity formulas") {
  CHECK(csa_cost_formula(255, 80, 2640) == 255.0 * 80 + 2640 + 512000);
  CHECK(mf_cost_formula(255, 2640) == 673200.0);
  CHECK(cost_ratio_formula(255, 80, 2640) == Approx((20400.0 + 2640 + 512000) / 673200));
  // Compression pays once M outgrows P^3 / G.
  CHECK(cost_ratio_formula(1023, 100, 3080) < 1.0);
  CHECK(cost_ratio_formula(255, 100, 3080) > 1.0);
}

TEST_CASE("measured operation counts scale like the formulas on a small grid") {
  ScenarioConfig sc;
  sc.users = 3;
  sc.active_users = 2;
  sc.paths = 1;
  sc.multipath_spread_chips = 1.0;
  sc.shift_chips = 2.0;
  sc.doppler_half_width = 1;
  const auto rows = complexity_report(sc, {5, 6}, {10, 20});
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.measured_mf == Approx(static_cast<double>(r.grid) * (2 * r.chips + 2 * sc.pulse.oversampling * 1 + 1))
                               .epsilon(0.5));
    CHECK(r.measured_csa == Approx(r.measured_sampling_csa + r.measured_recovery_csa));
    CHECK(r.measured_csa > 0.0);
  }
  CHECK(rows[1].measured_csa > rows[0].measured_csa);
  CHECK(rows[2].measured_mf > rows[0].measured_mf);
}
