#pragma once

#include "csa/config.hpp"
#include "csa/harness.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace csa {

inline constexpr const char* kVersion = "0.1.0";

// 17 significant digits: parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("malformed number '" + s + "'");
  return v;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, const std::string& header) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write '" + path.string() + "'");
    out_ << header << '\n';
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].find_first_of(",\n\"") != std::string::npos)
        throw std::invalid_argument("CSV cell contains a separator: " + cells[i]);
      out_ << (i ? "," : "") << cells[i];
    }
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("failed to finish writing a CSV file");
  }

 private:
  std::ofstream out_;
};

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, const std::string& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw std::runtime_error("unexpected header in '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(split_csv_line(line));
  return rows;
}

}  // namespace detail

inline constexpr const char* kMetricsHeader = "receiver,snr_db,metric,value";
inline constexpr const char* kRocHeader = "receiver,snr_db,pf,pd";
inline constexpr const char* kUidHeader = "receiver,snr_db,identification";
inline constexpr const char* kRmseHeader = "receiver,snr_db,rmse_delay,rmse_doppler";
inline constexpr const char* kKlHeader = "receiver,sampler,channels,average_kl";

struct KlComparison {
  std::string receiver;
  SamplerKind sampler = SamplerKind::kl_optimal;
  int channels = 0;
  double average_kl = 0.0;
};

// Long-form scalar metrics in a fixed order; absent RMSE rows are omitted.
inline std::vector<std::pair<std::string, double>> scalar_metrics(const ReceiverMetrics& m) {
  std::vector<std::pair<std::string, double>> out{
      {"threshold", m.threshold},
      {"threshold_extrapolated", m.threshold_extrapolated ? 1.0 : 0.0},
      {"pd", m.pd},
      {"pf", m.pf},
      {"identification", m.identification},
      {"signal_trials", m.signal_trials},
      {"noise_trials", m.noise_trials},
      {"failed_trials", m.failed_trials},
      {"seconds_per_trial", m.seconds_per_trial},
      {"ops_per_shift", m.ops_per_shift}};
  if (m.rmse_delay) out.emplace_back("rmse_delay", *m.rmse_delay);
  if (m.rmse_doppler) out.emplace_back("rmse_doppler", *m.rmse_doppler);
  return out;
}

inline void emit_results(const MetricsTable& table, const std::filesystem::path& dir,
                         const std::vector<KlComparison>& kl = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());

  detail::CsvFile metrics(dir / "metrics.csv", kMetricsHeader);
  detail::CsvFile roc(dir / "roc.csv", kRocHeader);
  detail::CsvFile uid(dir / "uid.csv", kUidHeader);
  detail::CsvFile err(dir / "rmse.csv", kRmseHeader);
  for (const auto& m : table) {
    const std::string snr = format_double(m.snr_db);
    for (const auto& [name, v] : scalar_metrics(m)) metrics.row({m.receiver, snr, name, format_double(v)});
    for (const auto& p : m.roc) roc.row({m.receiver, snr, format_double(p.pf), format_double(p.pd)});
    uid.row({m.receiver, snr, format_double(m.identification)});
    err.row({m.receiver, snr, m.rmse_delay ? format_double(*m.rmse_delay) : "",
             m.rmse_doppler ? format_double(*m.rmse_doppler) : ""});
  }
  metrics.close();
  roc.close();
  uid.close();
  err.close();

  detail::CsvFile klf(dir / "kl-compare.csv", kKlHeader);
  for (const auto& k : kl)
    klf.row({k.receiver, to_string(k.sampler), std::to_string(k.channels), format_double(k.average_kl)});
  klf.close();
}

// Rebuilds the table from metrics.csv and roc.csv, in first-seen order.
inline MetricsTable read_results(const std::filesystem::path& dir) {
  MetricsTable table;
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  auto find = [&](const std::string& rx, const std::string& snr) -> ReceiverMetrics& {
    auto [it, fresh] = slot.try_emplace({rx, snr}, table.size());
    if (fresh) {
      table.emplace_back();
      table.back().receiver = rx;
      table.back().snr_db = parse_double(snr);
    }
    return table[it->second];
  };

  for (const auto& row : detail::read_csv(dir / "metrics.csv", kMetricsHeader)) {
    if (row.size() != 4) throw std::runtime_error("metrics.csv row has the wrong number of cells");
    ReceiverMetrics& m = find(row[0], row[1]);
    const std::string& name = row[2];
    const double v = parse_double(row[3]);
    if (name == "threshold") m.threshold = v;
    else if (name == "threshold_extrapolated") m.threshold_extrapolated = v != 0.0;
    else if (name == "pd") m.pd = v;
    else if (name == "pf") m.pf = v;
    else if (name == "identification") m.identification = v;
    else if (name == "signal_trials") m.signal_trials = static_cast<int>(v);
    else if (name == "noise_trials") m.noise_trials = static_cast<int>(v);
    else if (name == "failed_trials") m.failed_trials = static_cast<int>(v);
    else if (name == "seconds_per_trial") m.seconds_per_trial = v;
    else if (name == "ops_per_shift") m.ops_per_shift = v;
    else if (name == "rmse_delay") m.rmse_delay = v;
    else if (name == "rmse_doppler") m.rmse_doppler = v;
    else throw std::runtime_error("unknown metric '" + name + "'");
  }
  for (const auto& row : detail::read_csv(dir / "roc.csv", kRocHeader)) {
    if (row.size() != 4) throw std::runtime_error("roc.csv row has the wrong number of cells");
    find(row[0], row[1]).roc.push_back({parse_double(row[2]), parse_double(row[3])});
  }
  return table;
}

inline void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg, const std::string& command,
                           const Json& extra = Json::object()) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());
  Json j;
  j["version"] = kVersion;
  j["command"] = command;
  j["master_seed"] = cfg.seed;
  j["seed_scheme"] = "splitmix64(master, snr_slot, trial); even trials carry a signal";
  j["config"] = config_to_json(cfg);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest in '" + dir.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace csa
