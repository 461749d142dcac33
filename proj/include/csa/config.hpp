#pragma once

#include "csa/harness.hpp"

#include "json.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace csa {

using Json = nlohmann::ordered_json;

namespace detail {

inline void reject_unknown_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw std::invalid_argument("unknown key '" + key + "' in " + where);
}

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline std::string pulse_kind_name(PulseKind k) { return k == PulseKind::rectangular ? "rectangular" : "raised-cosine"; }

inline PulseKind pulse_kind_from_string(const std::string& s) {
  if (s == "rectangular") return PulseKind::rectangular;
  if (s == "raised-cosine") return PulseKind::raised_cosine;
  throw std::invalid_argument("unknown pulse kind '" + s + "'");
}

}  // namespace detail

inline void validate(const ExperimentConfig& cfg) {
  if (cfg.trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (cfg.snr_db.empty()) throw std::invalid_argument("SNR list must not be empty");
  for (double s : cfg.snr_db)
    if (!std::isfinite(s)) throw std::invalid_argument("SNR values must be finite");
  if (cfg.receivers.empty()) throw std::invalid_argument("at least one receiver is required");
  if (cfg.target_pf < 0.0 || cfg.target_pf > 1.0) throw std::invalid_argument("target_pf must lie in [0, 1]");
  const auto& sc = cfg.scenario;
  if (sc.active_users < 1 || sc.active_users > sc.users) throw std::invalid_argument("active_users must lie in [1, users]");
  if (sc.paths < 1) throw std::invalid_argument("paths must be >= 1");
  if (sc.sequence_degree < 2 || sc.sequence_degree > 16) throw std::invalid_argument("sequence_degree must lie in [2, 16]");
  std::set<std::string> names;
  for (const auto& r : cfg.receivers) {
    if (r.name.empty()) throw std::invalid_argument("receiver names must be nonempty");
    if (!names.insert(r.name).second) throw std::invalid_argument("duplicate receiver name '" + r.name + "'");
    if (r.kind == ReceiverKind::csa && r.channels < 1)
      throw std::invalid_argument("receiver '" + r.name + "' needs channels >= 1");
  }
  (void)sc.grid();
}

inline ExperimentConfig config_from_json(const Json& j) {
  using detail::read_opt;
  detail::reject_unknown_keys(j, {"scenario", "detection", "receivers", "run"}, "config");
  ExperimentConfig cfg;

  if (j.contains("scenario")) {
    const Json& s = j.at("scenario");
    detail::reject_unknown_keys(s,
                                {"users", "active_users", "paths", "sequence_degree", "pulse", "multipath_spread_chips",
                                 "doppler_max_cycles_per_chip", "doppler_half_width", "delay_step_chips", "shift_chips"},
                                "scenario");
    auto& sc = cfg.scenario;
    read_opt(s, "users", sc.users);
    read_opt(s, "active_users", sc.active_users);
    read_opt(s, "paths", sc.paths);
    read_opt(s, "sequence_degree", sc.sequence_degree);
    read_opt(s, "multipath_spread_chips", sc.multipath_spread_chips);
    read_opt(s, "doppler_max_cycles_per_chip", sc.doppler_max_cycles_per_chip);
    read_opt(s, "doppler_half_width", sc.doppler_half_width);
    read_opt(s, "delay_step_chips", sc.delay_step_chips);
    read_opt(s, "shift_chips", sc.shift_chips);
    if (s.contains("pulse")) {
      const Json& p = s.at("pulse");
      detail::reject_unknown_keys(p, {"kind", "chip_duration", "oversampling", "truncation", "rolloff"}, "scenario.pulse");
      if (p.contains("kind")) sc.pulse.kind = detail::pulse_kind_from_string(p.at("kind").get<std::string>());
      read_opt(p, "chip_duration", sc.pulse.chip_duration);
      read_opt(p, "oversampling", sc.pulse.oversampling);
      read_opt(p, "truncation", sc.pulse.truncation);
      read_opt(p, "rolloff", sc.pulse.rolloff);
    }
  }

  if (j.contains("detection")) {
    const Json& d = j.at("detection");
    detail::reject_unknown_keys(d, {"extraction", "relative_threshold", "max_atoms", "horizon", "target_pf"}, "detection");
    if (d.contains("extraction")) cfg.extraction = extraction_mode_from_string(d.at("extraction").get<std::string>());
    read_opt(d, "relative_threshold", cfg.relative_threshold);
    read_opt(d, "max_atoms", cfg.max_atoms);
    read_opt(d, "horizon", cfg.horizon);
    read_opt(d, "target_pf", cfg.target_pf);
  }

  if (j.contains("receivers")) {
    if (!j.at("receivers").is_array()) throw std::invalid_argument("receivers must be an array");
    for (const Json& r : j.at("receivers")) {
      detail::reject_unknown_keys(r, {"name", "kind", "sampler", "channels", "seed"}, "receivers[]");
      ReceiverSpec spec;
      spec.kind = receiver_kind_from_string(r.value("kind", std::string("csa")));
      spec.name = r.value("name", to_string(spec.kind));
      if (r.contains("sampler")) spec.sampler = sampler_kind_from_string(r.at("sampler").get<std::string>());
      read_opt(r, "channels", spec.channels);
      read_opt(r, "seed", spec.seed);
      cfg.receivers.push_back(spec);
    }
  }

  if (j.contains("run")) {
    const Json& r = j.at("run");
    detail::reject_unknown_keys(r, {"snr_db", "trials", "seed", "threads", "output_dir"}, "run");
    read_opt(r, "snr_db", cfg.snr_db);
    read_opt(r, "trials", cfg.trials);
    read_opt(r, "seed", cfg.seed);
    read_opt(r, "threads", cfg.threads);
    read_opt(r, "output_dir", cfg.output_dir);
  }

  validate(cfg);
  return cfg;
}

inline Json config_to_json(const ExperimentConfig& cfg) {
  const auto& sc = cfg.scenario;
  Json j;
  j["scenario"] = {{"users", sc.users},
                   {"active_users", sc.active_users},
                   {"paths", sc.paths},
                   {"sequence_degree", sc.sequence_degree},
                   {"pulse",
                    {{"kind", detail::pulse_kind_name(sc.pulse.kind)},
                     {"chip_duration", sc.pulse.chip_duration},
                     {"oversampling", sc.pulse.oversampling},
                     {"truncation", sc.pulse.truncation},
                     {"rolloff", sc.pulse.rolloff}}},
                   {"multipath_spread_chips", sc.multipath_spread_chips},
                   {"doppler_max_cycles_per_chip", sc.doppler_max_cycles_per_chip},
                   {"doppler_half_width", sc.doppler_half_width},
                   {"delay_step_chips", sc.delay_step_chips},
                   {"shift_chips", sc.shift_chips}};
  j["detection"] = {{"extraction", to_string(cfg.extraction)},
                    {"relative_threshold", cfg.relative_threshold},
                    {"max_atoms", cfg.max_atoms},
                    {"horizon", cfg.horizon},
                    {"target_pf", cfg.target_pf}};
  j["receivers"] = Json::array();
  for (const auto& r : cfg.receivers) {
    Json e{{"name", r.name}, {"kind", to_string(r.kind)}};
    if (r.kind == ReceiverKind::csa) {
      e["sampler"] = to_string(r.sampler);
      e["channels"] = r.channels;
      e["seed"] = r.seed;
    }
    j["receivers"].push_back(e);
  }
  j["run"] = {{"snr_db", cfg.snr_db},
              {"trials", cfg.trials},
              {"seed", cfg.seed},
              {"threads", cfg.threads},
              {"output_dir", cfg.output_dir}};
  return j;
}

inline ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  } catch (const Json::type_error& e) {
    throw std::invalid_argument(std::string("config has a value of the wrong type: ") + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("config has a value of the wrong type: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace csa
