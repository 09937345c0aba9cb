#include "xprob/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace xprob::harness {

using nlohmann::json;

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Echo: return "echo";
    case ExperimentKind::Equilibrate: return "equilibrate";
    case ExperimentKind::BoltzmannCheck: return "boltzmann-check";
    case ExperimentKind::Correlate: return "correlate";
    case ExperimentKind::Ergodicity: return "ergodicity";
    case ExperimentKind::Ensemble: return "ensemble";
  }
  return "?";
}

namespace {

ExperimentKind kind_from_string(const std::string& s, const std::string& path) {
  if (s == "echo") return ExperimentKind::Echo;
  if (s == "equilibrate") return ExperimentKind::Equilibrate;
  if (s == "boltzmann-check") return ExperimentKind::BoltzmannCheck;
  if (s == "correlate") return ExperimentKind::Correlate;
  if (s == "ergodicity") return ExperimentKind::Ergodicity;
  if (s == "ensemble") return ExperimentKind::Ensemble;
  throw ConfigError(path + ": unknown experiment type '" + s + "'");
}

std::string join_path(const std::string& p, const std::string& k) {
  return p.empty() ? k : p + "." + k;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t prev = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t cur = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1,
                         prev + (a[i - 1] == b[j - 1] ? 0 : 1)});
      prev = cur;
    }
  }
  return row[b.size()];
}

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& path) {
  if (!obj.is_object())
    throw ConfigError(path + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const std::string& key = it.key();
    if (std::find(allowed.begin(), allowed.end(), key) != allowed.end())
      continue;
    std::string best;
    std::size_t best_d = 4;
    for (const auto& a : allowed) {
      const std::size_t d = edit_distance(key, a);
      if (d < best_d) {
        best_d = d;
        best = a;
      }
    }
    std::string msg = join_path(path, key) + ": unknown key";
    if (!best.empty()) msg += "; did you mean '" + best + "'?";
    throw ConfigError(msg);
  }
}

double require_number(const json& obj, const char* key, const std::string& path) {
  if (!obj.contains(key))
    throw ConfigError(join_path(path, key) + ": required field missing");
  const json& v = obj.at(key);
  if (!v.is_number())
    throw ConfigError(join_path(path, key) + ": expected a number");
  return v.get<double>();
}

double number_or(const json& obj, const char* key, const std::string& path,
                 double def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_number())
    throw ConfigError(join_path(path, key) + ": expected a number");
  return v.get<double>();
}

long require_integer(const json& obj, const char* key, const std::string& path) {
  if (!obj.contains(key))
    throw ConfigError(join_path(path, key) + ": required field missing");
  const json& v = obj.at(key);
  if (!v.is_number_integer())
    throw ConfigError(join_path(path, key) + ": expected an integer");
  return v.get<long>();
}

long integer_or(const json& obj, const char* key, const std::string& path,
                long def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_number_integer())
    throw ConfigError(join_path(path, key) + ": expected an integer");
  return v.get<long>();
}

std::string string_or(const json& obj, const char* key, const std::string& path,
                      const std::string& def) {
  if (!obj.contains(key)) return def;
  const json& v = obj.at(key);
  if (!v.is_string())
    throw ConfigError(join_path(path, key) + ": expected a string");
  return v.get<std::string>();
}

ObservableSpec parse_observable(const json& obj, const std::string& path) {
  check_keys(obj, {"type", "site"}, path);
  ObservableSpec spec;
  spec.type = string_or(obj, "type", path, "sz_total");
  spec.site = (int)integer_or(obj, "site", path, 0);
  if (spec.type != "sz_total" && spec.type != "sz_site" &&
      spec.type != "sx_site" && spec.type != "hamiltonian")
    throw ConfigError(join_path(path, "type") + ": unknown observable '" +
                      spec.type + "'");
  return spec;
}

InitialStateSpec parse_initial(const json& obj, const std::string& path) {
  check_keys(obj, {"kind", "center", "center_fraction", "half_width"}, path);
  InitialStateSpec spec;
  const std::string kind = string_or(obj, "kind", path, "random");
  if (kind == "random") {
    spec.kind = InitialStateSpec::Kind::Random;
  } else if (kind == "shell") {
    spec.kind = InitialStateSpec::Kind::Shell;
  } else {
    throw ConfigError(join_path(path, "kind") +
                      ": expected 'random' or 'shell'");
  }
  if (obj.contains("center") && obj.contains("center_fraction"))
    throw ConfigError(path + ": give either center or center_fraction, not both");
  if (obj.contains("center")) {
    spec.center = require_number(obj, "center", path);
    spec.center_is_fraction = false;
  } else {
    spec.center_fraction = number_or(obj, "center_fraction", path, 0.5);
    spec.center_is_fraction = true;
  }
  spec.half_width = number_or(obj, "half_width", path, 0.0);
  if (spec.half_width < 0)
    throw ConfigError(join_path(path, "half_width") + ": must be >= 0");
  return spec;
}

SpinSystem parse_system(const json& obj, const std::string& path) {
  check_keys(obj,
             {"n_spins", "frequencies", "frequency", "couplings",
              "coupling_form", "max_spins"},
             path);
  SpinSystem sys;
  sys.n_spins = (int)require_integer(obj, "n_spins", path);
  sys.max_spins = (int)integer_or(obj, "max_spins", path, 14);
  if (sys.n_spins < 1)
    throw ConfigError(join_path(path, "n_spins") + ": must be >= 1");
  if (sys.n_spins > sys.max_spins)
    throw ConfigError(join_path(path, "n_spins") + ": exceeds max_spins (" +
                      std::to_string(sys.max_spins) + ")");
  if (obj.contains("frequencies") == obj.contains("frequency"))
    throw ConfigError(path + ": give exactly one of frequencies / frequency");
  if (obj.contains("frequency")) {
    sys.zeeman_frequencies.assign((size_t)sys.n_spins,
                                  require_number(obj, "frequency", path));
  } else {
    const json& arr = obj.at("frequencies");
    if (!arr.is_array() || (int)arr.size() != sys.n_spins)
      throw ConfigError(join_path(path, "frequencies") +
                        ": expected an array of n_spins numbers");
    for (const auto& v : arr) {
      if (!v.is_number())
        throw ConfigError(join_path(path, "frequencies") +
                          ": expected an array of numbers");
      sys.zeeman_frequencies.push_back(v.get<double>());
    }
  }
  if (obj.contains("couplings")) {
    const json& arr = obj.at("couplings");
    if (!arr.is_array())
      throw ConfigError(join_path(path, "couplings") + ": expected an array");
    for (std::size_t idx = 0; idx < arr.size(); ++idx) {
      const json& t = arr[idx];
      const std::string tpath =
          join_path(path, "couplings[" + std::to_string(idx) + "]");
      if (!t.is_array() || t.size() != 3 || !t[0].is_number_integer() ||
          !t[1].is_number_integer() || !t[2].is_number())
        throw ConfigError(tpath + ": expected [i, j, strength]");
      const int i = t[0].get<int>(), j = t[1].get<int>();
      if (i == j) throw ConfigError(tpath + ": self-pair (i,i) not allowed");
      if (i < 0 || j < 0 || i >= sys.n_spins || j >= sys.n_spins)
        throw ConfigError(tpath + ": spin index out of range");
      sys.couplings.emplace_back(i, j, t[2].get<double>());
    }
  }
  const std::string form = string_or(obj, "coupling_form", path, "ising-zz");
  try {
    sys.coupling_form = coupling_form_from_string(form);
  } catch (const std::invalid_argument&) {
    throw ConfigError(join_path(path, "coupling_form") + ": unknown form '" +
                      form + "'");
  }
  return sys;
}

XJumpConfig parse_jumps(const json& obj, const std::string& path,
                        std::optional<std::uint64_t>& seed_override) {
  check_keys(obj,
             {"per_particle_rate", "shell_half_width", "mechanism",
              "rate_coupling", "seed"},
             path);
  XJumpConfig cfg;
  cfg.per_particle_rate = number_or(obj, "per_particle_rate", path, 0.0);
  if (cfg.per_particle_rate < 0)
    throw ConfigError(join_path(path, "per_particle_rate") + ": must be >= 0");
  if (obj.contains("shell_half_width")) {
    const json& w = obj.at("shell_half_width");
    if (w.is_number()) {
      cfg.shell_half_width = w.get<double>();
      cfg.width_is_fraction = false;
      if (cfg.shell_half_width <= 0)
        throw ConfigError(join_path(path, "shell_half_width") + ": must be > 0");
    } else if (w.is_object()) {
      check_keys(w, {"spectral_fraction"}, join_path(path, "shell_half_width"));
      cfg.shell_spectral_fraction = require_number(
          w, "spectral_fraction", join_path(path, "shell_half_width"));
      cfg.width_is_fraction = true;
      if (cfg.shell_spectral_fraction <= 0)
        throw ConfigError(join_path(path, "shell_half_width.spectral_fraction") +
                          ": must be > 0");
    } else {
      throw ConfigError(join_path(path, "shell_half_width") +
                        ": expected a number or {\"spectral_fraction\": f}");
    }
  }
  const std::string mech = string_or(obj, "mechanism", path, "shell-haar");
  try {
    cfg.mechanism = mechanism_from_string(mech);
  } catch (const std::invalid_argument&) {
    throw ConfigError(join_path(path, "mechanism") + ": unknown mechanism '" +
                      mech + "'");
  }
  if (obj.contains("rate_coupling"))
    cfg.rate_coupling = require_number(obj, "rate_coupling", path);
  if (obj.contains("seed"))
    seed_override = (std::uint64_t)require_integer(obj, "seed", path);
  return cfg;
}

json canonicalize(const RunConfig& c) {
  json doc;
  json sys;
  sys["n_spins"] = c.system.n_spins;
  sys["max_spins"] = c.system.max_spins;
  sys["frequencies"] = c.system.zeeman_frequencies;
  json cpl = json::array();
  for (auto& [i, j, J] : c.system.couplings) cpl.push_back({i, j, J});
  sys["couplings"] = cpl;
  sys["coupling_form"] = to_string(c.system.coupling_form);
  doc["system"] = sys;

  json jumps;
  jumps["per_particle_rate"] = c.jumps.per_particle_rate;
  if (c.jumps.width_is_fraction)
    jumps["shell_half_width"] = {
        {"spectral_fraction", c.jumps.shell_spectral_fraction}};
  else
    jumps["shell_half_width"] = c.jumps.shell_half_width;
  jumps["mechanism"] = to_string(c.jumps.mechanism);
  if (c.jumps.rate_coupling) jumps["rate_coupling"] = *c.jumps.rate_coupling;
  doc["jumps"] = jumps;

  json exp;
  exp["type"] = to_string(c.kind);
  auto initial_json = [&]() {
    json ini;
    ini["kind"] =
        c.initial.kind == InitialStateSpec::Kind::Random ? "random" : "shell";
    if (c.initial.center_is_fraction)
      ini["center_fraction"] = c.initial.center_fraction;
    else
      ini["center"] = c.initial.center;
    ini["half_width"] = c.initial.half_width;
    return ini;
  };
  auto observable_json = [](const ObservableSpec& o) {
    return json{{"type", o.type}, {"site", o.site}};
  };
  switch (c.kind) {
    case ExperimentKind::Echo:
      exp["forward_time"] = c.echo.forward_time;
      exp["reversal_epsilon"] = c.echo.reversal_epsilon;
      exp["initial"] = initial_json();
      break;
    case ExperimentKind::Equilibrate:
      exp["total_time"] = c.equilibrate.total_time;
      exp["n_samples"] = c.equilibrate.n_samples;
      exp["initial"] = initial_json();
      break;
    case ExperimentKind::BoltzmannCheck:
      exp["e_target_above_ground"] = c.boltzmann.e_target_above_ground;
      exp["total_time"] = c.boltzmann.total_time;
      exp["n_samples"] = c.boltzmann.n_samples;
      break;
    case ExperimentKind::Correlate:
      exp["f"] = observable_json(c.correlate.f);
      exp["g"] = observable_json(c.correlate.g);
      exp["t_grid"] = c.correlate.t_grid;
      exp["trajectory_time"] = c.correlate.trajectory_time;
      exp["sample_dt"] = c.correlate.sample_dt;
      exp["burn_in"] = c.correlate.burn_in;
      exp["initial"] = initial_json();
      break;
    case ExperimentKind::Ergodicity:
      exp["observable"] = observable_json(c.ergodicity.observable);
      exp["trajectory_time"] = c.ergodicity.trajectory_time;
      exp["n_samples"] = c.ergodicity.n_samples;
      exp["initial"] = initial_json();
      break;
    case ExperimentKind::Ensemble:
      exp["levels"] = c.ensemble.level_energies;
      if (!c.ensemble.degeneracies.empty())
        exp["degeneracies"] = c.ensemble.degeneracies;
      exp["n_particles"] = c.ensemble.n_particles;
      if (c.ensemble.beta) exp["beta"] = *c.ensemble.beta;
      if (c.ensemble.e_target) exp["e_target"] = *c.ensemble.e_target;
      break;
  }
  doc["experiment"] = exp;
  doc["seed_base"] = c.seed_base;
  doc["n_trajectories"] = c.n_trajectories;
  doc["output_path"] = c.output_path;
  doc["output_format"] = c.output_format == OutputFormat::Csv ? "csv" : "json";
  return doc;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : bytes) {
    h ^= (std::uint64_t)ch;
    h *= 1099511628211ULL;
  }
  return h;
}

Matrix build_observable(const ObservableSpec& spec, const SpinSystem& sys,
                        const Hamiltonian& ham) {
  if (spec.site < 0 || spec.site >= sys.n_spins)
    throw std::invalid_argument("observable site out of range");
  if (spec.type == "sz_total") return collective_sz(sys.n_spins);
  if (spec.type == "sz_site") return sz_site(sys.n_spins, spec.site);
  if (spec.type == "sx_site") return sx_site(sys.n_spins, spec.site);
  if (spec.type == "hamiltonian") return ham.total;
  throw std::invalid_argument("unknown observable type: " + spec.type);
}

StateVector make_initial(const InitialStateSpec& spec, const EigenSystem& eig,
                         const XJumpConfig& jumps, std::uint64_t seed) {
  if (spec.kind == InitialStateSpec::Kind::Random)
    return random_state(eig.dim(), seed);
  const double center =
      spec.center_is_fraction
          ? eig.energies(0) + spec.center_fraction * eig.spectral_range()
          : spec.center;
  const double hw = spec.half_width > 0 ? spec.half_width
                                        : resolved_shell_half_width(jumps, eig);
  return random_shell_state(eig, center, hw, seed);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("syntax error: ") + e.what());
  }
  check_keys(doc,
             {"system", "jumps", "experiment", "seed_base", "n_trajectories",
              "output_path", "output_format"},
             "");
  if (!doc.contains("experiment"))
    throw ConfigError("experiment: required section missing");

  RunConfig cfg;
  const json& exp = doc.at("experiment");
  if (!exp.is_object())
    throw ConfigError("experiment: expected an object");
  if (!exp.contains("type") || !exp.at("type").is_string())
    throw ConfigError("experiment.type: required string missing");
  cfg.kind = kind_from_string(exp.at("type").get<std::string>(), "experiment.type");

  std::optional<std::uint64_t> jump_seed;
  if (cfg.kind != ExperimentKind::Ensemble) {
    if (!doc.contains("system"))
      throw ConfigError("system: required section missing");
    cfg.system = parse_system(doc.at("system"), "system");
    if (doc.contains("jumps"))
      cfg.jumps = parse_jumps(doc.at("jumps"), "jumps", jump_seed);
  } else if (doc.contains("system") || doc.contains("jumps")) {
    throw ConfigError("system/jumps sections are not used by the ensemble experiment");
  }

  const std::string epath = "experiment";
  switch (cfg.kind) {
    case ExperimentKind::Echo: {
      check_keys(exp, {"type", "forward_time", "reversal_epsilon", "initial"},
                 epath);
      cfg.echo.forward_time = require_number(exp, "forward_time", epath);
      if (!(cfg.echo.forward_time > 0))
        throw ConfigError("experiment.forward_time: must be > 0");
      cfg.echo.reversal_epsilon =
          number_or(exp, "reversal_epsilon", epath, 0.0);
      if (cfg.echo.reversal_epsilon < 0)
        throw ConfigError("experiment.reversal_epsilon: must be >= 0");
      if (exp.contains("initial"))
        cfg.initial = parse_initial(exp.at("initial"), "experiment.initial");
      break;
    }
    case ExperimentKind::Equilibrate: {
      check_keys(exp, {"type", "total_time", "n_samples", "initial"}, epath);
      cfg.equilibrate.total_time = require_number(exp, "total_time", epath);
      if (!(cfg.equilibrate.total_time > 0))
        throw ConfigError("experiment.total_time: must be > 0");
      cfg.equilibrate.n_samples =
          (int)integer_or(exp, "n_samples", epath, 100);
      if (cfg.equilibrate.n_samples < 2)
        throw ConfigError("experiment.n_samples: must be >= 2");
      if (exp.contains("initial"))
        cfg.initial = parse_initial(exp.at("initial"), "experiment.initial");
      break;
    }
    case ExperimentKind::BoltzmannCheck: {
      check_keys(exp,
                 {"type", "e_target_above_ground", "total_time", "n_samples"},
                 epath);
      cfg.boltzmann.e_target_above_ground =
          require_number(exp, "e_target_above_ground", epath);
      cfg.boltzmann.total_time = require_number(exp, "total_time", epath);
      cfg.boltzmann.n_samples = (int)integer_or(exp, "n_samples", epath, 400);
      if (cfg.boltzmann.n_samples < 2)
        throw ConfigError("experiment.n_samples: must be >= 2");
      break;
    }
    case ExperimentKind::Correlate: {
      check_keys(exp,
                 {"type", "f", "g", "t_grid", "trajectory_time", "sample_dt",
                  "burn_in", "initial"},
                 epath);
      if (exp.contains("f"))
        cfg.correlate.f = parse_observable(exp.at("f"), "experiment.f");
      if (exp.contains("g"))
        cfg.correlate.g = parse_observable(exp.at("g"), "experiment.g");
      if (!exp.contains("t_grid") || !exp.at("t_grid").is_array() ||
          exp.at("t_grid").empty())
        throw ConfigError("experiment.t_grid: non-empty array required");
      for (const auto& v : exp.at("t_grid")) {
        if (!v.is_number())
          throw ConfigError("experiment.t_grid: expected numbers");
        cfg.correlate.t_grid.push_back(v.get<double>());
      }
      for (std::size_t i = 1; i < cfg.correlate.t_grid.size(); ++i)
        if (!(cfg.correlate.t_grid[i] > cfg.correlate.t_grid[i - 1]))
          throw ConfigError("experiment.t_grid: must be strictly ascending");
      cfg.correlate.trajectory_time =
          require_number(exp, "trajectory_time", epath);
      cfg.correlate.sample_dt = number_or(exp, "sample_dt", epath, 0.0);
      cfg.correlate.burn_in = number_or(exp, "burn_in", epath, -1.0);
      if (exp.contains("initial"))
        cfg.initial = parse_initial(exp.at("initial"), "experiment.initial");
      break;
    }
    case ExperimentKind::Ergodicity: {
      check_keys(exp,
                 {"type", "observable", "trajectory_time", "n_samples",
                  "initial"},
                 epath);
      if (exp.contains("observable"))
        cfg.ergodicity.observable =
            parse_observable(exp.at("observable"), "experiment.observable");
      cfg.ergodicity.trajectory_time =
          require_number(exp, "trajectory_time", epath);
      cfg.ergodicity.n_samples = (int)integer_or(exp, "n_samples", epath, 400);
      if (exp.contains("initial"))
        cfg.initial = parse_initial(exp.at("initial"), "experiment.initial");
      break;
    }
    case ExperimentKind::Ensemble: {
      check_keys(exp,
                 {"type", "levels", "degeneracies", "n_particles", "beta",
                  "e_target"},
                 epath);
      if (!exp.contains("levels") || !exp.at("levels").is_array())
        throw ConfigError("experiment.levels: array required");
      for (const auto& v : exp.at("levels")) {
        if (!v.is_number())
          throw ConfigError("experiment.levels: expected numbers");
        cfg.ensemble.level_energies.push_back(v.get<double>());
      }
      if (exp.contains("degeneracies")) {
        for (const auto& v : exp.at("degeneracies")) {
          if (!v.is_number_integer())
            throw ConfigError("experiment.degeneracies: expected integers");
          cfg.ensemble.degeneracies.push_back(v.get<int>());
        }
      }
      cfg.ensemble.n_particles = require_integer(exp, "n_particles", epath);
      if (cfg.ensemble.n_particles < 1)
        throw ConfigError("experiment.n_particles: must be >= 1");
      if (exp.contains("beta")) cfg.ensemble.beta = require_number(exp, "beta", epath);
      if (exp.contains("e_target"))
        cfg.ensemble.e_target = require_number(exp, "e_target", epath);
      if (cfg.ensemble.beta.has_value() == cfg.ensemble.e_target.has_value())
        throw ConfigError("experiment: give exactly one of beta / e_target");
      break;
    }
  }

  cfg.seed_base = (std::uint64_t)integer_or(doc, "seed_base", "", 1);
  if (jump_seed) {
    if (doc.contains("seed_base"))
      throw ConfigError("seed_base: conflicts with jumps.seed");
    cfg.seed_base = *jump_seed;
  }
  cfg.n_trajectories = (int)integer_or(doc, "n_trajectories", "", 1);
  if (cfg.n_trajectories < 1)
    throw ConfigError("n_trajectories: must be >= 1");
  cfg.output_path = string_or(doc, "output_path", "", "result.csv");
  const std::string fmt = string_or(doc, "output_format", "", "csv");
  if (fmt == "csv")
    cfg.output_format = OutputFormat::Csv;
  else if (fmt == "json")
    cfg.output_format = OutputFormat::Json;
  else
    throw ConfigError("output_format: expected 'csv' or 'json'");

  // full model validation with field-path reporting
  if (cfg.kind != ExperimentKind::Ensemble) {
    try {
      cfg.system.validate();
      cfg.jumps.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("validation: ") + e.what());
    }
  }
  cfg.canonical_document = canonicalize(cfg).dump();
  return cfg;
}

std::string config_fingerprint(const RunConfig& config) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                (unsigned long long)fnv1a(canonicalize(config).dump()));
  return buf;
}

void ResultRecord::recompute_aggregates() {
  aggregates.assign(columns.size(), Aggregate{});
  for (std::size_t c = 0; c < columns.size(); ++c) {
    double sum = 0;
    long n = 0;
    for (const auto& row : rows) {
      if (std::isfinite(row[c])) {
        sum += row[c];
        ++n;
      }
    }
    Aggregate agg;
    agg.count = n;
    agg.mean = n ? sum / (double)n : 0.0;
    double ss = 0;
    for (const auto& row : rows)
      if (std::isfinite(row[c])) ss += (row[c] - agg.mean) * (row[c] - agg.mean);
    agg.stddev = n > 1 ? std::sqrt(ss / (double)(n - 1)) : 0.0;
    aggregates[c] = agg;
  }
}

namespace {

std::vector<double> run_trajectory(const RunConfig& cfg, const Hamiltonian& ham,
                                   const EigenSystem& eig, int index) {
  const std::uint64_t seed = cfg.seed_base + (std::uint64_t)index;
  const double n_particles = (double)cfg.system.n_spins;
  switch (cfg.kind) {
    case ExperimentKind::Echo: {
      const StateVector initial =
          make_initial(cfg.initial, eig, cfg.jumps, derive_seed(seed, 31));
      const EchoResult r =
          echo_experiment(ham, eig, initial, cfg.echo.forward_time,
                          cfg.echo.reversal_epsilon, cfg.jumps, n_particles, seed);
      return {(double)index, (double)seed, r.fidelity, (double)r.n_jumps,
              r.observable_recovery};
    }
    case ExperimentKind::Equilibrate: {
      const StateVector initial =
          make_initial(cfg.initial, eig, cfg.jumps, derive_seed(seed, 31));
      const EquilibrationResult r = equilibration_experiment(
          eig, initial, cfg.equilibrate.total_time, cfg.equilibrate.n_samples,
          cfg.jumps, n_particles, derive_seed(seed, 41));
      return {(double)index,
              (double)seed,
              r.divergence.values(r.divergence.values.size() - 1),
              (double)r.n_jumps,
              r.shell_weight_drift,
              r.max_occupation_drift,
              (double)r.shell.size()};
    }
    case ExperimentKind::BoltzmannCheck: {
      const double ground =
          (double)cfg.system.n_spins * -0.5 *
          std::abs(cfg.system.zeeman_frequencies[0]);
      const std::uint64_t seeds[1] = {seed};
      const BoltzmannCheckResult r = boltzmann_check(
          cfg.system, cfg.jumps, ground + cfg.boltzmann.e_target_above_ground,
          cfg.boltzmann.total_time, seeds, cfg.boltzmann.n_samples);
      return {(double)index, (double)seed,   r.mean_tv,
              r.beta,        r.target(1),    r.measured_mean(1)};
    }
    case ExperimentKind::Correlate: {
      const StateVector initial =
          make_initial(cfg.initial, eig, cfg.jumps, derive_seed(seed, 31));
      const Matrix f = build_observable(cfg.correlate.f, cfg.system, ham);
      const Matrix g = build_observable(cfg.correlate.g, cfg.system, ham);
      CorrelationParams params;
      params.t_grid = Eigen::Map<const Eigen::VectorXd>(
          cfg.correlate.t_grid.data(), (Eigen::Index)cfg.correlate.t_grid.size());
      params.trajectory_time = cfg.correlate.trajectory_time;
      params.sample_dt = cfg.correlate.sample_dt;
      params.burn_in = cfg.correlate.burn_in;
      const TimeSeries series = correlation_experiment(
          eig, initial, f, g, cfg.jumps, n_particles, params,
          derive_seed(seed, 51));
      std::vector<double> row = {(double)index, (double)seed};
      for (Eigen::Index i = 0; i < series.values.size(); ++i)
        row.push_back(series.values(i));
      return row;
    }
    case ExperimentKind::Ergodicity: {
      const StateVector initial =
          make_initial(cfg.initial, eig, cfg.jumps, derive_seed(seed, 31));
      const Matrix A =
          build_observable(cfg.ergodicity.observable, cfg.system, ham);
      const ErgodicityResult r = ergodicity_check(
          eig, initial, A, cfg.jumps, n_particles,
          cfg.ergodicity.trajectory_time, derive_seed(seed, 61),
          cfg.ergodicity.n_samples);
      return {(double)index, (double)seed, r.time_average, r.ensemble_average,
              r.gap};
    }
    case ExperimentKind::Ensemble:
      throw std::logic_error("ensemble experiment has no trajectories");
  }
  throw std::logic_error("unreachable");
}

ResultRecord run_ensemble(const RunConfig& cfg) {
  LevelSpec levels;
  levels.energies = Eigen::Map<const Eigen::VectorXd>(
      cfg.ensemble.level_energies.data(),
      (Eigen::Index)cfg.ensemble.level_energies.size());
  if (!cfg.ensemble.degeneracies.empty())
    levels.degeneracies = Eigen::Map<const Eigen::VectorXi>(
        cfg.ensemble.degeneracies.data(),
        (Eigen::Index)cfg.ensemble.degeneracies.size());
  levels.validate();
  const long n = cfg.ensemble.n_particles;
  const double beta = cfg.ensemble.beta
                          ? *cfg.ensemble.beta
                          : solve_beta(levels, n, *cfg.ensemble.e_target);
  const ThermoState th = partition_values(levels, n, beta);
  const Eigen::VectorXd w = particle_level_probability(levels, beta);
  const OccupancyProfile profile = boltzmann_profile(levels, n, beta);

  ResultRecord rec;
  rec.experiment = to_string(cfg.kind);
  rec.columns = {"beta", "z1", "log_z", "free_energy", "internal_energy"};
  std::vector<double> row = {th.beta, th.z1, th.log_z, th.free_energy,
                             th.internal_energy};
  for (Eigen::Index i = 0; i < levels.count(); ++i) {
    rec.columns.push_back("w_" + std::to_string(i));
    row.push_back(w(i));
  }
  for (Eigen::Index i = 0; i < levels.count(); ++i) {
    rec.columns.push_back("n_" + std::to_string(i));
    row.push_back(profile.occupations(i));
  }
  rec.rows.push_back(std::move(row));
  rec.recompute_aggregates();
  return rec;
}

std::vector<std::string> columns_for(const RunConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::Echo:
      return {"trajectory", "seed", "fidelity", "n_jumps",
              "observable_recovery"};
    case ExperimentKind::Equilibrate:
      return {"trajectory",        "seed",
              "final_divergence",  "n_jumps",
              "shell_weight_drift", "max_occupation_drift",
              "shell_size"};
    case ExperimentKind::BoltzmannCheck:
      return {"trajectory", "seed",        "tv_distance",
              "beta",       "target_upper", "measured_upper"};
    case ExperimentKind::Correlate: {
      std::vector<std::string> cols = {"trajectory", "seed"};
      for (std::size_t i = 0; i < cfg.correlate.t_grid.size(); ++i)
        cols.push_back("r_" + std::to_string(i));
      return cols;
    }
    case ExperimentKind::Ergodicity:
      return {"trajectory", "seed", "time_average", "ensemble_average", "gap"};
    case ExperimentKind::Ensemble:
      return {};
  }
  return {};
}

std::string timestamp_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

}  // namespace

ResultRecord run(const RunConfig& config, int workers) {
  if (workers < 1) workers = 1;
  ResultRecord rec;
  rec.fingerprint = config_fingerprint(config);
  rec.tool_version = kToolVersion;
  rec.wall_clock = timestamp_now();

  if (config.kind == ExperimentKind::Ensemble) {
    ResultRecord ens = run_ensemble(config);
    ens.fingerprint = rec.fingerprint;
    ens.tool_version = rec.tool_version;
    ens.wall_clock = rec.wall_clock;
    return ens;
  }

  rec.experiment = to_string(config.kind);
  rec.columns = columns_for(config);

  const Hamiltonian ham = build_hamiltonian(config.system);
  const EigenSystem eig = eigendecompose(ham.total);

  const int n = config.n_trajectories;
  std::vector<std::vector<double>> rows((std::size_t)n);
  std::vector<std::string> errors((std::size_t)n);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        rows[(std::size_t)i] = run_trajectory(config, ham, eig, i);
      } catch (const std::exception& e) {
        errors[(std::size_t)i] = e.what();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // deterministic merge: rows kept in trajectory-index order
  std::size_t failures = 0;
  std::string first_error;
  for (int i = 0; i < n; ++i) {
    if (!rows[(std::size_t)i].empty()) {
      rec.rows.push_back(std::move(rows[(std::size_t)i]));
    } else {
      ++failures;
      if (first_error.empty()) first_error = errors[(std::size_t)i];
    }
  }
  if (failures == (std::size_t)n)
    throw std::runtime_error("all trajectories failed: " + first_error);
  if (failures)
    std::cerr << "warning: " << failures << " of " << n
              << " trajectories failed (first: " << first_error << ")\n";
  rec.recompute_aggregates();
  return rec;
}

void emit_csv(const ResultRecord& record, std::ostream& out) {
  ResultRecord check = record;
  check.recompute_aggregates();
  for (std::size_t c = 0; c < record.columns.size(); ++c)
    if (check.aggregates[c].mean != record.aggregates[c].mean ||
        check.aggregates[c].stddev != record.aggregates[c].stddev ||
        check.aggregates[c].count != record.aggregates[c].count)
      throw std::logic_error("aggregate statistics inconsistent with rows");

  out << "fingerprint";
  for (const auto& col : record.columns) out << ',' << csv_quote(col);
  out << "\r\n";
  for (const auto& row : record.rows) {
    out << record.fingerprint;
    for (double v : row) out << ',' << format_double(v);
    out << "\r\n";
  }
}

void emit_json(const ResultRecord& record, std::ostream& out) {
  ResultRecord check = record;
  check.recompute_aggregates();
  for (std::size_t c = 0; c < record.columns.size(); ++c)
    if (check.aggregates[c].mean != record.aggregates[c].mean ||
        check.aggregates[c].stddev != record.aggregates[c].stddev ||
        check.aggregates[c].count != record.aggregates[c].count)
      throw std::logic_error("aggregate statistics inconsistent with rows");

  json doc;
  doc["schema_version"] = "1";
  doc["fingerprint"] = record.fingerprint;
  doc["experiment"] = record.experiment;
  doc["tool_version"] = record.tool_version;
  doc["wall_clock"] = record.wall_clock;
  doc["columns"] = record.columns;
  json rows = json::array();
  for (const auto& row : record.rows) {
    json r = json::array();
    for (double v : row) {
      if (std::isfinite(v))
        r.push_back(v);
      else
        r.push_back(nullptr);  // NaN carried as null
    }
    rows.push_back(std::move(r));
  }
  doc["trajectories"] = rows;
  json aggs;
  for (std::size_t c = 0; c < record.columns.size(); ++c) {
    aggs[record.columns[c]] = {{"mean", record.aggregates[c].mean},
                               {"stddev", record.aggregates[c].stddev},
                               {"count", record.aggregates[c].count}};
  }
  doc["aggregates"] = aggs;
  out << doc.dump(2) << "\n";
}

void emit(const ResultRecord& record, OutputFormat format,
          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output path: " + path);
  if (format == OutputFormat::Csv)
    emit_csv(record, out);
  else
    emit_json(record, out);
  if (!out) throw std::runtime_error("write failure: " + path);
}

ResultRecord read_json(std::istream& in) {
  json doc = json::parse(in);
  ResultRecord rec;
  rec.fingerprint = doc.at("fingerprint").get<std::string>();
  rec.experiment = doc.at("experiment").get<std::string>();
  rec.tool_version = doc.at("tool_version").get<std::string>();
  rec.wall_clock = doc.at("wall_clock").get<std::string>();
  rec.columns = doc.at("columns").get<std::vector<std::string>>();
  for (const auto& row : doc.at("trajectories")) {
    std::vector<double> r;
    for (const auto& v : row)
      r.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                              : v.get<double>());
    rec.rows.push_back(std::move(r));
  }
  for (const auto& col : rec.columns) {
    const json& a = doc.at("aggregates").at(col);
    rec.aggregates.push_back(Aggregate{a.at("mean").get<double>(),
                                       a.at("stddev").get<double>(),
                                       a.at("count").get<long>()});
  }
  return rec;
}

}  // namespace xprob::harness
