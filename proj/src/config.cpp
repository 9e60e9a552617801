#include "msmemu/config.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "msmemu/errors.hpp"
#include "msmemu/rng.hpp"

namespace msmemu {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw ConfigError("config: " + msg); }

std::string joined(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

const json& section_object(const json& j, const std::string& key) {
  const json& s = j.at(key);
  if (!s.is_object()) fail(key + " must be an object");
  return s;
}

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) fail("unknown key " + joined(section, it.key()));
  }
}

double get_number(const json& j, const std::string& section, const char* key, double dflt) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_number()) fail(joined(section, key) + " must be a number");
  return v.get<double>();
}

long get_integer(const json& j, const std::string& section, const char* key, long dflt) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_number_integer()) fail(joined(section, key) + " must be an integer");
  return v.get<long>();
}

bool get_bool(const json& j, const std::string& section, const char* key, bool dflt) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_boolean()) fail(joined(section, key) + " must be a boolean");
  return v.get<bool>();
}

std::string get_string(const json& j, const std::string& section, const char* key,
                       const std::string& dflt) {
  if (!j.contains(key)) return dflt;
  const json& v = j.at(key);
  if (!v.is_string()) fail(joined(section, key) + " must be a string");
  return v.get<std::string>();
}

void parse_system(const json& j, SystemSpec& s) {
  check_keys(j, "system", {"n_particles", "dim", "masses", "labels", "n_torsions"});
  s.n_particles = static_cast<int>(get_integer(j, "system", "n_particles", 1));
  s.dim = static_cast<int>(get_integer(j, "system", "dim", 1));
  s.n_torsions = static_cast<int>(get_integer(j, "system", "n_torsions", 0));
  if (s.n_particles < 1) fail("system.n_particles must be positive");

  s.masses.assign(static_cast<size_t>(s.n_particles), 1.0);
  if (j.contains("masses")) {
    const json& m = j.at("masses");
    if (m.is_number()) {
      std::fill(s.masses.begin(), s.masses.end(), m.get<double>());
    } else if (m.is_array()) {
      if (static_cast<int>(m.size()) != s.n_particles)
        fail("system.masses must list one mass per particle");
      for (int p = 0; p < s.n_particles; ++p) {
        if (!m[static_cast<size_t>(p)].is_number()) fail("system.masses entries must be numbers");
        s.masses[static_cast<size_t>(p)] = m[static_cast<size_t>(p)].get<double>();
      }
    } else {
      fail("system.masses must be a number or an array");
    }
  }

  s.labels.assign(static_cast<size_t>(s.n_particles), 0);
  if (j.contains("labels")) {
    const json& l = j.at("labels");
    if (!l.is_array() || static_cast<int>(l.size()) != s.n_particles)
      fail("system.labels must list one label per particle");
    for (int p = 0; p < s.n_particles; ++p) {
      if (!l[static_cast<size_t>(p)].is_number_integer())
        fail("system.labels entries must be integers");
      s.labels[static_cast<size_t>(p)] = l[static_cast<size_t>(p)].get<int>();
    }
  }
}

void parse_potential(const json& j, const SystemSpec& system, Potential& pot) {
  std::string kind = get_string(j, "potential", "kind", "harmonic");
  if (kind == "harmonic") {
    check_keys(j, "potential", {"kind", "k", "center"});
    Eigen::VectorXd center = Eigen::VectorXd::Zero(system.dim);
    if (j.contains("center")) {
      const json& c = j.at("center");
      if (!c.is_array() || static_cast<int>(c.size()) != system.dim)
        fail("potential.center must list one coordinate per dimension");
      for (int d = 0; d < system.dim; ++d) center(d) = c[static_cast<size_t>(d)].get<double>();
    }
    pot = Potential::make_harmonic(get_number(j, "potential", "k", 1.0), center);
  } else if (kind == "double_well") {
    check_keys(j, "potential", {"kind", "a", "tilt"});
    pot = Potential::make_double_well(get_number(j, "potential", "a", 4.0),
                                      get_number(j, "potential", "tilt", 0.0));
  } else if (kind == "triple_well") {
    check_keys(j, "potential", {"kind", "radius", "depth", "width", "confinement"});
    pot = Potential::make_triple_well(
        default_triple_wells(get_number(j, "potential", "radius", 2.0),
                             get_number(j, "potential", "depth", 5.0),
                             get_number(j, "potential", "width", 0.6)),
        get_number(j, "potential", "confinement", 0.1));
  } else if (kind == "torsion_chain") {
    check_keys(j, "potential",
               {"kind", "k_bond", "b0", "k_angle", "cos_theta0", "k_dihedral", "phi0",
                "multiplicity"});
    pot = Potential::make_torsion_chain(
        get_number(j, "potential", "k_bond", 100.0), get_number(j, "potential", "b0", 1.0),
        get_number(j, "potential", "k_angle", 20.0),
        get_number(j, "potential", "cos_theta0", -1.0 / 3.0),
        get_number(j, "potential", "k_dihedral", 1.0), get_number(j, "potential", "phi0", M_PI / 3),
        static_cast<int>(get_integer(j, "potential", "multiplicity", 1)));
  } else {
    fail("potential.kind must be harmonic, double_well, triple_well or torsion_chain");
  }
}

void parse_langevin(const json& j, LangevinParams& p, int& n_replicas) {
  check_keys(j, "langevin", {"gamma", "temperature", "dt", "n_steps", "save_stride", "n_replicas"});
  p.gamma = get_number(j, "langevin", "gamma", p.gamma);
  p.temperature = get_number(j, "langevin", "temperature", p.temperature);
  p.dt = get_number(j, "langevin", "dt", p.dt);
  p.n_steps = get_integer(j, "langevin", "n_steps", p.n_steps);
  p.save_stride = static_cast<int>(get_integer(j, "langevin", "save_stride", p.save_stride));
  n_replicas = static_cast<int>(get_integer(j, "langevin", "n_replicas", n_replicas));
}

void parse_msm(const json& j, MsmConfig& m) {
  check_keys(j, "msm",
             {"features", "lag", "tica_lag", "variance_cut", "ridge", "n_micro", "n_macro",
              "kmeans_max_iter", "ss_theta_ref", "ss_window"});
  m.feature_kind = feature_kind_from_name(
      get_string(j, "msm", "features", feature_kind_name(m.feature_kind)));
  m.lag = static_cast<int>(get_integer(j, "msm", "lag", m.lag));
  m.tica_lag = static_cast<int>(get_integer(j, "msm", "tica_lag", m.tica_lag));
  m.variance_cut = get_number(j, "msm", "variance_cut", m.variance_cut);
  m.ridge = get_number(j, "msm", "ridge", m.ridge);
  m.n_micro = static_cast<int>(get_integer(j, "msm", "n_micro", m.n_micro));
  m.n_macro = static_cast<int>(get_integer(j, "msm", "n_macro", m.n_macro));
  m.kmeans_max_iter = static_cast<int>(get_integer(j, "msm", "kmeans_max_iter", m.kmeans_max_iter));
  m.ss.theta_ref = get_number(j, "msm", "ss_theta_ref", m.ss.theta_ref);
  m.ss.window = get_number(j, "msm", "ss_window", m.ss.window);
}

void parse_net(const json& j, NetConfig& n) {
  check_keys(j, "train.net", {"hidden", "time_dim", "label_dim", "n_blocks", "n_enc_layers"});
  n.hidden = static_cast<int>(get_integer(j, "train.net", "hidden", n.hidden));
  n.time_dim = static_cast<int>(get_integer(j, "train.net", "time_dim", n.time_dim));
  n.label_dim = static_cast<int>(get_integer(j, "train.net", "label_dim", n.label_dim));
  n.n_blocks = static_cast<int>(get_integer(j, "train.net", "n_blocks", n.n_blocks));
  n.n_enc_layers = static_cast<int>(get_integer(j, "train.net", "n_enc_layers", n.n_enc_layers));
}

void parse_train(const json& j, TrainConfig& t, TrainSelect& select, bool& resume) {
  check_keys(j, "train",
             {"mode", "epochs", "batch_size", "lr", "ema_decay", "weight_decay", "n_src_states",
              "n_dst_per_src", "frames_per_pair", "fixed_lag", "n_val_pairs", "resume", "net"});
  select = train_select_from_name(get_string(j, "train", "mode", train_select_name(select)));
  t.epochs = static_cast<int>(get_integer(j, "train", "epochs", t.epochs));
  t.batch_size = static_cast<int>(get_integer(j, "train", "batch_size", t.batch_size));
  t.lr = get_number(j, "train", "lr", t.lr);
  t.ema_decay = get_number(j, "train", "ema_decay", t.ema_decay);
  t.weight_decay = get_number(j, "train", "weight_decay", t.weight_decay);
  t.n_src_states = static_cast<int>(get_integer(j, "train", "n_src_states", t.n_src_states));
  t.n_dst_per_src = static_cast<int>(get_integer(j, "train", "n_dst_per_src", t.n_dst_per_src));
  t.frames_per_pair = static_cast<int>(get_integer(j, "train", "frames_per_pair", t.frames_per_pair));
  t.fixed_lag = static_cast<int>(get_integer(j, "train", "fixed_lag", t.fixed_lag));
  t.n_val_pairs = static_cast<int>(get_integer(j, "train", "n_val_pairs", t.n_val_pairs));
  resume = get_bool(j, "train", "resume", resume);
  if (j.contains("net")) parse_net(section_object(j, "net"), t.net);
}

void parse_sample(const json& j, SamplerConfig& s, ModelSelect& model, int& n_anchors) {
  check_keys(j, "sample",
             {"scheme", "n_frames", "ode_steps", "method", "first_layer", "rollout_len",
              "n_anchors", "model"});
  s.scheme = scheme_from_name(get_string(j, "sample", "scheme", scheme_name(s.scheme)));
  s.n_frames = static_cast<int>(get_integer(j, "sample", "n_frames", s.n_frames));
  s.ode_steps = static_cast<int>(get_integer(j, "sample", "ode_steps", s.ode_steps));
  s.method = ode_method_from_name(get_string(j, "sample", "method", ode_method_name(s.method)));
  s.first_layer = static_cast<int>(get_integer(j, "sample", "first_layer", s.first_layer));
  s.rollout_len = static_cast<int>(get_integer(j, "sample", "rollout_len", s.rollout_len));
  n_anchors = static_cast<int>(get_integer(j, "sample", "n_anchors", n_anchors));
  model = model_select_from_name(get_string(j, "sample", "model", model_select_name(model)));
}

void parse_metrics(const json& j, MetricParams& m) {
  check_keys(j, "metrics",
             {"n_bins", "floor_kl", "floor_mmae", "kT", "fold_steepness", "fnc_beta", "fnc_lambda",
              "fnc_cutoff", "fnc_min_sep", "fnc_inverted_sign"});
  m.hist.n_bins = static_cast<int>(get_integer(j, "metrics", "n_bins", m.hist.n_bins));
  m.hist.floor_kl = get_number(j, "metrics", "floor_kl", m.hist.floor_kl);
  m.hist.floor_mmae = get_number(j, "metrics", "floor_mmae", m.hist.floor_mmae);
  m.kT = get_number(j, "metrics", "kT", m.kT);
  m.fold_steepness = get_number(j, "metrics", "fold_steepness", m.fold_steepness);
  m.fnc.beta = get_number(j, "metrics", "fnc_beta", m.fnc.beta);
  m.fnc.lam = get_number(j, "metrics", "fnc_lambda", m.fnc.lam);
  m.fnc.cutoff = get_number(j, "metrics", "fnc_cutoff", m.fnc.cutoff);
  m.fnc.min_sep = static_cast<int>(get_integer(j, "metrics", "fnc_min_sep", m.fnc.min_sep));
  m.fnc.inverted_sign = get_bool(j, "metrics", "fnc_inverted_sign", m.fnc.inverted_sign);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    size_t line = 1, col = 1;
    for (size_t i = 0; i < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    fail("parse error at line " + std::to_string(line) + ", column " + std::to_string(col));
  }
  if (!j.is_object()) fail("top level must be an object");
  check_keys(j, "",
             {"seed", "out_dir", "system", "potential", "langevin", "msm", "train", "sample",
              "metrics"});

  RunConfig cfg;
  cfg.system.masses.assign(1, 1.0);
  cfg.system.labels.assign(1, 0);

  if (j.contains("seed")) {
    const json& v = j.at("seed");
    if (!v.is_number_integer()) fail("seed must be a non-negative integer");
    if (!v.is_number_unsigned() && v.get<long long>() < 0)
      fail("seed must be a non-negative integer");
    cfg.seed = v.get<uint64_t>();
  }
  cfg.out_dir = get_string(j, "", "out_dir", cfg.out_dir);

  if (j.contains("system")) parse_system(section_object(j, "system"), cfg.system);
  if (j.contains("potential")) parse_potential(section_object(j, "potential"), cfg.system, cfg.potential);
  if (j.contains("langevin")) parse_langevin(section_object(j, "langevin"), cfg.langevin, cfg.n_replicas);
  if (j.contains("msm")) parse_msm(section_object(j, "msm"), cfg.msm);
  if (j.contains("train"))
    parse_train(section_object(j, "train"), cfg.train, cfg.train_select, cfg.train_resume);
  if (j.contains("sample"))
    parse_sample(section_object(j, "sample"), cfg.sample, cfg.sample_model, cfg.n_anchors);

  bool kT_given = j.contains("metrics") && j.at("metrics").is_object() &&
                  j.at("metrics").contains("kT");
  if (j.contains("metrics")) parse_metrics(section_object(j, "metrics"), cfg.metrics);
  if (!kT_given) cfg.metrics.kT = cfg.langevin.temperature;
  cfg.metrics.ss = cfg.msm.ss;
  cfg.train.net.n_labels = cfg.system.n_labels();

  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_run_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " [" + path + "]");
  }
}

void validate_run_config(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
  cfg.system.validate();
  cfg.potential.validate(cfg.system);
  if (cfg.langevin.gamma <= 0.0) throw ConfigError("config: langevin.gamma must be positive");
  if (cfg.langevin.temperature < 0.0)
    throw ConfigError("config: langevin.temperature must be non-negative");
  if (cfg.langevin.dt <= 0.0) throw ConfigError("config: langevin.dt must be positive");
  if (cfg.langevin.n_steps < 1) throw ConfigError("config: langevin.n_steps must be positive");
  if (cfg.langevin.save_stride < 1)
    throw ConfigError("config: langevin.save_stride must be positive");
  if (cfg.n_replicas < 1) throw ConfigError("config: langevin.n_replicas must be positive");
  if (cfg.msm.lag < 1) throw ConfigError("config: msm.lag must be positive");
  if (cfg.msm.tica_lag < 0) throw ConfigError("config: msm.tica_lag must be non-negative");
  if (cfg.msm.variance_cut <= 0.0 || cfg.msm.variance_cut > 1.0)
    throw ConfigError("config: msm.variance_cut must lie in (0, 1]");
  if (cfg.msm.ridge < 0.0) throw ConfigError("config: msm.ridge must be non-negative");
  if (cfg.msm.n_micro < 1) throw ConfigError("config: msm.n_micro must be positive");
  if (cfg.msm.n_macro < 1 || cfg.msm.n_macro > cfg.msm.n_micro)
    throw ConfigError("config: msm.n_macro must lie in [1, n_micro]");
  if (cfg.msm.kmeans_max_iter < 1)
    throw ConfigError("config: msm.kmeans_max_iter must be positive");
  if (cfg.train.epochs < 0) throw ConfigError("config: train.epochs must be non-negative");
  if (cfg.train.batch_size < 1) throw ConfigError("config: train.batch_size must be positive");
  if (cfg.train.lr <= 0.0) throw ConfigError("config: train.lr must be positive");
  if (cfg.train.ema_decay < 0.0 || cfg.train.ema_decay >= 1.0)
    throw ConfigError("config: train.ema_decay must lie in [0, 1)");
  if (cfg.train.weight_decay < 0.0)
    throw ConfigError("config: train.weight_decay must be non-negative");
  if (cfg.train.n_src_states < 1 || cfg.train.n_dst_per_src < 1 || cfg.train.frames_per_pair < 1)
    throw ConfigError("config: train pair counts must be positive");
  if (cfg.train.fixed_lag < 0) throw ConfigError("config: train.fixed_lag must be non-negative");
  if (cfg.train.n_val_pairs < 0)
    throw ConfigError("config: train.n_val_pairs must be non-negative");
  cfg.train.net.validate();
  cfg.sample.validate();
  if (cfg.n_anchors < 0) throw ConfigError("config: sample.n_anchors must be non-negative");
  if (cfg.n_anchors > 0 && cfg.sample.scheme != SampleScheme::hybrid)
    throw ConfigError("config: sample.n_anchors applies to the hybrid scheme only");
  cfg.metrics.hist.validate();
  if (cfg.metrics.kT <= 0.0) throw ConfigError("config: metrics.kT must be positive");
}

uint64_t stage_seed(uint64_t global_seed, std::string_view stage) {
  uint64_t h = 0x243f6a8885a308d3ull;
  h = mix64(h ^ global_seed);
  for (unsigned char c : stage) h = mix64(h ^ c);
  return h;
}

const char* train_select_name(TrainSelect m) {
  switch (m) {
    case TrainSelect::mars: return "mars";
    case TrainSelect::fixed_lag: return "fixed_lag";
    case TrainSelect::both: return "both";
  }
  return "mars";
}

TrainSelect train_select_from_name(const std::string& name) {
  if (name == "mars") return TrainSelect::mars;
  if (name == "fixed_lag") return TrainSelect::fixed_lag;
  if (name == "both") return TrainSelect::both;
  throw ConfigError("config: train.mode must be mars, fixed_lag or both");
}

const char* model_select_name(ModelSelect m) {
  return m == ModelSelect::mars ? "mars" : "fixed_lag";
}

ModelSelect model_select_from_name(const std::string& name) {
  if (name == "mars") return ModelSelect::mars;
  if (name == "fixed_lag") return ModelSelect::fixed_lag;
  throw ConfigError("config: sample.model must be mars or fixed_lag");
}

const char* feature_kind_name(FeatureKind kind) {
  return kind == FeatureKind::cartesian_tica ? "cartesian_tica" : "observables";
}

FeatureKind feature_kind_from_name(const std::string& name) {
  if (name == "cartesian_tica") return FeatureKind::cartesian_tica;
  if (name == "observables") return FeatureKind::observables;
  throw ConfigError("config: msm.features must be cartesian_tica or observables");
}

const char* potential_kind_name(Potential::Kind kind) {
  switch (kind) {
    case Potential::Kind::harmonic: return "harmonic";
    case Potential::Kind::double_well_1d: return "double_well";
    case Potential::Kind::triple_well_2d: return "triple_well";
    case Potential::Kind::torsion_chain: return "torsion_chain";
  }
  return "harmonic";
}

}  // namespace msmemu
