#include "msmemu/sampling.hpp"

#include <fstream>
#include <json.hpp>

#include "msmemu/errors.hpp"
#include "msmemu/parallel.hpp"

namespace msmemu {

void SamplerConfig::validate() const {
  if (n_frames < 1) throw ConfigError("n_frames must be positive");
  if (ode_steps < 1) throw ConfigError("ode_steps must be positive");
  if (first_layer < 0) throw ConfigError("first_layer must be non-negative");
  if (rollout_len < 0) throw ConfigError("rollout_len must be non-negative");
}

TokenSeq integrate_ode(const ParamStore& params, const TokenSeq& cond,
                       const std::vector<int>& labels, int n_steps, OdeMethod method,
                       RngKey noise_key) {
  if (n_steps < 1) throw ConfigError("ode_steps must be positive");
  RngKey nk = noise_key.derive(0x657073ull);
  TokenSeq x(cond.rows(), cond.cols());
  for (long c = 0; c < x.cols(); ++c)
    for (long r = 0; r < x.rows(); ++r)
      x(r, c) = nk.normal(static_cast<uint64_t>(r + x.rows() * c));

  const double h = 1.0 / n_steps;
  for (int k = 0; k < n_steps; ++k) {
    double s = static_cast<double>(k) * h;
    TokenSeq v1 = velocity_forward(params, s, x, cond, labels);
    if (method == OdeMethod::euler) {
      x += h * v1;
    } else {
      TokenSeq xp = x + h * v1;
      TokenSeq v2 = velocity_forward(params, s + h, xp, cond, labels);
      x += 0.5 * h * (v1 + v2);
    }
  }
  if (!x.allFinite()) throw NumericError("flow integration diverged");
  return canonicalize_tokens(x);
}

Conformation generate_next(const ParamStore& params, const SystemSpec& system,
                           const Conformation& cond, int n_steps, OdeMethod method, RngKey key) {
  TokenSeq g = encode_tokens(cond, system);
  TokenSeq out = integrate_ode(params, g, system.labels, n_steps, method, key);
  return decode_tokens(out, system);
}

namespace {

struct Node {
  Conformation conf;
  RngKey key;
  int id = -1;
  const ParamStore* model = nullptr;
  bool primary = true;
};

}  // namespace

SampleResult sample_ensemble(const ParamStore& model, const ParamStore* baseline,
                             const SystemSpec& system, const Conformation& start,
                             const SamplerConfig& cfg, uint64_t seed) {
  cfg.validate();
  system.validate();
  if (start.x.rows() != system.n_particles || start.x.cols() != system.dim)
    throw ShapeError("root conformation does not match system");

  int width = 0;  // layer under the root
  switch (cfg.scheme) {
    case SampleScheme::parallel:
      width = cfg.n_frames;
      break;
    case SampleScheme::autoregressive:
      width = 1;
      break;
    case SampleScheme::tree:
      width = cfg.first_layer == 0 ? cfg.n_frames : std::min(cfg.first_layer, cfg.n_frames);
      break;
    case SampleScheme::hybrid:
      width = cfg.rollout_len == 0
                  ? cfg.n_frames
                  : (cfg.n_frames + cfg.rollout_len) / (1 + cfg.rollout_len);
      width = std::max(1, std::min(width, cfg.n_frames));
      if (cfg.rollout_len > 0 && baseline == nullptr)
        throw ConfigError("hybrid rollouts require a baseline model");
      break;
  }

  const ParamStore* later_model =
      cfg.scheme == SampleScheme::hybrid && baseline != nullptr ? baseline : &model;

  RngKey base{mix64(hash64({seed, 0x73616d70ull}))};
  SampleResult result;
  result.ensemble.n_particles = system.n_particles;
  result.ensemble.dim = system.dim;
  result.ensemble.save_interval = 0.0;
  result.ensemble.temperature = 0.0;
  result.ensemble.seed = seed;
  result.ensemble.frames.resize(cfg.n_frames,
                                static_cast<long>(system.n_particles) * system.dim);

  std::vector<Node> frontier;
  int next_id = 0;
  int layer = 1;

  auto grow = [&](const std::vector<Node>& parents, int count, const ParamStore* ps,
                  bool primary) {
    std::vector<Node> children(count);
    parallel_for(static_cast<size_t>(count), [&](size_t i) {
      const Node& p = parents[i];
      RngKey key = p.id < 0 ? base.derive(static_cast<uint64_t>(next_id + i)) : p.key.derive(0);
      Node c;
      c.conf = generate_next(*ps, system, p.conf, cfg.ode_steps, cfg.method, key);
      c.key = key;
      c.id = next_id + static_cast<int>(i);
      c.model = ps;
      c.primary = primary;
      children[i] = c;
    });
    for (int i = 0; i < count; ++i) {
      const Node& c = children[i];
      result.ensemble.set_frame(c.id, c.conf);
      ProvenanceNode pn;
      pn.id = c.id;
      pn.parent = parents[i].id;
      pn.layer = layer;
      pn.model = primary ? "primary" : "baseline";
      result.provenance.push_back(pn);
    }
    next_id += count;
    return children;
  };

  Node root;
  root.conf = start;
  root.key = base;
  root.id = -1;
  std::vector<Node> roots(static_cast<size_t>(width), root);
  frontier = grow(roots, width, &model, true);

  while (next_id < cfg.n_frames) {
    ++layer;
    int count = std::min<int>(static_cast<int>(frontier.size()), cfg.n_frames - next_id);
    std::vector<Node> parents(frontier.begin(), frontier.begin() + count);
    frontier = grow(parents, count, later_model, later_model == &model);
  }
  return result;
}

const char* scheme_name(SampleScheme scheme) {
  switch (scheme) {
    case SampleScheme::parallel:
      return "parallel";
    case SampleScheme::autoregressive:
      return "autoregressive";
    case SampleScheme::tree:
      return "tree";
    case SampleScheme::hybrid:
      return "hybrid";
  }
  return "parallel";
}

SampleScheme scheme_from_name(const std::string& name) {
  if (name == "parallel") return SampleScheme::parallel;
  if (name == "autoregressive") return SampleScheme::autoregressive;
  if (name == "tree") return SampleScheme::tree;
  if (name == "hybrid") return SampleScheme::hybrid;
  throw ConfigError("unknown sampling scheme: " + name);
}

const char* ode_method_name(OdeMethod method) {
  return method == OdeMethod::euler ? "euler" : "heun";
}

OdeMethod ode_method_from_name(const std::string& name) {
  if (name == "euler") return OdeMethod::euler;
  if (name == "heun") return OdeMethod::heun;
  throw ConfigError("unknown integrator: " + name);
}

void write_provenance_json(const std::string& path, const SamplerConfig& cfg,
                           const std::vector<ProvenanceNode>& nodes) {
  nlohmann::json j;
  j["format"] = "msm-emu/provenance";
  j["version"] = 1;
  j["scheme"] = scheme_name(cfg.scheme);
  j["n_frames"] = cfg.n_frames;
  j["ode_steps"] = cfg.ode_steps;
  j["method"] = ode_method_name(cfg.method);
  j["first_layer"] = cfg.first_layer;
  j["rollout_len"] = cfg.rollout_len;
  nlohmann::json arr = nlohmann::json::array();
  for (const ProvenanceNode& n : nodes) {
    nlohmann::json e;
    e["id"] = n.id;
    e["parent"] = n.parent;
    e["layer"] = n.layer;
    e["model"] = n.model;
    arr.push_back(e);
  }
  j["nodes"] = arr;
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
}

}  // namespace msmemu
