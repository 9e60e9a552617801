#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "msmemu/core.hpp"
#include "msmemu/flowmodel.hpp"
#include "msmemu/rng.hpp"

namespace msmemu {

enum class OdeMethod { euler, heun };

enum class SampleScheme { parallel, autoregressive, tree, hybrid };

struct SamplerConfig {
  SampleScheme scheme = SampleScheme::parallel;
  int n_frames = 100;
  int ode_steps = 50;
  OdeMethod method = OdeMethod::euler;
  int first_layer = 0;  // tree: width of the layer under the root; 0 means n_frames
  int rollout_len = 0;  // hybrid: baseline continuation frames per anchor

  void validate() const;
};

// Integrates dx/ds = v(s, x) from s=0 (pure noise) to s=1 conditioned on
// cond; the start noise is a pure function of noise_key. Returns
// canonicalized tokens.
TokenSeq integrate_ode(const ParamStore& params, const TokenSeq& cond,
                       const std::vector<int>& labels, int n_steps, OdeMethod method,
                       RngKey noise_key);

// One generative transition: encode the conditioning conformation, transport
// noise through the flow, decode the result.
Conformation generate_next(const ParamStore& params, const SystemSpec& system,
                           const Conformation& cond, int n_steps, OdeMethod method, RngKey key);

struct ProvenanceNode {
  int id = 0;
  int parent = -1;  // -1 means conditioned on the root conformation
  int layer = 1;
  std::string model;  // "primary" or "baseline"
};

struct SampleResult {
  Trajectory ensemble;  // frames in node-id order, save_interval 0
  std::vector<ProvenanceNode> provenance;
};

// Generates an ensemble of n_frames conformations rooted at start. The tree
// scheme fans first_layer children out of the root, then grows one child per
// leaf per round, truncating the last round at the lowest leaf ids. parallel
// and autoregressive are the widest and narrowest trees. hybrid fans primary
// anchors out of the root and extends each with baseline rollouts. Node noise
// keys are path-derived, so every frame is independent of generation order.
SampleResult sample_ensemble(const ParamStore& model, const ParamStore* baseline,
                             const SystemSpec& system, const Conformation& start,
                             const SamplerConfig& cfg, uint64_t seed);

const char* scheme_name(SampleScheme scheme);
SampleScheme scheme_from_name(const std::string& name);
const char* ode_method_name(OdeMethod method);
OdeMethod ode_method_from_name(const std::string& name);

void write_provenance_json(const std::string& path, const SamplerConfig& cfg,
                           const std::vector<ProvenanceNode>& nodes);

}  // namespace msmemu
