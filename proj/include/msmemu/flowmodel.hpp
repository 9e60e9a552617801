#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "msmemu/core.hpp"
#include "msmemu/msm.hpp"
#include "msmemu/rng.hpp"

namespace msmemu {

// Trigonometric flow schedule: alpha ramps data in, sigma ramps noise out,
// with alpha^2 + sigma^2 = 1 at every s.
double schedule_alpha(double s);
double schedule_sigma(double s);
double schedule_alpha_dot(double s);
double schedule_sigma_dot(double s);

// x_s = sigma(s) * eps + alpha(s) * x1 and its time derivative, the
// regression target for the velocity network.
TokenSeq interpolate_tokens(const TokenSeq& x1, const TokenSeq& eps, double s);
TokenSeq target_velocity(const TokenSeq& x1, const TokenSeq& eps, double s);

struct NetConfig {
  int hidden = 64;
  int time_dim = 16;  // even
  int label_dim = 8;
  int n_blocks = 2;
  int n_enc_layers = 1;
  int n_labels = 1;

  void validate() const;
};

struct ParamEntry {
  std::string name;
  int rows = 0;
  int cols = 0;  // 1 for vectors
  long offset = 0;
};

// All network weights in one flat vector with a named-slice manifest, so
// gradients, Adam state and the EMA shadow share a single layout.
struct ParamStore {
  NetConfig cfg;
  std::vector<ParamEntry> entries;
  std::unordered_map<std::string, int> index;
  Eigen::VectorXd data;

  Eigen::Map<Eigen::MatrixXd> mat(const std::string& name);
  Eigen::Map<const Eigen::MatrixXd> mat(const std::string& name) const;
  long size() const { return data.size(); }
};

// Layout with zero weights everywhere; the manifest alone defines shapes.
ParamStore make_param_store(const NetConfig& cfg);
// Random init: hidden linears scaled by 1/sqrt(fan_in); modulation and final
// projection start at zero so the initial velocity field is exactly zero.
ParamStore init_params(const NetConfig& cfg, uint64_t seed);

// Velocity field v(s, x_s; cond, labels): time embedding -> label embedding ->
// conditioning encoder with mean-pool context -> linear injections of cond and
// x_s -> time-modulated residual token blocks -> time-modulated zero-init
// output projection. Permutation-equivariant over tokens.
TokenSeq velocity_forward(const ParamStore& params, double s, const TokenSeq& xs,
                          const TokenSeq& cond, const std::vector<int>& labels);

struct TrainingPair {
  TokenSeq cond;
  TokenSeq target;
};

// Flow-matching MSE for one (cond, target) element at fixed (s, eps); when
// grad is non-null accumulates d loss / d params scaled by weight.
double element_loss_and_grad(const ParamStore& params, const TrainingPair& pair,
                             const std::vector<int>& labels, double s, const TokenSeq& eps,
                             Eigen::VectorXd* grad, double weight);

// Mean element loss over the batch with (s, eps) drawn deterministically from
// noise_key; fills grad (same layout as params.data) when non-null.
double loss_and_grad(const ParamStore& params, const std::vector<TrainingPair>& batch,
                     const std::vector<int>& labels, RngKey noise_key, Eigen::VectorXd* grad);

struct FrameRef {
  int traj = 0;
  long frame = 0;
};
struct PairRef {
  FrameRef cond;
  FrameRef target;
};

// MSM-informed pairs: sources are the first frame's state plus uniform draws
// over macrostates; destinations follow the transition row of each source;
// frames are uniform over the per-state pools spanning all trajectories.
std::vector<PairRef> sample_msm_pairs(const Eigen::MatrixXd& transition,
                                      const std::vector<std::vector<int>>& state_seqs,
                                      int n_src_states, int n_dst_per_src, int frames_per_pair,
                                      RngKey key);

// Fixed-lag pairs (t, t + lag): trajectories weighted by their count of valid
// offsets, offsets uniform.
std::vector<PairRef> sample_fixedlag_pairs(const std::vector<long>& traj_lengths, int lag,
                                           int n_pairs, RngKey key);

struct AdamState {
  Eigen::VectorXd m, v;
  long t = 0;
};
AdamState make_adam_state(long n);
void adam_step(Eigen::VectorXd& params, AdamState& state, const Eigen::VectorXd& grad, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
               double weight_decay = 0.0);

void ema_update(Eigen::VectorXd& shadow, const Eigen::VectorXd& params, double decay);

struct TrainConfig {
  enum class Mode { mars, fixed_lag };
  Mode mode = Mode::mars;
  int epochs = 40;
  int batch_size = 8;
  double lr = 1e-4;
  double ema_decay = 0.999;
  double weight_decay = 0.0;
  int n_src_states = 4;
  int n_dst_per_src = 4;
  int frames_per_pair = 8;
  int fixed_lag = 1;
  int n_val_pairs = 64;
  NetConfig net;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_ms = 0.0;  // informational only, excluded from reproducibility checks
};

struct TrainResult {
  ParamStore params;
  Eigen::VectorXd ema;
  std::vector<EpochLog> log;
  TrainConfig::Mode mode = TrainConfig::Mode::mars;
};

// Trains the velocity network on MSM-induced or fixed-lag transition pairs.
// msm may be null only in fixed_lag mode. Optional warm start from
// resume_from (same architecture required).
TrainResult train_flow_model(const std::vector<Trajectory>& trajs, const SystemSpec& system,
                             const MsmContext* msm, const TrainConfig& cfg, uint64_t seed,
                             const ParamStore* resume_from = nullptr,
                             const Eigen::VectorXd* resume_ema = nullptr);

struct Checkpoint {
  ParamStore params;
  Eigen::VectorXd ema;
  TrainConfig::Mode mode = TrainConfig::Mode::mars;
};

void save_checkpoint(const std::string& path, const ParamStore& params, const Eigen::VectorXd& ema,
                     TrainConfig::Mode mode);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace msmemu
