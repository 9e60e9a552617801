#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "msmemu/core.hpp"
#include "msmemu/observables.hpp"

namespace msmemu {

// Per-column zero-mean unit-variance transform (population variance).
// Constant columns map to zero.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};
Standardizer fit_standardizer(const Eigen::MatrixXd& x);

struct TicaModel {
  Eigen::VectorXd mean;         // feature mean over all lagged-pair endpoints
  Eigen::MatrixXd components;   // n_features x n_kept, C(0)-orthonormal columns
  Eigen::VectorXd eigenvalues;  // descending, clamped to [-1, 1]
  int lag = 1;
  double ridge = 1e-6;

  int n_kept() const { return static_cast<int>(eigenvalues.size()); }
  Eigen::MatrixXd project(const Eigen::MatrixXd& x) const;
};

// Time-lagged independent component analysis with symmetrized C(tau) and
// ridge-regularized C(0); lagged pairs never cross trajectory boundaries.
// Keeps the smallest prefix of components whose cumulative squared
// eigenvalues reach variance_cut of the nonnegative total (at least one).
TicaModel compute_tica(const std::vector<Eigen::MatrixXd>& feature_trajs, int lag,
                       double variance_cut, double ridge);

struct KMeansModel {
  Eigen::MatrixXd centroids;  // k x n_features
  double inertia = 0.0;
  int n_iter = 0;
};

// k-means++ seeding followed by Lloyd iterations; empty clusters are reseeded
// to the point farthest from its assigned centroid. Deterministic in seed.
KMeansModel fit_kmeans(const Eigen::MatrixXd& x, int k, uint64_t seed, int max_iter = 100);

// Index of the nearest centroid; ties resolve to the lowest index.
int nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::RowVectorXd& x);

// PCCA+ coarse-graining of a symmetric microstate transition matrix into
// n_macro metastable sets via the inner-simplex vertex construction. Output
// macrostates are relabeled so that lower microstate indices come first.
std::vector<int> pcca_plus(const Eigen::MatrixXd& transition_micro, int n_macro);

// Transition counts at the given lag, accumulated within each sequence.
Eigen::MatrixXd count_transitions(const std::vector<std::vector<int>>& frame_states, int lag,
                                  int n_states);

struct MarkovStateModel {
  Eigen::MatrixXd counts;
  Eigen::MatrixXd transition_sym;  // symmetrized row-normalized counts, before renormalization
  Eigen::MatrixXd transition;      // final row-stochastic estimate
  Eigen::VectorXd stationary;
  int lag = 1;
};

// Row-normalize counts (zero rows become unit self-loops), symmetrize
// elementwise, renormalize rows, then extract the stationary distribution by
// power iteration to 1e-12 residual.
MarkovStateModel estimate_transition_matrix(const Eigen::MatrixXd& counts, int lag = 1);

enum class FeatureKind { cartesian_tica, observables };

struct MsmConfig {
  FeatureKind feature_kind = FeatureKind::cartesian_tica;
  int lag = 10;           // saved frames
  int tica_lag = 0;       // 0 means: use lag
  double variance_cut = 0.95;
  double ridge = 1e-6;
  int n_micro = 20;
  int n_macro = 4;
  int kmeans_max_iter = 100;
  SsParams ss;            // used by the observables featurizer
};

// Everything needed to map a conformation to a macrostate, plus the fitted
// macro-level Markov model.
struct MsmContext {
  MsmConfig config;
  SystemSpec system;
  Standardizer standardizer;  // observables kind only
  TicaModel tica;             // cartesian_tica kind only
  KMeansModel kmeans;
  std::vector<int> micro_to_macro;
  int n_macro = 0;
  MarkovStateModel msm;
};

Eigen::MatrixXd raw_features(const Trajectory& traj, const SystemSpec& system, FeatureKind kind,
                             const SsParams& ss);
Eigen::MatrixXd context_features(const MsmContext& ctx, const Trajectory& traj);

MsmContext build_msm(const std::vector<Trajectory>& trajs, const SystemSpec& system,
                     const MsmConfig& config, uint64_t seed);

std::vector<int> assign_macrostates(const MsmContext& ctx, const Trajectory& traj);
int assign_state(const MsmContext& ctx, const Conformation& conf);

void write_msm_json(const std::string& path, const MsmContext& ctx);
MsmContext read_msm_json(const std::string& path);

}  // namespace msmemu
