#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msmemu/core.hpp"
#include "msmemu/msm.hpp"
#include "msmemu/observables.hpp"

namespace msmemu {

struct HistogramSpec {
  int n_bins = 100;
  double floor_kl = 1e-5;
  double floor_mmae = 1e-4;

  void validate() const;
};

// Shared-edge histograms over the pooled range of both samples.
struct HistogramPair {
  Eigen::VectorXd p, q;  // normalized counts
  double lo = 0.0, hi = 0.0;
};
HistogramPair pooled_histograms(const std::vector<double>& a, const std::vector<double>& b,
                                int n_bins);

// Discrete Jensen-Shannon divergence in nats, 0 log 0 = 0. Bounded by ln 2.
double discrete_jsd(const Eigen::VectorXd& p, const Eigen::VectorXd& q);
// Forward KL with the model distribution floored elementwise, no renormalization.
double discrete_forward_kl(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double floor);

double histogram_jsd(const std::vector<double>& a, const std::vector<double>& b,
                     const HistogramSpec& spec);
double forward_kl(const std::vector<double>& p_ref, const std::vector<double>& q_model,
                  const HistogramSpec& spec);

// Mean absolute difference of macrostate free energies -kT ln(max(pi, floor)).
double macrostate_mae(const Eigen::VectorXd& pi_model, const Eigen::VectorXd& pi_ref, double kT,
                      double floor = 1e-4);

// Rigid-body superposition of every frame onto the first.
Trajectory align_to_first(const Trajectory& traj);
// Per-particle root mean square fluctuation about the ensemble mean structure;
// expects aligned frames.
Eigen::VectorXd rmsf(const Trajectory& aligned);

// Mean pairwise aligned RMSD over all frame pairs, deterministically strided
// down to at most max_pairs pairs.
double mean_pairwise_rmsd(const Trajectory& traj, long max_pairs = 10000);

std::optional<double> pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

struct FlexibilityCorrelations {
  std::optional<double> pairwise_rmsd;
  std::optional<double> global_rmsf;
  std::optional<double> pertarget_rmsf;
};
// refs and gens are matched per-target ensembles.
FlexibilityCorrelations flexibility_correlations(const std::vector<Trajectory>& refs,
                                                 const std::vector<Trajectory>& gens);

struct FncParams {
  double beta = 5.0;
  double lam = 1.2;
  double cutoff = 10.0;
  int min_sep = 3;
  bool inverted_sign = false;  // flip the exponent so broken contacts score 1
};
// Fraction of native contacts; the reference conformation defines the native
// pair set (|i-j| > min_sep, reference distance < cutoff).
double fnc_score(const Conformation& conf, const Conformation& reference, const FncParams& params);

// Folded/unfolded threshold: deepest KDE density minimum in [0.45, 0.90],
// falling back to 0.70.
double q_half_threshold(const std::vector<double>& q_values);

double p_fold(double q, double q_half, double steepness = 10.0);
double delta_g_fold(const std::vector<double>& q_values, double q_half, double kT,
                    double steepness = 10.0);

// Occupancy of generated frames over macrostates, via the fitted assignment
// pipeline.
Eigen::VectorXd macro_occupancy(const MsmContext& ctx, const Trajectory& traj);
double msm_recovery_jsd(const MsmContext& ctx, const Trajectory& generated,
                        const Eigen::VectorXd& reference_pi);

struct TicaJsdResult {
  double jsd0 = 0.0;
  std::optional<double> joint;
};
TicaJsdResult tica_jsd(const MsmContext& ctx, const std::vector<Trajectory>& refs,
                       const std::vector<Trajectory>& gens, const HistogramSpec& spec);

struct EnsembleStats {
  double mean = 0.0;
  double stddev = 0.0;
};
EnsembleStats series_stats(const std::vector<double>& values);

struct MetricParams {
  HistogramSpec hist;
  SsParams ss;
  FncParams fnc;
  double kT = 1.0;
  double fold_steepness = 10.0;
};

struct MetricReport {
  std::map<std::string, double> jsd;  // per observable: rg, ss, q
  std::map<std::string, double> kl;
  std::optional<double> mmae;
  std::optional<double> pearson_pairwise_rmsd;
  std::optional<double> pearson_global_rmsf;
  std::optional<double> pearson_pertarget_rmsf;
  std::optional<double> msm_recovery;
  std::optional<double> delta_g_fold_ref;
  std::optional<double> delta_g_fold_gen;
  std::optional<double> delta_g_fold_mae;
  double q_half = 0.7;
  std::map<std::string, EnsembleStats> ref_stats;
  std::map<std::string, EnsembleStats> gen_stats;
  std::optional<double> tica_jsd_0;
  std::optional<double> tica_jsd_01;
};

// Per-frame observable series for one ensemble: rg, ss, q (against the given
// native conformation).
std::map<std::string, std::vector<double>> observable_series(const Trajectory& traj,
                                                             const SystemSpec& system,
                                                             const Conformation& native,
                                                             const MetricParams& params);

// Full ensemble comparison. ctx may be null; macrostate and projection
// metrics are then absent. The native structure and the folding threshold are
// taken from the reference side.
MetricReport compute_metric_report(const std::vector<Trajectory>& ref_targets,
                                   const std::vector<Trajectory>& gen_targets,
                                   const SystemSpec& system, const MsmContext* ctx,
                                   const MetricParams& params);

}  // namespace msmemu
