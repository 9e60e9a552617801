#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace msmemu {

// Flattened residue token: unit quaternion (4), translation (3), and 7 torsion
// angle pairs stored as (cos, sin).
constexpr int kTokenDim = 21;
constexpr int kMaxTorsions = 7;

using TokenSeq = Eigen::MatrixXd;  // kTokenDim x L, one column per residue token

struct SystemSpec {
  int n_particles = 1;
  int dim = 1;
  std::vector<double> masses;  // one per particle
  std::vector<int> labels;     // identity symbol per particle, 0-based
  int n_torsions = 0;          // torsion slots used per token, 0..7

  void validate() const;
  int n_labels() const;
};

struct Conformation {
  Eigen::MatrixXd x;  // n_particles x dim
};

struct Trajectory {
  int n_particles = 0;
  int dim = 0;
  double save_interval = 0.0;  // physical time between stored frames; 0 marks unordered ensembles
  double temperature = 0.0;
  uint64_t seed = 0;
  // One frame per row, particle-major within the row.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> frames;

  long n_frames() const { return frames.rows(); }
  Conformation frame(long i) const;
  void set_frame(long i, const Conformation& c);
};

// Signed dihedral angle of the four points, in (-pi, pi]. Points with fewer
// than three coordinates are zero-padded; degenerate geometry maps to 0.
double dihedral(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                const Eigen::Vector3d& c, const Eigen::Vector3d& d);

TokenSeq encode_tokens(const Conformation& conf, const SystemSpec& system);
Conformation decode_tokens(const TokenSeq& tokens, const SystemSpec& system);

// Projects each token back onto the manifold: quaternion renormalized
// (degenerate -> identity), torsion pairs renormalized (degenerate -> angle 0).
TokenSeq canonicalize_tokens(const TokenSeq& tokens);

struct Alignment {
  Eigen::MatrixXd rotation;     // dim x dim, proper (det = +1)
  Eigen::VectorXd translation;  // applied after rotation about the mobile centroid
};

// Least-squares superposition of mobile onto target (rows are particles).
// aligned_i = R * (mobile_i - centroid_mobile) + centroid_target.
Alignment kabsch_align(const Eigen::MatrixXd& mobile, const Eigen::MatrixXd& target);
Eigen::MatrixXd apply_alignment(const Alignment& a, const Eigen::MatrixXd& mobile);

double rmsd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double aligned_rmsd(const Eigen::MatrixXd& mobile, const Eigen::MatrixXd& target);

void write_mset(const std::string& path, const Trajectory& traj);
Trajectory read_mset(const std::string& path);
void write_csv(const std::string& path, const Trajectory& traj);

}  // namespace msmemu
