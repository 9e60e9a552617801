#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "msmemu/core.hpp"

namespace msmemu {

struct GaussianWell2d {
  Eigen::Vector2d center;
  double depth = 5.0;
  double width = 0.6;
};

struct Potential {
  enum class Kind { harmonic, double_well_1d, triple_well_2d, torsion_chain };
  Kind kind = Kind::harmonic;

  // harmonic: U = sum_p k/2 * |x_p - center|^2
  double k = 1.0;
  Eigen::VectorXd center;  // size dim; empty means origin

  // double_well_1d: U = sum over coordinates a*(x^2-1)^2 + tilt*x
  double a = 4.0;
  double tilt = 0.0;

  // triple_well_2d: U = sum_p confinement*|x_p|^4 - sum_w depth*exp(-|x_p-c_w|^2/(2 width^2))
  std::vector<GaussianWell2d> wells;
  double confinement = 0.1;

  // torsion_chain: bond + angle + dihedral terms on a 3D bead chain
  double k_bond = 100.0;
  double b0 = 1.0;
  double k_angle = 20.0;
  double cos_theta0 = -1.0 / 3.0;  // tetrahedral bead angle
  double k_dihedral = 1.0;
  double phi0 = 1.0471975511965976;  // pi/3
  int multiplicity = 1;

  void validate(const SystemSpec& system) const;
  double energy(const Eigen::MatrixXd& x) const;
  void force(const Eigen::MatrixXd& x, Eigen::MatrixXd& f) const;
  Eigen::MatrixXd force(const Eigen::MatrixXd& x) const;
  Conformation default_start(const SystemSpec& system) const;

  static Potential make_harmonic(double k, const Eigen::VectorXd& center);
  static Potential make_double_well(double a, double tilt);
  static Potential make_triple_well(const std::vector<GaussianWell2d>& wells, double confinement);
  static Potential make_torsion_chain(double k_bond, double b0, double k_angle, double cos_theta0,
                                      double k_dihedral, double phi0, int multiplicity);
};

// Standard three-well layout: wells of the given depth/width at the given
// radius from the origin, at angles 90, 210 and 330 degrees.
std::vector<GaussianWell2d> default_triple_wells(double radius, double depth, double width);

struct LangevinParams {
  double gamma = 1.0;
  double temperature = 1.0;
  double dt = 0.01;
  long n_steps = 100000;
  int save_stride = 100;
};

// BAOAB Langevin integration. Noise is a pure function of (seed, step,
// particle, axis), so trajectories are bit-reproducible. Initial velocities
// are Maxwell-Boltzmann draws (zero at temperature 0). Saves the initial
// frame plus every save_stride-th step; optionally logs total energy at the
// saved frames.
Trajectory simulate(const SystemSpec& system, const Potential& pot, const LangevinParams& params,
                    uint64_t seed, const Conformation* x0 = nullptr,
                    std::vector<double>* energy_log = nullptr);

// Places an n-bead 3D chain with bond length b0, bond angle theta0 and the
// given dihedral angles (size max(n-3, 0)) via sequential internal-coordinate
// construction.
Conformation build_chain_conformation(int n, double b0, double theta0,
                                      const std::vector<double>& dihedrals);

// Persistence (escape barrier height) of every local minimum of a 2D
// potential on a uniform grid over [-extent, extent]^2, sorted descending.
// The global minimum is assigned the largest processed level minus its depth.
// A potential has >= m wells separated by barriers >= h iff at least m
// entries are >= h.
std::vector<double> grid_minima_persistence(const Potential& pot, double extent, int grid_n);

}  // namespace msmemu
