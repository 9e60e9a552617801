#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "msmemu/core.hpp"
#include "msmemu/errors.hpp"

namespace msmemu {

// Mass-weighted radius of gyration.
inline double radius_of_gyration(const Conformation& conf, const SystemSpec& system) {
  if (conf.x.rows() != system.n_particles || conf.x.cols() != system.dim)
    throw ShapeError("radius_of_gyration: conformation shape mismatch");
  double total = 0.0;
  Eigen::RowVectorXd com = Eigen::RowVectorXd::Zero(system.dim);
  for (int p = 0; p < system.n_particles; ++p) {
    com += system.masses[static_cast<size_t>(p)] * conf.x.row(p);
    total += system.masses[static_cast<size_t>(p)];
  }
  com /= total;
  double acc = 0.0;
  for (int p = 0; p < system.n_particles; ++p)
    acc += system.masses[static_cast<size_t>(p)] * (conf.x.row(p) - com).squaredNorm();
  return std::sqrt(acc / total);
}

struct SsParams {
  double theta_ref = 0.0;  // reference torsion angle marking "structured"
  double window = 0.5;     // half-width of the structured band, radians
};

// Per-residue structure flags: 1 structured, 0 unstructured, -1 when the
// residue has no complete chain dihedral. Residue l owns the dihedral over
// particles (l, l+1, l+2, l+3).
inline std::vector<int> classify_structured(const Conformation& conf, const SystemSpec& system,
                                            const SsParams& params) {
  std::vector<int> out(static_cast<size_t>(system.n_particles), -1);
  for (int l = 0; l + 3 < system.n_particles; ++l) {
    Eigen::Vector3d pts[4];
    for (int k = 0; k < 4; ++k) {
      pts[k].setZero();
      for (int d = 0; d < system.dim && d < 3; ++d) pts[k](d) = conf.x(l + k, d);
    }
    double theta = dihedral(pts[0], pts[1], pts[2], pts[3]);
    double delta = std::remainder(theta - params.theta_ref, 2.0 * M_PI);
    out[static_cast<size_t>(l)] = std::abs(delta) <= params.window ? 1 : 0;
  }
  return out;
}

// Fraction of classifiable residues marked structured; 0 when none are
// classifiable.
inline double ss_fraction(const Conformation& conf, const SystemSpec& system,
                          const SsParams& params) {
  std::vector<int> flags = classify_structured(conf, system, params);
  double structured = 0.0, classifiable = 0.0;
  for (int f : flags) {
    if (f < 0) continue;
    classifiable += 1.0;
    structured += f;
  }
  return classifiable > 0.0 ? structured / classifiable : 0.0;
}

}  // namespace msmemu
