#include "msmemu/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msmemu/errors.hpp"
#include "msmemu/rng.hpp"

namespace msmemu {

Potential Potential::make_harmonic(double k, const Eigen::VectorXd& center) {
  Potential p;
  p.kind = Kind::harmonic;
  p.k = k;
  p.center = center;
  return p;
}

Potential Potential::make_double_well(double a, double tilt) {
  Potential p;
  p.kind = Kind::double_well_1d;
  p.a = a;
  p.tilt = tilt;
  return p;
}

Potential Potential::make_triple_well(const std::vector<GaussianWell2d>& wells, double confinement) {
  Potential p;
  p.kind = Kind::triple_well_2d;
  p.wells = wells;
  p.confinement = confinement;
  return p;
}

Potential Potential::make_torsion_chain(double k_bond, double b0, double k_angle, double cos_theta0,
                                        double k_dihedral, double phi0, int multiplicity) {
  Potential p;
  p.kind = Kind::torsion_chain;
  p.k_bond = k_bond;
  p.b0 = b0;
  p.k_angle = k_angle;
  p.cos_theta0 = cos_theta0;
  p.k_dihedral = k_dihedral;
  p.phi0 = phi0;
  p.multiplicity = multiplicity;
  return p;
}

std::vector<GaussianWell2d> default_triple_wells(double radius, double depth, double width) {
  std::vector<GaussianWell2d> wells(3);
  const double angles[3] = {M_PI / 2.0, M_PI * 7.0 / 6.0, M_PI * 11.0 / 6.0};
  for (int w = 0; w < 3; ++w) {
    wells[w].center = radius * Eigen::Vector2d(std::cos(angles[w]), std::sin(angles[w]));
    wells[w].depth = depth;
    wells[w].width = width;
  }
  return wells;
}

void Potential::validate(const SystemSpec& system) const {
  system.validate();
  switch (kind) {
    case Kind::harmonic:
      if (!(k > 0.0)) throw ConfigError("potential: harmonic k must be positive");
      if (center.size() != 0 && center.size() != system.dim)
        throw ConfigError("potential: harmonic center size must match dim");
      break;
    case Kind::double_well_1d:
      if (!(a > 0.0)) throw ConfigError("potential: double well a must be positive");
      break;
    case Kind::triple_well_2d:
      if (system.dim != 2) throw ConfigError("potential: triple well requires dim = 2");
      if (wells.empty()) throw ConfigError("potential: triple well needs at least one well");
      for (const auto& w : wells)
        if (!(w.depth > 0.0) || !(w.width > 0.0))
          throw ConfigError("potential: well depth and width must be positive");
      if (!(confinement > 0.0)) throw ConfigError("potential: confinement must be positive");
      break;
    case Kind::torsion_chain:
      if (system.dim != 3) throw ConfigError("potential: torsion chain requires dim = 3");
      if (system.n_particles < 2) throw ConfigError("potential: torsion chain needs >= 2 beads");
      if (!(k_bond > 0.0) || !(b0 > 0.0)) throw ConfigError("potential: bond parameters must be positive");
      if (multiplicity < 1) throw ConfigError("potential: dihedral multiplicity must be >= 1");
      if (std::abs(cos_theta0) > 1.0) throw ConfigError("potential: cos_theta0 must be in [-1, 1]");
      break;
  }
}

namespace {

Eigen::Vector3d row3(const Eigen::MatrixXd& x, int i) {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  for (int d = 0; d < x.cols() && d < 3; ++d) p(d) = x(i, d);
  return p;
}

}  // namespace

double Potential::energy(const Eigen::MatrixXd& x) const {
  const int n = static_cast<int>(x.rows());
  double u = 0.0;
  switch (kind) {
    case Kind::harmonic: {
      for (int p = 0; p < n; ++p)
        for (int d = 0; d < x.cols(); ++d) {
          double dx = x(p, d) - (center.size() ? center(d) : 0.0);
          u += 0.5 * k * dx * dx;
        }
      break;
    }
    case Kind::double_well_1d: {
      for (int p = 0; p < n; ++p)
        for (int d = 0; d < x.cols(); ++d) {
          double q = x(p, d);
          double w = q * q - 1.0;
          u += a * w * w + tilt * q;
        }
      break;
    }
    case Kind::triple_well_2d: {
      for (int p = 0; p < n; ++p) {
        Eigen::Vector2d q(x(p, 0), x(p, 1));
        double r2 = q.squaredNorm();
        u += confinement * r2 * r2;
        for (const auto& w : wells)
          u -= w.depth * std::exp(-(q - w.center).squaredNorm() / (2.0 * w.width * w.width));
      }
      break;
    }
    case Kind::torsion_chain: {
      for (int i = 0; i + 1 < n; ++i) {
        double r = (row3(x, i + 1) - row3(x, i)).norm();
        u += 0.5 * k_bond * (r - b0) * (r - b0);
      }
      for (int j = 1; j + 1 < n; ++j) {
        Eigen::Vector3d uv = row3(x, j - 1) - row3(x, j);
        Eigen::Vector3d vv = row3(x, j + 1) - row3(x, j);
        double cu = uv.norm(), cv = vv.norm();
        if (cu < 1e-12 || cv < 1e-12) continue;
        double c = uv.dot(vv) / (cu * cv);
        u += 0.5 * k_angle * (c - cos_theta0) * (c - cos_theta0);
      }
      for (int i = 0; i + 3 < n; ++i) {
        double phi = dihedral(row3(x, i), row3(x, i + 1), row3(x, i + 2), row3(x, i + 3));
        u += k_dihedral * (1.0 - std::cos(multiplicity * (phi - phi0)));
      }
      break;
    }
  }
  return u;
}

void Potential::force(const Eigen::MatrixXd& x, Eigen::MatrixXd& f) const {
  const int n = static_cast<int>(x.rows());
  f.resize(x.rows(), x.cols());
  f.setZero();
  switch (kind) {
    case Kind::harmonic: {
      for (int p = 0; p < n; ++p)
        for (int d = 0; d < x.cols(); ++d)
          f(p, d) = -k * (x(p, d) - (center.size() ? center(d) : 0.0));
      break;
    }
    case Kind::double_well_1d: {
      for (int p = 0; p < n; ++p)
        for (int d = 0; d < x.cols(); ++d) {
          double q = x(p, d);
          f(p, d) = -(4.0 * a * q * (q * q - 1.0) + tilt);
        }
      break;
    }
    case Kind::triple_well_2d: {
      for (int p = 0; p < n; ++p) {
        Eigen::Vector2d q(x(p, 0), x(p, 1));
        Eigen::Vector2d g = 4.0 * confinement * q.squaredNorm() * q;
        for (const auto& w : wells) {
          double w2 = w.width * w.width;
          double e = std::exp(-(q - w.center).squaredNorm() / (2.0 * w2));
          g += (w.depth / w2) * e * (q - w.center);
        }
        f(p, 0) = -g(0);
        f(p, 1) = -g(1);
      }
      break;
    }
    case Kind::torsion_chain: {
      auto add = [&](int i, const Eigen::Vector3d& g) {
        for (int d = 0; d < 3; ++d) f(i, d) += g(d);
      };
      for (int i = 0; i + 1 < n; ++i) {
        Eigen::Vector3d d = row3(x, i + 1) - row3(x, i);
        double r = d.norm();
        if (r < 1e-12) continue;
        Eigen::Vector3d g = k_bond * (r - b0) * d / r;  // dU/dx_{i+1}
        add(i + 1, -g);
        add(i, g);
      }
      for (int j = 1; j + 1 < n; ++j) {
        Eigen::Vector3d uv = row3(x, j - 1) - row3(x, j);
        Eigen::Vector3d vv = row3(x, j + 1) - row3(x, j);
        double cu = uv.norm(), cv = vv.norm();
        if (cu < 1e-12 || cv < 1e-12) continue;
        double c = uv.dot(vv) / (cu * cv);
        double g = k_angle * (c - cos_theta0);  // dU/dcos
        Eigen::Vector3d dci = vv / (cu * cv) - c * uv / (cu * cu);
        Eigen::Vector3d dck = uv / (cu * cv) - c * vv / (cv * cv);
        add(j - 1, -g * dci);
        add(j + 1, -g * dck);
        add(j, g * (dci + dck));
      }
      for (int i = 0; i + 3 < n; ++i) {
        Eigen::Vector3d A = row3(x, i), B = row3(x, i + 1), C = row3(x, i + 2), D = row3(x, i + 3);
        Eigen::Vector3d b1 = B - A, b2 = C - B, b3 = D - C;
        Eigen::Vector3d n1 = b1.cross(b2), n2 = b2.cross(b3);
        double nb2 = b2.norm();
        double n1s = n1.squaredNorm(), n2s = n2.squaredNorm();
        if (nb2 < 1e-12 || n1s < 1e-24 || n2s < 1e-24) continue;
        double phi = dihedral(A, B, C, D);
        double du = k_dihedral * multiplicity * std::sin(multiplicity * (phi - phi0));  // dU/dphi
        Eigen::Vector3d dA = -(nb2 / n1s) * n1;
        Eigen::Vector3d dD = (nb2 / n2s) * n2;
        double s12 = b1.dot(b2) / (nb2 * nb2);
        double s32 = b3.dot(b2) / (nb2 * nb2);
        Eigen::Vector3d dB = -(1.0 + s12) * dA + s32 * dD;
        Eigen::Vector3d dC = s12 * dA - (1.0 + s32) * dD;
        add(i, -du * dA);
        add(i + 1, -du * dB);
        add(i + 2, -du * dC);
        add(i + 3, -du * dD);
      }
      break;
    }
  }
}

Eigen::MatrixXd Potential::force(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd f;
  force(x, f);
  return f;
}

Conformation Potential::default_start(const SystemSpec& system) const {
  Conformation c;
  c.x = Eigen::MatrixXd::Zero(system.n_particles, system.dim);
  switch (kind) {
    case Kind::harmonic:
      if (center.size())
        for (int p = 0; p < system.n_particles; ++p) c.x.row(p) = center.transpose();
      break;
    case Kind::double_well_1d:
      c.x.setConstant(-1.0);
      break;
    case Kind::triple_well_2d:
      for (int p = 0; p < system.n_particles; ++p) c.x.row(p) = wells.at(0).center.transpose();
      break;
    case Kind::torsion_chain: {
      std::vector<double> dih(std::max(system.n_particles - 3, 0), phi0);
      c = build_chain_conformation(system.n_particles, b0, std::acos(cos_theta0), dih);
      break;
    }
  }
  return c;
}

Conformation build_chain_conformation(int n, double b0, double theta0,
                                      const std::vector<double>& dihedrals) {
  if (n < 1) throw ShapeError("build_chain: need at least one bead");
  if (n > 3 && dihedrals.size() != static_cast<size_t>(n - 3))
    throw ShapeError("build_chain: expected " + std::to_string(n - 3) + " dihedrals");
  Conformation c;
  c.x = Eigen::MatrixXd::Zero(n, 3);
  if (n >= 2) c.x.row(1) << b0, 0.0, 0.0;
  if (n >= 3)
    c.x.row(2) = c.x.row(1) + b0 * Eigen::RowVector3d(-std::cos(theta0), std::sin(theta0), 0.0);
  for (int i = 3; i < n; ++i) {
    Eigen::Vector3d A = c.x.row(i - 3), B = c.x.row(i - 2), C = c.x.row(i - 1);
    Eigen::Vector3d bc = (C - B).normalized();
    Eigen::Vector3d nrm = (B - A).cross(bc).normalized();
    Eigen::Vector3d m1 = nrm.cross(bc);
    double phi = dihedrals[static_cast<size_t>(i - 3)];
    Eigen::Vector3d d = b0 * Eigen::Vector3d(-std::cos(theta0), std::sin(theta0) * std::cos(phi),
                                             std::sin(theta0) * std::sin(phi));
    c.x.row(i) = (C + bc * d(0) + m1 * d(1) + nrm * d(2)).transpose();
  }
  return c;
}

Trajectory simulate(const SystemSpec& system, const Potential& pot, const LangevinParams& params,
                    uint64_t seed, const Conformation* x0, std::vector<double>* energy_log) {
  pot.validate(system);
  if (!(params.dt > 0.0)) throw ConfigError("langevin: dt must be positive");
  if (params.n_steps < 1) throw ConfigError("langevin: n_steps must be >= 1");
  if (params.save_stride < 1) throw ConfigError("langevin: save_stride must be >= 1");
  if (params.gamma < 0.0) throw ConfigError("langevin: gamma must be >= 0");
  if (params.temperature < 0.0) throw ConfigError("langevin: temperature must be >= 0");

  const int n = system.n_particles, dim = system.dim;
  Eigen::MatrixXd x;
  if (x0) {
    if (x0->x.rows() != n || x0->x.cols() != dim) throw ShapeError("simulate: x0 shape mismatch");
    x = x0->x;
  } else {
    x = pot.default_start(system).x;
  }

  RngKey base{mix64(seed ^ 0x6c616e6765ull)};
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, dim);
  if (params.temperature > 0.0) {
    RngKey vkey = base.derive(0x76656cull);
    for (int p = 0; p < n; ++p) {
      double scale = std::sqrt(params.temperature / system.masses[static_cast<size_t>(p)]);
      for (int d = 0; d < dim; ++d)
        v(p, d) = scale * vkey.normal(static_cast<uint64_t>(p * dim + d));
    }
  }

  const double c1 = std::exp(-params.gamma * params.dt);
  const double c2 = std::sqrt(std::max(0.0, 1.0 - c1 * c1));
  const bool noisy = params.gamma > 0.0 && params.temperature > 0.0;
  const double half_dt = 0.5 * params.dt;

  long n_saved = params.n_steps / params.save_stride + 1;
  Trajectory traj;
  traj.n_particles = n;
  traj.dim = dim;
  traj.save_interval = params.dt * params.save_stride;
  traj.temperature = params.temperature;
  traj.seed = seed;
  traj.frames.resize(n_saved, static_cast<long>(n) * dim);

  auto kinetic = [&] {
    double ke = 0.0;
    for (int p = 0; p < n; ++p) ke += 0.5 * system.masses[static_cast<size_t>(p)] * v.row(p).squaredNorm();
    return ke;
  };
  auto save = [&](long slot) {
    for (int p = 0; p < n; ++p)
      for (int d = 0; d < dim; ++d) traj.frames(slot, p * dim + d) = x(p, d);
    if (energy_log) energy_log->push_back(pot.energy(x) + kinetic());
  };

  long slot = 0;
  save(slot++);

  Eigen::MatrixXd f = pot.force(x);
  Eigen::VectorXd inv_m(n), noise_scale(n);
  for (int p = 0; p < n; ++p) {
    inv_m(p) = 1.0 / system.masses[static_cast<size_t>(p)];
    noise_scale(p) = std::sqrt(params.temperature * inv_m(p));
  }

  for (long step = 1; step <= params.n_steps; ++step) {
    for (int p = 0; p < n; ++p) v.row(p) += half_dt * inv_m(p) * f.row(p);
    x += half_dt * v;
    if (noisy) {
      RngKey skey = base.derive(static_cast<uint64_t>(step));
      for (int p = 0; p < n; ++p)
        for (int d = 0; d < dim; ++d)
          v(p, d) = c1 * v(p, d) +
                    c2 * noise_scale(p) * skey.normal(static_cast<uint64_t>(p * dim + d));
    }
    x += half_dt * v;
    pot.force(x, f);
    for (int p = 0; p < n; ++p) v.row(p) += half_dt * inv_m(p) * f.row(p);

    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e8)
      throw NumericError("simulate: trajectory diverged at step " + std::to_string(step));
    if (step % params.save_stride == 0) save(slot++);
  }
  return traj;
}

std::vector<double> grid_minima_persistence(const Potential& pot, double extent, int grid_n) {
  if (grid_n < 3) throw ConfigError("grid_minima_persistence: grid_n must be >= 3");
  const int N = grid_n;
  Eigen::MatrixXd u(N, N);
  Eigen::MatrixXd q(1, 2);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      q(0, 0) = -extent + 2.0 * extent * i / (N - 1);
      q(0, 1) = -extent + 2.0 * extent * j / (N - 1);
      u(i, j) = pot.energy(q);
    }

  std::vector<int> order(static_cast<size_t>(N) * N);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return u(a / N, a % N) < u(b / N, b % N); });

  // Union-find over cells activated in energy order; a merge kills the
  // component with the shallower minimum and records its persistence.
  std::vector<int> parent(order.size(), -1);
  std::vector<double> comp_min(order.size(), 0.0);
  std::vector<double> persistence;
  auto find = [&](int a) {
    while (parent[static_cast<size_t>(a)] != a) {
      parent[static_cast<size_t>(a)] = parent[static_cast<size_t>(parent[static_cast<size_t>(a)])];
      a = parent[static_cast<size_t>(a)];
    }
    return a;
  };
  std::vector<bool> active(order.size(), false);
  double last_level = 0.0;
  for (int cell : order) {
    int i = cell / N, j = cell % N;
    double level = u(i, j);
    last_level = level;
    parent[static_cast<size_t>(cell)] = cell;
    comp_min[static_cast<size_t>(cell)] = level;
    active[static_cast<size_t>(cell)] = true;
    const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
    for (int t = 0; t < 4; ++t) {
      int ni = i + di[t], nj = j + dj[t];
      if (ni < 0 || nj < 0 || ni >= N || nj >= N) continue;
      int ncell = ni * N + nj;
      if (!active[static_cast<size_t>(ncell)]) continue;
      int ra = find(cell), rb = find(ncell);
      if (ra == rb) continue;
      int deeper = comp_min[static_cast<size_t>(ra)] <= comp_min[static_cast<size_t>(rb)] ? ra : rb;
      int shallower = deeper == ra ? rb : ra;
      persistence.push_back(level - comp_min[static_cast<size_t>(shallower)]);
      parent[static_cast<size_t>(shallower)] = deeper;
    }
  }
  // Surviving component: the global minimum.
  double global_min = u(order.front() / N, order.front() % N);
  persistence.push_back(last_level - global_min);
  std::sort(persistence.rbegin(), persistence.rend());
  return persistence;
}

}  // namespace msmemu
