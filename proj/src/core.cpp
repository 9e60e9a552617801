#include "msmemu/core.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "msmemu/errors.hpp"

namespace msmemu {

void SystemSpec::validate() const {
  if (n_particles < 1) throw ShapeError("system: n_particles must be >= 1");
  if (dim < 1 || dim > 3) throw ShapeError("system: dim must be 1, 2 or 3");
  if (masses.size() != static_cast<size_t>(n_particles))
    throw ShapeError("system: masses size " + std::to_string(masses.size()) +
                     " != n_particles " + std::to_string(n_particles));
  if (labels.size() != static_cast<size_t>(n_particles))
    throw ShapeError("system: labels size " + std::to_string(labels.size()) +
                     " != n_particles " + std::to_string(n_particles));
  for (double m : masses)
    if (!(m > 0.0)) throw ShapeError("system: masses must be positive");
  for (int l : labels)
    if (l < 0) throw ShapeError("system: labels must be non-negative");
  if (n_torsions < 0 || n_torsions > kMaxTorsions)
    throw ShapeError("system: n_torsions must be in [0, 7]");
}

int SystemSpec::n_labels() const {
  int m = 0;
  for (int l : labels) m = std::max(m, l + 1);
  return std::max(m, 1);
}

Conformation Trajectory::frame(long i) const {
  Conformation c;
  c.x.resize(n_particles, dim);
  for (int p = 0; p < n_particles; ++p)
    for (int d = 0; d < dim; ++d) c.x(p, d) = frames(i, p * dim + d);
  return c;
}

void Trajectory::set_frame(long i, const Conformation& c) {
  for (int p = 0; p < n_particles; ++p)
    for (int d = 0; d < dim; ++d) frames(i, p * dim + d) = c.x(p, d);
}

double dihedral(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                const Eigen::Vector3d& c, const Eigen::Vector3d& d) {
  Eigen::Vector3d b1 = b - a, b2 = c - b, b3 = d - c;
  Eigen::Vector3d n1 = b1.cross(b2), n2 = b2.cross(b3);
  double b2n = b2.norm();
  if (n1.norm() < 1e-12 || n2.norm() < 1e-12 || b2n < 1e-12) return 0.0;
  double y = b2n * b1.dot(n2);
  double x = n1.dot(n2);
  return std::atan2(y, x);
}

namespace {

Eigen::Vector3d padded(const Eigen::MatrixXd& x, int row) {
  Eigen::Vector3d p = Eigen::Vector3d::Zero();
  for (int d = 0; d < x.cols() && d < 3; ++d) p(d) = x(row, d);
  return p;
}

}  // namespace

TokenSeq encode_tokens(const Conformation& conf, const SystemSpec& system) {
  system.validate();
  if (conf.x.rows() != system.n_particles || conf.x.cols() != system.dim)
    throw ShapeError("encode_tokens: conformation shape mismatch");
  const int n = system.n_particles;
  TokenSeq tokens = TokenSeq::Zero(kTokenDim, n);
  for (int l = 0; l < n; ++l) {
    tokens(0, l) = 1.0;  // identity quaternion (w, x, y, z)
    for (int d = 0; d < system.dim; ++d) tokens(4 + d, l) = conf.x(l, d);
    for (int k = 0; k < kMaxTorsions; ++k) {
      double cos_t = 1.0, sin_t = 0.0;
      if (k < system.n_torsions && l + k + 3 < n) {
        double theta = dihedral(padded(conf.x, l + k), padded(conf.x, l + k + 1),
                                padded(conf.x, l + k + 2), padded(conf.x, l + k + 3));
        cos_t = std::cos(theta);
        sin_t = std::sin(theta);
      }
      tokens(7 + 2 * k, l) = cos_t;
      tokens(8 + 2 * k, l) = sin_t;
    }
  }
  return tokens;
}

TokenSeq canonicalize_tokens(const TokenSeq& tokens) {
  if (tokens.rows() != kTokenDim) throw ShapeError("canonicalize_tokens: expected 21 rows");
  TokenSeq out = tokens;
  for (int l = 0; l < out.cols(); ++l) {
    double qn = out.col(l).head<4>().norm();
    if (qn < 1e-12) {
      out.col(l).head<4>() << 1.0, 0.0, 0.0, 0.0;
    } else {
      out.col(l).head<4>() /= qn;
    }
    for (int k = 0; k < kMaxTorsions; ++k) {
      double c = out(7 + 2 * k, l), s = out(8 + 2 * k, l);
      double r = std::hypot(c, s);
      if (r < 1e-12) {
        out(7 + 2 * k, l) = 1.0;
        out(8 + 2 * k, l) = 0.0;
      } else {
        out(7 + 2 * k, l) = c / r;
        out(8 + 2 * k, l) = s / r;
      }
    }
  }
  return out;
}

Conformation decode_tokens(const TokenSeq& tokens, const SystemSpec& system) {
  system.validate();
  if (tokens.rows() != kTokenDim || tokens.cols() != system.n_particles)
    throw ShapeError("decode_tokens: token shape mismatch");
  TokenSeq canon = canonicalize_tokens(tokens);
  Conformation c;
  c.x.resize(system.n_particles, system.dim);
  for (int l = 0; l < system.n_particles; ++l)
    for (int d = 0; d < system.dim; ++d) c.x(l, d) = canon(4 + d, l);
  return c;
}

namespace {

// Orthonormal vector perpendicular to u.
Eigen::Vector3d any_perpendicular(const Eigen::Vector3d& u) {
  Eigen::Vector3d v = std::abs(u.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  Eigen::Vector3d w = u.cross(v);
  return w.normalized();
}

Eigen::Matrix3d rotation_3d(const Eigen::Matrix3d& H) {
  // Singular vectors of H from the eigen-decomposition of H^T H; the column
  // paired with the smallest singular value absorbs the sign correction, so
  // the result is always a proper rotation.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(H.transpose() * H);
  Eigen::Vector3d mu = es.eigenvalues().cwiseMax(0.0);
  Eigen::Matrix3d V = es.eigenvectors();  // ascending eigenvalues
  Eigen::Vector3d sigma = mu.cwiseSqrt();
  double smax = sigma(2);
  if (smax < 1e-12) return Eigen::Matrix3d::Identity();
  double tol = 1e-9 * smax;

  Eigen::Matrix3d U;
  U.col(2) = (H * V.col(2)) / sigma(2);
  U.col(2).normalize();
  if (sigma(1) > tol) {
    U.col(1) = (H * V.col(1)) / sigma(1);
    U.col(1) -= U.col(1).dot(U.col(2)) * U.col(2);
    U.col(1).normalize();
  } else {
    U.col(1) = any_perpendicular(U.col(2));
  }
  U.col(0) = U.col(2).cross(U.col(1));
  if (sigma(0) > tol) {
    Eigen::Vector3d u0 = (H * V.col(0)) / sigma(0);
    if (u0.dot(U.col(0)) < 0.0) U.col(0) = -U.col(0);
  }
  Eigen::Matrix3d R = U * V.transpose();
  if (R.determinant() < 0.0) {
    U.col(0) = -U.col(0);
    R = U * V.transpose();
  }
  return R;
}

}  // namespace

Alignment kabsch_align(const Eigen::MatrixXd& mobile, const Eigen::MatrixXd& target) {
  if (mobile.rows() != target.rows() || mobile.cols() != target.cols())
    throw ShapeError("kabsch_align: shape mismatch");
  if (mobile.rows() < 1) throw ShapeError("kabsch_align: empty point set");
  const int dim = static_cast<int>(mobile.cols());
  if (dim < 1 || dim > 3) throw ShapeError("kabsch_align: dim must be 1, 2 or 3");

  Eigen::RowVectorXd cm = mobile.colwise().mean();
  Eigen::RowVectorXd ct = target.colwise().mean();
  Eigen::MatrixXd P = mobile.rowwise() - cm;
  Eigen::MatrixXd Q = target.rowwise() - ct;
  Eigen::MatrixXd H = P.transpose() * Q;  // dim x dim, mobile outer target

  Alignment a;
  a.rotation = Eigen::MatrixXd::Identity(dim, dim);
  if (dim == 2) {
    double num = H(0, 1) - H(1, 0);
    double den = H(0, 0) + H(1, 1);
    if (std::abs(num) > 1e-15 || std::abs(den) > 1e-15) {
      double theta = std::atan2(num, den);
      a.rotation << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    }
  } else if (dim == 3) {
    // rotation_3d maximizes tr(R^T H'), H' = target outer mobile = H^T.
    a.rotation = rotation_3d(H.transpose());
  }
  a.translation = ct.transpose();
  // Fold the mobile-centroid removal into the stored transform pieces.
  a.translation -= a.rotation * cm.transpose();
  return a;
}

Eigen::MatrixXd apply_alignment(const Alignment& a, const Eigen::MatrixXd& mobile) {
  Eigen::MatrixXd out = mobile * a.rotation.transpose();
  out.rowwise() += a.translation.transpose();
  return out;
}

double rmsd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("rmsd: shape mismatch");
  if (a.rows() < 1) throw ShapeError("rmsd: empty point set");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.rows()));
}

double aligned_rmsd(const Eigen::MatrixXd& mobile, const Eigen::MatrixXd& target) {
  return rmsd(apply_alignment(kabsch_align(mobile, target), mobile), target);
}

namespace {

constexpr char kMsetMagic[4] = {'M', 'S', 'E', 'T'};
constexpr uint32_t kMsetVersion = 1;

template <typename T>
void write_le(std::ofstream& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& what) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw DataError("mset: truncated file while reading " + what);
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace

void write_mset(const std::string& path, const Trajectory& traj) {
  if (traj.n_particles < 1 || traj.dim < 1) throw ShapeError("mset: trajectory has empty geometry");
  if (traj.frames.cols() != static_cast<long>(traj.n_particles) * traj.dim)
    throw ShapeError("mset: frame width does not match n_particles * dim");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("mset: cannot open for writing: " + path);
  out.write(kMsetMagic, 4);
  write_le<uint32_t>(out, kMsetVersion);
  write_le<uint64_t>(out, static_cast<uint64_t>(traj.n_frames()));
  write_le<uint32_t>(out, static_cast<uint32_t>(traj.n_particles));
  write_le<uint32_t>(out, static_cast<uint32_t>(traj.dim));
  write_le<double>(out, traj.save_interval);
  write_le<double>(out, traj.temperature);
  write_le<uint64_t>(out, traj.seed);
  for (long i = 0; i < traj.n_frames(); ++i)
    for (long j = 0; j < traj.frames.cols(); ++j) write_le<double>(out, traj.frames(i, j));
  if (!out) throw DataError("mset: write failure: " + path);
}

Trajectory read_mset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("mset: cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMsetMagic, 4) != 0)
    throw DataError("mset: bad magic in " + path);
  uint32_t version = read_le<uint32_t>(in, "version");
  if (version != kMsetVersion)
    throw DataError("mset: unsupported version " + std::to_string(version) + " in " + path);
  Trajectory t;
  uint64_t n_frames = read_le<uint64_t>(in, "n_frames");
  t.n_particles = static_cast<int>(read_le<uint32_t>(in, "n_particles"));
  t.dim = static_cast<int>(read_le<uint32_t>(in, "dim"));
  t.save_interval = read_le<double>(in, "save_interval");
  t.temperature = read_le<double>(in, "temperature");
  t.seed = read_le<uint64_t>(in, "seed");
  if (t.n_particles < 1 || t.dim < 1 || t.dim > 3)
    throw DataError("mset: invalid geometry header in " + path);
  long width = static_cast<long>(t.n_particles) * t.dim;
  t.frames.resize(static_cast<long>(n_frames), width);
  for (uint64_t i = 0; i < n_frames; ++i)
    for (long j = 0; j < width; ++j) t.frames(static_cast<long>(i), j) = read_le<double>(in, "frame data");
  return t;
}

void write_csv(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("csv: cannot open for writing: " + path);
  const char* axes = "xyz";
  out << "frame";
  for (int p = 0; p < traj.n_particles; ++p)
    for (int d = 0; d < traj.dim; ++d) out << ",p" << p << "_" << axes[d];
  out << "\n";
  out.precision(17);
  for (long i = 0; i < traj.n_frames(); ++i) {
    out << i;
    for (long j = 0; j < traj.frames.cols(); ++j) out << "," << traj.frames(i, j);
    out << "\n";
  }
  if (!out) throw DataError("csv: write failure: " + path);
}

}  // namespace msmemu
