#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>

#include "msmemu/core.hpp"
#include "msmemu/errors.hpp"
#include "msmemu/rng.hpp"

using namespace msmemu;

namespace {

SystemSpec make_system(int n, int dim, int n_torsions = 0) {
  SystemSpec s;
  s.n_particles = n;
  s.dim = dim;
  s.masses.assign(static_cast<size_t>(n), 1.0);
  s.labels.assign(static_cast<size_t>(n), 0);
  s.n_torsions = n_torsions;
  return s;
}

// Four points with a dihedral fixed by construction: with B at the origin,
// C on the +x axis, A displaced along +y and D displaced along
// (cos phi, sin phi) in the yz-plane, the A-B-C-D dihedral is exactly phi.
void dihedral_probe(double phi, Eigen::Vector3d& a, Eigen::Vector3d& b, Eigen::Vector3d& c,
                    Eigen::Vector3d& d) {
  a = {0.0, 1.0, 0.0};
  b = {0.0, 0.0, 0.0};
  c = {1.0, 0.0, 0.0};
  d = {1.0, std::cos(phi), std::sin(phi)};
}

Eigen::Matrix3d quat_rotation(double w, double x, double y, double z) {
  double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n; x /= n; y /= n; z /= n;
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

}  // namespace

TEST_CASE("dihedral matches constructed angles") {
  Eigen::Vector3d a, b, c, d;
  for (double phi : {0.0, 0.3, M_PI / 3.0, M_PI / 2.0, 2.5, -0.7, -2.9, M_PI}) {
    dihedral_probe(phi, a, b, c, d);
    double got = dihedral(a, b, c, d);
    double diff = std::remainder(got - phi, 2.0 * M_PI);
    CHECK(std::abs(diff) < 1e-12);
  }
}

TEST_CASE("dihedral sign flips under mirror symmetry") {
  Eigen::Vector3d a, b, c, d;
  dihedral_probe(1.1, a, b, c, d);
  double plus = dihedral(a, b, c, d);
  a.z() = -a.z(); b.z() = -b.z(); c.z() = -c.z(); d.z() = -d.z();
  CHECK(dihedral(a, b, c, d) == doctest::Approx(-plus).epsilon(1e-12));
}

TEST_CASE("dihedral degenerate geometry maps to zero") {
  Eigen::Vector3d o(0, 0, 0), x1(1, 0, 0), x2(2, 0, 0), x3(3, 0, 0);
  CHECK(dihedral(o, x1, x2, x3) == 0.0);          // collinear
  CHECK(dihedral(o, o, x1, x2) == 0.0);           // coincident pair
}

TEST_CASE("encode places positions and identity channels") {
  SystemSpec sys = make_system(2, 1);
  Conformation c;
  c.x.resize(2, 1);
  c.x << 0.5, -0.25;
  TokenSeq t = encode_tokens(c, sys);
  REQUIRE(t.rows() == 21);
  REQUIRE(t.cols() == 2);
  // quaternion = identity, 1D position zero-padded into the translation slot
  CHECK(t(0, 0) == 1.0);
  CHECK(t(1, 0) == 0.0);
  CHECK(t(4, 0) == 0.5);
  CHECK(t(5, 0) == 0.0);
  CHECK(t(6, 0) == 0.0);
  CHECK(t(4, 1) == -0.25);
  // unused torsion slots encode the zero angle
  for (int k = 0; k < 7; ++k) {
    CHECK(t(7 + 2 * k, 0) == 1.0);
    CHECK(t(8 + 2 * k, 0) == 0.0);
  }
}

TEST_CASE("encode stores chain dihedrals as cos/sin pairs") {
  SystemSpec sys = make_system(4, 3, 1);
  Eigen::Vector3d a, b, c, d;
  dihedral_probe(M_PI / 3.0, a, b, c, d);
  Conformation conf;
  conf.x.resize(4, 3);
  conf.x.row(0) = a; conf.x.row(1) = b; conf.x.row(2) = c; conf.x.row(3) = d;
  TokenSeq t = encode_tokens(conf, sys);
  CHECK(t(7, 0) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(t(8, 0) == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-9));
  // tokens 1..3 have no complete dihedral, so their slots stay at angle zero
  for (int l = 1; l < 4; ++l) {
    CHECK(t(7, l) == 1.0);
    CHECK(t(8, l) == 0.0);
  }
}

TEST_CASE("decode reads translations and ignores raw scale of pairs") {
  SystemSpec sys = make_system(1, 3);
  TokenSeq t = TokenSeq::Zero(21, 1);
  t(0, 0) = 2.0;                      // non-unit quaternion, must renormalize
  t(4, 0) = 1.0; t(5, 0) = -2.0; t(6, 0) = 3.0;
  t(7, 0) = 10.0; t(8, 0) = 0.0;     // scaled pair, same angle
  Conformation c = decode_tokens(t, sys);
  CHECK(c.x(0, 0) == 1.0);
  CHECK(c.x(0, 1) == -2.0);
  CHECK(c.x(0, 2) == 3.0);
  TokenSeq canon = canonicalize_tokens(t);
  CHECK(canon(0, 0) == doctest::Approx(1.0));
  CHECK(canon(7, 0) == doctest::Approx(1.0));
  CHECK(canon.col(0).head<4>().norm() == doctest::Approx(1.0));
}

TEST_CASE("canonicalize maps degenerate channels to identities") {
  TokenSeq t = TokenSeq::Zero(21, 1);
  TokenSeq canon = canonicalize_tokens(t);
  CHECK(canon(0, 0) == 1.0);           // zero quaternion -> identity
  for (int k = 0; k < 7; ++k) {
    CHECK(canon(7 + 2 * k, 0) == 1.0);  // zero pair -> angle 0
    CHECK(canon(8 + 2 * k, 0) == 0.0);
  }
}

TEST_CASE("encode/decode round trip is exact on encoded tokens") {
  CounterRng rng(7, {0x636f7265});
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_index(6));
    int dim = 1 + static_cast<int>(rng.uniform_index(3));
    SystemSpec sys = make_system(n, dim, dim == 3 ? 3 : 0);
    Conformation c;
    c.x.resize(n, dim);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < dim; ++d) c.x(i, d) = 2.0 * rng.normal();
    TokenSeq t = encode_tokens(c, sys);
    Conformation back = decode_tokens(t, sys);
    CHECK((back.x - c.x).cwiseAbs().maxCoeff() < 1e-9);
    TokenSeq t2 = encode_tokens(back, sys);
    CHECK((t2 - t).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("rmsd closed forms") {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 3, 4, 0, 0;
  b << 0, 0, 0, 0;
  CHECK(rmsd(a, b) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));
  CHECK(rmsd(a, a) == 0.0);
  Eigen::MatrixXd c(1, 1), d(1, 1);
  c << 2.0; d << -1.0;
  CHECK(rmsd(c, d) == doctest::Approx(3.0));
}

TEST_CASE("kabsch recovers rigid transforms in 3D") {
  CounterRng rng(11, {0x6b6162});
  for (int trial = 0; trial < 25; ++trial) {
    int n = 4 + static_cast<int>(rng.uniform_index(6));
    Eigen::MatrixXd pts(n, 3);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < 3; ++d) pts(i, d) = rng.normal();
    Eigen::Matrix3d rot = quat_rotation(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    Eigen::RowVector3d shift(rng.normal(), rng.normal(), rng.normal());
    Eigen::MatrixXd target = (pts * rot.transpose()).rowwise() + shift;
    CHECK(aligned_rmsd(pts, target) < 1e-9);
    Alignment al = kabsch_align(pts, target);
    CHECK(al.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("kabsch 2D matches brute-force rotation search on a mirrored shape") {
  Eigen::MatrixXd tri(3, 2), mirrored(3, 2);
  tri << 0, 0, 2, 0, 0.5, 1.5;
  mirrored = tri;
  mirrored.col(0) = -mirrored.col(0);  // reflection, not reachable by rotation

  double grid_best = 1e300;
  Eigen::RowVector2d cm = mirrored.colwise().mean(), ct = tri.colwise().mean();
  Eigen::MatrixXd P = mirrored.rowwise() - cm, Q = tri.rowwise() - ct;
  for (int i = 0; i < 200000; ++i) {
    double th = 2.0 * M_PI * i / 200000.0;
    Eigen::Matrix2d r;
    r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    grid_best = std::min(grid_best, rmsd(P * r.transpose(), Q));
  }
  double impl = aligned_rmsd(mirrored, tri);
  CHECK(impl == doctest::Approx(grid_best).epsilon(1e-6));
  CHECK(impl > 0.1);  // reflections are never applied
  Alignment al = kabsch_align(mirrored, tri);
  CHECK(al.rotation.determinant() == doctest::Approx(1.0));
}

TEST_CASE("kabsch never reflects a chiral 3D shape") {
  Eigen::MatrixXd tet(4, 3), mir(4, 3);
  tet << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0.3, 0.3, 1.2;
  mir = tet;
  mir.col(2) = -mir.col(2);
  double d = aligned_rmsd(mir, tet);
  CHECK(d > 0.1);
  CHECK(kabsch_align(mir, tet).rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("kabsch degenerate inputs") {
  // all points coincident: identity rotation, pure centroid shift
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(3, 3);
  Eigen::MatrixXd b = Eigen::MatrixXd::Constant(3, 3, 2.0);
  Alignment al = kabsch_align(a, b);
  CHECK((al.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(aligned_rmsd(a, b) < 1e-12);

  // collinear points under a rigid transform still align exactly
  Eigen::MatrixXd line(4, 3);
  for (int i = 0; i < 4; ++i) line.row(i) << i * 0.5, 0.0, 0.0;
  Eigen::Matrix3d rot = quat_rotation(0.9, 0.1, -0.3, 0.2);
  Eigen::MatrixXd moved = (line * rot.transpose()).rowwise() + Eigen::RowVector3d(1, -2, 0.5);
  CHECK(aligned_rmsd(line, moved) < 1e-9);

  // planar points (rank-2 covariance)
  Eigen::MatrixXd plane(5, 3);
  plane << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0, 0.5, 0.25, 0;
  Eigen::MatrixXd pmoved = (plane * rot.transpose()).rowwise() + Eigen::RowVector3d(0.1, 0.2, 0.3);
  CHECK(aligned_rmsd(plane, pmoved) < 1e-9);
}

TEST_CASE("kabsch 1D reduces to centroid matching") {
  Eigen::MatrixXd a(3, 1), b(3, 1);
  a << 0, 1, 2;
  b << 10, 11, 12;
  Alignment al = kabsch_align(a, b);
  CHECK(al.rotation(0, 0) == 1.0);
  CHECK(aligned_rmsd(a, b) < 1e-12);
}

TEST_CASE("rmsd invariance under shared isometry") {
  CounterRng rng(3, {0x69736fu});
  Eigen::MatrixXd a(6, 3), b(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int d = 0; d < 3; ++d) {
      a(i, d) = rng.normal();
      b(i, d) = rng.normal();
    }
  Eigen::Matrix3d rot = quat_rotation(0.2, 0.5, 0.1, 0.9);
  Eigen::RowVector3d t(3, 1, -2);
  double before = rmsd(a, b);
  double after = rmsd((a * rot.transpose()).rowwise() + t, (b * rot.transpose()).rowwise() + t);
  CHECK(after == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("mset round trip preserves every field and frame") {
  Trajectory t;
  t.n_particles = 3;
  t.dim = 2;
  t.save_interval = 0.25;
  t.temperature = 1.5;
  t.seed = 0xdeadbeefull;
  t.frames.resize(4, 6);
  CounterRng rng(5, {0x6d736574});
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 6; ++j) t.frames(i, j) = rng.normal();

  std::string path = "roundtrip.mset";
  write_mset(path, t);
  Trajectory r = read_mset(path);
  CHECK(r.n_particles == 3);
  CHECK(r.dim == 2);
  CHECK(r.save_interval == 0.25);
  CHECK(r.temperature == 1.5);
  CHECK(r.seed == 0xdeadbeefull);
  REQUIRE(r.n_frames() == 4);
  CHECK((r.frames - t.frames).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("mset rejects foreign and truncated files") {
  {
    std::FILE* f = std::fopen("bad.mset", "wb");
    std::fputs("NOPE", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_mset("bad.mset"), DataError);
  CHECK_THROWS_AS(read_mset("missing_file.mset"), DataError);
  {
    std::FILE* f = std::fopen("trunc.mset", "wb");
    std::fputs("MSET", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_mset("trunc.mset"), DataError);
  std::remove("bad.mset");
  std::remove("trunc.mset");
}

TEST_CASE("csv export writes one row per frame") {
  Trajectory t;
  t.n_particles = 1;
  t.dim = 2;
  t.frames.resize(2, 2);
  t.frames << 1.0, 2.0, 3.0, 4.0;
  write_csv("tiny.csv", t);
  std::FILE* f = std::fopen("tiny.csv", "r");
  REQUIRE(f != nullptr);
  char line[256];
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "frame,p0_x,p0_y\n");
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "0,1,2\n");
  std::fclose(f);
  std::remove("tiny.csv");
}

TEST_CASE("system validation rejects inconsistent specs") {
  SystemSpec s = make_system(2, 2);
  s.masses.pop_back();
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s = make_system(2, 4);
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s = make_system(2, 2);
  s.masses[0] = 0.0;
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s = make_system(2, 2, 9);
  CHECK_THROWS_AS(s.validate(), ShapeError);
}

TEST_CASE("counter rng is reproducible and order-independent") {
  RngKey k{123};
  CHECK(k.uniform(7) == k.uniform(7));
  CHECK(k.normal(3) == k.normal(3));
  double late = k.uniform(1000000);
  double early = k.uniform(2);
  CHECK(late == k.uniform(1000000));  // unaffected by interleaved draws
  CHECK(early != late);
  // moments sanity on a large stream
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double z = k.normal(static_cast<uint64_t>(i));
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}
