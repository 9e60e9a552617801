#include "doctest.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "msmemu/dynamics.hpp"
#include "msmemu/errors.hpp"
#include "msmemu/metrics.hpp"
#include "msmemu/msm.hpp"
#include "msmemu/rng.hpp"

using namespace msmemu;

namespace {

SystemSpec make_system(int n, int dim) {
  SystemSpec s;
  s.n_particles = n;
  s.dim = dim;
  s.masses.assign(static_cast<size_t>(n), 1.0);
  s.labels.assign(static_cast<size_t>(n), 0);
  return s;
}

Trajectory make_traj(const SystemSpec& s, long n_frames) {
  Trajectory t;
  t.n_particles = s.n_particles;
  t.dim = s.dim;
  t.frames.resize(n_frames, static_cast<long>(s.n_particles) * s.dim);
  return t;
}

// Two-state jump process in one dimension: centers -+1, small jitter.
Trajectory jump_traj(const SystemSpec& s, long n_frames, double flip_prob, uint64_t seed) {
  CounterRng rng(seed, {0x6a756d70});
  Trajectory t = make_traj(s, n_frames);
  double center = -1.0;
  for (long i = 0; i < n_frames; ++i) {
    if (rng.uniform() < flip_prob) center = -center;
    t.frames(i, 0) = center + 0.1 * rng.normal();
  }
  return t;
}

Conformation point_conf(double x) {
  Conformation c;
  c.x.resize(1, 1);
  c.x(0, 0) = x;
  return c;
}

// Chain ensemble: fixed backbone with isotropic Gaussian jitter per frame.
Trajectory chain_traj(const SystemSpec& s, long n_frames, double sigma, uint64_t seed) {
  CounterRng rng(seed, {0x636861});
  Conformation base = build_chain_conformation(s.n_particles, 1.0, 1.9, {0.8, 2.9, -1.2});
  Trajectory t = make_traj(s, n_frames);
  for (long i = 0; i < n_frames; ++i) {
    Conformation c = base;
    for (long p = 0; p < c.x.rows(); ++p)
      for (long d = 0; d < c.x.cols(); ++d) c.x(p, d) += sigma * rng.normal();
    t.set_frame(i, c);
  }
  return t;
}

// Plain-loop density threshold estimate mirroring the published procedure,
// written without Eigen to cross-check the library path.
double kde_threshold_oracle(const std::vector<double>& q) {
  double n = static_cast<double>(q.size());
  double mean = 0.0;
  for (double v : q) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : q) var += (v - mean) * (v - mean);
  var /= (n - 1.0);
  std::vector<double> sorted = q;
  std::sort(sorted.begin(), sorted.end());
  auto quant = [&](double f) {
    double pos = f * (n - 1.0);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = lo + 1 < sorted.size() ? lo + 1 : sorted.size() - 1;
    double w = pos - static_cast<double>(lo);
    return (1.0 - w) * sorted[lo] + w * sorted[hi];
  };
  double iqr = quant(0.75) - quant(0.25);
  double a = std::min(std::sqrt(var), iqr / 1.34);
  double h = 0.9 * a * std::pow(n, -0.2);
  if (!(h > 0.0)) return 0.70;
  const int G = 512;
  std::vector<double> dens(G);
  for (int k = 0; k < G; ++k) {
    double g = static_cast<double>(k) / (G - 1);
    double acc = 0.0;
    for (double v : q) acc += std::exp(-0.5 * (g - v) * (g - v) / (h * h));
    dens[static_cast<size_t>(k)] = acc / (n * h * std::sqrt(2.0 * M_PI));
  }
  double best = -1.0, best_d = 0.0;
  for (int k = 1; k + 1 < G; ++k) {
    double g = static_cast<double>(k) / (G - 1);
    if (g < 0.45 || g > 0.90) continue;
    if (dens[static_cast<size_t>(k)] < dens[static_cast<size_t>(k - 1)] &&
        dens[static_cast<size_t>(k)] < dens[static_cast<size_t>(k + 1)]) {
      if (best < 0.0 || dens[static_cast<size_t>(k)] < best_d) {
        best = g;
        best_d = dens[static_cast<size_t>(k)];
      }
    }
  }
  return best < 0.0 ? 0.70 : best;
}

}  // namespace

TEST_CASE("jensen-shannon divergence matches the hand-computed two-bin value") {
  Eigen::VectorXd p(2), q(2);
  p << 0.5, 0.5;
  q << 1.0, 0.0;
  double m0 = 0.75, m1 = 0.25;
  double oracle = 0.5 * (0.5 * std::log(0.5 / m0) + 0.5 * std::log(0.5 / m1)) +
                  0.5 * (1.0 * std::log(1.0 / m0));
  CHECK(discrete_jsd(p, q) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(discrete_jsd(p, q) == doctest::Approx(0.2157615).epsilon(1e-6));
}

TEST_CASE("jensen-shannon divergence limits and symmetry") {
  Eigen::VectorXd a(3), b(3);
  a << 0.2, 0.5, 0.3;
  b << 0.2, 0.5, 0.3;
  CHECK(discrete_jsd(a, b) == doctest::Approx(0.0));

  Eigen::VectorXd p(2), q(2);
  p << 1.0, 0.0;
  q << 0.0, 1.0;
  CHECK(discrete_jsd(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CounterRng rng(5, {0x6a7364});
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd u(6), v(6);
    for (int i = 0; i < 6; ++i) {
      u(i) = rng.uniform();
      v(i) = rng.uniform();
    }
    u /= u.sum();
    v /= v.sum();
    double d = discrete_jsd(u, v);
    CHECK(d >= 0.0);
    CHECK(d <= std::log(2.0) + 1e-12);
    CHECK(d == doctest::Approx(discrete_jsd(v, u)).epsilon(1e-13));
  }

  Eigen::VectorXd bad(2);
  CHECK_THROWS_AS(discrete_jsd(a, bad), ShapeError);
}

TEST_CASE("forward kl floors the model distribution without renormalizing") {
  Eigen::VectorXd p(2), q(2);
  p << 1.0, 0.0;
  q << 0.5, 0.5;
  CHECK(discrete_forward_kl(p, q, 1e-5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  p << 0.5, 0.5;
  q << 1.0, 0.0;
  double oracle = 0.5 * std::log(0.5 / 1.0) + 0.5 * std::log(0.5 / 1e-5);
  CHECK(discrete_forward_kl(p, q, 1e-5) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(discrete_forward_kl(p, q, 1e-5) == doctest::Approx(5.06332).epsilon(1e-5));
}

TEST_CASE("pooled histograms share edges over the joint range") {
  std::vector<double> a = {0.0, 1.0, 2.0, 3.0};
  std::vector<double> b = {4.0};
  HistogramPair h = pooled_histograms(a, b, 5);
  CHECK(h.lo == doctest::Approx(0.0));
  CHECK(h.hi == doctest::Approx(4.0));
  Eigen::VectorXd p_exp(5), q_exp(5);
  p_exp << 0.25, 0.25, 0.25, 0.25, 0.0;
  q_exp << 0.0, 0.0, 0.0, 0.0, 1.0;
  CHECK((h.p - p_exp).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));
  CHECK((h.q - q_exp).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));

  std::vector<double> c = {2.0, 2.0}, d = {2.0};
  HistogramPair flat = pooled_histograms(c, d, 5);
  CHECK(flat.p.size() == 1);
  CHECK(discrete_jsd(flat.p, flat.q) == doctest::Approx(0.0));
  CHECK(discrete_forward_kl(flat.p, flat.q, 1e-5) == doctest::Approx(0.0));

  CHECK_THROWS_AS(pooled_histograms({}, b, 5), DataError);
  CHECK_THROWS_AS(pooled_histograms(a, b, 1), ConfigError);
}

TEST_CASE("histogram divergences separate disjoint samples and vanish on identity") {
  std::vector<double> low, high;
  CounterRng rng(3, {0x686973});
  for (int i = 0; i < 200; ++i) {
    low.push_back(rng.uniform());
    high.push_back(9.0 + rng.uniform());
  }
  HistogramSpec spec;
  CHECK(histogram_jsd(low, low, spec) == doctest::Approx(0.0));
  CHECK(histogram_jsd(low, high, spec) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(forward_kl(low, low, spec) == doctest::Approx(0.0));
  CHECK(forward_kl(low, high, spec) > 1.0);

  HistogramSpec bad;
  bad.n_bins = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = HistogramSpec{};
  bad.floor_kl = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("macrostate free-energy error matches the swapped two-state value") {
  Eigen::VectorXd m(2), r(2);
  m << 0.8, 0.2;
  r << 0.2, 0.8;
  CHECK(macrostate_mae(m, r, 1.0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  m << 1.0, 0.0;
  r << 0.5, 0.5;
  double kT = 2.0;
  double floor = 1e-4;
  double g0 = std::abs(-kT * std::log(1.0) - (-kT * std::log(0.5)));
  double g1 = std::abs(-kT * std::log(floor) - (-kT * std::log(0.5)));
  CHECK(macrostate_mae(m, r, kT) == doctest::Approx(0.5 * (g0 + g1)).epsilon(1e-12));

  Eigen::VectorXd bad(3);
  CHECK_THROWS_AS(macrostate_mae(m, bad, 1.0), ShapeError);
  Eigen::VectorXd empty;
  CHECK_THROWS_AS(macrostate_mae(empty, empty, 1.0), DataError);
}

TEST_CASE("radius of gyration frozen cases") {
  SystemSpec s = make_system(2, 1);
  Conformation c;
  c.x.resize(2, 1);
  c.x << -1.0, 1.0;
  CHECK(radius_of_gyration(c, s) == doctest::Approx(1.0).epsilon(1e-12));

  SystemSpec one = make_system(1, 3);
  Conformation single;
  single.x = Eigen::MatrixXd::Zero(1, 3);
  CHECK(radius_of_gyration(single, one) == doctest::Approx(0.0));

  SystemSpec weighted = make_system(2, 1);
  weighted.masses = {1.0, 3.0};
  Conformation w;
  w.x.resize(2, 1);
  w.x << 0.0, 4.0;
  CHECK(radius_of_gyration(w, weighted) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("structured fraction over chain dihedral bands") {
  SystemSpec s = make_system(7, 3);
  SsParams ss;
  ss.theta_ref = 1.0;
  ss.window = 0.5;
  Conformation all_in = build_chain_conformation(7, 1.0, 1.9, {1.0, 1.0, 1.0, 1.0});
  CHECK(ss_fraction(all_in, s, ss) == doctest::Approx(1.0).epsilon(1e-9));
  Conformation all_out =
      build_chain_conformation(7, 1.0, 1.9, {1.0 + M_PI, 1.0 + M_PI, 1.0 + M_PI, 1.0 + M_PI});
  CHECK(ss_fraction(all_out, s, ss) == doctest::Approx(0.0));
  Conformation half = build_chain_conformation(7, 1.0, 1.9, {1.0, 1.0, 1.0 + M_PI, 1.0 + M_PI});
  CHECK(ss_fraction(half, s, ss) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("fluctuation profile is exact for radial motion and zero under rigid moves") {
  SystemSpec s = make_system(4, 2);
  Conformation base;
  base.x.resize(4, 2);
  base.x << 5, 5, -5, 5, -5, -5, 5, -5;

  Trajectory scale = make_traj(s, 2);
  scale.set_frame(0, base);
  Conformation grown = base;
  grown.x *= 1.2;
  scale.set_frame(1, grown);
  Eigen::VectorXd f = rmsf(align_to_first(scale));
  for (int p = 0; p < 4; ++p)
    CHECK(f(p) == doctest::Approx(0.1 * std::sqrt(50.0)).epsilon(1e-12));

  Trajectory moved = make_traj(s, 3);
  moved.set_frame(0, base);
  Conformation shifted = base;
  shifted.x.rowwise() += Eigen::RowVector2d(3.0, -2.0);
  moved.set_frame(1, shifted);
  double ang = 0.7;
  Eigen::Matrix2d rot;
  rot << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);
  Conformation spun = base;
  spun.x = base.x * rot.transpose();
  moved.set_frame(2, spun);
  Eigen::VectorXd g = rmsf(align_to_first(moved));
  CHECK(g.lpNorm<Eigen::Infinity>() < 1e-10);

  Trajectory single = make_traj(s, 1);
  single.set_frame(0, base);
  CHECK_THROWS_AS(rmsf(single), DataError);
}

TEST_CASE("fluctuation profile recovers the jitter scale on a rigid scaffold") {
  SystemSpec s = make_system(8, 3);
  Trajectory t = make_traj(s, 10000);
  CounterRng rng(17, {0x726d7366});
  Eigen::MatrixXd base(8, 3);
  int idx = 0;
  for (int a = 0; a <= 1; ++a)
    for (int b = 0; b <= 1; ++b)
      for (int c = 0; c <= 1; ++c) {
        base.row(idx) = 20.0 * Eigen::RowVector3d(a, b, c);
        ++idx;
      }
  const double sigma = 0.3;
  for (long i = 0; i < t.n_frames(); ++i) {
    Conformation conf;
    conf.x = base;
    for (int p = 0; p < 8; ++p)
      for (int d = 0; d < 3; ++d) conf.x(p, d) += sigma * rng.normal();
    t.set_frame(i, conf);
  }
  Eigen::VectorXd f = rmsf(align_to_first(t));
  double expected = sigma * std::sqrt(3.0);
  CHECK(f.mean() == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("mean pairwise deviation matches brute force and strided selection") {
  SystemSpec s = make_system(4, 2);
  CounterRng rng(9, {0x707277});
  auto jitter_traj = [&](long n) {
    Trajectory t = make_traj(s, n);
    for (long i = 0; i < n; ++i) {
      Conformation c;
      c.x.resize(4, 2);
      c.x << 3, 3, -3, 3, -3, -3, 3, -3;
      for (int p = 0; p < 4; ++p)
        for (int d = 0; d < 2; ++d) c.x(p, d) += 0.4 * rng.normal();
      t.set_frame(i, c);
    }
    return t;
  };

  Trajectory small = jitter_traj(5);
  double brute = 0.0;
  int pairs = 0;
  for (long i = 0; i < 5; ++i)
    for (long j = i + 1; j < 5; ++j) {
      brute += aligned_rmsd(small.frame(j).x, small.frame(i).x);
      ++pairs;
    }
  brute /= pairs;
  CHECK(mean_pairwise_rmsd(small) == doctest::Approx(brute).epsilon(1e-12));

  Trajectory big = jitter_traj(10);
  const long total = 45, n_sel = 7;
  double strided = 0.0;
  for (long t2 = 0; t2 < n_sel; ++t2) {
    long k = static_cast<long>(static_cast<double>(t2) * total / n_sel);
    long i = 0, rem = k;
    while (rem >= 10 - 1 - i) {
      rem -= 10 - 1 - i;
      ++i;
    }
    long j = i + 1 + rem;
    strided += aligned_rmsd(big.frame(j).x, big.frame(i).x);
  }
  strided /= n_sel;
  CHECK(mean_pairwise_rmsd(big, 7) == doctest::Approx(strided).epsilon(1e-12));

  Trajectory capped = jitter_traj(150);
  double first = mean_pairwise_rmsd(capped);
  CHECK(mean_pairwise_rmsd(capped) == doctest::Approx(first));
  CHECK(first > 0.0);

  Trajectory shift = make_traj(s, 3);
  Conformation c0;
  c0.x.resize(4, 2);
  c0.x << 3, 3, -3, 3, -3, -3, 3, -3;
  for (long i = 0; i < 3; ++i) {
    Conformation c = c0;
    c.x.array() += static_cast<double>(i);
    shift.set_frame(i, c);
  }
  CHECK(mean_pairwise_rmsd(shift) < 1e-10);

  Trajectory one = make_traj(s, 1);
  one.set_frame(0, c0);
  CHECK_THROWS_AS(mean_pairwise_rmsd(one), DataError);
}

TEST_CASE("pearson correlation on hand values and degenerate input") {
  Eigen::VectorXd x(4), y(4);
  x << 1, 2, 3, 4;
  y << 2, 1, 4, 3;
  CHECK(*pearson(x, y) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(*pearson(x, 2.0 * x.array() + 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*pearson(x, (-x).eval()) == doctest::Approx(-1.0).epsilon(1e-12));
  Eigen::VectorXd flat = Eigen::VectorXd::Constant(4, 2.5);
  CHECK_FALSE(pearson(x, flat).has_value());
  Eigen::VectorXd shorty(2);
  CHECK_THROWS_AS(pearson(x, shorty.segment(0, 1).eval()), ShapeError);
}

TEST_CASE("flexibility correlations are perfect for identical ensembles") {
  SystemSpec s = make_system(6, 3);
  std::vector<Trajectory> refs = {chain_traj(s, 30, 0.05, 21), chain_traj(s, 30, 0.2, 22)};
  FlexibilityCorrelations fc = flexibility_correlations(refs, refs);
  REQUIRE(fc.pairwise_rmsd.has_value());
  REQUIRE(fc.global_rmsf.has_value());
  REQUIRE(fc.pertarget_rmsf.has_value());
  CHECK(*fc.pairwise_rmsd == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(*fc.global_rmsf == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(*fc.pertarget_rmsf == doctest::Approx(1.0).epsilon(1e-9));

  std::vector<Trajectory> single = {refs[0]};
  FlexibilityCorrelations one = flexibility_correlations(single, single);
  CHECK_FALSE(one.pairwise_rmsd.has_value());
  CHECK(one.global_rmsf.has_value());

  std::vector<Trajectory> mismatched = {refs[0]};
  CHECK_THROWS_AS(flexibility_correlations(refs, mismatched), ShapeError);
}

TEST_CASE("native contact fraction is one half at the switching midpoint") {
  CounterRng rng(13, {0x666e63});
  Conformation ref;
  ref.x.resize(8, 3);
  for (int p = 0; p < 8; ++p)
    for (int d = 0; d < 3; ++d) ref.x(p, d) = 2.5 * rng.uniform();
  FncParams params;

  Conformation at_mid = ref;
  at_mid.x *= params.lam;
  CHECK(fnc_score(at_mid, ref, params) == doctest::Approx(0.5).epsilon(1e-12));

  double oracle = 0.0;
  int count = 0;
  for (int i = 0; i < 8; ++i)
    for (int j = i + params.min_sep + 1; j < 8; ++j) {
      double d_ref = (ref.x.row(i) - ref.x.row(j)).norm();
      if (d_ref >= params.cutoff) continue;
      oracle += 1.0 / (1.0 + std::exp(params.beta * (d_ref - params.lam * d_ref)));
      ++count;
    }
  REQUIRE(count > 0);
  CHECK(fnc_score(ref, ref, params) == doctest::Approx(oracle / count).epsilon(1e-12));

  Conformation blown = ref;
  blown.x *= 100.0;
  CHECK(fnc_score(blown, ref, params) < 1e-8);

  double prev = 2.0;
  for (double scale : {1.0, 1.3, 1.7, 2.5}) {
    Conformation c = ref;
    c.x *= scale;
    double v = fnc_score(c, ref, params);
    CHECK(v < prev);
    prev = v;
  }

  FncParams flipped = params;
  flipped.inverted_sign = true;
  Conformation probe = ref;
  probe.x *= 1.05;
  CHECK(fnc_score(probe, ref, flipped) ==
        doctest::Approx(1.0 - fnc_score(probe, ref, params)).epsilon(1e-12));

  Conformation tiny;
  tiny.x = Eigen::MatrixXd::Zero(2, 3);
  CHECK_THROWS_AS(fnc_score(tiny, tiny, params), DataError);
  CHECK_THROWS_AS(fnc_score(tiny, ref, params), ShapeError);
}

TEST_CASE("density threshold finds the gap of a bimodal sample") {
  CounterRng rng(31, {0x716b6465});
  std::vector<double> q;
  for (int i = 0; i < 40; ++i) q.push_back(0.30 + 0.04 * rng.normal());
  for (int i = 0; i < 40; ++i) q.push_back(0.95 + 0.03 * rng.normal());
  double t = q_half_threshold(q);
  CHECK(t == doctest::Approx(kde_threshold_oracle(q)).epsilon(1e-6));
  CHECK(t > 0.45);
  CHECK(t < 0.90);

  std::vector<double> unimodal;
  for (int i = 0; i < 50; ++i) unimodal.push_back(0.2 + 0.02 * rng.normal());
  CHECK(q_half_threshold(unimodal) == doctest::Approx(0.70));

  std::vector<double> flat(20, 0.55);
  CHECK(q_half_threshold(flat) == doctest::Approx(0.70));

  std::vector<double> few(9, 0.5);
  CHECK_THROWS_AS(q_half_threshold(few), DataError);
}

TEST_CASE("fold probability and folding free energy frozen cases") {
  CHECK(p_fold(0.8, 0.7, 10.0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
  CHECK(p_fold(0.8, 0.7, 10.0) == doctest::Approx(0.8807971).epsilon(1e-6));
  CHECK(p_fold(0.7, 0.7, 10.0) == doctest::Approx(0.5));

  const double kT = 0.894, q_half = 0.7, s = 10.0;
  double q_at_09 = q_half + std::log(9.0) / (2.0 * s);
  std::vector<double> sample(25, q_at_09);
  CHECK(delta_g_fold(sample, q_half, kT, s) == doctest::Approx(-kT * std::log(9.0)).epsilon(1e-9));
  CHECK(delta_g_fold(sample, q_half, kT, s) == doctest::Approx(-1.9643).epsilon(1e-4));

  CounterRng rng(7, {0x6467});
  std::vector<double> lo, hi;
  for (int i = 0; i < 30; ++i) {
    double d = 0.2 * rng.uniform();
    lo.push_back(q_half - d);
    hi.push_back(q_half + d);
  }
  CHECK(delta_g_fold(hi, q_half, kT, s) ==
        doctest::Approx(-delta_g_fold(lo, q_half, kT, s)).epsilon(1e-9));

  std::vector<double> saturated(20, 1.0);
  double extreme = delta_g_fold(saturated, q_half, kT, 50.0);
  CHECK(std::isfinite(extreme));
  CHECK(extreme == doctest::Approx(-kT * std::log((1.0 - 1e-6) / 1e-6)).epsilon(1e-6));

  CHECK_THROWS_AS(delta_g_fold({}, q_half, kT, s), DataError);
  CHECK_THROWS_AS(delta_g_fold(sample, 1.0, kT, s), ConfigError);
}

TEST_CASE("series stats use the population spread") {
  EnsembleStats st = series_stats({1.0, 2.0, 3.0});
  CHECK(st.mean == doctest::Approx(2.0));
  CHECK(st.stddev == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
  EnsembleStats empty = series_stats({});
  CHECK(empty.mean == doctest::Approx(0.0));
  CHECK(empty.stddev == doctest::Approx(0.0));
}

TEST_CASE("macrostate occupancy and recovery divergence on a two-state system") {
  SystemSpec s = make_system(1, 1);
  std::vector<Trajectory> trajs = {jump_traj(s, 500, 0.02, 1), jump_traj(s, 500, 0.02, 2)};
  MsmConfig cfg;
  cfg.lag = 1;
  cfg.n_micro = 4;
  cfg.n_macro = 2;
  MsmContext ctx = build_msm(trajs, s, cfg, 99);
  REQUIRE(ctx.n_macro == 2);

  int left_state = assign_state(ctx, point_conf(-1.0));
  int right_state = assign_state(ctx, point_conf(1.0));
  REQUIRE(left_state != right_state);

  CounterRng rng(44, {0x6c656674});
  Trajectory left = make_traj(s, 200);
  for (long i = 0; i < 200; ++i) left.frames(i, 0) = -1.0 + 0.1 * rng.normal();
  Eigen::VectorXd occ = macro_occupancy(ctx, left);
  CHECK(occ(left_state) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(occ(right_state) == doctest::Approx(0.0));

  CHECK(msm_recovery_jsd(ctx, left, occ) == doctest::Approx(0.0));
  Eigen::VectorXd uniform = Eigen::VectorXd::Constant(2, 0.5);
  CHECK(msm_recovery_jsd(ctx, left, uniform) == doctest::Approx(0.2157615).epsilon(1e-6));

  Eigen::VectorXd wrong(3);
  CHECK_THROWS_AS(msm_recovery_jsd(ctx, left, wrong), ShapeError);
}

TEST_CASE("projected divergence vanishes on identity and saturates when shifted") {
  SystemSpec s = make_system(1, 1);
  std::vector<Trajectory> trajs = {jump_traj(s, 500, 0.02, 1), jump_traj(s, 500, 0.02, 2)};
  MsmConfig cfg;
  cfg.lag = 1;
  cfg.n_micro = 4;
  cfg.n_macro = 2;
  MsmContext ctx = build_msm(trajs, s, cfg, 99);
  REQUIRE(ctx.tica.n_kept() == 1);

  HistogramSpec spec;
  TicaJsdResult same = tica_jsd(ctx, trajs, trajs, spec);
  CHECK(same.jsd0 == doctest::Approx(0.0));
  CHECK_FALSE(same.joint.has_value());

  Trajectory shifted = trajs[0];
  shifted.frames.array() += 10.0;
  TicaJsdResult far = tica_jsd(ctx, {trajs[0]}, {shifted}, spec);
  CHECK(far.jsd0 == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  MsmContext wrong_kind = ctx;
  wrong_kind.config.feature_kind = FeatureKind::observables;
  CHECK_THROWS_AS(tica_jsd(wrong_kind, trajs, trajs, spec), ConfigError);
}

TEST_CASE("observable series cover the frame count and drop undefined contacts") {
  SystemSpec s = make_system(6, 3);
  Trajectory t = chain_traj(s, 12, 0.05, 5);
  MetricParams params;
  auto series = observable_series(t, s, t.frame(0), params);
  REQUIRE(series.count("rg") == 1);
  REQUIRE(series.count("ss") == 1);
  REQUIRE(series.count("q") == 1);
  CHECK(series["rg"].size() == 12);
  CHECK(series["q"][0] == doctest::Approx(fnc_score(t.frame(0), t.frame(0), params.fnc)));

  SystemSpec tiny = make_system(2, 3);
  Trajectory t2 = make_traj(tiny, 3);
  for (long i = 0; i < 3; ++i) {
    Conformation c;
    c.x.resize(2, 3);
    c.x << 0, 0, 0, 1, 0, 0;
    t2.set_frame(i, c);
  }
  auto series2 = observable_series(t2, tiny, t2.frame(0), params);
  CHECK(series2.count("q") == 0);
  CHECK(series2.count("rg") == 1);
}

TEST_CASE("metric report on identical ensembles is exact without a state model") {
  SystemSpec s = make_system(6, 3);
  std::vector<Trajectory> refs = {chain_traj(s, 40, 0.05, 11), chain_traj(s, 40, 0.15, 12)};
  MetricParams params;
  MetricReport rep = compute_metric_report(refs, refs, s, nullptr, params);

  for (const char* key : {"rg", "ss", "q"}) {
    REQUIRE(rep.jsd.count(key) == 1);
    CHECK(rep.jsd.at(key) == doctest::Approx(0.0));
    CHECK(rep.kl.at(key) == doctest::Approx(0.0));
    CHECK(rep.ref_stats.at(key).mean == doctest::Approx(rep.gen_stats.at(key).mean));
  }
  REQUIRE(rep.pearson_pairwise_rmsd.has_value());
  CHECK(*rep.pearson_pairwise_rmsd == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(*rep.pearson_global_rmsf == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(*rep.pearson_pertarget_rmsf == doctest::Approx(1.0).epsilon(1e-9));
  REQUIRE(rep.delta_g_fold_mae.has_value());
  CHECK(*rep.delta_g_fold_mae == doctest::Approx(0.0));
  CHECK_FALSE(rep.mmae.has_value());
  CHECK_FALSE(rep.msm_recovery.has_value());
  CHECK_FALSE(rep.tica_jsd_0.has_value());

  std::vector<Trajectory> wrong = {make_traj(make_system(3, 3), 5)};
  CHECK_THROWS_AS(compute_metric_report(refs, wrong, s, nullptr, params), ShapeError);
}

TEST_CASE("metric report gains state-model columns when a context is supplied") {
  SystemSpec s = make_system(6, 3);
  std::vector<Trajectory> refs = {chain_traj(s, 200, 0.08, 11), chain_traj(s, 200, 0.12, 12)};
  MsmConfig cfg;
  cfg.lag = 1;
  cfg.n_micro = 5;
  cfg.n_macro = 2;
  MsmContext ctx = build_msm(refs, s, cfg, 7);

  MetricParams params;
  MetricReport rep = compute_metric_report(refs, refs, s, &ctx, params);
  REQUIRE(rep.mmae.has_value());
  CHECK(*rep.mmae == doctest::Approx(0.0));
  REQUIRE(rep.msm_recovery.has_value());
  CHECK(*rep.msm_recovery >= 0.0);
  REQUIRE(rep.tica_jsd_0.has_value());
  CHECK(*rep.tica_jsd_0 == doctest::Approx(0.0));
  CHECK(rep.tica_jsd_01.has_value() == (ctx.tica.n_kept() >= 2));
}
