#include "msmemu/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "msmemu/errors.hpp"
#include "msmemu/parallel.hpp"

namespace msmemu {

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) return sorted[0];
  double pos = q * static_cast<double>(sorted.size() - 1);
  size_t lo = static_cast<size_t>(pos);
  size_t hi = std::min(lo + 1, sorted.size() - 1);
  double w = pos - static_cast<double>(lo);
  return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

Eigen::VectorXd bin_normalized(const std::vector<double>& v, double lo, double hi, int n_bins) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(n_bins);
  double width = hi - lo;
  for (double x : v) {
    int idx = static_cast<int>((x - lo) / width * n_bins);
    idx = std::clamp(idx, 0, n_bins - 1);
    h(idx) += 1.0;
  }
  return h / static_cast<double>(v.size());
}

std::vector<double> concat(const std::vector<std::vector<double>>& parts) {
  std::vector<double> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

int native_contact_count(const Conformation& reference, const FncParams& params) {
  const long n = reference.x.rows();
  int count = 0;
  for (long i = 0; i < n; ++i)
    for (long j = i + params.min_sep + 1; j < n; ++j)
      if ((reference.x.row(i) - reference.x.row(j)).norm() < params.cutoff) ++count;
  return count;
}

}  // namespace

void HistogramSpec::validate() const {
  if (n_bins < 2) throw ConfigError("histogram needs at least 2 bins");
  if (floor_kl <= 0.0 || floor_mmae <= 0.0) throw ConfigError("histogram floors must be positive");
}

HistogramPair pooled_histograms(const std::vector<double>& a, const std::vector<double>& b,
                                int n_bins) {
  if (a.empty() || b.empty()) throw DataError("histogram inputs must be non-empty");
  if (n_bins < 2) throw ConfigError("histogram needs at least 2 bins");
  double lo = *std::min_element(a.begin(), a.end());
  double hi = *std::max_element(a.begin(), a.end());
  lo = std::min(lo, *std::min_element(b.begin(), b.end()));
  hi = std::max(hi, *std::max_element(b.begin(), b.end()));
  HistogramPair out;
  out.lo = lo;
  out.hi = hi;
  if (hi <= lo) {
    out.p = Eigen::VectorXd::Ones(1);
    out.q = Eigen::VectorXd::Ones(1);
    return out;
  }
  out.p = bin_normalized(a, lo, hi, n_bins);
  out.q = bin_normalized(b, lo, hi, n_bins);
  return out;
}

double discrete_jsd(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw ShapeError("distributions must have equal length");
  double acc = 0.0;
  for (long i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p(i) + q(i));
    if (p(i) > 0.0) acc += 0.5 * p(i) * std::log(p(i) / m);
    if (q(i) > 0.0) acc += 0.5 * q(i) * std::log(q(i) / m);
  }
  return acc;
}

double discrete_forward_kl(const Eigen::VectorXd& p, const Eigen::VectorXd& q, double floor) {
  if (p.size() != q.size()) throw ShapeError("distributions must have equal length");
  double acc = 0.0;
  for (long i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) acc += p(i) * std::log(p(i) / std::max(q(i), floor));
  return acc;
}

double histogram_jsd(const std::vector<double>& a, const std::vector<double>& b,
                     const HistogramSpec& spec) {
  spec.validate();
  HistogramPair h = pooled_histograms(a, b, spec.n_bins);
  return discrete_jsd(h.p, h.q);
}

double forward_kl(const std::vector<double>& p_ref, const std::vector<double>& q_model,
                  const HistogramSpec& spec) {
  spec.validate();
  HistogramPair h = pooled_histograms(p_ref, q_model, spec.n_bins);
  return discrete_forward_kl(h.p, h.q, spec.floor_kl);
}

double macrostate_mae(const Eigen::VectorXd& pi_model, const Eigen::VectorXd& pi_ref, double kT,
                      double floor) {
  if (pi_model.size() != pi_ref.size()) throw ShapeError("distributions must have equal length");
  if (pi_model.size() == 0) throw DataError("empty distributions");
  double acc = 0.0;
  for (long i = 0; i < pi_model.size(); ++i) {
    double gm = -kT * std::log(std::max(pi_model(i), floor));
    double gr = -kT * std::log(std::max(pi_ref(i), floor));
    acc += std::abs(gm - gr);
  }
  return acc / static_cast<double>(pi_model.size());
}

Trajectory align_to_first(const Trajectory& traj) {
  if (traj.n_frames() < 1) throw DataError("alignment needs at least one frame");
  Trajectory out = traj;
  Conformation target = traj.frame(0);
  parallel_for(static_cast<size_t>(traj.n_frames()), [&](size_t i) {
    Conformation c = traj.frame(static_cast<long>(i));
    Alignment a = kabsch_align(c.x, target.x);
    c.x = apply_alignment(a, c.x);
    out.set_frame(static_cast<long>(i), c);
  });
  return out;
}

Eigen::VectorXd rmsf(const Trajectory& aligned) {
  const long n = aligned.n_frames();
  if (n < 2) throw DataError("fluctuation needs at least two frames");
  const int P = aligned.n_particles;
  const int d = aligned.dim;
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(P, d);
  for (long i = 0; i < n; ++i) mean += aligned.frame(i).x;
  mean /= static_cast<double>(n);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(P);
  for (long i = 0; i < n; ++i) {
    Eigen::MatrixXd dev = aligned.frame(i).x - mean;
    acc += dev.rowwise().squaredNorm();
  }
  return (acc / static_cast<double>(n)).cwiseSqrt();
}

double mean_pairwise_rmsd(const Trajectory& traj, long max_pairs) {
  const long n = traj.n_frames();
  if (n < 2) throw DataError("pairwise deviation needs at least two frames");
  if (max_pairs < 1) throw ConfigError("max_pairs must be positive");
  const long total = n * (n - 1) / 2;
  const long n_sel = std::min(total, max_pairs);

  // cumulative pair counts per leading frame, for index unranking
  std::vector<long> cum(static_cast<size_t>(n), 0);
  long run = 0;
  for (long i = 0; i < n - 1; ++i) {
    cum[static_cast<size_t>(i)] = run;
    run += n - 1 - i;
  }

  std::vector<double> vals(static_cast<size_t>(n_sel));
  parallel_for(static_cast<size_t>(n_sel), [&](size_t t) {
    long k = static_cast<long>(static_cast<double>(t) * static_cast<double>(total) /
                               static_cast<double>(n_sel));
    if (k >= total) k = total - 1;
    auto it = std::upper_bound(cum.begin(), cum.begin() + (n - 1), k);
    long i = static_cast<long>(it - cum.begin()) - 1;
    long j = i + 1 + (k - cum[static_cast<size_t>(i)]);
    vals[t] = aligned_rmsd(traj.frame(j).x, traj.frame(i).x);
  });
  double sum = 0.0;
  for (double v : vals) sum += v;
  return sum / static_cast<double>(n_sel);
}

std::optional<double> pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw ShapeError("correlation inputs must have equal length");
  if (x.size() < 2) return std::nullopt;
  Eigen::VectorXd dx = x.array() - x.mean();
  Eigen::VectorXd dy = y.array() - y.mean();
  double sx = dx.squaredNorm();
  double sy = dy.squaredNorm();
  if (sx == 0.0 || sy == 0.0) return std::nullopt;
  return dx.dot(dy) / std::sqrt(sx * sy);
}

FlexibilityCorrelations flexibility_correlations(const std::vector<Trajectory>& refs,
                                                 const std::vector<Trajectory>& gens) {
  if (refs.size() != gens.size() || refs.empty())
    throw ShapeError("matched per-target ensembles required");
  const size_t T = refs.size();
  for (size_t t = 0; t < T; ++t)
    if (refs[t].n_frames() < 2 || gens[t].n_frames() < 2)
      throw DataError("each target needs at least two frames");

  Eigen::VectorXd mpr_ref(T), mpr_gen(T);
  std::vector<Eigen::VectorXd> rf(T), gf(T);
  for (size_t t = 0; t < T; ++t) {
    mpr_ref(static_cast<long>(t)) = mean_pairwise_rmsd(refs[t]);
    mpr_gen(static_cast<long>(t)) = mean_pairwise_rmsd(gens[t]);
    rf[t] = rmsf(align_to_first(refs[t]));
    gf[t] = rmsf(align_to_first(gens[t]));
  }

  FlexibilityCorrelations out;
  if (T >= 2) out.pairwise_rmsd = pearson(mpr_ref, mpr_gen);

  long pooled = 0;
  for (const auto& v : rf) pooled += v.size();
  Eigen::VectorXd pr(pooled), pg(pooled);
  long off = 0;
  for (size_t t = 0; t < T; ++t) {
    pr.segment(off, rf[t].size()) = rf[t];
    pg.segment(off, gf[t].size()) = gf[t];
    off += rf[t].size();
  }
  out.global_rmsf = pearson(pr, pg);

  double acc = 0.0;
  int defined = 0;
  for (size_t t = 0; t < T; ++t) {
    auto r = pearson(rf[t], gf[t]);
    if (r) {
      acc += *r;
      ++defined;
    }
  }
  if (defined > 0) out.pertarget_rmsf = acc / defined;
  return out;
}

double fnc_score(const Conformation& conf, const Conformation& reference,
                 const FncParams& params) {
  if (conf.x.rows() != reference.x.rows() || conf.x.cols() != reference.x.cols())
    throw ShapeError("conformation and reference must have equal shape");
  const long n = conf.x.rows();
  double acc = 0.0;
  long count = 0;
  const double sign = params.inverted_sign ? -1.0 : 1.0;
  for (long i = 0; i < n; ++i) {
    for (long j = i + params.min_sep + 1; j < n; ++j) {
      double d_ref = (reference.x.row(i) - reference.x.row(j)).norm();
      if (d_ref >= params.cutoff) continue;
      double d = (conf.x.row(i) - conf.x.row(j)).norm();
      acc += 1.0 / (1.0 + std::exp(sign * params.beta * (d - params.lam * d_ref)));
      ++count;
    }
  }
  if (count == 0) throw DataError("reference has no native contacts");
  return acc / static_cast<double>(count);
}

double q_half_threshold(const std::vector<double>& q_values) {
  if (q_values.size() < 10) throw DataError("threshold estimation needs at least 10 samples");
  const double n = static_cast<double>(q_values.size());
  double mean = 0.0;
  for (double v : q_values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : q_values) var += (v - mean) * (v - mean);
  var /= (n - 1.0);
  std::vector<double> sorted = q_values;
  std::sort(sorted.begin(), sorted.end());
  double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double a = std::min(std::sqrt(var), iqr / 1.34);
  double h = 0.9 * a * std::pow(n, -0.2);
  if (!(h > 0.0)) return 0.70;

  const int G = 512;
  Eigen::VectorXd density(G);
  for (int k = 0; k < G; ++k) {
    double g = static_cast<double>(k) / (G - 1);
    double acc = 0.0;
    for (double v : q_values) {
      double z = (g - v) / h;
      acc += std::exp(-0.5 * z * z);
    }
    density(k) = acc / (n * h * std::sqrt(2.0 * M_PI));
  }

  double best = -1.0;
  double best_density = 0.0;
  for (int k = 1; k + 1 < G; ++k) {
    double g = static_cast<double>(k) / (G - 1);
    if (g < 0.45 || g > 0.90) continue;
    if (density(k) < density(k - 1) && density(k) < density(k + 1)) {
      if (best < 0.0 || density(k) < best_density) {
        best = g;
        best_density = density(k);
      }
    }
  }
  return best < 0.0 ? 0.70 : best;
}

double p_fold(double q, double q_half, double steepness) {
  return 1.0 / (1.0 + std::exp(-2.0 * steepness * (q - q_half)));
}

double delta_g_fold(const std::vector<double>& q_values, double q_half, double kT,
                    double steepness) {
  if (q_values.empty()) throw DataError("folding free energy needs samples");
  if (q_half <= 0.0 || q_half >= 1.0) throw ConfigError("threshold must lie in (0, 1)");
  double p = 0.0;
  for (double q : q_values) p += p_fold(q, q_half, steepness);
  p /= static_cast<double>(q_values.size());
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return -kT * std::log(p / (1.0 - p));
}

Eigen::VectorXd macro_occupancy(const MsmContext& ctx, const Trajectory& traj) {
  const long n = traj.n_frames();
  if (n < 1) throw DataError("occupancy needs at least one frame");
  std::vector<int> states(static_cast<size_t>(n));
  parallel_for(static_cast<size_t>(n), [&](size_t i) {
    states[i] = assign_state(ctx, traj.frame(static_cast<long>(i)));
  });
  Eigen::VectorXd occ = Eigen::VectorXd::Zero(ctx.n_macro);
  for (int s : states) occ(s) += 1.0;
  return occ / static_cast<double>(n);
}

double msm_recovery_jsd(const MsmContext& ctx, const Trajectory& generated,
                        const Eigen::VectorXd& reference_pi) {
  Eigen::VectorXd occ = macro_occupancy(ctx, generated);
  if (occ.size() != reference_pi.size())
    throw ShapeError("occupancy and reference distribution must have equal length");
  return discrete_jsd(occ, reference_pi);
}

TicaJsdResult tica_jsd(const MsmContext& ctx, const std::vector<Trajectory>& refs,
                       const std::vector<Trajectory>& gens, const HistogramSpec& spec) {
  spec.validate();
  if (ctx.config.feature_kind != FeatureKind::cartesian_tica)
    throw ConfigError("projection metrics require the TICA featurizer");
  if (refs.empty() || gens.empty()) throw DataError("projection metrics need both ensembles");

  auto project_all = [&](const std::vector<Trajectory>& trajs, int comp) {
    std::vector<double> vals;
    for (const Trajectory& t : trajs) {
      Eigen::MatrixXd y = ctx.tica.project(
          raw_features(t, ctx.system, FeatureKind::cartesian_tica, ctx.config.ss));
      for (long i = 0; i < y.rows(); ++i) vals.push_back(y(i, comp));
    }
    return vals;
  };

  TicaJsdResult out;
  std::vector<double> r0 = project_all(refs, 0);
  std::vector<double> g0 = project_all(gens, 0);
  out.jsd0 = histogram_jsd(r0, g0, spec);

  if (ctx.tica.n_kept() < 2) return out;
  std::vector<double> r1 = project_all(refs, 1);
  std::vector<double> g1 = project_all(gens, 1);

  double lo0 = std::min(*std::min_element(r0.begin(), r0.end()),
                        *std::min_element(g0.begin(), g0.end()));
  double hi0 = std::max(*std::max_element(r0.begin(), r0.end()),
                        *std::max_element(g0.begin(), g0.end()));
  double lo1 = std::min(*std::min_element(r1.begin(), r1.end()),
                        *std::min_element(g1.begin(), g1.end()));
  double hi1 = std::max(*std::max_element(r1.begin(), r1.end()),
                        *std::max_element(g1.begin(), g1.end()));
  if (hi0 <= lo0 || hi1 <= lo1) {
    out.joint = 0.0;
    return out;
  }

  const int B = spec.n_bins;
  auto joint_hist = [&](const std::vector<double>& c0, const std::vector<double>& c1) {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(static_cast<long>(B) * B);
    for (size_t i = 0; i < c0.size(); ++i) {
      int b0 = std::clamp(static_cast<int>((c0[i] - lo0) / (hi0 - lo0) * B), 0, B - 1);
      int b1 = std::clamp(static_cast<int>((c1[i] - lo1) / (hi1 - lo1) * B), 0, B - 1);
      h(static_cast<long>(b0) * B + b1) += 1.0;
    }
    return Eigen::VectorXd(h / static_cast<double>(c0.size()));
  };
  out.joint = discrete_jsd(joint_hist(r0, r1), joint_hist(g0, g1));
  return out;
}

EnsembleStats series_stats(const std::vector<double>& values) {
  EnsembleStats st;
  if (values.empty()) return st;
  double n = static_cast<double>(values.size());
  for (double v : values) st.mean += v;
  st.mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - st.mean) * (v - st.mean);
  st.stddev = std::sqrt(var / n);
  return st;
}

std::map<std::string, std::vector<double>> observable_series(const Trajectory& traj,
                                                             const SystemSpec& system,
                                                             const Conformation& native,
                                                             const MetricParams& params) {
  const long n = traj.n_frames();
  if (n < 1) throw DataError("observable series needs at least one frame");
  bool with_q = native_contact_count(native, params.fnc) > 0;

  std::vector<double> rg(static_cast<size_t>(n)), ss(static_cast<size_t>(n));
  std::vector<double> q(with_q ? static_cast<size_t>(n) : 0);
  parallel_for(static_cast<size_t>(n), [&](size_t i) {
    Conformation c = traj.frame(static_cast<long>(i));
    rg[i] = radius_of_gyration(c, system);
    ss[i] = ss_fraction(c, system, params.ss);
    if (with_q) q[i] = fnc_score(c, native, params.fnc);
  });

  std::map<std::string, std::vector<double>> out;
  out["rg"] = std::move(rg);
  out["ss"] = std::move(ss);
  if (with_q) out["q"] = std::move(q);
  return out;
}

MetricReport compute_metric_report(const std::vector<Trajectory>& ref_targets,
                                   const std::vector<Trajectory>& gen_targets,
                                   const SystemSpec& system, const MsmContext* ctx,
                                   const MetricParams& params) {
  params.hist.validate();
  if (ref_targets.empty() || gen_targets.empty())
    throw DataError("metric report needs both ensembles");
  for (const Trajectory& t : ref_targets)
    if (t.n_particles != system.n_particles || t.dim != system.dim)
      throw ShapeError("reference ensemble does not match system");
  for (const Trajectory& t : gen_targets)
    if (t.n_particles != system.n_particles || t.dim != system.dim)
      throw ShapeError("generated ensemble does not match system");

  Conformation native = ref_targets.front().frame(0);

  std::vector<std::vector<double>> ref_rg, ref_ss, ref_q, gen_rg, gen_ss, gen_q;
  for (const Trajectory& t : ref_targets) {
    auto s = observable_series(t, system, native, params);
    ref_rg.push_back(s["rg"]);
    ref_ss.push_back(s["ss"]);
    if (s.count("q")) ref_q.push_back(s["q"]);
  }
  for (const Trajectory& t : gen_targets) {
    auto s = observable_series(t, system, native, params);
    gen_rg.push_back(s["rg"]);
    gen_ss.push_back(s["ss"]);
    if (s.count("q")) gen_q.push_back(s["q"]);
  }

  MetricReport rep;
  auto add_observable = [&](const std::string& name, const std::vector<double>& r,
                            const std::vector<double>& g) {
    rep.jsd[name] = histogram_jsd(r, g, params.hist);
    rep.kl[name] = forward_kl(r, g, params.hist);
    rep.ref_stats[name] = series_stats(r);
    rep.gen_stats[name] = series_stats(g);
  };
  std::vector<double> rr = concat(ref_rg), gr = concat(gen_rg);
  std::vector<double> rs = concat(ref_ss), gs = concat(gen_ss);
  add_observable("rg", rr, gr);
  add_observable("ss", rs, gs);

  if (!ref_q.empty() && !gen_q.empty()) {
    std::vector<double> rq = concat(ref_q), gq = concat(gen_q);
    add_observable("q", rq, gq);
    rep.q_half = rq.size() >= 10 ? q_half_threshold(rq) : 0.70;
    rep.delta_g_fold_ref = delta_g_fold(rq, rep.q_half, params.kT, params.fold_steepness);
    rep.delta_g_fold_gen = delta_g_fold(gq, rep.q_half, params.kT, params.fold_steepness);
    rep.delta_g_fold_mae = std::abs(*rep.delta_g_fold_gen - *rep.delta_g_fold_ref);
  }

  bool enough_frames = ref_targets.size() == gen_targets.size();
  for (const Trajectory& t : ref_targets) enough_frames = enough_frames && t.n_frames() >= 2;
  for (const Trajectory& t : gen_targets) enough_frames = enough_frames && t.n_frames() >= 2;
  if (enough_frames) {
    FlexibilityCorrelations fc = flexibility_correlations(ref_targets, gen_targets);
    rep.pearson_pairwise_rmsd = fc.pairwise_rmsd;
    rep.pearson_global_rmsf = fc.global_rmsf;
    rep.pearson_pertarget_rmsf = fc.pertarget_rmsf;
  }

  if (ctx != nullptr) {
    auto pooled_occupancy = [&](const std::vector<Trajectory>& trajs) {
      Eigen::VectorXd occ = Eigen::VectorXd::Zero(ctx->n_macro);
      long total = 0;
      for (const Trajectory& t : trajs) {
        occ += macro_occupancy(*ctx, t) * static_cast<double>(t.n_frames());
        total += t.n_frames();
      }
      return Eigen::VectorXd(occ / static_cast<double>(total));
    };
    Eigen::VectorXd occ_ref = pooled_occupancy(ref_targets);
    Eigen::VectorXd occ_gen = pooled_occupancy(gen_targets);
    rep.mmae = macrostate_mae(occ_gen, occ_ref, params.kT, params.hist.floor_mmae);
    rep.msm_recovery = discrete_jsd(occ_gen, ctx->msm.stationary);
    if (ctx->config.feature_kind == FeatureKind::cartesian_tica) {
      TicaJsdResult tj = tica_jsd(*ctx, ref_targets, gen_targets, params.hist);
      rep.tica_jsd_0 = tj.jsd0;
      rep.tica_jsd_01 = tj.joint;
    }
  }
  return rep;
}

}  // namespace msmemu
