#include "msmemu/msm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <queue>

#include "msmemu/errors.hpp"
#include "msmemu/rng.hpp"

namespace msmemu {

using nlohmann::json;

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
  if (x.cols() != mean.size()) throw ShapeError("standardizer: feature count mismatch");
  Eigen::MatrixXd out = x.rowwise() - mean.transpose();
  for (long j = 0; j < out.cols(); ++j)
    out.col(j) = std(j) > 0.0 ? (out.col(j) / std(j)).eval() : Eigen::VectorXd::Zero(out.rows());
  return out;
}

Standardizer fit_standardizer(const Eigen::MatrixXd& x) {
  if (x.rows() < 1) throw DataError("standardizer: no samples");
  Standardizer s;
  s.mean = x.colwise().mean();
  s.std.resize(x.cols());
  for (long j = 0; j < x.cols(); ++j) {
    double var = (x.col(j).array() - s.mean(j)).square().mean();
    double sd = std::sqrt(var);
    s.std(j) = sd > 1e-12 ? sd : 0.0;
  }
  return s;
}

Eigen::MatrixXd TicaModel::project(const Eigen::MatrixXd& x) const {
  if (x.cols() != mean.size()) throw ShapeError("tica: feature count mismatch");
  return (x.rowwise() - mean.transpose()) * components;
}

TicaModel compute_tica(const std::vector<Eigen::MatrixXd>& feature_trajs, int lag,
                       double variance_cut, double ridge) {
  if (feature_trajs.empty()) throw DataError("tica: no trajectories");
  if (lag < 1) throw ConfigError("tica: lag must be >= 1");
  if (!(variance_cut > 0.0 && variance_cut <= 1.0))
    throw ConfigError("tica: variance_cut must be in (0, 1]");
  if (ridge < 0.0) throw ConfigError("tica: ridge must be >= 0");

  const long F = feature_trajs.front().cols();
  for (const auto& t : feature_trajs)
    if (t.cols() != F) throw ShapeError("tica: inconsistent feature count across trajectories");

  Eigen::VectorXd sa = Eigen::VectorXd::Zero(F), sb = Eigen::VectorXd::Zero(F);
  Eigen::MatrixXd saa = Eigen::MatrixXd::Zero(F, F), sbb = Eigen::MatrixXd::Zero(F, F),
                  sab = Eigen::MatrixXd::Zero(F, F);
  double n_pairs = 0.0;
  for (const auto& t : feature_trajs) {
    long T = t.rows();
    for (long i = 0; i + lag < T; ++i) {
      Eigen::VectorXd a = t.row(i).transpose();
      Eigen::VectorXd b = t.row(i + lag).transpose();
      sa += a;
      sb += b;
      saa.noalias() += a * a.transpose();
      sbb.noalias() += b * b.transpose();
      sab.noalias() += a * b.transpose();
      n_pairs += 1.0;
    }
  }
  if (n_pairs < 2.0) throw DataError("tica: lag leaves fewer than two lagged pairs");

  Eigen::VectorXd mu = (sa + sb) / (2.0 * n_pairs);
  auto center = [&](const Eigen::MatrixXd& sxy, const Eigen::VectorXd& sx,
                    const Eigen::VectorXd& sy) {
    return (sxy - sx * mu.transpose() - mu * sy.transpose() + n_pairs * mu * mu.transpose());
  };
  Eigen::MatrixXd c0 = (center(saa, sa, sa) + center(sbb, sb, sb)) / (2.0 * n_pairs);
  Eigen::MatrixXd ct = center(sab, sa, sb) / n_pairs;
  ct = ((ct + ct.transpose()) / 2.0).eval();
  c0 = ((c0 + c0.transpose()) / 2.0).eval();
  c0.diagonal().array() += ridge;

  Eigen::LLT<Eigen::MatrixXd> llt(c0);
  if (llt.info() != Eigen::Success)
    throw NumericError("tica: covariance not positive definite, increase ridge");
  Eigen::MatrixXd L = llt.matrixL();
  // Whitened lagged covariance: L^-1 * C(tau) * L^-T, kept exactly symmetric.
  Eigen::MatrixXd W = L.triangularView<Eigen::Lower>().solve(ct);
  Eigen::MatrixXd M = L.triangularView<Eigen::Lower>().solve(W.transpose());
  M = ((M + M.transpose()) / 2.0).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  if (es.info() != Eigen::Success) throw NumericError("tica: eigensolver failed");

  const long n = F;
  Eigen::VectorXd lam(n);
  Eigen::MatrixXd vecs(n, n);
  for (long i = 0; i < n; ++i) {
    lam(i) = std::clamp(es.eigenvalues()(n - 1 - i), -1.0, 1.0);  // descending
    Eigen::VectorXd u = es.eigenvectors().col(n - 1 - i);
    Eigen::VectorXd w = L.transpose().triangularView<Eigen::Upper>().solve(u);
    long imax = 0;
    w.cwiseAbs().maxCoeff(&imax);
    if (w(imax) < 0.0) w = -w;
    vecs.col(i) = w;
  }

  double total = 0.0;
  for (long i = 0; i < n; ++i)
    if (lam(i) > 0.0) total += lam(i) * lam(i);
  int kept = 1;
  if (total > 0.0) {
    double cum = 0.0;
    for (long i = 0; i < n; ++i) {
      cum += lam(i) > 0.0 ? lam(i) * lam(i) : 0.0;
      if (cum >= variance_cut * total) {
        kept = static_cast<int>(i) + 1;
        break;
      }
      kept = static_cast<int>(i) + 1;
    }
  }

  TicaModel model;
  model.mean = mu;
  model.components = vecs.leftCols(kept);
  model.eigenvalues = lam.head(kept);
  model.lag = lag;
  model.ridge = ridge;
  return model;
}

int nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::RowVectorXd& x) {
  if (centroids.rows() < 1) throw DataError("nearest_centroid: no centroids");
  if (centroids.cols() != x.size()) throw ShapeError("nearest_centroid: dimension mismatch");
  int best = 0;
  double best_d = (centroids.row(0) - x).squaredNorm();
  for (int c = 1; c < centroids.rows(); ++c) {
    double d = (centroids.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

KMeansModel fit_kmeans(const Eigen::MatrixXd& x, int k, uint64_t seed, int max_iter) {
  const long n = x.rows();
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (n < k) throw DataError("kmeans: fewer samples than clusters");
  if (max_iter < 1) throw ConfigError("kmeans: max_iter must be >= 1");

  CounterRng rng(seed, {0x6b6d65616e73ull});
  Eigen::MatrixXd centroids(k, x.cols());
  centroids.row(0) = x.row(static_cast<long>(rng.uniform_index(static_cast<uint64_t>(n))));
  Eigen::VectorXd d2(n);
  for (long i = 0; i < n; ++i) d2(i) = (x.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    double total = d2.sum();
    long pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total, cum = 0.0;
      for (long i = 0; i < n; ++i) {
        cum += d2(i);
        if (cum >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<long>(rng.uniform_index(static_cast<uint64_t>(n)));
    }
    centroids.row(c) = x.row(pick);
    for (long i = 0; i < n; ++i)
      d2(i) = std::min(d2(i), (x.row(i) - centroids.row(c)).squaredNorm());
  }

  std::vector<int> assign(static_cast<size_t>(n), -1);
  KMeansModel model;
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (long i = 0; i < n; ++i) {
      int a = nearest_centroid(centroids, x.row(i));
      if (a != assign[static_cast<size_t>(i)]) {
        assign[static_cast<size_t>(i)] = a;
        changed = true;
      }
    }
    model.n_iter = iter + 1;
    if (!changed && iter > 0) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (long i = 0; i < n; ++i) {
      sums.row(assign[static_cast<size_t>(i)]) += x.row(i);
      counts(assign[static_cast<size_t>(i)]) += 1.0;
    }
    std::vector<bool> taken(static_cast<size_t>(n), false);
    for (int c = 0; c < k; ++c) {
      if (counts(c) > 0.0) {
        centroids.row(c) = sums.row(c) / counts(c);
      } else {
        // reseed to the globally worst-fit point not already used this pass
        long far = -1;
        double far_d = -1.0;
        for (long i = 0; i < n; ++i) {
          if (taken[static_cast<size_t>(i)]) continue;
          double d = (x.row(i) - centroids.row(assign[static_cast<size_t>(i)])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids.row(c) = x.row(far);
        taken[static_cast<size_t>(far)] = true;
      }
    }
  }

  model.centroids = centroids;
  model.inertia = 0.0;
  for (long i = 0; i < n; ++i)
    model.inertia += (x.row(i) - centroids.row(nearest_centroid(centroids, x.row(i)))).squaredNorm();
  return model;
}

std::vector<int> pcca_plus(const Eigen::MatrixXd& transition_micro, int n_macro) {
  const long n = transition_micro.rows();
  if (transition_micro.cols() != n) throw ShapeError("pcca: matrix must be square");
  if (n_macro < 1 || n_macro > n) throw ConfigError("pcca: n_macro must be in [1, n_micro]");
  if ((transition_micro - transition_micro.transpose()).cwiseAbs().maxCoeff() > 1e-8)
    throw DataError("pcca: transition matrix must be symmetric");
  if (transition_micro.minCoeff() < -1e-12) throw DataError("pcca: negative transition mass");
  for (long i = 0; i < n; ++i)
    if (transition_micro.row(i).sum() <= 0.0)
      throw DataError("pcca: microstate " + std::to_string(i) + " has no transition mass");

  // Connected components of the transition graph.
  std::vector<int> comp(static_cast<size_t>(n), -1);
  int n_comp = 0;
  for (long s = 0; s < n; ++s) {
    if (comp[static_cast<size_t>(s)] >= 0) continue;
    std::queue<long> q;
    q.push(s);
    comp[static_cast<size_t>(s)] = n_comp;
    while (!q.empty()) {
      long i = q.front();
      q.pop();
      for (long j = 0; j < n; ++j)
        if (j != i && comp[static_cast<size_t>(j)] < 0 && transition_micro(i, j) > 1e-12) {
          comp[static_cast<size_t>(j)] = n_comp;
          q.push(j);
        }
    }
    ++n_comp;
  }
  if (n_comp > n_macro)
    throw DataError("pcca: transition graph splits into " + std::to_string(n_comp) +
                    " components, more than n_macro = " + std::to_string(n_macro));

  std::vector<int> macro(static_cast<size_t>(n), 0);
  if (n_macro > 1) {
    Eigen::MatrixXd shifted = transition_micro;
    shifted.diagonal().array() += 1e-10;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(shifted);
    if (es.info() != Eigen::Success) throw NumericError("pcca: eigensolver failed");
    Eigen::MatrixXd psi(n, n_macro);
    for (int m = 0; m < n_macro; ++m) psi.col(m) = es.eigenvectors().col(n - 1 - m);

    // Inner-simplex vertex search: greedily pick rows spanning the widest
    // affine volume in eigenvector space.
    std::vector<long> verts;
    long v0 = 0;
    double best = -1.0;
    for (long i = 0; i < n; ++i) {
      double d = psi.row(i).norm();
      if (d > best) {
        best = d;
        v0 = i;
      }
    }
    verts.push_back(v0);
    Eigen::MatrixXd basis(n_macro, 0);
    for (int m = 1; m < n_macro; ++m) {
      long pick = -1;
      double far = -1.0;
      Eigen::VectorXd far_dir;
      for (long i = 0; i < n; ++i) {
        Eigen::VectorXd r = (psi.row(i) - psi.row(v0)).transpose();
        for (long b = 0; b < basis.cols(); ++b) r -= r.dot(basis.col(b)) * basis.col(b);
        double d = r.norm();
        if (d > far) {
          far = d;
          pick = i;
          far_dir = r;
        }
      }
      if (far < 1e-12) throw NumericError("pcca: degenerate eigenvector simplex");
      verts.push_back(pick);
      basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
      basis.col(basis.cols() - 1) = far_dir / far;
    }

    Eigen::MatrixXd vertex_rows(n_macro, n_macro);
    for (int m = 0; m < n_macro; ++m) vertex_rows.row(m) = psi.row(verts[static_cast<size_t>(m)]);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(vertex_rows);
    if (!lu.isInvertible()) throw NumericError("pcca: vertex matrix not invertible");
    Eigen::MatrixXd chi = psi * lu.inverse();  // memberships; rows at vertices are unit vectors

    for (long i = 0; i < n; ++i) {
      int arg = 0;
      double mx = chi(i, 0);
      for (int m = 1; m < n_macro; ++m)
        if (chi(i, m) > mx) {
          mx = chi(i, m);
          arg = m;
        }
      macro[static_cast<size_t>(i)] = arg;
    }
  }

  // Canonical relabeling: macrostates ordered by their lowest microstate.
  std::vector<int> relabel(static_cast<size_t>(n_macro), -1);
  int next = 0;
  for (long i = 0; i < n; ++i) {
    int m = macro[static_cast<size_t>(i)];
    if (relabel[static_cast<size_t>(m)] < 0) relabel[static_cast<size_t>(m)] = next++;
  }
  for (long i = 0; i < n; ++i)
    macro[static_cast<size_t>(i)] = relabel[static_cast<size_t>(macro[static_cast<size_t>(i)])];
  return macro;
}

Eigen::MatrixXd count_transitions(const std::vector<std::vector<int>>& frame_states, int lag,
                                  int n_states) {
  if (lag < 1) throw ConfigError("count_transitions: lag must be >= 1");
  if (n_states < 1) throw ConfigError("count_transitions: n_states must be >= 1");
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_states, n_states);
  double total = 0.0;
  for (const auto& seq : frame_states) {
    for (size_t t = 0; t + static_cast<size_t>(lag) < seq.size(); ++t) {
      int a = seq[t], b = seq[t + static_cast<size_t>(lag)];
      if (a < 0 || b < 0 || a >= n_states || b >= n_states)
        throw DataError("count_transitions: state index out of range");
      counts(a, b) += 1.0;
      total += 1.0;
    }
  }
  if (total < 1.0) throw DataError("count_transitions: no transition pairs at this lag");
  return counts;
}

MarkovStateModel estimate_transition_matrix(const Eigen::MatrixXd& counts, int lag) {
  const long n = counts.rows();
  if (counts.cols() != n || n < 1) throw ShapeError("estimate: counts must be square");
  if (counts.minCoeff() < 0.0) throw DataError("estimate: negative counts");

  Eigen::MatrixXd t_hat = Eigen::MatrixXd::Zero(n, n);
  for (long i = 0; i < n; ++i) {
    double row = counts.row(i).sum();
    if (row > 0.0)
      t_hat.row(i) = counts.row(i) / row;
    else
      t_hat(i, i) = 1.0;  // unobserved state: unit self-loop
  }
  Eigen::MatrixXd sym = (t_hat + t_hat.transpose()) / 2.0;
  Eigen::MatrixXd t(n, n);
  for (long i = 0; i < n; ++i) t.row(i) = sym.row(i) / sym.row(i).sum();

  Eigen::VectorXd pi = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  // Damped power iteration; the 1/2 shift keeps periodic chains convergent
  // without moving the fixed point.
  bool converged = false;
  for (int it = 0; it < 1000000; ++it) {
    Eigen::VectorXd next = 0.5 * (pi + t.transpose() * pi);
    next /= next.sum();
    double resid = (t.transpose() * next - next).cwiseAbs().sum();
    pi = next;
    if (resid < 1e-12) {
      converged = true;
      break;
    }
  }
  if (!converged) throw NumericError("estimate: stationary distribution did not converge");

  MarkovStateModel m;
  m.counts = counts;
  m.transition_sym = sym;
  m.transition = t;
  m.stationary = pi;
  m.lag = lag;
  return m;
}

Eigen::MatrixXd raw_features(const Trajectory& traj, const SystemSpec& system, FeatureKind kind,
                             const SsParams& ss) {
  if (traj.n_particles != system.n_particles || traj.dim != system.dim)
    throw ShapeError("features: trajectory does not match system");
  if (kind == FeatureKind::cartesian_tica) return traj.frames;
  Eigen::MatrixXd out(traj.n_frames(), 2);
  for (long i = 0; i < traj.n_frames(); ++i) {
    Conformation c = traj.frame(i);
    out(i, 0) = radius_of_gyration(c, system);
    out(i, 1) = ss_fraction(c, system, ss);
  }
  return out;
}

Eigen::MatrixXd context_features(const MsmContext& ctx, const Trajectory& traj) {
  Eigen::MatrixXd raw = raw_features(traj, ctx.system, ctx.config.feature_kind, ctx.config.ss);
  if (ctx.config.feature_kind == FeatureKind::cartesian_tica) return ctx.tica.project(raw);
  return ctx.standardizer.apply(raw);
}

MsmContext build_msm(const std::vector<Trajectory>& trajs, const SystemSpec& system,
                     const MsmConfig& config, uint64_t seed) {
  if (trajs.empty()) throw DataError("build_msm: no trajectories");
  system.validate();
  if (config.lag < 1) throw ConfigError("build_msm: lag must be >= 1");
  if (config.n_micro < 1 || config.n_macro < 1)
    throw ConfigError("build_msm: n_micro and n_macro must be >= 1");
  if (config.n_macro > config.n_micro)
    throw ConfigError("build_msm: n_macro cannot exceed n_micro");

  MsmContext ctx;
  ctx.config = config;
  ctx.system = system;

  std::vector<Eigen::MatrixXd> raw;
  raw.reserve(trajs.size());
  for (const auto& t : trajs) raw.push_back(raw_features(t, system, config.feature_kind, config.ss));

  std::vector<Eigen::MatrixXd> feats(raw.size());
  if (config.feature_kind == FeatureKind::cartesian_tica) {
    int tlag = config.tica_lag > 0 ? config.tica_lag : config.lag;
    ctx.tica = compute_tica(raw, tlag, config.variance_cut, config.ridge);
    for (size_t r = 0; r < raw.size(); ++r) feats[r] = ctx.tica.project(raw[r]);
  } else {
    long total = 0;
    for (const auto& m : raw) total += m.rows();
    Eigen::MatrixXd pooled(total, raw.front().cols());
    long at = 0;
    for (const auto& m : raw) {
      pooled.middleRows(at, m.rows()) = m;
      at += m.rows();
    }
    ctx.standardizer = fit_standardizer(pooled);
    for (size_t r = 0; r < raw.size(); ++r) feats[r] = ctx.standardizer.apply(raw[r]);
  }

  long total = 0;
  for (const auto& m : feats) total += m.rows();
  Eigen::MatrixXd pooled(total, feats.front().cols());
  long at = 0;
  for (const auto& m : feats) {
    pooled.middleRows(at, m.rows()) = m;
    at += m.rows();
  }
  ctx.kmeans = fit_kmeans(pooled, config.n_micro, hash64({seed, 0x6b6dull}), config.kmeans_max_iter);

  std::vector<std::vector<int>> micro_seqs(feats.size());
  for (size_t r = 0; r < feats.size(); ++r) {
    micro_seqs[r].resize(static_cast<size_t>(feats[r].rows()));
    for (long i = 0; i < feats[r].rows(); ++i)
      micro_seqs[r][static_cast<size_t>(i)] = nearest_centroid(ctx.kmeans.centroids, feats[r].row(i));
  }

  Eigen::MatrixXd micro_counts = count_transitions(micro_seqs, config.lag, config.n_micro);
  Eigen::MatrixXd micro_t = Eigen::MatrixXd::Zero(config.n_micro, config.n_micro);
  for (int i = 0; i < config.n_micro; ++i) {
    double row = micro_counts.row(i).sum();
    if (row > 0.0)
      micro_t.row(i) = micro_counts.row(i) / row;
    else
      micro_t(i, i) = 1.0;
  }
  Eigen::MatrixXd micro_sym = (micro_t + micro_t.transpose()) / 2.0;
  ctx.micro_to_macro = pcca_plus(micro_sym, config.n_macro);
  ctx.n_macro = *std::max_element(ctx.micro_to_macro.begin(), ctx.micro_to_macro.end()) + 1;

  std::vector<std::vector<int>> macro_seqs(micro_seqs.size());
  for (size_t r = 0; r < micro_seqs.size(); ++r) {
    macro_seqs[r].resize(micro_seqs[r].size());
    for (size_t i = 0; i < micro_seqs[r].size(); ++i)
      macro_seqs[r][i] = ctx.micro_to_macro[static_cast<size_t>(micro_seqs[r][i])];
  }
  Eigen::MatrixXd macro_counts = count_transitions(macro_seqs, config.lag, ctx.n_macro);
  ctx.msm = estimate_transition_matrix(macro_counts, config.lag);
  return ctx;
}

std::vector<int> assign_macrostates(const MsmContext& ctx, const Trajectory& traj) {
  Eigen::MatrixXd feats = context_features(ctx, traj);
  std::vector<int> out(static_cast<size_t>(feats.rows()));
  for (long i = 0; i < feats.rows(); ++i)
    out[static_cast<size_t>(i)] =
        ctx.micro_to_macro[static_cast<size_t>(nearest_centroid(ctx.kmeans.centroids, feats.row(i)))];
  return out;
}

int assign_state(const MsmContext& ctx, const Conformation& conf) {
  Trajectory t;
  t.n_particles = ctx.system.n_particles;
  t.dim = ctx.system.dim;
  t.frames.resize(1, static_cast<long>(ctx.system.n_particles) * ctx.system.dim);
  t.set_frame(0, conf);
  return assign_macrostates(ctx, t)[0];
}

namespace {

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd mat_from_json(const json& j) {
  if (!j.is_array()) throw DataError("msm.json: expected a matrix");
  long rows = static_cast<long>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  long cols = static_cast<long>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    if (static_cast<long>(j.at(static_cast<size_t>(i)).size()) != cols)
      throw DataError("msm.json: ragged matrix");
    for (long jj = 0; jj < cols; ++jj)
      m(i, jj) = j.at(static_cast<size_t>(i)).at(static_cast<size_t>(jj)).get<double>();
  }
  return m;
}

json vec_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (long i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vec_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<long>(j.size()));
  for (long i = 0; i < v.size(); ++i) v(i) = j.at(static_cast<size_t>(i)).get<double>();
  return v;
}

}  // namespace

void write_msm_json(const std::string& path, const MsmContext& ctx) {
  json j;
  j["format"] = "msm-emu/msm";
  j["version"] = 1;
  j["config"] = {
      {"feature_kind", ctx.config.feature_kind == FeatureKind::cartesian_tica ? "tica" : "observables"},
      {"lag", ctx.config.lag},
      {"tica_lag", ctx.config.tica_lag},
      {"variance_cut", ctx.config.variance_cut},
      {"ridge", ctx.config.ridge},
      {"n_micro", ctx.config.n_micro},
      {"n_macro", ctx.config.n_macro},
      {"kmeans_max_iter", ctx.config.kmeans_max_iter},
      {"theta_ref", ctx.config.ss.theta_ref},
      {"ss_window", ctx.config.ss.window},
  };
  j["system"] = {
      {"n_particles", ctx.system.n_particles}, {"dim", ctx.system.dim},
      {"masses", ctx.system.masses},           {"labels", ctx.system.labels},
      {"n_torsions", ctx.system.n_torsions},
  };
  j["standardizer"] = {{"mean", vec_to_json(ctx.standardizer.mean)},
                       {"std", vec_to_json(ctx.standardizer.std)}};
  j["tica"] = {{"mean", vec_to_json(ctx.tica.mean)},
               {"components", mat_to_json(ctx.tica.components)},
               {"eigenvalues", vec_to_json(ctx.tica.eigenvalues)},
               {"lag", ctx.tica.lag},
               {"ridge", ctx.tica.ridge}};
  j["kmeans"] = {{"centroids", mat_to_json(ctx.kmeans.centroids)},
                 {"inertia", ctx.kmeans.inertia},
                 {"n_iter", ctx.kmeans.n_iter}};
  j["micro_to_macro"] = ctx.micro_to_macro;
  j["n_macro"] = ctx.n_macro;
  j["msm"] = {{"counts", mat_to_json(ctx.msm.counts)},
              {"transition_sym", mat_to_json(ctx.msm.transition_sym)},
              {"transition", mat_to_json(ctx.msm.transition)},
              {"stationary", vec_to_json(ctx.msm.stationary)},
              {"lag", ctx.msm.lag}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("msm.json: cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("msm.json: write failure: " + path);
}

MsmContext read_msm_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("msm.json: cannot open: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(std::string("msm.json: parse error: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "msm-emu/msm")
      throw DataError("msm.json: unrecognized format tag");
    if (j.at("version").get<int>() != 1) throw DataError("msm.json: unsupported version");
    MsmContext ctx;
    const json& c = j.at("config");
    ctx.config.feature_kind = c.at("feature_kind").get<std::string>() == "tica"
                                  ? FeatureKind::cartesian_tica
                                  : FeatureKind::observables;
    ctx.config.lag = c.at("lag").get<int>();
    ctx.config.tica_lag = c.at("tica_lag").get<int>();
    ctx.config.variance_cut = c.at("variance_cut").get<double>();
    ctx.config.ridge = c.at("ridge").get<double>();
    ctx.config.n_micro = c.at("n_micro").get<int>();
    ctx.config.n_macro = c.at("n_macro").get<int>();
    ctx.config.kmeans_max_iter = c.at("kmeans_max_iter").get<int>();
    ctx.config.ss.theta_ref = c.at("theta_ref").get<double>();
    ctx.config.ss.window = c.at("ss_window").get<double>();
    const json& s = j.at("system");
    ctx.system.n_particles = s.at("n_particles").get<int>();
    ctx.system.dim = s.at("dim").get<int>();
    ctx.system.masses = s.at("masses").get<std::vector<double>>();
    ctx.system.labels = s.at("labels").get<std::vector<int>>();
    ctx.system.n_torsions = s.at("n_torsions").get<int>();
    ctx.standardizer.mean = vec_from_json(j.at("standardizer").at("mean"));
    ctx.standardizer.std = vec_from_json(j.at("standardizer").at("std"));
    ctx.tica.mean = vec_from_json(j.at("tica").at("mean"));
    ctx.tica.components = mat_from_json(j.at("tica").at("components"));
    ctx.tica.eigenvalues = vec_from_json(j.at("tica").at("eigenvalues"));
    ctx.tica.lag = j.at("tica").at("lag").get<int>();
    ctx.tica.ridge = j.at("tica").at("ridge").get<double>();
    ctx.kmeans.centroids = mat_from_json(j.at("kmeans").at("centroids"));
    ctx.kmeans.inertia = j.at("kmeans").at("inertia").get<double>();
    ctx.kmeans.n_iter = j.at("kmeans").at("n_iter").get<int>();
    ctx.micro_to_macro = j.at("micro_to_macro").get<std::vector<int>>();
    ctx.n_macro = j.at("n_macro").get<int>();
    ctx.msm.counts = mat_from_json(j.at("msm").at("counts"));
    ctx.msm.transition_sym = mat_from_json(j.at("msm").at("transition_sym"));
    ctx.msm.transition = mat_from_json(j.at("msm").at("transition"));
    ctx.msm.stationary = vec_from_json(j.at("msm").at("stationary"));
    ctx.msm.lag = j.at("msm").at("lag").get<int>();
    return ctx;
  } catch (const json::exception& e) {
    throw DataError(std::string("msm.json: missing or malformed field: ") + e.what());
  }
}

}  // namespace msmemu
