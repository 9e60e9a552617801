#include "msmemu/flowmodel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "msmemu/errors.hpp"

namespace msmemu {

namespace {

constexpr double kPi = std::numbers::pi;

double silu(double z) {
  double sg = 1.0 / (1.0 + std::exp(-z));
  return z * sg;
}

double silu_grad(double z) {
  double sg = 1.0 / (1.0 + std::exp(-z));
  return sg * (1.0 + z * (1.0 - sg));
}

Eigen::MatrixXd silu_mat(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return silu(v); });
}

Eigen::MatrixXd silu_grad_mat(const Eigen::MatrixXd& z) {
  return z.unaryExpr([](double v) { return silu_grad(v); });
}

// Geometric frequency ladder capped at 30 rad over the unit interval, slow
// enough that coarse flow integrations still resolve the field.
Eigen::VectorXd time_features(double s, int time_dim) {
  int half = time_dim / 2;
  Eigen::VectorXd f(time_dim);
  for (int i = 0; i < half; ++i) {
    double expo = (half == 1) ? 0.0 : static_cast<double>(i) / (half - 1);
    double omega = std::pow(30.0, expo);
    f(2 * i) = std::sin(s * omega);
    f(2 * i + 1) = std::cos(s * omega);
  }
  return f;
}

void add_entry(ParamStore& ps, const std::string& name, int rows, int cols, long& offset) {
  ps.index.emplace(name, static_cast<int>(ps.entries.size()));
  ps.entries.push_back({name, rows, cols, offset});
  offset += static_cast<long>(rows) * cols;
}

Eigen::Map<Eigen::MatrixXd> slice(const ParamStore& ps, Eigen::VectorXd& flat,
                                  const std::string& name) {
  auto it = ps.index.find(name);
  if (it == ps.index.end()) throw DataError("unknown parameter " + name);
  const ParamEntry& e = ps.entries[it->second];
  return {flat.data() + e.offset, e.rows, e.cols};
}

struct EncTrace {
  Eigen::MatrixXd x_in, z, h;
  Eigen::VectorXd cbar;
};

struct BlockTrace {
  Eigen::MatrixXd x_in, y, z, h;
  Eigen::VectorXd sc, sh, mbar;
};

struct Trace {
  Eigen::VectorXd tfeat, tv;
  Eigen::MatrixXd emb;      // label_dim x L
  Eigen::MatrixXd x_label;  // residual stream entry point
  std::vector<EncTrace> enc;
  Eigen::MatrixXd x_proj;  // after cond and state injections
  std::vector<BlockTrace> blk;
  Eigen::MatrixXd x_fin;  // residual stream entering the output modulation
  Eigen::VectorXd fsc, fsh;
  Eigen::MatrixXd fy;
  Eigen::MatrixXd v;
};

void check_forward_inputs(const ParamStore& params, const TokenSeq& xs, const TokenSeq& cond,
                          const std::vector<int>& labels) {
  if (xs.rows() != kTokenDim) throw ShapeError("token matrix must have 21 rows");
  if (xs.cols() < 1) throw ShapeError("token matrix must have at least one column");
  if (cond.rows() != xs.rows() || cond.cols() != xs.cols())
    throw ShapeError("conditioning tokens must match state tokens in shape");
  if (static_cast<long>(labels.size()) != xs.cols())
    throw ShapeError("one label per token required");
  for (int a : labels)
    if (a < 0 || a >= params.cfg.n_labels) throw DataError("token label out of range");
}

Trace run_forward(const ParamStore& ps, double s, const TokenSeq& xs, const TokenSeq& cond,
                  const std::vector<int>& labels) {
  check_forward_inputs(ps, xs, cond, labels);
  const NetConfig& cfg = ps.cfg;
  const long L = xs.cols();
  auto P = [&](const std::string& name) {
    return slice(ps, const_cast<Eigen::VectorXd&>(ps.data), name);
  };

  Trace tr;
  tr.tfeat = time_features(s, cfg.time_dim);
  tr.tv = P("time.w") * tr.tfeat + P("time.b").col(0);

  auto table = P("label.table");
  tr.emb.resize(cfg.label_dim, L);
  for (long l = 0; l < L; ++l) tr.emb.col(l) = table.col(labels[l]);
  tr.x_label = P("label.w") * tr.emb;
  tr.x_label.colwise() += P("label.b").col(0);

  Eigen::MatrixXd x = tr.x_label;
  tr.enc.resize(cfg.n_enc_layers);
  for (int i = 0; i < cfg.n_enc_layers; ++i) {
    std::string pre = "enc" + std::to_string(i) + ".";
    EncTrace& et = tr.enc[i];
    et.x_in = x;
    Eigen::VectorXd wt_tv = P(pre + "w_t") * tr.tv + P(pre + "b1").col(0);
    et.z = P(pre + "w_x") * x + P(pre + "w_g") * cond;
    et.z.colwise() += wt_tv;
    et.h = silu_mat(et.z);
    et.cbar = et.h.rowwise().mean();
    x += P(pre + "w_h") * et.h;
    x.colwise() += Eigen::VectorXd(P(pre + "w_c") * et.cbar + P(pre + "b2").col(0));
  }

  x += P("proj_cond.w") * cond + P("proj_xs.w") * xs;
  x.colwise() += Eigen::VectorXd(P("proj_cond.b").col(0) + P("proj_xs.b").col(0));
  tr.x_proj = x;

  tr.blk.resize(cfg.n_blocks);
  for (int j = 0; j < cfg.n_blocks; ++j) {
    std::string pre = "blk" + std::to_string(j) + ".";
    BlockTrace& bt = tr.blk[j];
    bt.x_in = x;
    bt.sc = P(pre + "scale_w") * tr.tv + P(pre + "scale_b").col(0);
    bt.sh = P(pre + "shift_w") * tr.tv + P(pre + "shift_b").col(0);
    bt.y = (x.array().colwise() * (1.0 + bt.sc.array())).matrix();
    bt.y.colwise() += bt.sh;
    bt.z = P(pre + "w1") * bt.y;
    bt.z.colwise() += P(pre + "b1").col(0);
    bt.h = silu_mat(bt.z);
    bt.mbar = bt.h.rowwise().mean();
    x += P(pre + "w2") * bt.h;
    x.colwise() += Eigen::VectorXd(P(pre + "w3") * bt.mbar + P(pre + "b2").col(0));
  }

  tr.x_fin = x;
  tr.fsc = P("final.scale_w") * tr.tv + P("final.scale_b").col(0);
  tr.fsh = P("final.shift_w") * tr.tv + P("final.shift_b").col(0);
  tr.fy = (x.array().colwise() * (1.0 + tr.fsc.array())).matrix();
  tr.fy.colwise() += tr.fsh;
  tr.v = P("final.w") * tr.fy;
  tr.v.colwise() += P("final.b").col(0);
  return tr;
}

void run_backward(const ParamStore& ps, const Trace& tr, const TokenSeq& xs, const TokenSeq& cond,
                  const std::vector<int>& labels, const Eigen::MatrixXd& dv,
                  Eigen::VectorXd& grad) {
  const NetConfig& cfg = ps.cfg;
  const long L = xs.cols();
  auto P = [&](const std::string& name) {
    return slice(ps, const_cast<Eigen::VectorXd&>(ps.data), name);
  };
  auto G = [&](const std::string& name) { return slice(ps, grad, name); };

  Eigen::VectorXd dtv = Eigen::VectorXd::Zero(cfg.hidden);

  G("final.b").col(0) += dv.rowwise().sum();
  G("final.w") += dv * tr.fy.transpose();
  Eigen::MatrixXd dfy = P("final.w").transpose() * dv;

  Eigen::VectorXd dfsc = (dfy.array() * tr.x_fin.array()).rowwise().sum();
  Eigen::VectorXd dfsh = dfy.rowwise().sum();
  Eigen::MatrixXd dx = (dfy.array().colwise() * (1.0 + tr.fsc.array())).matrix();
  G("final.scale_w") += dfsc * tr.tv.transpose();
  G("final.scale_b").col(0) += dfsc;
  G("final.shift_w") += dfsh * tr.tv.transpose();
  G("final.shift_b").col(0) += dfsh;
  dtv += P("final.scale_w").transpose() * dfsc + P("final.shift_w").transpose() * dfsh;

  for (int j = cfg.n_blocks - 1; j >= 0; --j) {
    std::string pre = "blk" + std::to_string(j) + ".";
    const BlockTrace& bt = tr.blk[j];
    G(pre + "b2").col(0) += dx.rowwise().sum();
    G(pre + "w2") += dx * bt.h.transpose();
    Eigen::VectorXd r = dx.rowwise().sum();
    G(pre + "w3") += r * bt.mbar.transpose();
    Eigen::VectorXd dmbar = P(pre + "w3").transpose() * r;
    Eigen::MatrixXd dh = P(pre + "w2").transpose() * dx;
    dh.colwise() += Eigen::VectorXd(dmbar / static_cast<double>(L));
    Eigen::MatrixXd dz = dh.cwiseProduct(silu_grad_mat(bt.z));
    G(pre + "w1") += dz * bt.y.transpose();
    G(pre + "b1").col(0) += dz.rowwise().sum();
    Eigen::MatrixXd dy = P(pre + "w1").transpose() * dz;
    Eigen::VectorXd dsc = (dy.array() * bt.x_in.array()).rowwise().sum();
    Eigen::VectorXd dsh = dy.rowwise().sum();
    G(pre + "scale_w") += dsc * tr.tv.transpose();
    G(pre + "scale_b").col(0) += dsc;
    G(pre + "shift_w") += dsh * tr.tv.transpose();
    G(pre + "shift_b").col(0) += dsh;
    dtv += P(pre + "scale_w").transpose() * dsc + P(pre + "shift_w").transpose() * dsh;
    dx += (dy.array().colwise() * (1.0 + bt.sc.array())).matrix();
  }

  G("proj_cond.w") += dx * cond.transpose();
  G("proj_cond.b").col(0) += dx.rowwise().sum();
  G("proj_xs.w") += dx * xs.transpose();
  G("proj_xs.b").col(0) += dx.rowwise().sum();

  for (int i = cfg.n_enc_layers - 1; i >= 0; --i) {
    std::string pre = "enc" + std::to_string(i) + ".";
    const EncTrace& et = tr.enc[i];
    G(pre + "b2").col(0) += dx.rowwise().sum();
    G(pre + "w_h") += dx * et.h.transpose();
    Eigen::VectorXd r = dx.rowwise().sum();
    G(pre + "w_c") += r * et.cbar.transpose();
    Eigen::VectorXd dcbar = P(pre + "w_c").transpose() * r;
    Eigen::MatrixXd dh = P(pre + "w_h").transpose() * dx;
    dh.colwise() += Eigen::VectorXd(dcbar / static_cast<double>(L));
    Eigen::MatrixXd dz = dh.cwiseProduct(silu_grad_mat(et.z));
    G(pre + "w_x") += dz * et.x_in.transpose();
    G(pre + "w_g") += dz * cond.transpose();
    Eigen::VectorXd rz = dz.rowwise().sum();
    G(pre + "w_t") += rz * tr.tv.transpose();
    G(pre + "b1").col(0) += rz;
    dtv += P(pre + "w_t").transpose() * rz;
    dx += P(pre + "w_x").transpose() * dz;
  }

  G("label.b").col(0) += dx.rowwise().sum();
  G("label.w") += dx * tr.emb.transpose();
  Eigen::MatrixXd demb = P("label.w").transpose() * dx;
  auto gtable = G("label.table");
  for (long l = 0; l < L; ++l) gtable.col(labels[l]) += demb.col(l);

  G("time.w") += dtv * tr.tfeat.transpose();
  G("time.b").col(0) += dtv;
}

}  // namespace

double schedule_alpha(double s) { return std::sin(kPi * s / 2.0); }
double schedule_sigma(double s) { return std::cos(kPi * s / 2.0); }
double schedule_alpha_dot(double s) { return kPi / 2.0 * std::cos(kPi * s / 2.0); }
double schedule_sigma_dot(double s) { return -kPi / 2.0 * std::sin(kPi * s / 2.0); }

TokenSeq interpolate_tokens(const TokenSeq& x1, const TokenSeq& eps, double s) {
  if (x1.rows() != eps.rows() || x1.cols() != eps.cols())
    throw ShapeError("interpolation endpoints must have equal shape");
  return schedule_sigma(s) * eps + schedule_alpha(s) * x1;
}

TokenSeq target_velocity(const TokenSeq& x1, const TokenSeq& eps, double s) {
  if (x1.rows() != eps.rows() || x1.cols() != eps.cols())
    throw ShapeError("interpolation endpoints must have equal shape");
  return schedule_alpha_dot(s) * x1 + schedule_sigma_dot(s) * eps;
}

void NetConfig::validate() const {
  if (hidden < 1) throw ConfigError("hidden width must be positive");
  if (time_dim < 2 || time_dim % 2 != 0) throw ConfigError("time_dim must be even and >= 2");
  if (label_dim < 1) throw ConfigError("label_dim must be positive");
  if (n_blocks < 0) throw ConfigError("n_blocks must be non-negative");
  if (n_enc_layers < 0) throw ConfigError("n_enc_layers must be non-negative");
  if (n_labels < 1) throw ConfigError("n_labels must be positive");
}

Eigen::Map<Eigen::MatrixXd> ParamStore::mat(const std::string& name) {
  return slice(*this, data, name);
}

Eigen::Map<const Eigen::MatrixXd> ParamStore::mat(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw DataError("unknown parameter " + name);
  const ParamEntry& e = entries[it->second];
  return {data.data() + e.offset, e.rows, e.cols};
}

ParamStore make_param_store(const NetConfig& cfg) {
  cfg.validate();
  ParamStore ps;
  ps.cfg = cfg;
  const int H = cfg.hidden;
  long off = 0;
  add_entry(ps, "time.w", H, cfg.time_dim, off);
  add_entry(ps, "time.b", H, 1, off);
  add_entry(ps, "label.table", cfg.label_dim, cfg.n_labels, off);
  add_entry(ps, "label.w", H, cfg.label_dim, off);
  add_entry(ps, "label.b", H, 1, off);
  for (int i = 0; i < cfg.n_enc_layers; ++i) {
    std::string pre = "enc" + std::to_string(i) + ".";
    add_entry(ps, pre + "w_x", H, H, off);
    add_entry(ps, pre + "w_g", H, kTokenDim, off);
    add_entry(ps, pre + "w_t", H, H, off);
    add_entry(ps, pre + "b1", H, 1, off);
    add_entry(ps, pre + "w_h", H, H, off);
    add_entry(ps, pre + "w_c", H, H, off);
    add_entry(ps, pre + "b2", H, 1, off);
  }
  add_entry(ps, "proj_cond.w", H, kTokenDim, off);
  add_entry(ps, "proj_cond.b", H, 1, off);
  add_entry(ps, "proj_xs.w", H, kTokenDim, off);
  add_entry(ps, "proj_xs.b", H, 1, off);
  for (int j = 0; j < cfg.n_blocks; ++j) {
    std::string pre = "blk" + std::to_string(j) + ".";
    add_entry(ps, pre + "scale_w", H, H, off);
    add_entry(ps, pre + "scale_b", H, 1, off);
    add_entry(ps, pre + "shift_w", H, H, off);
    add_entry(ps, pre + "shift_b", H, 1, off);
    add_entry(ps, pre + "w1", H, H, off);
    add_entry(ps, pre + "b1", H, 1, off);
    add_entry(ps, pre + "w2", H, H, off);
    add_entry(ps, pre + "w3", H, H, off);
    add_entry(ps, pre + "b2", H, 1, off);
  }
  add_entry(ps, "final.scale_w", H, H, off);
  add_entry(ps, "final.scale_b", H, 1, off);
  add_entry(ps, "final.shift_w", H, H, off);
  add_entry(ps, "final.shift_b", H, 1, off);
  add_entry(ps, "final.w", kTokenDim, H, off);
  add_entry(ps, "final.b", kTokenDim, 1, off);
  ps.data = Eigen::VectorXd::Zero(off);
  return ps;
}

ParamStore init_params(const NetConfig& cfg, uint64_t seed) {
  ParamStore ps = make_param_store(cfg);
  RngKey key{mix64(seed)};
  auto scale_for = [&](const std::string& name) -> double {
    auto ends_with = [&](const char* suf) {
      std::string s(suf);
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (name == "time.w") return 1.0 / std::sqrt(static_cast<double>(cfg.time_dim));
    if (name == "label.table") return 1.0;
    if (name == "label.w") return 1.0 / std::sqrt(static_cast<double>(cfg.label_dim));
    if (name == "proj_cond.w" || name == "proj_xs.w")
      return 1.0 / std::sqrt(static_cast<double>(kTokenDim));
    if (name.rfind("enc", 0) == 0) {
      if (ends_with(".w_g")) return 1.0 / std::sqrt(static_cast<double>(kTokenDim));
      if (ends_with(".w_x") || ends_with(".w_t") || ends_with(".w_h") || ends_with(".w_c"))
        return 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
    }
    if (name.rfind("blk", 0) == 0 && ends_with(".w1"))
      return 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
    return 0.0;  // biases, modulation weights, block outputs, final projection
  };
  for (size_t e = 0; e < ps.entries.size(); ++e) {
    double sc = scale_for(ps.entries[e].name);
    if (sc == 0.0) continue;
    RngKey ek = key.derive(static_cast<uint64_t>(e));
    long n = static_cast<long>(ps.entries[e].rows) * ps.entries[e].cols;
    for (long t = 0; t < n; ++t)
      ps.data(ps.entries[e].offset + t) = sc * ek.normal(static_cast<uint64_t>(t));
  }
  return ps;
}

TokenSeq velocity_forward(const ParamStore& params, double s, const TokenSeq& xs,
                          const TokenSeq& cond, const std::vector<int>& labels) {
  return run_forward(params, s, xs, cond, labels).v;
}

double element_loss_and_grad(const ParamStore& params, const TrainingPair& pair,
                             const std::vector<int>& labels, double s, const TokenSeq& eps,
                             Eigen::VectorXd* grad, double weight) {
  if (pair.cond.rows() != pair.target.rows() || pair.cond.cols() != pair.target.cols())
    throw ShapeError("pair tokens must have equal shape");
  TokenSeq xs = interpolate_tokens(pair.target, eps, s);
  Trace tr = run_forward(params, s, xs, pair.cond, labels);
  Eigen::MatrixXd diff = tr.v - target_velocity(pair.target, eps, s);
  double n = static_cast<double>(diff.size());
  double loss = diff.squaredNorm() / n;
  if (grad != nullptr) {
    Eigen::MatrixXd dv = (2.0 * weight / n) * diff;
    run_backward(params, tr, xs, pair.cond, labels, dv, *grad);
  }
  return loss;
}

double loss_and_grad(const ParamStore& params, const std::vector<TrainingPair>& batch,
                     const std::vector<int>& labels, RngKey noise_key, Eigen::VectorXd* grad) {
  if (batch.empty()) throw DataError("loss requires a non-empty batch");
  if (grad != nullptr) {
    if (grad->size() != params.data.size()) grad->resize(params.data.size());
    grad->setZero();
  }
  double total = 0.0;
  double w = 1.0 / static_cast<double>(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    RngKey ek = noise_key.derive(static_cast<uint64_t>(i));
    double s = ek.uniform(0);
    RngKey nk = ek.derive(1);
    TokenSeq eps(batch[i].target.rows(), batch[i].target.cols());
    for (long c = 0; c < eps.cols(); ++c)
      for (long r = 0; r < eps.rows(); ++r)
        eps(r, c) = nk.normal(static_cast<uint64_t>(r + eps.rows() * c));
    total += w * element_loss_and_grad(params, batch[i], labels, s, eps, grad, w);
  }
  return total;
}

std::vector<PairRef> sample_msm_pairs(const Eigen::MatrixXd& transition,
                                      const std::vector<std::vector<int>>& state_seqs,
                                      int n_src_states, int n_dst_per_src, int frames_per_pair,
                                      RngKey key) {
  const int n_states = static_cast<int>(transition.rows());
  if (transition.cols() != transition.rows() || n_states < 1)
    throw ShapeError("transition matrix must be square");
  if (n_src_states < 1 || n_dst_per_src < 1 || frames_per_pair < 1)
    throw ConfigError("pair sampler counts must be positive");
  if (state_seqs.empty() || state_seqs.front().empty())
    throw DataError("state sequences must be non-empty");

  std::vector<std::vector<FrameRef>> pools(n_states);
  for (size_t t = 0; t < state_seqs.size(); ++t)
    for (size_t f = 0; f < state_seqs[t].size(); ++f) {
      int st = state_seqs[t][f];
      if (st < 0 || st >= n_states) throw DataError("state index out of range");
      pools[st].push_back({static_cast<int>(t), static_cast<long>(f)});
    }

  CounterRng rng(key);
  std::vector<int> sources;
  sources.push_back(state_seqs.front().front());
  for (int i = 1; i < n_src_states; ++i)
    sources.push_back(static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n_states))));

  std::vector<PairRef> out;
  out.reserve(static_cast<size_t>(n_src_states) * n_dst_per_src * frames_per_pair);
  for (int src : sources) {
    for (int d = 0; d < n_dst_per_src; ++d) {
      double u = rng.uniform();
      int dst = n_states - 1;
      double cum = 0.0;
      for (int j = 0; j < n_states; ++j) {
        cum += transition(src, j);
        if (u < cum) {
          dst = j;
          break;
        }
      }
      if (pools[src].empty())
        throw DataError("macrostate " + std::to_string(src) + " has no frames");
      if (pools[dst].empty())
        throw DataError("macrostate " + std::to_string(dst) + " has no frames");
      for (int f = 0; f < frames_per_pair; ++f) {
        PairRef p;
        p.cond = pools[src][rng.uniform_index(pools[src].size())];
        p.target = pools[dst][rng.uniform_index(pools[dst].size())];
        out.push_back(p);
      }
    }
  }
  return out;
}

std::vector<PairRef> sample_fixedlag_pairs(const std::vector<long>& traj_lengths, int lag,
                                           int n_pairs, RngKey key) {
  if (lag < 0) throw ConfigError("lag must be non-negative");
  if (n_pairs < 1) throw ConfigError("pair count must be positive");
  std::vector<long> valid(traj_lengths.size());
  long total = 0;
  for (size_t t = 0; t < traj_lengths.size(); ++t) {
    valid[t] = std::max<long>(traj_lengths[t] - lag, 0);
    total += valid[t];
  }
  if (total == 0) throw DataError("lag leaves no training pairs");

  CounterRng rng(key);
  std::vector<PairRef> out;
  out.reserve(static_cast<size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    long g = static_cast<long>(rng.uniform_index(static_cast<uint64_t>(total)));
    size_t t = 0;
    while (g >= valid[t]) {
      g -= valid[t];
      ++t;
    }
    PairRef p;
    p.cond = {static_cast<int>(t), g};
    p.target = {static_cast<int>(t), g + lag};
    out.push_back(p);
  }
  return out;
}

AdamState make_adam_state(long n) {
  AdamState st;
  st.m = Eigen::VectorXd::Zero(n);
  st.v = Eigen::VectorXd::Zero(n);
  st.t = 0;
  return st;
}

void adam_step(Eigen::VectorXd& params, AdamState& state, const Eigen::VectorXd& grad, double lr,
               double beta1, double beta2, double eps, double weight_decay) {
  if (state.m.size() != params.size() || grad.size() != params.size())
    throw ShapeError("optimizer state and gradient must match parameter size");
  state.t += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  Eigen::ArrayXd mhat = state.m.array() / c1;
  Eigen::ArrayXd vhat = state.v.array() / c2;
  params.array() -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * params.array());
}

void ema_update(Eigen::VectorXd& shadow, const Eigen::VectorXd& params, double decay) {
  if (shadow.size() != params.size()) throw ShapeError("shadow must match parameter size");
  shadow = decay * shadow + (1.0 - decay) * params;
}

TrainResult train_flow_model(const std::vector<Trajectory>& trajs, const SystemSpec& system,
                             const MsmContext* msm, const TrainConfig& cfg, uint64_t seed,
                             const ParamStore* resume_from, const Eigen::VectorXd* resume_ema) {
  system.validate();
  cfg.net.validate();
  if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (cfg.lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (cfg.ema_decay <= 0.0 || cfg.ema_decay > 1.0) throw ConfigError("ema_decay must be in (0, 1]");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (cfg.n_val_pairs < 0) throw ConfigError("n_val_pairs must be non-negative");
  if (trajs.empty()) throw DataError("training requires at least one trajectory");
  for (const Trajectory& t : trajs)
    if (t.n_particles != system.n_particles || t.dim != system.dim)
      throw ShapeError("trajectory does not match system");
  if (cfg.net.n_labels != system.n_labels())
    throw ConfigError("network label count must match system");
  if (cfg.mode == TrainConfig::Mode::mars && msm == nullptr)
    throw ConfigError("MSM-guided training requires a fitted state model");

  const std::vector<int>& labels = system.labels;
  const int pairs_per_epoch = cfg.n_src_states * cfg.n_dst_per_src * cfg.frames_per_pair;

  std::vector<std::vector<int>> macro_seqs;
  std::vector<long> lengths;
  for (const Trajectory& t : trajs) lengths.push_back(t.n_frames());
  if (cfg.mode == TrainConfig::Mode::mars)
    for (const Trajectory& t : trajs) macro_seqs.push_back(assign_macrostates(*msm, t));

  auto gen_pairs = [&](RngKey key) {
    if (cfg.mode == TrainConfig::Mode::mars)
      return sample_msm_pairs(msm->msm.transition, macro_seqs, cfg.n_src_states,
                              cfg.n_dst_per_src, cfg.frames_per_pair, key);
    return sample_fixedlag_pairs(lengths, cfg.fixed_lag, pairs_per_epoch, key);
  };
  auto to_pair = [&](const PairRef& r) {
    TrainingPair p;
    p.cond = encode_tokens(trajs[r.cond.traj].frame(r.cond.frame), system);
    p.target = encode_tokens(trajs[r.target.traj].frame(r.target.frame), system);
    return p;
  };

  TrainResult result;
  result.mode = cfg.mode;
  if (resume_from != nullptr) {
    if (resume_from->data.size() != make_param_store(cfg.net).data.size())
      throw ConfigError("resume checkpoint does not match network architecture");
    result.params = *resume_from;
  } else {
    result.params = init_params(cfg.net, hash64({seed, 0x696e6974ull}));
  }
  result.ema = (resume_ema != nullptr && resume_ema->size() == result.params.data.size())
                   ? *resume_ema
                   : result.params.data;

  RngKey base{mix64(hash64({seed, 0x747261696eull}))};
  std::vector<TrainingPair> val;
  {
    RngKey vk = base.derive(0x76616cull);
    int round = 0;
    while (static_cast<int>(val.size()) < cfg.n_val_pairs && round < 64) {
      for (const PairRef& r : gen_pairs(vk.derive(static_cast<uint64_t>(round))))
        val.push_back(to_pair(r));
      ++round;
    }
    if (static_cast<int>(val.size()) > cfg.n_val_pairs) val.resize(cfg.n_val_pairs);
  }
  RngKey val_noise = base.derive(0x766e6full);

  AdamState adam = make_adam_state(result.params.data.size());
  Eigen::VectorXd grad(result.params.data.size());
  for (int e = 0; e < cfg.epochs; ++e) {
    auto t0 = std::chrono::steady_clock::now();
    RngKey ek = base.derive(0x6570ull).derive(static_cast<uint64_t>(e));
    std::vector<PairRef> refs = gen_pairs(ek.derive(0));
    {
      CounterRng rng(ek.derive(1));
      for (size_t i = refs.size(); i > 1; --i)
        std::swap(refs[i - 1], refs[rng.uniform_index(i)]);
    }
    std::vector<TrainingPair> pairs;
    pairs.reserve(refs.size());
    for (const PairRef& r : refs) pairs.push_back(to_pair(r));

    double loss_sum = 0.0;
    int n_steps = 0;
    for (size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
      size_t stop = std::min(pairs.size(), start + cfg.batch_size);
      std::vector<TrainingPair> batch(pairs.begin() + start, pairs.begin() + stop);
      double loss = loss_and_grad(result.params, batch, labels,
                                  ek.derive(2).derive(static_cast<uint64_t>(n_steps)), &grad);
      if (!std::isfinite(loss))
        throw NumericError("training loss diverged at epoch " + std::to_string(e) + " step " +
                           std::to_string(n_steps));
      adam_step(result.params.data, adam, grad, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
      ema_update(result.ema, result.params.data, cfg.ema_decay);
      loss_sum += loss;
      ++n_steps;
    }

    EpochLog lg;
    lg.epoch = e;
    lg.train_loss = n_steps > 0 ? loss_sum / n_steps : 0.0;
    lg.val_loss = val.empty() ? 0.0
                              : loss_and_grad(result.params, val, labels, val_noise, nullptr);
    lg.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                     .count();
    result.log.push_back(lg);
  }
  return result;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(os, u);
}

uint32_t take_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t take_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated checkpoint");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double take_f64(std::istream& is) {
  uint64_t u = take_u64(is);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params, const Eigen::VectorXd& ema,
                     TrainConfig::Mode mode) {
  if (ema.size() != params.data.size())
    throw ShapeError("shadow weights must match parameter count");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write("MSEM", 4);
  put_u32(os, 1);
  put_u32(os, mode == TrainConfig::Mode::mars ? 0u : 1u);
  const NetConfig& c = params.cfg;
  put_u32(os, static_cast<uint32_t>(c.hidden));
  put_u32(os, static_cast<uint32_t>(c.time_dim));
  put_u32(os, static_cast<uint32_t>(c.label_dim));
  put_u32(os, static_cast<uint32_t>(c.n_blocks));
  put_u32(os, static_cast<uint32_t>(c.n_enc_layers));
  put_u32(os, static_cast<uint32_t>(c.n_labels));
  put_u32(os, static_cast<uint32_t>(params.entries.size()));
  for (const ParamEntry& e : params.entries) {
    put_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, static_cast<uint32_t>(e.rows));
    put_u32(os, static_cast<uint32_t>(e.cols));
  }
  put_u64(os, static_cast<uint64_t>(params.data.size()));
  for (long i = 0; i < params.data.size(); ++i) put_f64(os, params.data(i));
  for (long i = 0; i < ema.size(); ++i) put_f64(os, ema(i));
  if (!os) throw DataError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MSEM", 4) != 0)
    throw DataError("not a model checkpoint: " + path);
  uint32_t version = take_u32(is);
  if (version != 1) throw DataError("unsupported checkpoint version " + std::to_string(version));
  uint32_t mode_tag = take_u32(is);
  if (mode_tag > 1) throw DataError("unknown checkpoint mode tag");

  NetConfig cfg;
  cfg.hidden = static_cast<int>(take_u32(is));
  cfg.time_dim = static_cast<int>(take_u32(is));
  cfg.label_dim = static_cast<int>(take_u32(is));
  cfg.n_blocks = static_cast<int>(take_u32(is));
  cfg.n_enc_layers = static_cast<int>(take_u32(is));
  cfg.n_labels = static_cast<int>(take_u32(is));

  Checkpoint ck;
  ck.params = make_param_store(cfg);
  ck.mode = mode_tag == 0 ? TrainConfig::Mode::mars : TrainConfig::Mode::fixed_lag;

  uint32_t n_entries = take_u32(is);
  if (n_entries != ck.params.entries.size()) throw DataError("checkpoint manifest mismatch");
  for (uint32_t i = 0; i < n_entries; ++i) {
    uint32_t len = take_u32(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("truncated checkpoint");
    uint32_t rows = take_u32(is);
    uint32_t cols = take_u32(is);
    const ParamEntry& e = ck.params.entries[i];
    if (name != e.name || static_cast<int>(rows) != e.rows || static_cast<int>(cols) != e.cols)
      throw DataError("checkpoint manifest mismatch");
  }
  uint64_t n_params = take_u64(is);
  if (n_params != static_cast<uint64_t>(ck.params.data.size()))
    throw DataError("checkpoint parameter count mismatch");
  for (long i = 0; i < ck.params.data.size(); ++i) ck.params.data(i) = take_f64(is);
  ck.ema.resize(ck.params.data.size());
  for (long i = 0; i < ck.ema.size(); ++i) ck.ema(i) = take_f64(is);
  return ck;
}

}  // namespace msmemu
