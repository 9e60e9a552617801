#include "msmemu/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

#include "msmemu/errors.hpp"
#include "msmemu/rng.hpp"

namespace msmemu {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const char* mode_tag(TrainConfig::Mode mode) {
  return mode == TrainConfig::Mode::mars ? "mars" : "fixed_lag";
}

std::string join(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + cfg.out_dir + ": " + ec.message());
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("write failure: " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::vector<Trajectory> read_replicas(const RunConfig& cfg) {
  std::vector<Trajectory> trajs;
  trajs.reserve(static_cast<size_t>(cfg.n_replicas));
  for (int r = 0; r < cfg.n_replicas; ++r) {
    std::string path = replica_path(cfg, r);
    Trajectory t = read_mset(path);
    if (t.n_particles != cfg.system.n_particles || t.dim != cfg.system.dim)
      throw ShapeError(path + ": trajectory does not match the configured system");
    trajs.push_back(std::move(t));
  }
  return trajs;
}

Trajectory concat_trajectories(const std::vector<Trajectory>& trajs) {
  Trajectory out = trajs.front();
  long total = 0;
  for (const Trajectory& t : trajs) total += t.n_frames();
  out.frames.resize(total, trajs.front().frames.cols());
  long row = 0;
  for (const Trajectory& t : trajs) {
    out.frames.middleRows(row, t.n_frames()) = t.frames;
    row += t.n_frames();
  }
  return out;
}

SamplerConfig resolved_sampler(const RunConfig& cfg) {
  SamplerConfig sc = cfg.sample;
  if (sc.scheme == SampleScheme::hybrid && cfg.n_anchors > 0)
    sc.n_frames = cfg.n_anchors * (1 + sc.rollout_len);
  return sc;
}

ParamStore inference_params(const Checkpoint& ck) {
  ParamStore p = ck.params;
  p.data = ck.ema;
  return p;
}

Checkpoint load_mode_checkpoint(const RunConfig& cfg, TrainConfig::Mode mode) {
  Checkpoint ck = load_checkpoint(checkpoint_path(cfg, mode));
  if (ck.mode != mode)
    throw DataError(checkpoint_path(cfg, mode) + ": holds mode " + mode_tag(ck.mode));
  return ck;
}

TrainConfig::Mode selected_mode(ModelSelect m) {
  return m == ModelSelect::mars ? TrainConfig::Mode::mars : TrainConfig::Mode::fixed_lag;
}

// Flat name -> value view of a report; absent optionals are simply missing.
std::map<std::string, double> flatten_report(const MetricReport& rep) {
  std::map<std::string, double> out;
  for (const auto& [name, v] : rep.jsd) out["jsd_" + name] = v;
  for (const auto& [name, v] : rep.kl) out["kl_" + name] = v;
  for (const auto& [name, st] : rep.ref_stats) {
    out["ref_mean_" + name] = st.mean;
    out["ref_std_" + name] = st.stddev;
  }
  for (const auto& [name, st] : rep.gen_stats) {
    out["gen_mean_" + name] = st.mean;
    out["gen_std_" + name] = st.stddev;
  }
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) out[key] = *v;
  };
  put("mmae", rep.mmae);
  put("msm_recovery_jsd", rep.msm_recovery);
  put("pearson_pairwise_rmsd", rep.pearson_pairwise_rmsd);
  put("pearson_global_rmsf", rep.pearson_global_rmsf);
  put("pearson_pertarget_rmsf", rep.pearson_pertarget_rmsf);
  put("delta_g_fold_ref", rep.delta_g_fold_ref);
  put("delta_g_fold_gen", rep.delta_g_fold_gen);
  put("delta_g_fold_mae", rep.delta_g_fold_mae);
  put("tica_jsd_0", rep.tica_jsd_0);
  put("tica_jsd_01", rep.tica_jsd_01);
  out["q_half"] = rep.q_half;
  return out;
}

json aggregate_metrics(const std::vector<std::map<std::string, double>>& runs) {
  std::map<std::string, std::vector<double>> values;
  for (const auto& run : runs)
    for (const auto& [key, v] : run) values[key].push_back(v);
  json out = json::object();
  for (const auto& [key, vals] : values) {
    double n = static_cast<double>(vals.size());
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= n;
    double stderr_ = 0.0;
    if (vals.size() > 1) {
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      stderr_ = std::sqrt(var / (n - 1.0) / n);
    }
    out[key] = {{"mean", mean}, {"stderr", stderr_}, {"values", vals}};
  }
  return out;
}

json histogram_block(const Trajectory& ref, const Trajectory& gen, const SystemSpec& system,
                     const MetricParams& params) {
  Conformation native = ref.frame(0);
  auto ref_series = observable_series(ref, system, native, params);
  auto gen_series = observable_series(gen, system, native, params);
  json out = json::object();
  for (const auto& [name, rv] : ref_series) {
    auto it = gen_series.find(name);
    if (it == gen_series.end()) continue;
    HistogramPair h = pooled_histograms(rv, it->second, params.hist.n_bins);
    std::vector<double> p(h.p.data(), h.p.data() + h.p.size());
    std::vector<double> q(h.q.data(), h.q.data() + h.q.size());
    out[name] = {{"lo", h.lo}, {"hi", h.hi}, {"ref", p}, {"gen", q}};
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string svg_histogram(const std::string& title, double lo, double hi,
                          const std::vector<double>& ref, const std::vector<double>& gen) {
  const double W = 640, H = 400, ml = 60, mr = 20, mt = 44, mb = 52;
  const double pw = W - ml - mr, ph = H - mt - mb;
  double ymax = 1e-12;
  for (double v : ref) ymax = std::max(ymax, v);
  for (double v : gen) ymax = std::max(ymax, v);

  auto step_path = [&](const std::vector<double>& bins) {
    std::string d;
    char buf[80];
    size_t n = bins.size();
    for (size_t i = 0; i < n; ++i) {
      double x0 = ml + pw * static_cast<double>(i) / static_cast<double>(n);
      double x1 = ml + pw * static_cast<double>(i + 1) / static_cast<double>(n);
      double y = mt + ph * (1.0 - bins[i] / ymax);
      std::snprintf(buf, sizeof(buf), "%s%.2f %.2f L %.2f %.2f ", i == 0 ? "M " : "L ", x0, y, x1,
                    y);
      d += buf;
    }
    return d;
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
         "viewBox=\"0 0 640 400\">\n"
      << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n"
      << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">"
      << title << "</text>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
      << H - mb << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << ml << "\" y=\"" << H - mb + 18
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << format_number(lo) << "</text>\n"
      << "<text x=\"" << W - mr << "\" y=\"" << H - mb + 18
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
      << format_number(hi) << "</text>\n"
      << "<text x=\"" << ml - 8 << "\" y=\"" << mt + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">"
      << format_number(ymax) << "</text>\n"
      << "<text x=\"" << ml - 8 << "\" y=\"" << H - mb
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">0</text>\n"
      << "<path d=\"" << step_path(ref)
      << "\" fill=\"none\" stroke=\"#2b6cb0\" stroke-width=\"2\"/>\n"
      << "<path d=\"" << step_path(gen)
      << "\" fill=\"none\" stroke=\"#c53030\" stroke-width=\"2\"/>\n"
      << "<line x1=\"" << W - mr - 150 << "\" y1=\"" << mt + 8 << "\" x2=\"" << W - mr - 120
      << "\" y2=\"" << mt + 8 << "\" stroke=\"#2b6cb0\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << W - mr - 112 << "\" y=\"" << mt + 12
      << "\" font-family=\"sans-serif\" font-size=\"12\">reference</text>\n"
      << "<line x1=\"" << W - mr - 150 << "\" y1=\"" << mt + 26 << "\" x2=\"" << W - mr - 120
      << "\" y2=\"" << mt + 26 << "\" stroke=\"#c53030\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << W - mr - 112 << "\" y=\"" << mt + 30
      << "\" font-family=\"sans-serif\" font-size=\"12\">generated</text>\n"
      << "</svg>\n";
  return svg.str();
}

}  // namespace

std::string replica_path(const RunConfig& cfg, int replica) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "replica_%02d.mset", replica);
  return join(cfg, buf);
}

std::string manifest_path(const RunConfig& cfg) { return join(cfg, "manifest.json"); }
std::string msm_path(const RunConfig& cfg) { return join(cfg, "msm.json"); }
std::string msm_diagnostics_path(const RunConfig& cfg) {
  return join(cfg, "msm_diagnostics.json");
}

std::string checkpoint_path(const RunConfig& cfg, TrainConfig::Mode mode) {
  return join(cfg, std::string("checkpoint_") + mode_tag(mode) + ".msem");
}

std::string train_log_path(const RunConfig& cfg, TrainConfig::Mode mode) {
  return join(cfg, std::string("train_log_") + mode_tag(mode) + ".json");
}

std::string ensemble_path(const RunConfig& cfg) {
  return join(cfg, std::string("ensemble_") + model_select_name(cfg.sample_model) + "_" +
                       scheme_name(cfg.sample.scheme) + ".mset");
}

std::string provenance_path(const RunConfig& cfg) {
  return join(cfg, std::string("provenance_") + model_select_name(cfg.sample_model) + "_" +
                       scheme_name(cfg.sample.scheme) + ".json");
}

std::string report_path(const RunConfig& cfg, bool oracle) {
  if (oracle) return join(cfg, "report_oracle.json");
  return join(cfg, std::string("report_") + model_select_name(cfg.sample_model) + "_" +
                       scheme_name(cfg.sample.scheme) + ".json");
}

std::string summary_path(const RunConfig& cfg) { return join(cfg, "summary.md"); }

void cmd_simulate(const RunConfig& cfg) {
  validate_run_config(cfg);
  ensure_out_dir(cfg);
  uint64_t seed_sim = stage_seed(cfg.seed, "simulate");
  Conformation x0 = cfg.potential.default_start(cfg.system);

  std::vector<uint64_t> replica_seeds;
  json files = json::array();
  for (int r = 0; r < cfg.n_replicas; ++r) {
    uint64_t rs = hash64({seed_sim, static_cast<uint64_t>(r)});
    replica_seeds.push_back(rs);
    Trajectory t = simulate(cfg.system, cfg.potential, cfg.langevin, rs, &x0);
    write_mset(replica_path(cfg, r), t);
    files.push_back(fs::path(replica_path(cfg, r)).filename().string());
  }

  json manifest = {
      {"seed", cfg.seed},
      {"stage_seed", seed_sim},
      {"replica_seeds", replica_seeds},
      {"files", files},
      {"potential", potential_kind_name(cfg.potential.kind)},
      {"system",
       {{"n_particles", cfg.system.n_particles},
        {"dim", cfg.system.dim},
        {"n_torsions", cfg.system.n_torsions}}},
      {"langevin",
       {{"gamma", cfg.langevin.gamma},
        {"temperature", cfg.langevin.temperature},
        {"dt", cfg.langevin.dt},
        {"n_steps", cfg.langevin.n_steps},
        {"save_stride", cfg.langevin.save_stride}}},
  };
  write_json_file(manifest_path(cfg), manifest);
}

void cmd_build_msm(const RunConfig& cfg) {
  validate_run_config(cfg);
  ensure_out_dir(cfg);
  std::vector<Trajectory> trajs = read_replicas(cfg);

  MsmContext ctx;
  try {
    ctx = build_msm(trajs, cfg.system, cfg.msm, stage_seed(cfg.seed, "msm"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("build-msm on ") + cfg.out_dir + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(std::string("build-msm on ") + cfg.out_dir + ": " + e.what());
  }
  write_msm_json(msm_path(cfg), ctx);

  std::vector<double> stationary(ctx.msm.stationary.data(),
                                 ctx.msm.stationary.data() + ctx.msm.stationary.size());
  json transition = json::array();
  for (long i = 0; i < ctx.msm.transition.rows(); ++i) {
    json row = json::array();
    for (long jcol = 0; jcol < ctx.msm.transition.cols(); ++jcol)
      row.push_back(ctx.msm.transition(i, jcol));
    transition.push_back(row);
  }

  std::vector<int> micro_per_macro(static_cast<size_t>(ctx.n_macro), 0);
  for (int m : ctx.micro_to_macro) ++micro_per_macro[static_cast<size_t>(m)];

  Eigen::VectorXd occupancy = Eigen::VectorXd::Zero(ctx.n_macro);
  long total_frames = 0;
  for (const Trajectory& t : trajs) {
    for (int s : assign_macrostates(ctx, t)) occupancy(s) += 1.0;
    total_frames += t.n_frames();
  }
  occupancy /= static_cast<double>(total_frames);
  std::vector<double> occ(occupancy.data(), occupancy.data() + occupancy.size());

  // Undirected reachability over positive symmetrized transition mass.
  std::vector<int> seen(static_cast<size_t>(ctx.n_macro), 0);
  std::vector<int> stack = {0};
  seen[0] = 1;
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    for (int jcol = 0; jcol < ctx.n_macro; ++jcol)
      if (!seen[static_cast<size_t>(jcol)] && ctx.msm.transition_sym(i, jcol) > 0.0) {
        seen[static_cast<size_t>(jcol)] = 1;
        stack.push_back(jcol);
      }
  }
  bool reducible = std::find(seen.begin(), seen.end(), 0) != seen.end();

  std::vector<double> eigenvalues;
  if (cfg.msm.feature_kind == FeatureKind::cartesian_tica)
    eigenvalues.assign(ctx.tica.eigenvalues.data(),
                       ctx.tica.eigenvalues.data() + ctx.tica.eigenvalues.size());

  json diag = {
      {"tica_eigenvalues", eigenvalues},
      {"n_kept", cfg.msm.feature_kind == FeatureKind::cartesian_tica ? ctx.tica.n_kept() : 0},
      {"n_macro", ctx.n_macro},
      {"micro_per_macro", micro_per_macro},
      {"macro_stationary", stationary},
      {"macro_occupancy", occ},
      {"macro_transition", transition},
      {"lag", ctx.msm.lag},
      {"reducible", reducible},
  };
  write_json_file(msm_diagnostics_path(cfg), diag);
}

void cmd_train(const RunConfig& cfg) {
  validate_run_config(cfg);
  ensure_out_dir(cfg);
  std::vector<Trajectory> trajs = read_replicas(cfg);

  bool want_mars =
      cfg.train_select == TrainSelect::mars || cfg.train_select == TrainSelect::both;
  bool want_fixed =
      cfg.train_select == TrainSelect::fixed_lag || cfg.train_select == TrainSelect::both;

  std::optional<MsmContext> ctx;
  if (want_mars) ctx = read_msm_json(msm_path(cfg));

  std::vector<TrainConfig::Mode> modes;
  if (want_mars) modes.push_back(TrainConfig::Mode::mars);
  if (want_fixed) modes.push_back(TrainConfig::Mode::fixed_lag);

  for (TrainConfig::Mode mode : modes) {
    TrainConfig tc = cfg.train;
    tc.mode = mode;
    uint64_t seed = stage_seed(cfg.seed, std::string("train-") + mode_tag(mode));

    Checkpoint warm;
    const ParamStore* resume_from = nullptr;
    const Eigen::VectorXd* resume_ema = nullptr;
    if (cfg.train_resume) {
      warm = load_mode_checkpoint(cfg, mode);
      resume_from = &warm.params;
      resume_ema = &warm.ema;
    }

    TrainResult result =
        train_flow_model(trajs, cfg.system, ctx ? &*ctx : nullptr, tc, seed, resume_from,
                         resume_ema);
    save_checkpoint(checkpoint_path(cfg, mode), result.params, result.ema, mode);

    json epochs = json::array();
    for (const EpochLog& e : result.log)
      epochs.push_back(
          {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    write_json_file(train_log_path(cfg, mode),
                    json{{"mode", mode_tag(mode)}, {"epochs", epochs}});
  }
}

void cmd_sample(const RunConfig& cfg) {
  validate_run_config(cfg);
  ensure_out_dir(cfg);
  Trajectory first = read_mset(replica_path(cfg, 0));
  if (first.n_particles != cfg.system.n_particles || first.dim != cfg.system.dim)
    throw ShapeError(replica_path(cfg, 0) + ": trajectory does not match the configured system");
  Conformation x0 = first.frame(0);

  SamplerConfig sc = resolved_sampler(cfg);
  Checkpoint primary = load_mode_checkpoint(cfg, selected_mode(cfg.sample_model));
  ParamStore model = inference_params(primary);

  std::optional<ParamStore> baseline;
  if (sc.scheme == SampleScheme::hybrid && sc.rollout_len > 0)
    baseline = inference_params(load_mode_checkpoint(cfg, TrainConfig::Mode::fixed_lag));

  SampleResult res = sample_ensemble(model, baseline ? &*baseline : nullptr, cfg.system, x0, sc,
                                     stage_seed(cfg.seed, "sample"));
  write_mset(ensemble_path(cfg), res.ensemble);
  write_provenance_json(provenance_path(cfg), sc, res.provenance);
}

void cmd_evaluate(const RunConfig& cfg, int runs, bool oracle) {
  validate_run_config(cfg);
  if (runs < 1) throw ConfigError("evaluate: runs must be positive");
  ensure_out_dir(cfg);
  std::vector<Trajectory> trajs = read_replicas(cfg);
  MsmContext ctx = read_msm_json(msm_path(cfg));

  if (oracle) {
    if (trajs.size() < 2) throw DataError("evaluate: held-out mode needs at least two replicas");
    std::vector<std::map<std::string, double>> folds;
    json histograms;
    for (size_t held = 0; held < trajs.size(); ++held) {
      std::vector<Trajectory> rest;
      for (size_t r = 0; r < trajs.size(); ++r)
        if (r != held) rest.push_back(trajs[r]);
      Trajectory ref = concat_trajectories(rest);
      MetricReport rep =
          compute_metric_report({ref}, {trajs[held]}, cfg.system, &ctx, cfg.metrics);
      folds.push_back(flatten_report(rep));
      if (held == 0) histograms = histogram_block(ref, trajs[held], cfg.system, cfg.metrics);
    }
    json out = {
        {"kind", "oracle"},
        {"seed", cfg.seed},
        {"folds", trajs.size()},
        {"metrics", aggregate_metrics(folds)},
        {"histograms", histograms},
    };
    write_json_file(report_path(cfg, true), out);
    return;
  }

  Trajectory ref = concat_trajectories(trajs);
  std::vector<Trajectory> ensembles;
  ensembles.push_back(read_mset(ensemble_path(cfg)));

  if (runs > 1) {
    SamplerConfig sc = resolved_sampler(cfg);
    Checkpoint primary = load_mode_checkpoint(cfg, selected_mode(cfg.sample_model));
    ParamStore model = inference_params(primary);
    std::optional<ParamStore> baseline;
    if (sc.scheme == SampleScheme::hybrid && sc.rollout_len > 0)
      baseline = inference_params(load_mode_checkpoint(cfg, TrainConfig::Mode::fixed_lag));
    Conformation x0 = trajs.front().frame(0);
    uint64_t seed_sample = stage_seed(cfg.seed, "sample");
    for (int k = 1; k < runs; ++k) {
      uint64_t rk = hash64({seed_sample, static_cast<uint64_t>(k)});
      SampleResult res =
          sample_ensemble(model, baseline ? &*baseline : nullptr, cfg.system, x0, sc, rk);
      ensembles.push_back(std::move(res.ensemble));
    }
  }

  std::vector<std::map<std::string, double>> per_run;
  for (const Trajectory& ens : ensembles) {
    MetricReport rep = compute_metric_report({ref}, {ens}, cfg.system, &ctx, cfg.metrics);
    per_run.push_back(flatten_report(rep));
  }

  json out = {
      {"kind", "ensemble"},
      {"seed", cfg.seed},
      {"model", model_select_name(cfg.sample_model)},
      {"scheme", scheme_name(cfg.sample.scheme)},
      {"runs", runs},
      {"metrics", aggregate_metrics(per_run)},
      {"histograms", histogram_block(ref, ensembles.front(), cfg.system, cfg.metrics)},
  };
  write_json_file(report_path(cfg, false), out);
}

void cmd_report(const RunConfig& cfg) {
  validate_run_config(cfg);
  std::vector<std::string> names;
  if (fs::is_directory(cfg.out_dir))
    for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
      std::string name = entry.path().filename().string();
      if (name.rfind("report", 0) == 0 && name.size() > 5 &&
          name.substr(name.size() - 5) == ".json")
        names.push_back(name);
    }
  if (names.empty()) throw DataError("report: no report*.json files under " + cfg.out_dir);
  std::sort(names.begin(), names.end());

  std::vector<std::string> stems;
  std::vector<json> reports;
  for (const std::string& name : names) {
    stems.push_back(name.substr(0, name.size() - 5));
    reports.push_back(read_json_file(join(cfg, name)));
  }

  std::vector<std::string> keys;
  for (const json& rep : reports)
    if (rep.contains("metrics"))
      for (auto it = rep.at("metrics").begin(); it != rep.at("metrics").end(); ++it)
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) keys.push_back(it.key());
  std::sort(keys.begin(), keys.end());

  std::ostringstream md;
  md << "# Ensemble evaluation summary\n\n";
  for (size_t i = 0; i < reports.size(); ++i) {
    const json& rep = reports[i];
    md << "- `" << stems[i] << "`";
    if (rep.contains("kind")) md << ": " << rep.at("kind").get<std::string>();
    if (rep.contains("model")) md << ", model " << rep.at("model").get<std::string>();
    if (rep.contains("scheme")) md << ", scheme " << rep.at("scheme").get<std::string>();
    if (rep.contains("runs")) md << ", runs " << rep.at("runs").get<int>();
    if (rep.contains("folds")) md << ", folds " << rep.at("folds").get<int>();
    md << "\n";
  }
  md << "\n| metric |";
  for (const std::string& stem : stems) md << " " << stem << " |";
  md << "\n| --- |";
  for (size_t i = 0; i < stems.size(); ++i) md << " --- |";
  md << "\n";
  for (const std::string& key : keys) {
    md << "| " << key << " |";
    for (const json& rep : reports) {
      if (!rep.contains("metrics") || !rep.at("metrics").contains(key)) {
        md << " absent |";
        continue;
      }
      const json& cell = rep.at("metrics").at(key);
      md << " " << format_number(cell.at("mean").get<double>());
      double se = cell.at("stderr").get<double>();
      if (se > 0.0) md << " ± " << format_number(se);
      md << " |";
    }
    md << "\n";
  }

  std::vector<std::string> plot_files;
  for (size_t i = 0; i < reports.size(); ++i) {
    if (!reports[i].contains("histograms")) continue;
    const json& hists = reports[i].at("histograms");
    for (auto it = hists.begin(); it != hists.end(); ++it) {
      const json& h = it.value();
      std::string file = "plot_" + stems[i] + "_" + it.key() + ".svg";
      std::string svg = svg_histogram(
          stems[i] + ": " + it.key(), h.at("lo").get<double>(), h.at("hi").get<double>(),
          h.at("ref").get<std::vector<double>>(), h.at("gen").get<std::vector<double>>());
      std::ofstream out(join(cfg, file), std::ios::trunc);
      if (!out) throw DataError("cannot open for writing: " + join(cfg, file));
      out << svg;
      plot_files.push_back(file);
    }
  }
  if (!plot_files.empty()) {
    md << "\n## Plots\n\n";
    for (const std::string& file : plot_files) md << "- `" << file << "`\n";
  }

  std::ofstream out(summary_path(cfg), std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + summary_path(cfg));
  out << md.str();
}

}  // namespace msmemu
