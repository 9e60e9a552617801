#pragma once

#include <string>

#include "msmemu/config.hpp"

namespace msmemu {

// Fixed artifact layout under cfg.out_dir. Every command derives its inputs
// and outputs from these names, so a run directory is self-describing.
std::string replica_path(const RunConfig& cfg, int replica);
std::string manifest_path(const RunConfig& cfg);
std::string msm_path(const RunConfig& cfg);
std::string msm_diagnostics_path(const RunConfig& cfg);
std::string checkpoint_path(const RunConfig& cfg, TrainConfig::Mode mode);
std::string train_log_path(const RunConfig& cfg, TrainConfig::Mode mode);
std::string ensemble_path(const RunConfig& cfg);
std::string provenance_path(const RunConfig& cfg);
std::string report_path(const RunConfig& cfg, bool oracle);
std::string summary_path(const RunConfig& cfg);

// Pipeline commands. Each validates the config, reads its input artifacts
// from cfg.out_dir and writes its outputs there; reruns with identical inputs
// produce byte-identical files.
void cmd_simulate(const RunConfig& cfg);
void cmd_build_msm(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_sample(const RunConfig& cfg);

// runs > 1 re-runs inference in memory with run-derived seeds and reports
// mean and standard error per metric; oracle evaluates each held-out replica
// against the others instead of a generated ensemble.
void cmd_evaluate(const RunConfig& cfg, int runs = 1, bool oracle = false);

// Collects every report*.json under cfg.out_dir (sorted by filename) into a
// markdown summary plus self-contained SVG histogram overlays.
void cmd_report(const RunConfig& cfg);

}  // namespace msmemu
