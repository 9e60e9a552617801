#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "msmemu/core.hpp"
#include "msmemu/dynamics.hpp"
#include "msmemu/flowmodel.hpp"
#include "msmemu/metrics.hpp"
#include "msmemu/msm.hpp"
#include "msmemu/sampling.hpp"

namespace msmemu {

// One JSON document drives the whole pipeline. Every key has a default,
// unknown keys are rejected, and all derived seeds are pure functions of the
// global seed and a stage name. The label vocabulary of the network and the
// structure band of the metrics are taken from the system and msm sections;
// metrics.kT defaults to the simulation temperature.

enum class TrainSelect { mars, fixed_lag, both };
enum class ModelSelect { mars, fixed_lag };

struct RunConfig {
  uint64_t seed = 0;
  std::string out_dir = "out";
  SystemSpec system;
  Potential potential;
  LangevinParams langevin;
  int n_replicas = 5;
  MsmConfig msm;
  TrainConfig train;
  TrainSelect train_select = TrainSelect::mars;
  bool train_resume = false;
  SamplerConfig sample;
  ModelSelect sample_model = ModelSelect::mars;
  int n_anchors = 0;  // hybrid only: fixes the budget at n_anchors * (1 + rollout_len)
  MetricParams metrics;
};

// Strict parse: rejects unknown keys, wrong types and inconsistent values
// before any command does work. Parse errors carry line and column.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
void validate_run_config(const RunConfig& cfg);

// Stage-scoped seed: folds the stage name bytes into the global seed.
uint64_t stage_seed(uint64_t global_seed, std::string_view stage);

const char* train_select_name(TrainSelect m);
TrainSelect train_select_from_name(const std::string& name);
const char* model_select_name(ModelSelect m);
ModelSelect model_select_from_name(const std::string& name);
const char* feature_kind_name(FeatureKind kind);
FeatureKind feature_kind_from_name(const std::string& name);
const char* potential_kind_name(Potential::Kind kind);

}  // namespace msmemu
