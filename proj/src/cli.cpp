#include "msmemu/cli.hpp"

#include <CLI11.hpp>
#include <cstdint>
#include <cstdio>
#include <string>

#include "msmemu/config.hpp"
#include "msmemu/errors.hpp"
#include "msmemu/pipeline.hpp"

namespace msmemu {

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Markov state model emulator: simulate, model and evaluate toy dynamics"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  uint64_t seed = 0;
  int runs = 1;
  bool oracle = false;

  struct SubSpec {
    const char* name;
    const char* help;
  };
  const SubSpec specs[] = {
      {"simulate", "integrate Langevin replicas and write trajectory files"},
      {"build-msm", "fit the featurize/cluster/coarse-grain pipeline and write msm.json"},
      {"train", "train the transition generator(s) and write checkpoints"},
      {"sample", "generate an ensemble from a checkpoint"},
      {"evaluate", "score an ensemble against the reference replicas"},
      {"report", "render collected reports into a summary and plots"},
  };
  for (const SubSpec& spec : specs) {
    CLI::App* sub = app.add_subcommand(spec.name, spec.help);
    sub->add_option("--config", config_path, "JSON run configuration (defaults apply if omitted)");
    sub->add_option("--seed", seed, "override the global seed");
    sub->add_option("--out", out_dir, "override the output directory");
    if (std::string(spec.name) == "evaluate") {
      sub->add_option("--runs", runs, "number of inference runs to average")
          ->check(CLI::PositiveNumber);
      sub->add_flag("--oracle", oracle, "score each held-out replica against the others");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* active = app.get_subcommands().front();
  const std::string name = active->get_name();

  try {
    RunConfig cfg =
        config_path.empty() ? parse_run_config("{}") : load_run_config(config_path);
    if (active->count("--seed") > 0) cfg.seed = seed;
    if (active->count("--out") > 0) cfg.out_dir = out_dir;
    validate_run_config(cfg);

    if (name == "simulate") {
      cmd_simulate(cfg);
    } else if (name == "build-msm") {
      cmd_build_msm(cfg);
    } else if (name == "train") {
      cmd_train(cfg);
    } else if (name == "sample") {
      cmd_sample(cfg);
    } else if (name == "evaluate") {
      cmd_evaluate(cfg, runs, oracle);
    } else {
      cmd_report(cfg);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}

}  // namespace msmemu
