#pragma once

#include <optional>
#include <string>
#include <vector>

#include "xda/data.hpp"
#include "xda/model.hpp"
#include "xda/train.hpp"

namespace xda {

/// One experiment description, loaded from a JSON config file. The schema is
/// strict: unknown keys anywhere abort before any work starts, and the seed
/// is mandatory (no wall-clock seeding).
struct ExperimentConfig {
  uint64_t seed = 0;
  std::string out_dir;

  // gen-data
  ShiftSpec shift;
  int gen_source = 6000;
  int gen_target_train = 60;
  int gen_target_test = 600;

  // run/ablate/sweep inputs
  std::string source_dir;
  std::string target_train_dir;
  std::string target_test_dir;

  ModelConfig model;
  TrainConfig train;
  ProtocolConfig protocol;
  std::vector<int> ns = {1, 3, 5, 7, 9};
};

ExperimentConfig load_config(const std::string& path);

struct CliOptions {
  std::string config_path;
  std::string out_dir;  // overrides the config's "out" when nonempty
  bool force = false;
  bool smoke = false;
  int jobs = 1;
};

/// Commands return a process exit status: 0 on success, 1 on failure. On
/// failure any partial outputs land in `<out>/quarantine/` instead of the
/// output directory, so previous results are never overwritten.
int cmd_gen_data(const CliOptions& options);
int cmd_run(const CliOptions& options);
int cmd_ablate(const CliOptions& options);
int cmd_sweep(const CliOptions& options);

}  // namespace xda
