#include <CLI11.hpp>

#include "xda/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain few-shot training experiments"};
  app.require_subcommand(1);

  xda::CliOptions options;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", options.config_path, "JSON config file")
        ->required();
    cmd->add_option("--out", options.out_dir,
                    "output directory (overrides the config)");
    cmd->add_flag("--smoke", options.smoke, "scaled-down smoke run");
    cmd->add_option("--jobs", options.jobs, "parallel folds")
        ->default_val(1);
    return cmd;
  };

  CLI::App* gen = add_common(
      app.add_subcommand("gen-data", "generate a synthetic benchmark"));
  gen->add_flag("--force", options.force,
                "overwrite a non-empty output directory");
  CLI::App* run = add_common(
      app.add_subcommand("run", "k-fold protocol for one method"));
  CLI::App* ablate = add_common(
      app.add_subcommand("ablate", "loss-term ablation table"));
  CLI::App* sweep =
      add_common(app.add_subcommand("sweep", "n-shot sweep curve"));

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return xda::cmd_gen_data(options);
  if (run->parsed()) return xda::cmd_run(options);
  if (ablate->parsed()) return xda::cmd_ablate(options);
  if (sweep->parsed()) return xda::cmd_sweep(options);
  return 1;
}
