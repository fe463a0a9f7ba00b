#include <iostream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "stochens/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Stochastic-ensemble experiments on toy classification tasks"};
  app.set_version_flag("--version", std::string(stochens::kToolVersion));
  app.require_subcommand(1, 1);

  std::string config;
  int jobs = 1;
  std::string output;
  const char* commands[][2] = {
      {"gen-data", "Generate train/test sets and evaluation grids"},
      {"train", "Train an ensemble (regular, multiswa, se1, se2, se3)"},
      {"hmc", "Sample the reference posterior with NUTS"},
      {"predict", "Write predictive distributions on test set and grids"},
      {"evaluate", "Compute metrics, optionally against a reference"},
      {"compare", "Tabulate several metrics reports"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("-j,--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("-o,--output", output, "Output directory (overrides output_dir)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  stochens::RunOptions opts;
  opts.jobs = jobs;
  if (!output.empty()) opts.output_dir = output;
  return stochens::run_command(app.get_subcommands().front()->get_name(), config, opts);
}
