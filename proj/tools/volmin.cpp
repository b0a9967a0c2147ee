#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "volmin/config.hpp"
#include "volmin/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-noise learning by transition-matrix volume minimization"};
  app.set_version_flag("--version", volmin::kVersion);
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::vector<std::string> names;
  for (const auto& [name, fn] : volmin::commands()) names.push_back(name);
  app.add_option("command", command, "generate | corrupt | check-scattered | train-volmin | estimate-anchor | sweep")
      ->required()
      ->check(CLI::IsMember(names));
  app.add_option("--config", config_path, "experiment config file")->required();
  app.add_option("--out", out_dir, "output directory (overrides output.dir)");
  auto* seed_opt = app.add_option("--seed", seed, "seed for single-trial commands (default: first of trials.seeds)");
  CLI11_PARSE(app, argc, argv);

  try {
    volmin::CommandContext ctx;
    ctx.command = command;
    ctx.config_text = volmin::read_file(config_path);
    ctx.config = volmin::parse_experiment_config(ctx.config_text);
    ctx.out = out_dir.empty() ? ctx.config.output_dir : out_dir;
    if (*seed_opt) ctx.seed_override = seed;
    volmin::commands().at(command)(ctx);
  } catch (const volmin::ConfigError& e) {
    std::cerr << "volmin " << command << ": config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const volmin::NumericalError& e) {
    std::cerr << "volmin " << command << ": numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const volmin::Error& e) {
    std::cerr << "volmin " << command << ": invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "volmin " << command << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
