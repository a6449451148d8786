#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "run.hpp"

using steproute::cli::Mode;

int main(int argc, char** argv) {
  CLI::App app{"steproute: step-level weak/strong routing engine"};
  app.require_subcommand(1);

  const std::map<std::string, Mode> modes{{"sweep-thr", Mode::SimSweep},   {"train-agg", Mode::TrainAgg},
                                          {"solve-pomdp", Mode::SolvePomdp}, {"fit-obs", Mode::FitObsModel},
                                          {"eval", Mode::Eval},             {"replay", Mode::Replay}};
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;
  std::string out;
  for (const auto& [name, mode] : modes) {
    auto* sub = app.add_subcommand(name, std::string("run ") + steproute::cli::mode_name(mode));
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "master seed (overrides config)");
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--episodes", episodes, "episodes per point (overrides config)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  steproute::cli::RunConfig cfg;
  for (const auto& [name, mode] : modes) {
    if (app.got_subcommand(name)) cfg.mode = mode;
  }
  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "config: cannot open '" << config_path << "'\n";
    return 1;
  }
  try {
    cfg.config = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "config: " << e.what() << '\n';
    return 1;
  }
  const auto slash = config_path.find_last_of('/');
  cfg.config_dir = slash == std::string::npos ? "." : config_path.substr(0, slash);
  cfg.seed = seed;
  cfg.episodes = episodes;
  cfg.out = out;
  return steproute::cli::run(cfg);
}
