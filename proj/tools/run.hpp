#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

namespace steproute::cli {

enum class Mode { SimSweep, TrainAgg, SolvePomdp, Eval, Replay, FitObsModel };

struct RunConfig {
  Mode mode = Mode::SimSweep;
  nlohmann::json config = nlohmann::json::object();
  std::string config_dir = ".";  // relative paths in the config resolve here
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;
  std::string out;
};

/// Exit status: 0 success, 1 configuration error, 2 runtime error. Messages go to stderr.
int run(const RunConfig& cfg);

const char* mode_name(Mode m);

}  // namespace steproute::cli
