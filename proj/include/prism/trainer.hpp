#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "prism/checkpoint.hpp"
#include "prism/config.hpp"
#include "prism/envs.hpp"
#include "prism/replay_buffer.hpp"
#include "prism/world_model.hpp"

namespace prism {

// Raised when training hits a non-finite objective or gradient; the CLI maps
// it to exit code 2.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

WorldModelConfig model_config_from(const RunConfig& cfg, std::size_t obs_dim, std::size_t act_dim);

// Hidden width for the parameter-matched monolithic baseline: dynamics +
// reward parameter count within 5% of the K-expert variant at this config.
std::size_t resolve_monolithic_width(const RunConfig& cfg, std::size_t obs_dim, std::size_t act_dim);

PlanConfig plan_config_from(const RunConfig& cfg);

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  double final_eval_return = 0.0;
  double random_policy_return = 0.0;
  std::int64_t trained_steps = 0;
};

// Alternates environment collection (planner-in-the-loop with exploration
// noise) and model/policy updates at the configured update-to-data ratio.
TrainResult cmd_train(const RunConfig& cfg);

// Environment helpers shared with the experiment drivers.
std::vector<std::unique_ptr<Env>> make_task_envs(const RunConfig& cfg);
double measure_random_return(const RunConfig& cfg, Rng& rng);
double evaluate_policy(WorldModel& model, const RunConfig& cfg, Rng& rng);

std::vector<std::string> model_module_names(const WorldModel& model);
void save_model_checkpoint(const std::string& path, const WorldModel& model, const RunConfig& cfg,
                           std::int64_t train_steps);
std::unique_ptr<WorldModel> model_from_checkpoint(const std::string& path, RunConfig* config_out = nullptr,
                                                  CheckpointData* raw_out = nullptr);

}  // namespace prism
