#pragma once

#include <string>
#include <vector>

#include "prism/config.hpp"
#include "prism/trainer.hpp"

namespace prism {

struct HorizonRow {
  std::string variant;
  std::int64_t experts = 0;
  std::uint64_t seed = 0;
  std::size_t horizon = 0;
  double latent_mse = 0.0;
  double reward_mse = 0.0;
  std::size_t num_starts = 0;
};

// Open-loop rollout fidelity: unrolls each checkpointed model along recorded
// held-out actions and reports latent / reward MSE per horizon. All
// checkpoints are scored on the same held-out set; one CSV for the lot.
std::vector<HorizonRow> cmd_ablate_horizon(const RunConfig& cfg, const std::vector<std::string>& checkpoints,
                                           std::size_t max_horizon, const std::string& out_csv);

struct GateProbeResult {
  double agreement_identity = 0.0;
  double agreement_swapped = 0.0;  // meaningful for K = 2
  double agreement_best = 0.0;
  std::size_t steps = 0;
  std::string csv_path;
};

// Closed-loop episode with a state impulse at `impulse_step`; logs per-step
// gate weights, entropy and the ground-truth mode label.
GateProbeResult cmd_gate_probe(const RunConfig& cfg, const std::string& checkpoint, std::size_t impulse_step,
                               double impulse_magnitude, const std::string& out_csv);

struct BenchRow {
  std::string variant;
  std::int64_t experts = 0;
  double forward_ms_median = 0.0;
  double forward_ms_mean = 0.0;
  double throughput_per_s = 0.0;
  double plan_ms_median = 0.0;
  double plan_ms_mean = 0.0;
  double rel_plan_vs_mlp = 1.0;
};

// float32 latency of one model step and one planner call per variant,
// medians over the configured iteration counts.
std::vector<BenchRow> cmd_bench(const RunConfig& cfg, const std::string& out_csv);

struct GateExportRow {
  std::size_t task_id = 0;
  std::vector<double> mean_weights;
};

// Mean dynamics-gate weight vector per task over >= 500 encoded states.
std::vector<GateExportRow> cmd_export_gates(const RunConfig& cfg, const std::string& checkpoint,
                                            const std::string& out_csv);

// Helper shared with the acceptance suite: argmax-gate vs mode agreement on
// freshly collected random-action trajectories, best over the two binary
// expert relabelings.
double gate_mode_agreement(WorldModel& model, const RunConfig& cfg, std::size_t episodes, std::size_t episode_len,
                           Rng& rng);

}  // namespace prism
