#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace prism {

// Append-only training metrics CSV with a fixed header; rows are strictly
// increasing in step. Wall-clock timings are kept out of this file so runs
// with the same seed are byte-identical; latencies go to a sidecar file.
class MetricsLog {
public:
  MetricsLog(const std::string& path, std::size_t num_experts);

  void log_step(std::int64_t step, double episode_return, bool has_episode, double eval_return, bool has_eval,
                double loss_total, double consistency, double reward_ce, double value_ce, double load_balance,
                double ortho, double gate_entropy, double tau, double grad_norm, double policy_loss,
                double policy_entropy, double policy_grad_norm, const std::vector<double>& expert_usage);

  const std::string& path() const { return path_; }

private:
  std::string path_;
  std::ofstream out_;
  std::size_t num_experts_;
  std::int64_t last_step_ = -1;
};

}  // namespace prism
