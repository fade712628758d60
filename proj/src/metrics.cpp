#include "prism/metrics.hpp"

#include <stdexcept>

namespace prism {

MetricsLog::MetricsLog(const std::string& path, std::size_t num_experts) : path_(path), num_experts_(num_experts) {
  out_.open(path);
  if (!out_) throw std::runtime_error("MetricsLog: cannot write " + path);
  out_.precision(10);
  out_ << "step,episode_return,eval_return,loss_total,consistency,reward_ce,value_ce,load_balance,ortho,"
          "gate_entropy,tau,grad_norm,policy_loss,policy_entropy,policy_grad_norm";
  for (std::size_t k = 0; k < num_experts_; ++k) out_ << ",usage_" << k;
  out_ << "\n";
}

void MetricsLog::log_step(std::int64_t step, double episode_return, bool has_episode, double eval_return,
                          bool has_eval, double loss_total, double consistency, double reward_ce, double value_ce,
                          double load_balance, double ortho, double gate_entropy, double tau, double grad_norm,
                          double policy_loss, double policy_entropy, double policy_grad_norm,
                          const std::vector<double>& expert_usage) {
  if (step <= last_step_) {
    throw std::runtime_error("MetricsLog: steps must be strictly increasing");
  }
  last_step_ = step;
  out_ << step << ",";
  if (has_episode) out_ << episode_return;
  out_ << ",";
  if (has_eval) out_ << eval_return;
  out_ << "," << loss_total << "," << consistency << "," << reward_ce << "," << value_ce << "," << load_balance << ","
       << ortho << "," << gate_entropy << "," << tau << "," << grad_norm << "," << policy_loss << "," << policy_entropy
       << "," << policy_grad_norm;
  for (std::size_t k = 0; k < num_experts_; ++k) {
    out_ << ",";
    if (k < expert_usage.size()) out_ << expert_usage[k];
  }
  out_ << "\n";
  out_.flush();
}

}  // namespace prism
