#pragma once

#include <cstddef>
#include <vector>

#include "prism/rng.hpp"

namespace prism {

struct PlanConfig {
  std::size_t horizon = 3;
  std::size_t iterations = 6;
  bool extra_iterations_for_wide_actions = true;  // +2 when action dim >= 20
  std::size_t population = 512;
  std::size_t elites = 64;
  std::size_t policy_prior_samples = 24;
  double std_min = 0.05;
  double std_max = 2.0;
  double temperature = 0.5;
  double discount = 0.99;
};

struct PlanResult {
  std::vector<double> action;                     // first action of the final mean
  std::vector<std::vector<double>> mean;          // H x A
  std::vector<std::vector<double>> stddev;        // H x A
  std::vector<double> best_return_trace;          // best candidate return per iteration
  std::vector<double> elite_mean_trace;           // mean elite return per iteration
  std::size_t num_flagged = 0;                    // rollouts scored -inf due to NaN
};

// Batched rollout surface the planner scores candidates through. Rows are
// laid out contiguously; `batch` rows of latent/action width. Implementations
// must be pure over frozen parameters (safe for concurrent evaluation).
class PlanningModel {
public:
  virtual ~PlanningModel() = default;
  virtual std::size_t latent_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  // z [batch*latent], a [batch*act] -> z_next [batch*latent], reward [batch]
  virtual void step(const std::vector<double>& z, const std::vector<double>& a, std::size_t batch,
                    std::vector<double>& z_next, std::vector<double>& reward) = 0;
  // Terminal bootstrap; evaluated at the policy prior's mean action.
  virtual void terminal_value(const std::vector<double>& z, std::size_t batch, std::vector<double>& value) = 0;
  // One stochastic prior action per row.
  virtual void prior_sample(const std::vector<double>& z, std::size_t batch, Rng& rng, std::vector<double>& action) = 0;
};

// Discounted return of a single action sequence: sum_k gamma^k r_k +
// gamma^H V(z_H). NaN anywhere in the rollout scores -inf.
double evaluate_sequence(const std::vector<double>& z0, const std::vector<std::vector<double>>& actions,
                         PlanningModel& model, double discount);

// Warm-start shift: drop the first step, append a zero action.
std::vector<std::vector<double>> shift_solution(std::vector<std::vector<double>> mean);

// MPPI-style iterative refinement: Gaussian candidates around the running
// mean plus policy-prior rollouts, soft elite weighting by exp(G/temperature).
PlanResult plan(const std::vector<double>& z0, PlanningModel& model, const PlanConfig& config, Rng& rng,
                const std::vector<std::vector<double>>* previous_mean = nullptr);

}  // namespace prism
