#include "prism/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "prism/tensor.hpp"

namespace prism {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool finite_block(const std::vector<double>& v, std::size_t begin, std::size_t len) {
  for (std::size_t i = begin; i < begin + len; ++i) {
    if (!std::isfinite(v[i])) return false;
  }
  return true;
}

}  // namespace

double evaluate_sequence(const std::vector<double>& z0, const std::vector<std::vector<double>>& actions,
                         PlanningModel& model, double discount) {
  const std::size_t latent = model.latent_dim();
  const std::size_t act = model.action_dim();
  std::vector<double> z = z0;
  std::vector<double> z_next, reward;
  double g = 0.0;
  double disc = 1.0;
  for (const auto& a : actions) {
    if (a.size() != act) throw std::invalid_argument("evaluate_sequence: action dim mismatch");
    model.step(z, a, 1, z_next, reward);
    if (!std::isfinite(reward[0]) || !finite_block(z_next, 0, latent)) return kNegInf;
    g += disc * reward[0];
    disc *= discount;
    z = z_next;
  }
  std::vector<double> value;
  model.terminal_value(z, 1, value);
  if (!std::isfinite(value[0])) return kNegInf;
  return g + disc * value[0];
}

std::vector<std::vector<double>> shift_solution(std::vector<std::vector<double>> mean) {
  if (mean.empty()) return mean;
  const std::size_t act = mean[0].size();
  mean.erase(mean.begin());
  mean.emplace_back(act, 0.0);
  return mean;
}

PlanResult plan(const std::vector<double>& z0, PlanningModel& model, const PlanConfig& config, Rng& rng,
                const std::vector<std::vector<double>>* previous_mean) {
  if (Tape::active() != nullptr) {
    throw std::runtime_error("plan: must not run under an active gradient tape");
  }
  const std::size_t H = config.horizon;
  const std::size_t A = model.action_dim();
  const std::size_t latent = model.latent_dim();
  const std::size_t P = config.population;
  const std::size_t E = std::min(config.elites, P);
  const std::size_t S = std::min(config.policy_prior_samples, P);
  if (H == 0 || P == 0 || E == 0) throw std::invalid_argument("plan: degenerate configuration");

  std::size_t iterations = config.iterations;
  if (config.extra_iterations_for_wide_actions && A >= 20) iterations += 2;

  std::vector<std::vector<double>> mean =
      previous_mean != nullptr ? shift_solution(*previous_mean) : std::vector<std::vector<double>>(H, std::vector<double>(A, 0.0));
  if (mean.size() != H || mean[0].size() != A) throw std::invalid_argument("plan: previous solution shape mismatch");
  std::vector<std::vector<double>> stddev(H, std::vector<double>(A, config.std_max));

  PlanResult result;
  std::vector<double> candidates(P * H * A);
  std::vector<double> z(P * latent), z_next, reward, prior_z, prior_action, values;
  std::vector<double> returns(P);
  std::vector<char> alive(P);
  std::vector<std::size_t> order(P);

  for (std::size_t iter = 0; iter < iterations; ++iter) {
    // Gaussian candidates around the running mean; rows [S, P).
    for (std::size_t p = S; p < P; ++p) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t a = 0; a < A; ++a) {
          const double v = mean[h][a] + stddev[h][a] * rng.normal();
          candidates[(p * H + h) * A + a] = std::clamp(v, -1.0, 1.0);
        }
      }
    }

    // Batched rollout; policy-prior rows sample their actions on the fly.
    for (std::size_t p = 0; p < P; ++p) {
      std::copy(z0.begin(), z0.end(), z.begin() + static_cast<std::ptrdiff_t>(p * latent));
    }
    std::fill(returns.begin(), returns.end(), 0.0);
    std::fill(alive.begin(), alive.end(), 1);
    double disc = 1.0;
    std::vector<double> step_actions(P * A);
    for (std::size_t h = 0; h < H; ++h) {
      if (S > 0) {
        prior_z.assign(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(S * latent));
        model.prior_sample(prior_z, S, rng, prior_action);
        for (std::size_t p = 0; p < S; ++p) {
          for (std::size_t a = 0; a < A; ++a) {
            candidates[(p * H + h) * A + a] = std::clamp(prior_action[p * A + a], -1.0, 1.0);
          }
        }
      }
      for (std::size_t p = 0; p < P; ++p) {
        std::copy(candidates.begin() + static_cast<std::ptrdiff_t>((p * H + h) * A),
                  candidates.begin() + static_cast<std::ptrdiff_t>((p * H + h + 1) * A),
                  step_actions.begin() + static_cast<std::ptrdiff_t>(p * A));
      }
      model.step(z, step_actions, P, z_next, reward);
      for (std::size_t p = 0; p < P; ++p) {
        if (!alive[p]) continue;
        if (!std::isfinite(reward[p]) || !finite_block(z_next, p * latent, latent)) {
          alive[p] = 0;
          continue;
        }
        returns[p] += disc * reward[p];
      }
      z.swap(z_next);
      disc *= config.discount;
    }
    model.terminal_value(z, P, values);
    std::size_t num_alive = 0;
    for (std::size_t p = 0; p < P; ++p) {
      if (alive[p] && std::isfinite(values[p])) {
        returns[p] += disc * values[p];
        ++num_alive;
      } else {
        returns[p] = kNegInf;
        ++result.num_flagged;
      }
    }
    if (num_alive == 0) throw std::runtime_error("plan: model rollout diverged");

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return returns[a] > returns[b]; });
    const std::size_t n_elite = std::min<std::size_t>(E, num_alive);
    result.best_return_trace.push_back(returns[order[0]]);
    double elite_mean = 0.0;
    for (std::size_t e = 0; e < n_elite; ++e) elite_mean += returns[order[e]];
    result.elite_mean_trace.push_back(elite_mean / static_cast<double>(n_elite));

    // exp(G / temperature) weights over the elites
    const double g_max = returns[order[0]];
    std::vector<double> w(n_elite);
    double w_sum = 0.0;
    for (std::size_t e = 0; e < n_elite; ++e) {
      w[e] = std::exp((returns[order[e]] - g_max) / config.temperature);
      w_sum += w[e];
    }
    for (double& v : w) v /= w_sum;

    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t a = 0; a < A; ++a) {
        double mu = 0.0;
        for (std::size_t e = 0; e < n_elite; ++e) mu += w[e] * candidates[(order[e] * H + h) * A + a];
        double var = 0.0;
        for (std::size_t e = 0; e < n_elite; ++e) {
          const double c = candidates[(order[e] * H + h) * A + a] - mu;
          var += w[e] * c * c;
        }
        mean[h][a] = mu;
        stddev[h][a] = std::clamp(std::sqrt(var), config.std_min, config.std_max);
      }
    }
  }

  result.action = mean[0];
  for (double& v : result.action) v = std::clamp(v, -1.0, 1.0);
  result.mean = std::move(mean);
  result.stddev = std::move(stddev);
  return result;
}

}  // namespace prism
