#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "prism/rng.hpp"
#include "prism/world_model.hpp"

namespace prism {

struct TransitionRecord {
  std::vector<double> obs;     // observation before the action
  std::vector<double> action;
  double reward = 0.0;
  bool done = false;
  int mode_label = 0;
};

struct EpisodeRecord {
  std::size_t task_id = 0;
  std::vector<TransitionRecord> steps;
  std::vector<double> final_obs;
  bool complete = false;
};

// Ring of episodes with uniform sampling of length-(horizon+1) observation
// windows that never cross episode boundaries. Oldest episodes are evicted
// first once the transition count exceeds the capacity. Single writer, any
// number of readers between writes.
class ReplayBuffer {
public:
  explicit ReplayBuffer(std::size_t capacity = 1000000) : capacity_(capacity) {}

  void begin_episode(std::size_t task_id);
  void add_step(std::vector<double> obs, std::vector<double> action, double reward, bool done, int mode_label);
  void end_episode(std::vector<double> final_obs);

  std::size_t size() const { return total_transitions_; }           // stored transitions
  std::size_t num_episodes() const { return episodes_.size(); }
  std::size_t num_valid_starts(std::size_t horizon) const;

  ModelBatch sample(std::size_t batch_size, std::size_t horizon, Rng& rng) const;

  const std::deque<EpisodeRecord>& episodes() const { return episodes_; }

private:
  void evict();

  std::size_t capacity_;
  std::deque<EpisodeRecord> episodes_;
  std::size_t total_transitions_ = 0;
  bool episode_open_ = false;
};

// CSV export: step, obs..., action..., reward, done, mode_label, task_id.
void write_trajectory_csv(const std::string& path, const std::vector<EpisodeRecord>& episodes);

}  // namespace prism
