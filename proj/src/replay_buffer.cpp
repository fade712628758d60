#include "prism/replay_buffer.hpp"

#include <fstream>
#include <stdexcept>

namespace prism {

void ReplayBuffer::begin_episode(std::size_t task_id) {
  if (episode_open_) throw std::runtime_error("ReplayBuffer: previous episode still open");
  episodes_.push_back(EpisodeRecord{task_id, {}, {}, false});
  episode_open_ = true;
}

void ReplayBuffer::add_step(std::vector<double> obs, std::vector<double> action, double reward, bool done,
                            int mode_label) {
  if (!episode_open_) throw std::runtime_error("ReplayBuffer: no open episode");
  episodes_.back().steps.push_back({std::move(obs), std::move(action), reward, done, mode_label});
  total_transitions_ += 1;
  evict();
}

void ReplayBuffer::end_episode(std::vector<double> final_obs) {
  if (!episode_open_) throw std::runtime_error("ReplayBuffer: no open episode");
  episodes_.back().final_obs = std::move(final_obs);
  episodes_.back().complete = true;
  episode_open_ = false;
  if (episodes_.back().steps.empty()) {
    episodes_.pop_back();
  }
}

void ReplayBuffer::evict() {
  while (total_transitions_ > capacity_ && episodes_.size() > 1) {
    total_transitions_ -= episodes_.front().steps.size();
    episodes_.pop_front();
  }
}

std::size_t ReplayBuffer::num_valid_starts(std::size_t horizon) const {
  // A window needs horizon+1 step observations, so an episode with T steps
  // offers starts [0, T - horizon - 1].
  std::size_t total = 0;
  for (const auto& ep : episodes_) {
    if (!ep.complete) continue;
    if (ep.steps.size() > horizon) total += ep.steps.size() - horizon;
  }
  return total;
}

ModelBatch ReplayBuffer::sample(std::size_t batch_size, std::size_t horizon, Rng& rng) const {
  const std::size_t total = num_valid_starts(horizon);
  if (total == 0) {
    throw std::runtime_error("ReplayBuffer: no episode long enough for horizon " + std::to_string(horizon));
  }
  const std::size_t obs_dim = episodes_.front().steps.front().obs.size();
  const std::size_t act_dim = episodes_.front().steps.front().action.size();

  std::vector<std::vector<double>> obs(horizon + 1, std::vector<double>(batch_size * obs_dim));
  std::vector<std::vector<double>> actions(horizon, std::vector<double>(batch_size * act_dim));
  std::vector<std::vector<double>> rewards(horizon, std::vector<double>(batch_size));
  ModelBatch batch;
  batch.not_done.assign(horizon, std::vector<double>(batch_size, 1.0));
  batch.mode_labels.assign(horizon, std::vector<int>(batch_size, 0));
  batch.task_ids.resize(batch_size);

  for (std::size_t b = 0; b < batch_size; ++b) {
    std::size_t pick = static_cast<std::size_t>(rng.integer(total));
    const EpisodeRecord* episode = nullptr;
    std::size_t start = 0;
    for (const auto& ep : episodes_) {
      if (!ep.complete || ep.steps.size() <= horizon) continue;
      const std::size_t starts = ep.steps.size() - horizon;
      if (pick < starts) {
        episode = &ep;
        start = pick;
        break;
      }
      pick -= starts;
    }
    batch.task_ids[b] = episode->task_id;
    for (std::size_t t = 0; t <= horizon; ++t) {
      const std::vector<double>& o = episode->steps[start + t].obs;
      std::copy(o.begin(), o.end(), obs[t].begin() + static_cast<std::ptrdiff_t>(b * obs_dim));
    }
    for (std::size_t t = 0; t < horizon; ++t) {
      const auto& s = episode->steps[start + t];
      std::copy(s.action.begin(), s.action.end(), actions[t].begin() + static_cast<std::ptrdiff_t>(b * act_dim));
      rewards[t][b] = s.reward;
      batch.not_done[t][b] = s.done ? 0.0 : 1.0;
      batch.mode_labels[t][b] = s.mode_label;
    }
  }

  for (std::size_t t = 0; t <= horizon; ++t) {
    batch.obs.push_back(Tensor::from_data({batch_size, obs_dim}, std::move(obs[t])));
  }
  for (std::size_t t = 0; t < horizon; ++t) {
    batch.actions.push_back(Tensor::from_data({batch_size, act_dim}, std::move(actions[t])));
    batch.rewards.push_back(Tensor::from_data({batch_size}, std::move(rewards[t])));
  }
  return batch;
}

void write_trajectory_csv(const std::string& path, const std::vector<EpisodeRecord>& episodes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trajectory_csv: cannot open " + path);
  if (episodes.empty()) {
    out << "step\n";
    return;
  }
  const std::size_t obs_dim = episodes.front().steps.front().obs.size();
  const std::size_t act_dim = episodes.front().steps.front().action.size();
  out << "step";
  for (std::size_t i = 0; i < obs_dim; ++i) out << ",obs" << i;
  for (std::size_t i = 0; i < act_dim; ++i) out << ",action" << i;
  out << ",reward,done,mode_label,task_id\n";
  out.precision(17);
  for (const auto& ep : episodes) {
    for (std::size_t t = 0; t < ep.steps.size(); ++t) {
      const auto& s = ep.steps[t];
      out << t;
      for (double v : s.obs) out << "," << v;
      for (double v : s.action) out << "," << v;
      out << "," << s.reward << "," << (s.done ? 1 : 0) << "," << s.mode_label << "," << ep.task_id << "\n";
    }
  }
}

}  // namespace prism
