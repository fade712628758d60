#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "prism/envs.hpp"
#include "prism/replay_buffer.hpp"

using namespace prism;

TEST_CASE("bouncing ball hand steps") {
  BouncingBallEnv env;

  // resting contact stays at rest with contact label
  env.set_state(0.0, 0.0);
  auto rest = env.step(std::vector<double>{0.0});
  CHECK(rest.obs[0] == 0.0);
  CHECK(rest.obs[1] == 0.0);
  CHECK(rest.mode_label == 1);

  // restitution law: incoming v = -2 reflects to +1.6 (thrust cancels gravity)
  env.set_state(0.01, -2.0);
  auto impact = env.step(std::vector<double>{9.81 / 15.0});
  CHECK(impact.obs[0] == 0.0);
  CHECK(impact.obs[1] == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(impact.mode_label == 1);

  // one semi-implicit Euler flight step from rest at y = 1
  env.set_state(1.0, 0.0);
  auto flight = env.step(std::vector<double>{0.0});
  CHECK(flight.obs[1] == doctest::Approx(-0.1962).epsilon(1e-12));
  CHECK(flight.obs[0] == doctest::Approx(1.0 - 0.02 * 0.1962).epsilon(1e-12));
  CHECK(flight.mode_label == 0);
  CHECK(flight.reward == doctest::Approx(-std::abs(flight.obs[0] - 1.0)).epsilon(1e-12));
}

TEST_CASE("bouncing ball dissipates energy across impacts") {
  BouncingBallEnv env;
  env.set_state(1.2, 0.0);
  const double g = 9.81;
  // post-impact mechanical energy is non-increasing from bounce to bounce
  double prev_energy = std::numeric_limits<double>::infinity();
  int impacts = 0;
  for (int t = 0; t < 2000; ++t) {
    auto r = env.step(std::vector<double>{0.0});
    if (r.mode_label == 1) {
      const double e_after = g * r.obs[0] + 0.5 * r.obs[1] * r.obs[1];
      CHECK(e_after <= prev_energy + 1e-9);
      prev_energy = e_after;
      ++impacts;
    }
  }
  CHECK(impacts > 5);
  // eventually settles into rest/contact
  CHECK(env.observation()[0] == 0.0);
  CHECK(env.observation()[1] == 0.0);
}

TEST_CASE("switched linear hand steps and tie break") {
  SwitchedLinearEnv env;
  env.set_state(0.0, 0.0);
  auto origin = env.step(std::vector<double>{0.0});
  CHECK(origin.obs[0] == 0.0);
  CHECK(origin.obs[1] == 0.0);
  CHECK(origin.mode_label == 0);  // x1 >= 0 ties to mode 0

  env.set_state(1.0, 0.0);
  auto m0 = env.step(std::vector<double>{0.0});
  CHECK(m0.obs[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m0.obs[1] == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(m0.mode_label == 0);

  env.set_state(-1.0, 0.0);
  auto m1 = env.step(std::vector<double>{0.0});
  CHECK(m1.obs[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(m1.obs[1] == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(m1.mode_label == 1);
  CHECK(m1.reward == doctest::Approx(-(1.0 + 0.05 * 0.05)).epsilon(1e-12));
}

TEST_CASE("switched linear mode labels re-derivable from observations") {
  SwitchedLinearEnv env;
  Rng rng(5);
  env.reset(rng);
  double prev_x0 = env.observation()[0];
  for (int t = 0; t < 200; ++t) {
    auto r = env.step(std::vector<double>{rng.uniform(-1.0, 1.0)});
    CHECK(r.mode_label == SwitchedLinearEnv::mode_of(prev_x0));
    prev_x0 = r.obs[0];
  }
}

TEST_CASE("hopper reward formulas") {
  CHECK(HopperToyEnv::reward_height(0.3, 0.3) == 0.0);
  CHECK(HopperToyEnv::reward_height(0.8, 0.3) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(HopperToyEnv::reward_height(0.2, 0.3) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(HopperToyEnv::reward_angle(0.0, M_PI / 4) == doctest::Approx(1.0));
  CHECK(HopperToyEnv::reward_angle(M_PI / 4, M_PI / 4) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("hopper reward matches an independent oracle") {
  // oracle written directly from the shaping formulas
  auto oracle = [](const std::vector<double>& obs_next, double thrust, double torque) {
    const double h = obs_next[0];
    const double theta = obs_next[2];
    const double vx = obs_next[4];
    const double h_term = 0.3;
    const double theta_term = M_PI / 4;
    const double r_height = h >= h_term ? h - h_term : -200.0 * (h - h_term) * (h - h_term);
    const double r_angle = 1.0 - (theta / theta_term) * (theta / theta_term);
    return vx + r_height + r_angle - 0.1 * (thrust * thrust + torque * torque);
  };
  HopperToyEnv env;
  Rng rng(7);
  env.reset(rng);
  for (int t = 0; t < 1000; ++t) {
    const double thrust = rng.uniform(-1.0, 1.0);
    const double torque = rng.uniform(-1.0, 1.0);
    auto r = env.step(std::vector<double>{thrust, torque});
    CHECK(r.reward == doctest::Approx(oracle(r.obs, thrust, torque)).epsilon(1e-12));
    if (r.done) env.reset(rng);
  }
}

TEST_CASE("hopper termination conditions") {
  HopperToyEnv env;
  env.set_state({0.1, 0.0, 0.0, 0.0, 0.0});
  // h < h_term/2 terminates once the spring cannot save it in one step
  auto r = env.step(std::vector<double>{-1.0, 0.0});
  CHECK(r.done);

  HopperToyEnv env2;
  env2.set_state({0.6, 0.0, 0.80, 0.0, 0.0});
  auto r2 = env2.step(std::vector<double>{0.0, 0.0});
  CHECK(r2.done);  // |theta| > pi/4
}

TEST_CASE("environments are deterministic under replay") {
  for (const char* name : {"bouncing_ball", "switched_linear", "hopper_toy"}) {
    auto env1 = make_env(name);
    auto env2 = make_env(name);
    Rng r1(11), r2(11);
    env1->reset(r1);
    env2->reset(r2);
    Rng act_rng(13);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> a(env1->spec().act_dim);
      for (double& v : a) v = act_rng.uniform(-1.0, 1.0);
      auto s1 = env1->step(a);
      auto s2 = env2->step(a);
      CHECK(s1.obs == s2.obs);
      CHECK(s1.reward == s2.reward);
      CHECK(s1.mode_label == s2.mode_label);
      if (s1.done) break;
    }
  }
}

TEST_CASE("multitask wrapper") {
  MultiTaskSet set = make_bouncing_ball_tasks();
  CHECK(set.envs.size() == 9);  // 3 gravities x 3 restitutions
  for (const auto& env : set.envs) {
    CHECK(env->spec().obs_dim == 2);
    CHECK(env->spec().act_dim == 1);
  }

  // distinct physics produce distinct trajectories from identical seeds
  Rng ra(17), rb(17);
  set.envs[0]->reset(ra);
  set.envs[8]->reset(rb);
  bool differs = false;
  for (int t = 0; t < 50; ++t) {
    auto s0 = set.envs[0]->step(std::vector<double>{0.3});
    auto s8 = set.envs[8]->step(std::vector<double>{0.3});
    differs = differs || s0.obs != s8.obs;
  }
  CHECK(differs);
}

TEST_CASE("replay buffer boundary arithmetic and task round trip") {
  ReplayBuffer buffer(1000);
  Rng rng(19);
  for (std::size_t task : {std::size_t{0}, std::size_t{5}}) {
    buffer.begin_episode(task);
    for (int t = 0; t < 10; ++t) {
      buffer.add_step({static_cast<double>(t), 0.0}, {0.1}, 1.0, false, 0);
    }
    buffer.end_episode({10.0, 0.0});
  }
  // one 10-step episode gives starts [0, 6] for horizon 3
  CHECK(buffer.num_valid_starts(3) == 14);  // 7 per episode
  ModelBatch batch = buffer.sample(32, 3, rng);
  CHECK(batch.obs.size() == 4);
  CHECK(batch.actions.size() == 3);
  for (std::size_t b = 0; b < 32; ++b) {
    const double start = batch.obs[0].at(b * 2);
    CHECK(start >= 0.0);
    CHECK(start <= 6.0);
    // windows are consecutive steps of one episode
    for (std::size_t t = 1; t <= 3; ++t) CHECK(batch.obs[t].at(b * 2) == start + static_cast<double>(t));
    CHECK((batch.task_ids[b] == 0 || batch.task_ids[b] == 5));
  }
}

TEST_CASE("replay buffer determinism and uniformity") {
  ReplayBuffer buffer(10000);
  for (int ep = 0; ep < 2; ++ep) {
    buffer.begin_episode(static_cast<std::size_t>(ep));
    for (int t = 0; t < 50; ++t) buffer.add_step({double(ep), double(t)}, {0.0}, 0.0, false, 0);
    buffer.end_episode({double(ep), 50.0});
  }
  Rng r1(23), r2(23);
  ModelBatch b1 = buffer.sample(16, 2, r1);
  ModelBatch b2 = buffer.sample(16, 2, r2);
  for (std::size_t t = 0; t < b1.obs.size(); ++t) {
    for (std::size_t i = 0; i < b1.obs[t].numel(); ++i) CHECK(b1.obs[t].at(i) == b2.obs[t].at(i));
  }

  // two equal-length episodes are sampled 50% +- 1%
  Rng rng(29);
  std::size_t first = 0;
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n / 16; ++i) {
    ModelBatch batch = buffer.sample(16, 2, rng);
    for (std::size_t b = 0; b < 16; ++b) {
      if (batch.obs[0].at(b * 2) == 0.0) ++first;
    }
  }
  const double p = static_cast<double>(first) / static_cast<double>((n / 16) * 16);
  CHECK(std::abs(p - 0.5) < 0.01);
}

TEST_CASE("replay buffer eviction and insufficient data") {
  ReplayBuffer buffer(25);
  for (int ep = 0; ep < 3; ++ep) {
    buffer.begin_episode(0);
    for (int t = 0; t < 10; ++t) buffer.add_step({double(ep)}, {0.0}, 0.0, false, 0);
    buffer.end_episode({double(ep)});
  }
  CHECK(buffer.size() <= 25);
  CHECK(buffer.num_episodes() == 2);  // oldest evicted first
  CHECK(buffer.episodes().front().steps.front().obs[0] == 1.0);

  ReplayBuffer empty(100);
  Rng rng(31);
  CHECK_THROWS_AS(empty.sample(4, 3, rng), std::runtime_error);
  empty.begin_episode(0);
  empty.add_step({0.0}, {0.0}, 0.0, false, 0);
  empty.end_episode({1.0});
  CHECK_THROWS_AS(empty.sample(4, 3, rng), std::runtime_error);
}

TEST_CASE("trajectory csv export") {
  std::vector<EpisodeRecord> episodes(1);
  episodes[0].task_id = 2;
  episodes[0].steps.push_back({{1.0, 2.0}, {0.5}, -0.25, false, 1});
  episodes[0].steps.push_back({{3.0, 4.0}, {-0.5}, 0.75, true, 0});
  episodes[0].final_obs = {5.0, 6.0};
  episodes[0].complete = true;

  const std::string path = std::filesystem::temp_directory_path() / "prism_traj_test.csv";
  write_trajectory_csv(path, episodes);
  std::ifstream in(path);
  std::string header, row0, row1;
  std::getline(in, header);
  std::getline(in, row0);
  std::getline(in, row1);
  CHECK(header == "step,obs0,obs1,action0,reward,done,mode_label,task_id");
  CHECK(row0 == "0,1,2,0.5,-0.25,0,1,2");
  CHECK(row1 == "1,3,4,-0.5,0.75,1,0,2");
  std::filesystem::remove(path);
}
