#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prism/rng.hpp"

namespace prism {

struct EnvSpec {
  std::string name;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  double dt = 0.02;
  std::size_t max_steps = 1000;
  std::size_t num_modes = 2;
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;       // physical termination, not the step limit
  int mode_label = 0;      // ground-truth hybrid mode
};

// Deterministic hybrid state machines: given (seed, action sequence) a
// replay reproduces the stored trajectory exactly.
class Env {
public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual std::vector<double> reset(Rng& rng) = 0;
  virtual StepResult step(std::span<const double> action) = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
  virtual int current_mode() const = 0;
  // Additive state kick for the gate-probe experiment.
  virtual void perturb(double magnitude) = 0;
  virtual std::vector<double> observation() const = 0;
};

struct BouncingBallParams {
  double gravity = 9.81;
  double restitution = 0.8;
  double thrust_gain = 15.0;
  double dt = 0.02;
  double target_height = 1.0;
  double rest_speed = 0.1;  // post-impact speeds below this settle to rest
  std::size_t max_steps = 1000;
};

// Vertical ball under gravity and thrust; impacts reflect velocity with the
// restitution coefficient. Mode 1 on contact/impact steps, 0 in flight.
class BouncingBallEnv : public Env {
public:
  explicit BouncingBallEnv(BouncingBallParams params = {});
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(Rng& rng) override;
  StepResult step(std::span<const double> action) override;
  std::unique_ptr<Env> clone() const override;
  int current_mode() const override;
  void perturb(double magnitude) override { velocity_ += magnitude; }
  std::vector<double> observation() const override { return {height_, velocity_}; }

  void set_state(double height, double velocity) {
    height_ = height;
    velocity_ = velocity;
  }

private:
  BouncingBallParams params_;
  EnvSpec spec_;
  double height_ = 1.0;
  double velocity_ = 0.0;
  int last_mode_ = 0;
};

struct SwitchedLinearParams {
  double dt = 0.05;
  std::size_t max_steps = 1000;
};

// Two linear regimes selected by the sign of x1; mode 0 when x1 >= 0.
class SwitchedLinearEnv : public Env {
public:
  explicit SwitchedLinearEnv(SwitchedLinearParams params = {});
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(Rng& rng) override;
  StepResult step(std::span<const double> action) override;
  std::unique_ptr<Env> clone() const override;
  int current_mode() const override { return x_[0] >= 0.0 ? 0 : 1; }
  void perturb(double magnitude) override {
    x_[0] = -x_[0] + magnitude;  // kick across the switching surface
  }
  std::vector<double> observation() const override { return {x_[0], x_[1]}; }

  void set_state(double x0, double x1) { x_ = {x0, x1}; }
  static int mode_of(double x0) { return x0 >= 0.0 ? 0 : 1; }

private:
  SwitchedLinearParams params_;
  EnvSpec spec_;
  std::vector<double> x_{0.0, 0.0};
};

struct HopperToyParams {
  double dt = 0.02;
  double gravity = 9.81;
  double stance_height = 0.5;    // leg engages below this height
  double spring = 60.0;
  double damping = 4.0;
  double thrust_gain = 8.0;
  double torque_gain = 4.0;
  double angular_damping = 1.0;
  double drive_gain = 1.5;       // stance-phase forward drive from thrust
  double drag = 0.1;
  double h_term = 0.3;
  double theta_term = 0.7853981633974483;  // pi/4
  std::size_t max_steps = 1000;
};

// Planar one-leg hopper sketch: ballistic flight / spring-damper stance with
// the reward shaping v_x + R_height + R_angle - 0.1 |a|^2. Terminates when
// the body drops below h_term / 2 or tips past theta_term.
class HopperToyEnv : public Env {
public:
  explicit HopperToyEnv(HopperToyParams params = {});
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(Rng& rng) override;
  StepResult step(std::span<const double> action) override;
  std::unique_ptr<Env> clone() const override;
  int current_mode() const override { return state_[0] <= params_.stance_height ? 1 : 0; }
  void perturb(double magnitude) override {
    state_[1] += magnitude;
    state_[3] += 0.5 * magnitude;
  }
  std::vector<double> observation() const override { return state_; }

  static double reward_height(double h, double h_term);
  static double reward_angle(double theta, double theta_term);
  void set_state(const std::vector<double>& s) { state_ = s; }

private:
  HopperToyParams params_;
  EnvSpec spec_;
  std::vector<double> state_;  // h, vertical velocity, theta, angular velocity, v_x
};

// A family of bouncing-ball tasks over perturbed physical constants; every
// task shares the same observation/action dims.
struct MultiTaskSet {
  std::vector<std::unique_ptr<Env>> envs;
  std::vector<std::string> labels;
};

MultiTaskSet make_bouncing_ball_tasks(const std::vector<double>& gravities = {4.0, 9.81, 15.0},
                                      const std::vector<double>& restitutions = {0.5, 0.8, 0.95});

std::unique_ptr<Env> make_env(const std::string& name);

}  // namespace prism
