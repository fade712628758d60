#include "prism/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prism {

namespace {

double clamp_action(double a) { return std::clamp(a, -1.0, 1.0); }

}  // namespace

BouncingBallEnv::BouncingBallEnv(BouncingBallParams params) : params_(params) {
  spec_ = {"bouncing_ball", 2, 1, params.dt, params.max_steps, 2};
}

std::vector<double> BouncingBallEnv::reset(Rng& rng) {
  height_ = rng.uniform(0.5, 1.5);
  velocity_ = rng.uniform(-0.5, 0.5);
  last_mode_ = 0;
  return observation();
}

StepResult BouncingBallEnv::step(std::span<const double> action) {
  if (action.size() != 1) throw std::invalid_argument("bouncing_ball: expected a 1-dim action");
  const double a = clamp_action(action[0]);
  const double accel = params_.thrust_gain * a - params_.gravity;

  StepResult out;
  if (height_ <= 0.0 && velocity_ == 0.0 && accel <= 0.0) {
    // resting contact: the ground supports the ball
    height_ = 0.0;
    out.mode_label = 1;
  } else {
    // semi-implicit Euler flight step
    velocity_ += params_.dt * accel;
    height_ += params_.dt * velocity_;
    if (height_ < 0.0) {
      height_ = 0.0;
      velocity_ = -params_.restitution * velocity_;
      if (velocity_ < params_.rest_speed) velocity_ = 0.0;  // settle
      out.mode_label = 1;
    } else {
      out.mode_label = 0;
    }
  }
  last_mode_ = out.mode_label;
  out.obs = observation();
  out.reward = -std::abs(height_ - params_.target_height);
  out.done = false;
  return out;
}

std::unique_ptr<Env> BouncingBallEnv::clone() const { return std::make_unique<BouncingBallEnv>(*this); }

int BouncingBallEnv::current_mode() const { return last_mode_; }

SwitchedLinearEnv::SwitchedLinearEnv(SwitchedLinearParams params) : params_(params) {
  spec_ = {"switched_linear", 2, 1, params.dt, params.max_steps, 2};
}

std::vector<double> SwitchedLinearEnv::reset(Rng& rng) {
  x_ = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
  return observation();
}

StepResult SwitchedLinearEnv::step(std::span<const double> action) {
  if (action.size() != 1) throw std::invalid_argument("switched_linear: expected a 1-dim action");
  const double u = clamp_action(action[0]);
  const int mode = current_mode();
  // A0 = [[0,1],[-4,-0.2]] (oscillatory), A1 = [[0,1],[-1,-2]] (damped)
  double dx0, dx1;
  if (mode == 0) {
    dx0 = x_[1];
    dx1 = -4.0 * x_[0] - 0.2 * x_[1] + u;
  } else {
    dx0 = x_[1];
    dx1 = -1.0 * x_[0] - 2.0 * x_[1] + u;
  }
  x_[0] += params_.dt * dx0;
  x_[1] += params_.dt * dx1;

  StepResult out;
  out.obs = observation();
  out.reward = -(x_[0] * x_[0] + x_[1] * x_[1]);
  out.done = false;
  out.mode_label = mode;
  return out;
}

std::unique_ptr<Env> SwitchedLinearEnv::clone() const { return std::make_unique<SwitchedLinearEnv>(*this); }

HopperToyEnv::HopperToyEnv(HopperToyParams params) : params_(params) {
  spec_ = {"hopper_toy", 5, 2, params.dt, params.max_steps, 2};
  state_ = {0.6, 0.0, 0.0, 0.0, 0.0};
}

double HopperToyEnv::reward_height(double h, double h_term) {
  return h >= h_term ? h - h_term : -200.0 * (h - h_term) * (h - h_term);
}

double HopperToyEnv::reward_angle(double theta, double theta_term) {
  const double ratio = theta / theta_term;
  return 1.0 - ratio * ratio;
}

std::vector<double> HopperToyEnv::reset(Rng& rng) {
  state_ = {rng.uniform(0.45, 0.8), rng.uniform(-0.2, 0.2), rng.uniform(-0.15, 0.15), rng.uniform(-0.2, 0.2), 0.0};
  return observation();
}

StepResult HopperToyEnv::step(std::span<const double> action) {
  if (action.size() != 2) throw std::invalid_argument("hopper_toy: expected a 2-dim action");
  const double thrust = clamp_action(action[0]);
  const double torque = clamp_action(action[1]);
  double& h = state_[0];
  double& vh = state_[1];
  double& theta = state_[2];
  double& omega = state_[3];
  double& vx = state_[4];

  const bool stance = h <= params_.stance_height;
  double accel = -params_.gravity;
  if (stance) {
    // spring-damper leg with actuated thrust
    accel += params_.spring * (params_.stance_height - h) - params_.damping * vh + params_.thrust_gain * thrust;
    vx += params_.dt * (params_.drive_gain * thrust - params_.drag * vx);
  } else {
    vx += params_.dt * (-params_.drag * vx);
  }
  vh += params_.dt * accel;
  h += params_.dt * vh;
  if (h < 0.0) {
    h = 0.0;
    vh = 0.0;
  }
  omega += params_.dt * (params_.torque_gain * torque - params_.angular_damping * omega);
  theta += params_.dt * omega;

  StepResult out;
  out.obs = observation();
  out.reward = vx + reward_height(h, params_.h_term) + reward_angle(theta, params_.theta_term) -
               0.1 * (thrust * thrust + torque * torque);
  out.done = h < 0.5 * params_.h_term || std::abs(theta) > params_.theta_term;
  out.mode_label = stance ? 1 : 0;
  return out;
}

std::unique_ptr<Env> HopperToyEnv::clone() const { return std::make_unique<HopperToyEnv>(*this); }

MultiTaskSet make_bouncing_ball_tasks(const std::vector<double>& gravities, const std::vector<double>& restitutions) {
  MultiTaskSet set;
  const EnvSpec* reference = nullptr;
  for (double g : gravities) {
    for (double e : restitutions) {
      BouncingBallParams params;
      params.gravity = g;
      params.restitution = e;
      auto env = std::make_unique<BouncingBallEnv>(params);
      if (reference == nullptr) {
        reference = &env->spec();
      } else if (env->spec().obs_dim != reference->obs_dim || env->spec().act_dim != reference->act_dim) {
        throw std::invalid_argument("multitask: inconsistent dims across tasks");
      }
      set.labels.push_back("g=" + std::to_string(g) + ",e=" + std::to_string(e));
      set.envs.push_back(std::move(env));
    }
  }
  return set;
}

std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "bouncing_ball") return std::make_unique<BouncingBallEnv>();
  if (name == "switched_linear") return std::make_unique<SwitchedLinearEnv>();
  if (name == "hopper_toy") return std::make_unique<HopperToyEnv>();
  throw std::invalid_argument("unknown environment '" + name + "'");
}

}  // namespace prism
