#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "advloop/policy.hpp"
#include "advloop/sim.hpp"

namespace advloop::rl {

struct GrpoConfig {
    /// Episodes rolled per group; all share the scenario and attack plan.
    int group_size = 6;
    double gamma = 0.99;
    double clip = 0.2;
    double kl_beta = 0.001;
    int epochs = 10;
    double learning_rate = 3e-5;
    double adv_clip = 5.0;
};

struct PpoConfig {
    double gamma = 0.99;
    double lam = 0.95;
    double clip = 0.2;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    int epochs = 10;
    int minibatch = 256;
    double learning_rate = 3e-5;
    /// Environment steps gathered before each update.
    int update_timesteps = 4096;
};

struct UpdateStats {
    /// Clipped-surrogate part of the loss, last epoch.
    double surrogate = 0.0;
    /// Mean k3 divergence estimate against the pre-update policy, last
    /// epoch.
    double kl = 0.0;
    double entropy = 0.0;
    double value_loss = 0.0;
    double grad_norm = 0.0;
    std::size_t steps = 0;
};

/// Group-relative advantages, time-aligned: discounted returns-to-go are
/// zero-padded to the longest episode, normalized per time index across the
/// group (population std + 1e-8), clipped to +-adv_clip, and returned only
/// for real steps.
std::vector<std::vector<double>> grpo_advantages(
    const std::vector<std::vector<double>>& rewards, double gamma,
    double adv_clip = 5.0);

/// Critic-free clipped-ratio update over one episode group with a k3
/// divergence penalty toward the sampling policy. One optimizer step per
/// epoch over the full group.
UpdateStats grpo_update(policy::PolicyNet& net, policy::Adam& adam,
                        const std::vector<sim::RolloutResult>& group,
                        const GrpoConfig& cfg);

/// Generalized advantage estimation over one finished episode; the value
/// beyond the last step is zero. Returns {advantages, value targets}.
std::pair<std::vector<double>, std::vector<double>> gae(
    const std::vector<double>& rewards, const std::vector<double>& values,
    double gamma, double lam);

struct Transition {
    std::vector<double> obs;
    std::array<double, 2> pre_squash{};
    double old_log_prob = 0.0;
    double advantage = 0.0;
    double value_target = 0.0;
};

/// Flattens episodes into transitions: per-episode GAE, then whole-batch
/// advantage normalization (population std + 1e-8).
std::vector<Transition> build_ppo_batch(
    const std::vector<sim::RolloutResult>& episodes, const PpoConfig& cfg);

/// Clipped-surrogate update with a value head and an entropy bonus, over
/// shuffled minibatches for cfg.epochs passes.
UpdateStats ppo_update(policy::PolicyNet& net, policy::Adam& adam,
                       const std::vector<Transition>& batch,
                       const PpoConfig& cfg, std::mt19937_64& rng);

} // namespace advloop::rl
