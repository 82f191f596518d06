#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advloop/adversary.hpp"
#include "advloop/generator.hpp"
#include "advloop/ipl.hpp"
#include "advloop/policy.hpp"
#include "advloop/rl.hpp"
#include "advloop/sim.hpp"

namespace advloop::game {

enum class Algorithm { grpo, ppo };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);

/// How the opponent's plan is chosen for an evaluation episode.
enum class AdversaryMode {
    /// The logged trajectory, untouched.
    replay,
    /// A draw from the pretrained scorer's softmax (logit sampling).
    prior_sample,
    /// Boltzmann pick over estimated returns against a reference ego
    /// rollout (energy sampling).
    energy_sample,
    /// Energy sampling with the fine-tuned scorer as the prior: the two
    /// log-densities add before the pick.
    ipl_energy_sample,
    /// Deterministic worst estimated return.
    hard_min,
};

inline const std::vector<AdversaryMode> kAllAdversaryModes = {
    AdversaryMode::replay, AdversaryMode::prior_sample,
    AdversaryMode::energy_sample, AdversaryMode::ipl_energy_sample,
    AdversaryMode::hard_min};

std::string to_string(AdversaryMode m);
AdversaryMode adversary_mode_from_string(const std::string& name);

struct TrainConfig {
    Algorithm algorithm = Algorithm::grpo;
    /// Environment-step budget; the loop stops at the first episode
    /// boundary at or past it.
    std::int64_t max_steps = 200000;
    /// Run one fine-tuning block after every this many ego updates.
    int adversary_update_frequency = 5;
    /// Preference-learning rounds per block.
    int ipl_rounds_per_block = 5;
    /// Turns the fine-tuning blocks off entirely (sampling-only run).
    bool ipl_enabled = true;
    /// Curriculum: an episode replays the logged opponent with probability
    /// max(floor, schedule), where the schedule anneals linearly from 1 to
    /// the floor over the first anneal_fraction of max_steps.
    double probability_floor = 0.1;
    double anneal_fraction = 0.2;
    /// Boltzmann temperature for attack selection during training.
    double sampler_temperature = 0.1;
    std::uint64_t seed = 0;
    /// Cached ego responses kept per scenario.
    int history_capacity = 5;
    /// Checkpoint cadence, in ego updates.
    int checkpoint_every_updates = 10;
    /// When positive, additionally snapshot {policy,generator,meta} into
    /// run_dir/checkpoints/update_<n>/ every this many ego updates, so a
    /// finished run can be re-evaluated at intermediate budgets.
    int keep_checkpoint_every = 0;
    /// Worker threads for rollout collection inside one phase (1 = serial).
    int jobs = 1;
    /// Hash of the resolved run configuration, embedded in every output.
    std::string config_hash;

    rl::GrpoConfig grpo;
    rl::PpoConfig ppo;
    policy::NetConfig net;
    generator::GeneratorConfig generator;
    adversary::ProxyConfig proxy;
    ipl::IplConfig ipl;
    sim::BicycleParams bicycle;
    sim::RewardConfig reward;
    sim::ObservationConfig observation;

    /// Throws std::invalid_argument on out-of-range fields.
    void validate() const;
};

/// Everything the loop needs to continue from a cut, plus the bookkeeping
/// that lets the metrics streams be truncated back to the cut point.
struct TrainState {
    policy::PolicyNet net;
    policy::Adam adam;
    generator::GeneratorParams gen;
    generator::GeneratorParams gen_ref;
    adversary::HistoryBuffer history;
    std::int64_t env_steps = 0;
    std::int64_t episode_index = 0;
    int ego_updates = 0;
    int ipl_rounds = 0;
    std::int64_t metrics_lines = 0;
    std::int64_t decisions_lines = 0;
};

/// Atomic whole-state checkpoint under dir/{policy,generator,buffer,rng,
/// meta}.json. Readers get an explicit error on version or checksum
/// mismatches.
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                     const TrainConfig& cfg);
TrainState load_checkpoint(const std::filesystem::path& dir);
bool checkpoint_exists(const std::filesystem::path& dir);

struct TrainResult {
    std::int64_t env_steps = 0;
    int ego_updates = 0;
    int ipl_rounds = 0;
    /// True when a non-finite parameter stopped the run; the run directory
    /// still holds the last good checkpoint.
    bool nan_halt = false;
    std::string halt_reason;
};

/// The alternating min-max loop. Inner phase: curriculum-gated episodes
/// against sampled attack plans feed the on-policy learner (group updates
/// for grpo, a fixed-size buffer for ppo). Outer phase: after every
/// adversary_update_frequency ego updates, ipl_rounds_per_block rounds of
/// preference fine-tuning move the scorer. Appends one metrics line per ego
/// update and per fine-tuning round to run_dir/metrics.jsonl and one line
/// per opponent-plan decision to run_dir/decisions.jsonl. With resume=true,
/// continues from
/// the checkpoint in run_dir and truncates both streams to the checkpointed
/// line counts first, so an interrupted run replays to a byte-identical
/// stream. Throws std::invalid_argument on an empty corpus or bad config.
TrainResult train(const TrainConfig& cfg,
                  const std::vector<sim::Scenario>& corpus,
                  const std::filesystem::path& run_dir, bool resume = false);

/// A named way to build the ego controller for evaluation.
struct EvalPolicy {
    std::string name;
    std::function<std::unique_ptr<sim::Controller>()> make;
};

EvalPolicy replay_eval_policy(const sim::BicycleParams& params = {});
EvalPolicy net_eval_policy(std::string name, const policy::PolicyNet& net,
                           bool stochastic = false);

struct EvalConfig {
    int episodes_per_cell = 50;
    double sampler_temperature = 0.1;
    std::uint64_t seed = 0;
    /// Worker threads across cells (1 = serial; results are positional, so
    /// the output is identical at any worker count).
    int jobs = 1;
    generator::GeneratorConfig generator;
    adversary::ProxyConfig proxy;
    sim::BicycleParams bicycle;
    sim::RewardConfig reward;
    sim::ObservationConfig observation;
};

struct EvalCell {
    std::string policy;
    AdversaryMode adversary = AdversaryMode::replay;
    double rc = 0.0;
    double crash = 0.0;
    double reward = 0.0;
    double cost = 0.0;
    double se_rc = 0.0;
    double se_crash = 0.0;
    double se_reward = 0.0;
    double se_cost = 0.0;
    int episodes = 0;
};

/// Two-stage protocol per cell episode: when the mode conditions on the
/// ego, a reference rollout against the logged plan is taken first and the
/// attack is chosen against it; the reported episode is then re-rolled
/// against the chosen plan. Deterministic in (config seed, policy name,
/// mode, episode index). gen_tuned drives ipl_energy_sample; gen_prior
/// drives prior_sample.
std::vector<EvalCell> evaluate_cross(
    const std::vector<EvalPolicy>& policies,
    const std::vector<AdversaryMode>& modes,
    const std::vector<sim::Scenario>& corpus,
    const generator::GeneratorParams& gen_tuned,
    const generator::GeneratorParams& gen_prior, const EvalConfig& cfg);

/// Header exactly: policy,adversary,rc,crash,reward,cost,se_rc,se_crash,
/// se_reward,se_cost.
void write_eval_csv(const std::filesystem::path& path,
                    const std::vector<EvalCell>& cells);

struct BoundReport {
    /// Mean discounted return under plans sampled from the tuned scorer.
    double robust_return = 0.0;
    /// Mean divergence of the tuned scorer from the frozen reference over
    /// the evaluated candidate sets, nats.
    double mean_kl = 0.0;
    /// gamma * v_max * sqrt(2) / (1 - gamma) * sqrt(mean_kl).
    double penalty = 0.0;
    /// robust_return - penalty.
    double certified_bound = 0.0;
    /// Mean discounted return under plans sampled from the reference
    /// scorer, with the same random streams as robust_return.
    double replay_return = 0.0;
    /// Analytic per-step reward bound and its discounted sum.
    double r_max = 0.0;
    double v_max = 0.0;
    int episodes = 0;
};

/// Certified-lower-bound monitor. r_max is computed from the reward and
/// kinematic configs (max progress per step + speed term + terminal bonus),
/// never measured empirically.
BoundReport bound_report(const policy::PolicyNet& net,
                         const generator::GeneratorParams& gen_tuned,
                         const generator::GeneratorParams& gen_ref,
                         const std::vector<sim::Scenario>& corpus,
                         int episodes, const EvalConfig& cfg);

nlohmann::json bound_report_to_json(const BoundReport& report);

} // namespace advloop::game
