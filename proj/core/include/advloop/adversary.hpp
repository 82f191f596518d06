#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advloop/generator.hpp"
#include "advloop/sim.hpp"

namespace advloop::adversary {

/// Offline return estimator settings. Matches the environment's reward
/// constants by default so non-interacting replays score identically to a
/// live rollout.
struct ProxyConfig {
    double lambda_drive = 1.0;
    double speed_coef = 0.1;
    double r_success = 10.0;
    double r_crash = -10.0;
    double r_offroad = -10.0;
    double success_fraction = 0.95;
    double offroad_meters = 10.0;
    double gamma = 0.99;
};

struct SamplerConfig {
    double temperature = 0.1;
    /// Evaluation mode: pick the worst-case candidate deterministically.
    bool hard_min = false;
};

/// Route projections of one cached ego trace, computed once so a
/// K-candidate sweep only pays for the pairwise overlap tests.
struct EgoProfile {
    sim::Trajectory ego;
    std::vector<double> s;
    std::vector<double> speed;
    std::vector<double> min_offset;
    double route_total = 0.0;
};

EgoProfile make_ego_profile(const sim::Scenario& scenario,
                            const sim::Trajectory& ego);

/// Discounted return of the cached ego paired timewise against one
/// adversary plan: per transition, lambda_drive * delta_s + speed_coef * v,
/// then the first terminal in priority order crash > offroad > success adds
/// its bonus and stops the scan. An overlap at the very first sample returns
/// r_crash alone.
double proxy_return(const sim::Scenario& scenario, const EgoProfile& profile,
                    const sim::Trajectory& adversary_plan,
                    const ProxyConfig& cfg = {});

double proxy_return(const sim::Scenario& scenario, const sim::Trajectory& ego,
                    const sim::Trajectory& adversary_plan,
                    const ProxyConfig& cfg = {});

/// FIFO cache of recent ego responses, keyed by scenario id.
class HistoryBuffer {
  public:
    explicit HistoryBuffer(std::size_t capacity = 5) : capacity_(capacity) {}

    void push(const std::string& scenario_id, sim::Trajectory ego);
    bool empty(const std::string& scenario_id) const;
    std::size_t size(const std::string& scenario_id) const;
    std::size_t capacity() const { return capacity_; }
    const std::deque<sim::Trajectory>& entries(
        const std::string& scenario_id) const;

    nlohmann::json to_json() const;
    static HistoryBuffer from_json(const nlohmann::json& j);

  private:
    std::size_t capacity_;
    std::map<std::string, std::deque<sim::Trajectory>> entries_;
};

/// Mean proxy return of `candidate` over every cached ego response for the
/// scenario. Throws std::runtime_error when the scenario has no history
/// (callers warm the buffer up first).
double estimate_expected_return(const sim::Scenario& scenario,
                                const HistoryBuffer& buffer,
                                const sim::Trajectory& candidate,
                                const ProxyConfig& cfg = {});

/// Estimates for a whole candidate set in one pass.
std::vector<double> estimate_returns(const sim::Scenario& scenario,
                                     const HistoryBuffer& buffer,
                                     const generator::CandidateSet& set,
                                     const ProxyConfig& cfg = {});

struct Selection {
    std::size_t index = 0;
    std::vector<double> probabilities;
};

/// Boltzmann pick over estimated returns: P(k) proportional to
/// exp(-j_hat[k] / temperature). Hard-min mode (or temperature under 1e-12)
/// returns the argmin deterministically with a one-hot distribution, ties to
/// the lowest index.
Selection softmax_select(const std::vector<double>& j_hats,
                         const SamplerConfig& cfg, std::mt19937_64& rng);

/// Seeds the scenario's history with one rollout of `controller` against the
/// logged adversary when the buffer has nothing for it. Returns true when a
/// warm-up rollout ran.
bool warmup_if_empty(HistoryBuffer& buffer, const sim::Scenario& scenario,
                     sim::Controller& controller, std::uint64_t seed);

/// KL(current || reference) of the candidate distributions, averaged over
/// the given contexts.
double kl_to_ref(const generator::GeneratorParams& current,
                 const generator::GeneratorParams& reference,
                 const std::vector<generator::CandidateSet>& contexts);

/// KL divergence between two categorical distributions. Zero mass in p
/// contributes nothing; p > 0 where q == 0 yields +infinity.
double kl_categorical(const std::vector<double>& p,
                      const std::vector<double>& q);

/// Total variation distance, 0.5 * L1.
double tv_distance(const std::vector<double>& p,
                   const std::vector<double>& q);

} // namespace advloop::adversary
