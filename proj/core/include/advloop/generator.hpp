#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "advloop/sim.hpp"

namespace advloop::generator {

struct GeneratorConfig {
    /// Library size K per scenario.
    int num_candidates = 32;
    /// Candidate speeds stay below this multiple of the logged peak speed.
    double speed_cap_factor = 1.5;
    /// Candidates closer than this (max pointwise distance) are duplicates.
    double dedup_distance = 0.5;
    /// Per-tick heading change bound, radians.
    double max_step_yaw = 0.35;
};

/// Feature vector layout, in order:
///   0: indicator, candidate is identical to the logged trajectory
///   1: endpoint arc position on the ego route / route length
///   2: endpoint |lateral offset| to the ego route / 10
///   3: min distance from any sample to the ego route / 20
///   4: mean speed / 25
///   5: mean |heading change| per meter, scaled by 10
///   6: lateral offset variance against the logged path / 4
inline constexpr int kFeatureDim = 7;
using Features = std::array<double, kFeatureDim>;

struct Candidate {
    sim::Trajectory trajectory;
    Features features{};
};

struct CandidateSet {
    std::string scenario_id;
    std::vector<Candidate> candidates;
};

/// Scorer parameters: one weight per feature, logits = w . f(candidate).
struct GeneratorParams {
    Features weights{};
    std::uint64_t synthesis_seed = 0;
    GeneratorConfig config;
};

/// The pretrained prior: the logged candidate (feature 0 == 1) gets logit
/// +2, everything else 0.
GeneratorParams pretrained_params(std::uint64_t synthesis_seed = 0,
                                  GeneratorConfig config = {});

/// Deep copy kept as the frozen anchor G_ref.
GeneratorParams freeze_reference(const GeneratorParams& params);

Features candidate_features(const sim::Scenario& scenario,
                            const sim::Trajectory& candidate);

/// Builds exactly K kinematically plausible alternative futures for the
/// scenario's adversary agent: candidate 0 reproduces the logged trajectory;
/// the rest sweep speed-warped, lane-shifted, and ego-route-intercepting
/// variants. Near-duplicates are dropped and backfilled with jittered
/// variants. Deterministic in (scenario, seed).
CandidateSet synthesize_candidates(const sim::Scenario& scenario,
                                   const GeneratorConfig& config,
                                   std::uint64_t seed);

/// Numerically stable log softmax.
std::vector<double> log_softmax(std::vector<double> logits);

std::vector<double> scorer_logits(const GeneratorParams& params,
                                  const CandidateSet& set);

/// log P(candidate index | set) under the scorer's softmax.
/// Throws std::out_of_range for a bad index.
double log_prob(const GeneratorParams& params, const CandidateSet& set,
                std::size_t index);

/// Draws an index from softmax(logits / temperature). Temperatures at or
/// below 1e-9 degenerate to the argmax (ties to the lowest index).
std::size_t sample_candidate(const GeneratorParams& params,
                             const CandidateSet& set, double temperature,
                             std::mt19937_64& rng);

/// Checkpoint round trip for the (current, reference) parameter pair.
void save_generator(const std::filesystem::path& path,
                    const GeneratorParams& current,
                    const GeneratorParams& reference);
std::pair<GeneratorParams, GeneratorParams> load_generator(
    const std::filesystem::path& path);

} // namespace advloop::generator
