#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advloop/sim.hpp"

namespace advloop::sim {

inline const std::vector<std::string> kScenarioTemplates = {
    "straight", "curve", "intersection", "merge"};

struct CorpusConfig {
    int count = 100;
    std::uint64_t seed = 0;
    std::vector<std::string> templates = kScenarioTemplates;
};

/// Builds one scenario from a named template. Deterministic in
/// (template_name, seed, index). The id is `<template>-<seed>-<index>`, so
/// corpora drawn with different seeds never share ids.
/// Throws std::invalid_argument for unknown template names.
Scenario make_scenario(const std::string& template_name, std::uint64_t seed,
                       int index);

/// Synthesizes `count` scenarios cycling through the configured templates.
/// Logged agent speeds stay below 20 m/s and every agent log has exactly
/// horizon_steps poses.
std::vector<Scenario> make_synthetic_scenarios(const CorpusConfig& cfg);

/// Time for a speed-ramped point mass (the route follower's speed profile)
/// to cover arc length `s`. Used to time crossing traffic against the
/// nominal ego.
double ramp_travel_time(double s, double v0, double v_target, double accel,
                        double dt);

} // namespace advloop::sim
