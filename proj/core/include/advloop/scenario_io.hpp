#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advloop/sim.hpp"

namespace advloop::sim {

/// Scenario file format revision. Readers reject other revisions with an
/// explicit error instead of guessing.
inline constexpr int kScenarioFormat = 1;

nlohmann::json scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const nlohmann::json& j);

nlohmann::json trajectory_to_json(const Trajectory& trajectory);
Trajectory trajectory_from_json(const nlohmann::json& j);

void write_scenario(const std::filesystem::path& path,
                    const Scenario& scenario);
Scenario read_scenario(const std::filesystem::path& path);

/// Writes `<dir>/scenarios/<id>.json` for every scenario. Refuses to reuse a
/// directory that already holds scenarios unless `force` is set.
void write_corpus(const std::filesystem::path& dir,
                  const std::vector<Scenario>& scenarios, bool force = false);

/// Loads every scenario under `<dir>/scenarios/`, ordered by filename.
std::vector<Scenario> read_corpus(const std::filesystem::path& dir);

} // namespace advloop::sim
