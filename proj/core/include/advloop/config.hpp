#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "advloop/game.hpp"
#include "advloop/scenario_gen.hpp"

namespace advloop::config {

/// Configuration mistakes the user can fix: unknown keys, type mismatches,
/// malformed assignments. Commands map these to the usage exit code.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// The complete default configuration tree. Every recognized key appears
/// here; overlays are validated against this shape.
nlohmann::json default_config();

/// Deep-merges `overlay` into `base`. A key missing from `base`, or a value
/// whose type disagrees with the default, throws ConfigError naming the
/// dotted path. Arrays replace wholesale.
void apply_overlay(nlohmann::json& base, const nlohmann::json& overlay,
                   const std::string& path = "");

/// Applies one `dotted.path=value` assignment. Values parse as JSON when
/// possible and fall back to plain strings (so `algorithm=ppo` works
/// unquoted).
void apply_assignment(nlohmann::json& base, const std::string& assignment);

/// Environment overrides: ADVLOOP_TRAIN__MAX_STEPS=50000 sets
/// train.max_steps. A double underscore separates path segments; single
/// underscores belong to key names. Names without any double underscore are
/// ignored (every configuration key lives inside a section).
std::vector<std::pair<std::string, std::string>> environment_overrides();
void apply_environment(
    nlohmann::json& base,
    const std::vector<std::pair<std::string, std::string>>& overrides);

/// defaults <- optional file <- environment <- --set assignments, in that
/// order. File parse errors and unknown keys throw ConfigError.
nlohmann::json resolve_config(
    const std::optional<std::filesystem::path>& file,
    const std::vector<std::string>& assignments, bool use_environment = true);

/// FNV-1a of the canonical dump, as fixed-width hex. Keys named "jobs" and
/// "max_steps" are dropped first: worker counts never change results, and
/// the step budget is only a stopping point on an otherwise identical
/// stream — resuming an interrupted run with a longer budget must not be
/// refused as a different configuration.
std::string config_hash(const nlohmann::json& resolved);

/// Writes {"config_hash", "config"} to dir/config.json.
void write_resolved(const std::filesystem::path& dir,
                    const nlohmann::json& resolved);

/// Section extractors. The section shape is guaranteed by apply_overlay, so
/// these only translate values (and throw ConfigError on bad enum names).
sim::CorpusConfig corpus_from_json(const nlohmann::json& section);
game::TrainConfig train_from_json(const nlohmann::json& section);
game::EvalConfig eval_from_json(const nlohmann::json& section);
std::vector<game::AdversaryMode> eval_modes_from_json(
    const nlohmann::json& section);

} // namespace advloop::config
