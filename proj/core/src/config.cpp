#include "advloop/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "advloop/checkpoint.hpp"

extern char** environ;

namespace advloop::config {

namespace {

using nlohmann::json;

json grpo_json(const rl::GrpoConfig& c) {
    return json{{"group_size", c.group_size},   {"gamma", c.gamma},
                {"clip", c.clip},               {"kl_beta", c.kl_beta},
                {"epochs", c.epochs},           {"learning_rate",
                                                 c.learning_rate},
                {"adv_clip", c.adv_clip}};
}

rl::GrpoConfig grpo_from(const json& j) {
    rl::GrpoConfig c;
    c.group_size = j.at("group_size").get<int>();
    c.gamma = j.at("gamma").get<double>();
    c.clip = j.at("clip").get<double>();
    c.kl_beta = j.at("kl_beta").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.adv_clip = j.at("adv_clip").get<double>();
    return c;
}

json ppo_json(const rl::PpoConfig& c) {
    return json{{"gamma", c.gamma},
                {"lam", c.lam},
                {"clip", c.clip},
                {"value_coef", c.value_coef},
                {"entropy_coef", c.entropy_coef},
                {"epochs", c.epochs},
                {"minibatch", c.minibatch},
                {"learning_rate", c.learning_rate},
                {"update_timesteps", c.update_timesteps}};
}

rl::PpoConfig ppo_from(const json& j) {
    rl::PpoConfig c;
    c.gamma = j.at("gamma").get<double>();
    c.lam = j.at("lam").get<double>();
    c.clip = j.at("clip").get<double>();
    c.value_coef = j.at("value_coef").get<double>();
    c.entropy_coef = j.at("entropy_coef").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.minibatch = j.at("minibatch").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.update_timesteps = j.at("update_timesteps").get<int>();
    return c;
}

json net_json(const policy::NetConfig& c) {
    return json{{"obs_dim", c.obs_dim},
                {"hidden", c.hidden},
                {"act_dim", c.act_dim},
                {"logstd_min", c.logstd_min},
                {"logstd_max", c.logstd_max}};
}

policy::NetConfig net_from(const json& j) {
    policy::NetConfig c;
    c.obs_dim = j.at("obs_dim").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.act_dim = j.at("act_dim").get<int>();
    c.logstd_min = j.at("logstd_min").get<double>();
    c.logstd_max = j.at("logstd_max").get<double>();
    return c;
}

json generator_json(const generator::GeneratorConfig& c) {
    return json{{"num_candidates", c.num_candidates},
                {"speed_cap_factor", c.speed_cap_factor},
                {"dedup_distance", c.dedup_distance},
                {"max_step_yaw", c.max_step_yaw}};
}

generator::GeneratorConfig generator_from(const json& j) {
    generator::GeneratorConfig c;
    c.num_candidates = j.at("num_candidates").get<int>();
    c.speed_cap_factor = j.at("speed_cap_factor").get<double>();
    c.dedup_distance = j.at("dedup_distance").get<double>();
    c.max_step_yaw = j.at("max_step_yaw").get<double>();
    return c;
}

json proxy_json(const adversary::ProxyConfig& c) {
    return json{{"lambda_drive", c.lambda_drive},
                {"speed_coef", c.speed_coef},
                {"r_success", c.r_success},
                {"r_crash", c.r_crash},
                {"r_offroad", c.r_offroad},
                {"success_fraction", c.success_fraction},
                {"offroad_meters", c.offroad_meters},
                {"gamma", c.gamma}};
}

adversary::ProxyConfig proxy_from(const json& j) {
    adversary::ProxyConfig c;
    c.lambda_drive = j.at("lambda_drive").get<double>();
    c.speed_coef = j.at("speed_coef").get<double>();
    c.r_success = j.at("r_success").get<double>();
    c.r_crash = j.at("r_crash").get<double>();
    c.r_offroad = j.at("r_offroad").get<double>();
    c.success_fraction = j.at("success_fraction").get<double>();
    c.offroad_meters = j.at("offroad_meters").get<double>();
    c.gamma = j.at("gamma").get<double>();
    return c;
}

json ipl_json(const ipl::IplConfig& c) {
    return json{{"tau", c.tau},
                {"margin_delta", c.margin_delta},
                {"diversity_xi", c.diversity_xi},
                {"pairs_per_scenario", c.pairs_per_scenario},
                {"accumulation", c.accumulation},
                {"learning_rate", c.learning_rate},
                {"cosine_decay", c.cosine_decay},
                {"total_rounds", c.total_rounds}};
}

ipl::IplConfig ipl_from(const json& j) {
    ipl::IplConfig c;
    c.tau = j.at("tau").get<double>();
    c.margin_delta = j.at("margin_delta").get<double>();
    c.diversity_xi = j.at("diversity_xi").get<double>();
    c.pairs_per_scenario = j.at("pairs_per_scenario").get<int>();
    c.accumulation = j.at("accumulation").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.cosine_decay = j.at("cosine_decay").get<bool>();
    c.total_rounds = j.at("total_rounds").get<int>();
    return c;
}

json bicycle_json(const sim::BicycleParams& c) {
    return json{{"wheelbase", c.wheelbase},
                {"max_steer", c.max_steer},
                {"max_accel", c.max_accel},
                {"max_speed", c.max_speed},
                {"dt", c.dt}};
}

sim::BicycleParams bicycle_from(const json& j) {
    sim::BicycleParams c;
    c.wheelbase = j.at("wheelbase").get<double>();
    c.max_steer = j.at("max_steer").get<double>();
    c.max_accel = j.at("max_accel").get<double>();
    c.max_speed = j.at("max_speed").get<double>();
    c.dt = j.at("dt").get<double>();
    return c;
}

json reward_json(const sim::RewardConfig& c) {
    return json{{"progress_coef", c.progress_coef},
                {"speed_coef", c.speed_coef},
                {"success_bonus", c.success_bonus},
                {"crash_penalty", c.crash_penalty},
                {"offroad_penalty", c.offroad_penalty},
                {"gamma", c.gamma},
                {"success_fraction", c.success_fraction},
                {"offroad_meters", c.offroad_meters}};
}

sim::RewardConfig reward_from(const json& j) {
    sim::RewardConfig c;
    c.progress_coef = j.at("progress_coef").get<double>();
    c.speed_coef = j.at("speed_coef").get<double>();
    c.success_bonus = j.at("success_bonus").get<double>();
    c.crash_penalty = j.at("crash_penalty").get<double>();
    c.offroad_penalty = j.at("offroad_penalty").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.success_fraction = j.at("success_fraction").get<double>();
    c.offroad_meters = j.at("offroad_meters").get<double>();
    return c;
}

json observation_json(const sim::ObservationConfig& c) {
    return json{{"num_beams", c.num_beams}, {"lidar_range", c.lidar_range}};
}

sim::ObservationConfig observation_from(const json& j) {
    sim::ObservationConfig c;
    c.num_beams = j.at("num_beams").get<int>();
    c.lidar_range = j.at("lidar_range").get<double>();
    return c;
}

json train_json(const game::TrainConfig& c) {
    return json{{"algorithm", game::to_string(c.algorithm)},
                {"max_steps", c.max_steps},
                {"adversary_update_frequency", c.adversary_update_frequency},
                {"ipl_rounds_per_block", c.ipl_rounds_per_block},
                {"ipl_enabled", c.ipl_enabled},
                {"probability_floor", c.probability_floor},
                {"anneal_fraction", c.anneal_fraction},
                {"sampler_temperature", c.sampler_temperature},
                {"seed", c.seed},
                {"history_capacity", c.history_capacity},
                {"checkpoint_every_updates", c.checkpoint_every_updates},
                {"keep_checkpoint_every", c.keep_checkpoint_every},
                {"jobs", c.jobs},
                {"grpo", grpo_json(c.grpo)},
                {"ppo", ppo_json(c.ppo)},
                {"net", net_json(c.net)},
                {"generator", generator_json(c.generator)},
                {"proxy", proxy_json(c.proxy)},
                {"ipl", ipl_json(c.ipl)},
                {"bicycle", bicycle_json(c.bicycle)},
                {"reward", reward_json(c.reward)},
                {"observation", observation_json(c.observation)}};
}

json eval_json(const game::EvalConfig& c) {
    json modes = json::array();
    for (game::AdversaryMode m : game::kAllAdversaryModes)
        modes.push_back(game::to_string(m));
    return json{{"episodes_per_cell", c.episodes_per_cell},
                {"sampler_temperature", c.sampler_temperature},
                {"seed", c.seed},
                {"jobs", c.jobs},
                {"modes", modes},
                {"generator", generator_json(c.generator)},
                {"proxy", proxy_json(c.proxy)},
                {"bicycle", bicycle_json(c.bicycle)},
                {"reward", reward_json(c.reward)},
                {"observation", observation_json(c.observation)}};
}

json corpus_json(const sim::CorpusConfig& c) {
    return json{
        {"count", c.count}, {"seed", c.seed}, {"templates", c.templates}};
}

[[noreturn]] void type_error(const std::string& path, const json& base,
                             const json& value) {
    throw ConfigError("configuration key " + path + " expects " +
                      std::string(base.type_name()) + ", got " +
                      std::string(value.type_name()));
}

bool integral_number(const json& v) {
    if (v.is_number_integer() || v.is_number_unsigned()) return true;
    if (!v.is_number_float()) return false;
    const double d = v.get<double>();
    return std::isfinite(d) && d == std::floor(d);
}

/// Assigns `value` into a leaf, coercing numbers toward the default's type.
void assign_leaf(json& base, const json& value, const std::string& path) {
    if (base.is_boolean()) {
        if (!value.is_boolean()) type_error(path, base, value);
        base = value.get<bool>();
    } else if (base.is_string()) {
        if (!value.is_string()) type_error(path, base, value);
        base = value.get<std::string>();
    } else if (base.is_number_float()) {
        if (!value.is_number()) type_error(path, base, value);
        base = value.get<double>();
    } else if (base.is_number_unsigned()) {
        if (!value.is_number() || !integral_number(value) ||
            (value.is_number_integer() && value.get<std::int64_t>() < 0) ||
            (value.is_number_float() && value.get<double>() < 0.0))
            type_error(path, base, value);
        base = value.get<std::uint64_t>();
    } else if (base.is_number_integer()) {
        if (!value.is_number() || !integral_number(value))
            type_error(path, base, value);
        base = value.get<std::int64_t>();
    } else if (base.is_array()) {
        if (!value.is_array()) type_error(path, base, value);
        for (const json& item : value)
            if (!item.is_string())
                throw ConfigError("configuration key " + path +
                                  " expects an array of strings");
        base = value;
    } else {
        type_error(path, base, value);
    }
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string current;
    for (char c : text) {
        if (c == sep) {
            parts.push_back(current);
            current.clear();
        } else {
            current += c;
        }
    }
    parts.push_back(current);
    return parts;
}

void apply_path_value(json& base, const std::vector<std::string>& segments,
                      const json& value, const std::string& display) {
    json* node = &base;
    std::string walked;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        walked += (i ? "." : "") + segments[i];
        if (!node->is_object() || !node->contains(segments[i]))
            throw ConfigError("unknown configuration key: " + display);
        node = &(*node)[segments[i]];
        if (i + 1 < segments.size() && !node->is_object())
            throw ConfigError("configuration key " + walked +
                              " has no sub-keys");
    }
    if (node->is_object())
        throw ConfigError("configuration key " + display +
                          " is a section, not a value");
    assign_leaf(*node, value, display);
}

/// Parses an override value: JSON when well-formed, otherwise a raw string
/// (so bare words like `ppo` need no quoting). A default-typed string key
/// also swallows values that happen to parse, keeping `--set id=42` usable
/// for string-valued keys.
json parse_value_for(const json& leaf_default, const std::string& text) {
    const json parsed = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) return json(text);
    if (leaf_default.is_string() && !parsed.is_string()) return json(text);
    return parsed;
}

const json* find_leaf(const json& base,
                      const std::vector<std::string>& segments) {
    const json* node = &base;
    for (const std::string& s : segments) {
        if (!node->is_object() || !node->contains(s)) return nullptr;
        node = &(*node)[s];
    }
    return node;
}

void strip_run_neutral_keys(json& node) {
    if (!node.is_object()) return;
    node.erase("jobs");
    node.erase("max_steps");
    for (auto& [key, value] : node.items()) strip_run_neutral_keys(value);
}

} // namespace

json default_config() {
    return json{{"corpus", corpus_json(sim::CorpusConfig{})},
                {"train", train_json(game::TrainConfig{})},
                {"eval", eval_json(game::EvalConfig{})},
                {"bound", json{{"episodes", 100}}},
                {"theory", json{{"seed", std::uint64_t{7}}}}};
}

void apply_overlay(json& base, const json& overlay, const std::string& path) {
    if (!overlay.is_object()) {
        if (path.empty())
            throw ConfigError("configuration root must be an object");
        assign_leaf(base, overlay, path);
        return;
    }
    if (!base.is_object()) type_error(path, base, overlay);
    for (const auto& [key, value] : overlay.items()) {
        const std::string next = path.empty() ? key : path + "." + key;
        if (!base.contains(key))
            throw ConfigError("unknown configuration key: " + next);
        if (value.is_object())
            apply_overlay(base[key], value, next);
        else
            assign_leaf(base[key], value, next);
    }
}

void apply_assignment(json& base, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("malformed --set (want key.path=value): " +
                          assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    const std::vector<std::string> segments = split(key, '.');
    const json* leaf = find_leaf(base, segments);
    if (leaf == nullptr)
        throw ConfigError("unknown configuration key: " + key);
    apply_path_value(base, segments, parse_value_for(*leaf, value), key);
}

std::vector<std::pair<std::string, std::string>> environment_overrides() {
    std::vector<std::pair<std::string, std::string>> found;
    for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
        const std::string entry(*e);
        if (entry.rfind("ADVLOOP_", 0) != 0) continue;
        const std::size_t eq = entry.find('=');
        if (eq == std::string::npos) continue;
        const std::string name = entry.substr(0, eq);
        // Every configuration key lives inside a section, so a real
        // override always carries a double underscore. Names without one
        // (e.g. the test harness's ADVLOOP_BIN) are not overrides.
        if (name.find("__") == std::string::npos) continue;
        found.emplace_back(name, entry.substr(eq + 1));
    }
    std::sort(found.begin(), found.end());
    return found;
}

void apply_environment(
    json& base,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
    for (const auto& [name, value] : overrides) {
        std::string tail = name.substr(std::string("ADVLOOP_").size());
        std::transform(tail.begin(), tail.end(), tail.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        // Double underscores separate path segments.
        std::vector<std::string> segments;
        std::string current;
        for (std::size_t i = 0; i < tail.size(); ++i) {
            if (tail[i] == '_' && i + 1 < tail.size() && tail[i + 1] == '_') {
                segments.push_back(current);
                current.clear();
                ++i;
            } else {
                current += tail[i];
            }
        }
        segments.push_back(current);
        const json* leaf = find_leaf(base, segments);
        if (leaf == nullptr)
            throw ConfigError("unknown configuration key from environment " +
                              name);
        apply_path_value(base, segments, parse_value_for(*leaf, value), name);
    }
}

json resolve_config(const std::optional<std::filesystem::path>& file,
                    const std::vector<std::string>& assignments,
                    bool use_environment) {
    json resolved = default_config();
    if (file) {
        std::ifstream in(*file);
        if (!in)
            throw ConfigError("cannot open config file: " + file->string());
        json loaded = json::parse(in, nullptr, /*allow_exceptions=*/false);
        if (loaded.is_discarded())
            throw ConfigError("config file is not valid JSON: " +
                              file->string());
        apply_overlay(resolved, loaded);
    }
    if (use_environment) apply_environment(resolved, environment_overrides());
    for (const std::string& a : assignments) apply_assignment(resolved, a);
    return resolved;
}

std::string config_hash(const json& resolved) {
    json canon = resolved;
    strip_run_neutral_keys(canon);
    return ckpt::payload_checksum(canon);
}

void write_resolved(const std::filesystem::path& dir, const json& resolved) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "config.json", std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write resolved config under " +
                                 dir.string());
    out << json{{"config_hash", config_hash(resolved)},
                {"config", resolved}}
               .dump(2)
        << '\n';
}

sim::CorpusConfig corpus_from_json(const json& section) {
    sim::CorpusConfig c;
    c.count = section.at("count").get<int>();
    c.seed = section.at("seed").get<std::uint64_t>();
    c.templates =
        section.at("templates").get<std::vector<std::string>>();
    return c;
}

game::TrainConfig train_from_json(const json& section) {
    game::TrainConfig c;
    try {
        c.algorithm = game::algorithm_from_string(
            section.at("algorithm").get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("train.algorithm: ") + e.what());
    }
    c.max_steps = section.at("max_steps").get<std::int64_t>();
    c.adversary_update_frequency =
        section.at("adversary_update_frequency").get<int>();
    c.ipl_rounds_per_block = section.at("ipl_rounds_per_block").get<int>();
    c.ipl_enabled = section.at("ipl_enabled").get<bool>();
    c.probability_floor = section.at("probability_floor").get<double>();
    c.anneal_fraction = section.at("anneal_fraction").get<double>();
    c.sampler_temperature = section.at("sampler_temperature").get<double>();
    c.seed = section.at("seed").get<std::uint64_t>();
    c.history_capacity = section.at("history_capacity").get<int>();
    c.checkpoint_every_updates =
        section.at("checkpoint_every_updates").get<int>();
    c.keep_checkpoint_every = section.at("keep_checkpoint_every").get<int>();
    c.jobs = section.at("jobs").get<int>();
    c.grpo = grpo_from(section.at("grpo"));
    c.ppo = ppo_from(section.at("ppo"));
    c.net = net_from(section.at("net"));
    c.generator = generator_from(section.at("generator"));
    c.proxy = proxy_from(section.at("proxy"));
    c.ipl = ipl_from(section.at("ipl"));
    c.bicycle = bicycle_from(section.at("bicycle"));
    c.reward = reward_from(section.at("reward"));
    c.observation = observation_from(section.at("observation"));
    return c;
}

game::EvalConfig eval_from_json(const json& section) {
    game::EvalConfig c;
    c.episodes_per_cell = section.at("episodes_per_cell").get<int>();
    c.sampler_temperature = section.at("sampler_temperature").get<double>();
    c.seed = section.at("seed").get<std::uint64_t>();
    c.jobs = section.at("jobs").get<int>();
    c.generator = generator_from(section.at("generator"));
    c.proxy = proxy_from(section.at("proxy"));
    c.bicycle = bicycle_from(section.at("bicycle"));
    c.reward = reward_from(section.at("reward"));
    c.observation = observation_from(section.at("observation"));
    return c;
}

std::vector<game::AdversaryMode> eval_modes_from_json(const json& section) {
    std::vector<game::AdversaryMode> modes;
    for (const json& name : section.at("modes")) {
        try {
            modes.push_back(
                game::adversary_mode_from_string(name.get<std::string>()));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("eval.modes: ") + e.what());
        }
    }
    if (modes.empty()) throw ConfigError("eval.modes must not be empty");
    return modes;
}

} // namespace advloop::config
