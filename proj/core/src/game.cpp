#include "advloop/game.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "advloop/checkpoint.hpp"
#include "advloop/rng.hpp"

namespace advloop::game {

namespace {

/// Independent sub-seed for (counter a, channel b) under one master seed.
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t a,
                       std::uint64_t b = 0) {
    return rng::mix(seed ^ rng::mix(a + 0x9e3779b97f4a7c15ULL) ^
                    rng::mix(b + 0x632be59bd9b4e019ULL));
}

bool all_finite(const std::vector<double>& xs) {
    return std::all_of(xs.begin(), xs.end(),
                       [](double x) { return std::isfinite(x); });
}

bool all_finite(const generator::Features& xs) {
    return std::all_of(xs.begin(), xs.end(),
                       [](double x) { return std::isfinite(x); });
}

/// Replay probability: linear anneal 1 -> floor over the first
/// anneal_fraction of the step budget, then the floor.
double replay_probability(const TrainConfig& cfg, std::int64_t env_steps) {
    const double horizon =
        cfg.anneal_fraction * static_cast<double>(cfg.max_steps);
    if (horizon <= 0.0) return cfg.probability_floor;
    const double t = static_cast<double>(env_steps) / horizon;
    return std::max(cfg.probability_floor,
                    1.0 + (cfg.probability_floor - 1.0) * std::min(t, 1.0));
}

/// Candidate libraries are a pure function of (master seed, scenario id),
/// so they are synthesized once and shared across episodes and resumes.
class CandidateCache {
  public:
    CandidateCache(std::uint64_t seed, generator::GeneratorConfig cfg)
        : seed_(seed), cfg_(cfg) {}

    const generator::CandidateSet& get(const sim::Scenario& scenario) {
        auto it = sets_.find(scenario.id);
        if (it != sets_.end()) return it->second;
        const std::uint64_t synth =
            rng::mix(seed_ ^ rng::fnv1a64(scenario.id));
        auto [pos, _] = sets_.emplace(
            scenario.id,
            generator::synthesize_candidates(scenario, cfg_, synth));
        return pos->second;
    }

  private:
    std::uint64_t seed_;
    generator::GeneratorConfig cfg_;
    std::map<std::string, generator::CandidateSet> sets_;
};

/// Everything one episode decision produced, for the rollout and the log.
struct PlanDecision {
    std::size_t scenario_index = 0;
    bool attack = false;
    bool warmup_fallback = false;
    double p_replay = 0.0;
    std::size_t candidate = 0;
    double j_hat = 0.0;
    double prob = 0.0;
    double loglik = 0.0;
    sim::Trajectory plan;
};

PlanDecision decide_plan(const TrainConfig& cfg,
                         const std::vector<sim::Scenario>& corpus,
                         const TrainState& state, CandidateCache& cache,
                         std::int64_t episode_index, std::int64_t env_steps) {
    PlanDecision d;
    auto pick = rng::make_stream(sub_seed(cfg.seed, episode_index, 1),
                                 "train/scenario");
    d.scenario_index = rng::uniform_index(pick, corpus.size());
    const sim::Scenario& scenario = corpus[d.scenario_index];

    d.p_replay = replay_probability(cfg, env_steps);
    auto curriculum = rng::make_stream(sub_seed(cfg.seed, episode_index, 2),
                                       "train/curriculum");
    d.attack = rng::uniform(curriculum) >= d.p_replay;
    if (d.attack && state.history.empty(scenario.id)) {
        // No cached ego response yet: replay this visit so the next one has
        // something to condition on.
        d.attack = false;
        d.warmup_fallback = true;
    }
    if (!d.attack) return d;

    const generator::CandidateSet& set = cache.get(scenario);
    const std::vector<double> j_hats =
        adversary::estimate_returns(scenario, state.history, set, cfg.proxy);
    adversary::SamplerConfig sampler;
    sampler.temperature = cfg.sampler_temperature;
    auto select = rng::make_stream(sub_seed(cfg.seed, episode_index, 3),
                                   "train/select");
    const adversary::Selection sel =
        adversary::softmax_select(j_hats, sampler, select);
    d.candidate = sel.index;
    d.j_hat = j_hats[sel.index];
    d.prob = sel.probabilities[sel.index];
    d.loglik = generator::log_prob(state.gen, set, sel.index);
    d.plan = set.candidates[sel.index].trajectory;
    return d;
}

sim::RolloutResult roll_training_episode(const TrainConfig& cfg,
                                         const policy::PolicyNet& net,
                                         const sim::Scenario& scenario,
                                         const sim::Trajectory* plan,
                                         std::int64_t episode_index) {
    policy::NetController controller(net, /*stochastic=*/true);
    return sim::rollout_episode(controller, scenario, plan,
                                sub_seed(cfg.seed, episode_index, 4),
                                cfg.bicycle, cfg.reward, cfg.observation);
}

/// Appends one JSON object per line; the caller counts lines.
class JsonlWriter {
  public:
    JsonlWriter(const std::filesystem::path& path, bool truncate)
        : out_(path, truncate ? std::ios::trunc : std::ios::app) {
        if (!out_)
            throw std::runtime_error("cannot open stream file: " +
                                     path.string());
    }
    void write(const nlohmann::json& record) {
        out_ << record.dump() << '\n';
        out_.flush();
    }

  private:
    std::ofstream out_;
};

/// Rewrites the file in place keeping only the first `lines` lines, through
/// a temp file so a crash cannot tear it.
void truncate_lines(const std::filesystem::path& path, std::int64_t lines) {
    if (!std::filesystem::exists(path)) {
        if (lines == 0) return;
        throw std::runtime_error("stream file missing on resume: " +
                                 path.string());
    }
    std::ifstream in(path);
    std::ostringstream kept;
    std::string line;
    std::int64_t n = 0;
    while (n < lines && std::getline(in, line)) {
        kept << line << '\n';
        ++n;
    }
    if (n < lines)
        throw std::runtime_error(
            "stream file shorter than the checkpoint expects: " +
            path.string());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << kept.str();
    }
    std::filesystem::rename(tmp, path);
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double standard_error(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    if (n < 2) return 0.0;
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(n - 1) /
                     static_cast<double>(n));
}

/// Snapshot of the episodes feeding one ego update.
struct BatchStats {
    std::vector<double> returns;
    std::vector<double> discounted;
    std::vector<double> crashes;
    std::vector<double> completions;
    std::vector<double> costs;
    int replay_episodes = 0;
    int episodes = 0;

    void add(const sim::RolloutResult& r, bool replayed) {
        returns.push_back(r.undiscounted_return);
        discounted.push_back(r.discounted_return);
        crashes.push_back(r.termination == sim::Termination::crash ? 1.0
                                                                   : 0.0);
        completions.push_back(r.final_route_fraction);
        costs.push_back(r.cost);
        if (replayed) ++replay_episodes;
        ++episodes;
    }
    void clear() { *this = BatchStats{}; }
};

nlohmann::json ego_update_record(const TrainConfig& cfg,
                                 const TrainState& state,
                                 const BatchStats& batch,
                                 const rl::UpdateStats& stats) {
    return nlohmann::json{
        {"type", "ego_update"},
        {"algorithm", to_string(cfg.algorithm)},
        {"update", state.ego_updates},
        {"step", state.env_steps},
        {"episodes", batch.episodes},
        {"mean_return", mean_of(batch.returns)},
        {"mean_discounted", mean_of(batch.discounted)},
        {"crash_rate", mean_of(batch.crashes)},
        {"route_completion", mean_of(batch.completions)},
        {"mean_cost", mean_of(batch.costs)},
        {"replay_fraction",
         batch.episodes == 0
             ? 0.0
             : static_cast<double>(batch.replay_episodes) / batch.episodes},
        {"surrogate", stats.surrogate},
        {"kl", stats.kl},
        {"entropy", stats.entropy},
        {"value_loss", stats.value_loss},
        {"grad_norm", stats.grad_norm},
    };
}

void write_decision(JsonlWriter& out, TrainState& state,
                    const std::vector<sim::Scenario>& corpus,
                    const PlanDecision& d, std::int64_t episode_index) {
    nlohmann::json rec{
        {"type", "decision"},
        {"episode", episode_index},
        {"step", state.env_steps},
        {"scenario", corpus[d.scenario_index].id},
        {"p_replay", d.p_replay},
        {"mode", d.attack ? "attack"
                          : (d.warmup_fallback ? "replay-warmup" : "replay")},
    };
    if (d.attack) {
        rec["candidate"] = d.candidate;
        rec["jhat"] = d.j_hat;
        rec["prob"] = d.prob;
        rec["loglik"] = d.loglik;
    }
    out.write(rec);
    ++state.decisions_lines;
}

/// Scenarios eligible for preference rounds: those with a warm ego history.
std::vector<sim::Scenario> warm_pool(const std::vector<sim::Scenario>& corpus,
                                     const adversary::HistoryBuffer& history) {
    std::vector<sim::Scenario> pool;
    for (const sim::Scenario& s : corpus)
        if (!history.empty(s.id)) pool.push_back(s);
    return pool;
}

/// Divergence and expected-damage monitors over a few fixed contexts.
struct AdversaryMonitor {
    double kl_to_ref = 0.0;
    double expected_negative_return = 0.0;
};

AdversaryMonitor monitor_adversary(const TrainConfig& cfg,
                                   const TrainState& state,
                                   const std::vector<sim::Scenario>& pool,
                                   CandidateCache& cache) {
    AdversaryMonitor m;
    std::vector<generator::CandidateSet> contexts;
    std::vector<double> damages;
    for (const sim::Scenario& s : pool) {
        if (contexts.size() >= 8) break;
        const generator::CandidateSet& set = cache.get(s);
        contexts.push_back(set);
        const std::vector<double> j_hats =
            adversary::estimate_returns(s, state.history, set, cfg.proxy);
        damages.push_back(
            ipl::expected_negative_return(state.gen, set, j_hats));
    }
    if (contexts.empty()) return m;
    m.kl_to_ref = adversary::kl_to_ref(state.gen, state.gen_ref, contexts);
    m.expected_negative_return = mean_of(damages);
    return m;
}

void copy_milestone(const std::filesystem::path& run_dir,
                    const TrainState& state, const TrainConfig& cfg) {
    char name[32];
    std::snprintf(name, sizeof(name), "update_%06d", state.ego_updates);
    const std::filesystem::path dir = run_dir / "checkpoints" / name;
    std::filesystem::create_directories(dir);
    policy::save_policy(dir / "policy.json", state.net, state.adam);
    generator::save_generator(dir / "generator.json", state.gen,
                              state.gen_ref);
    ckpt::write_versioned(dir / "meta.json", "train-meta",
                          nlohmann::json{{"config_hash", cfg.config_hash},
                                         {"algorithm",
                                          to_string(cfg.algorithm)},
                                         {"env_steps", state.env_steps},
                                         {"episode_index",
                                          state.episode_index},
                                         {"ego_updates", state.ego_updates},
                                         {"ipl_rounds", state.ipl_rounds},
                                         {"metrics_lines",
                                          state.metrics_lines},
                                         {"decisions_lines",
                                          state.decisions_lines}});
}

/// Chooses an attack plan for one evaluation episode under the two-stage
/// protocol and reports per-episode metrics from the final rollout.
sim::RolloutResult eval_episode(const EvalPolicy& policy, AdversaryMode mode,
                                const sim::Scenario& scenario,
                                const generator::CandidateSet& set,
                                const generator::GeneratorParams& gen_tuned,
                                const generator::GeneratorParams& gen_prior,
                                const EvalConfig& cfg,
                                std::uint64_t episode_seed) {
    const std::unique_ptr<sim::Controller> controller = policy.make();
    const sim::Trajectory* plan = nullptr;
    sim::Trajectory chosen;

    switch (mode) {
        case AdversaryMode::replay:
            break;
        case AdversaryMode::prior_sample: {
            auto pick =
                rng::make_stream(sub_seed(episode_seed, 1), "eval/prior");
            chosen = set.candidates[generator::sample_candidate(
                                        gen_prior, set, 1.0, pick)]
                         .trajectory;
            plan = &chosen;
            break;
        }
        case AdversaryMode::energy_sample:
        case AdversaryMode::ipl_energy_sample:
        case AdversaryMode::hard_min: {
            // Stage one: the ego's reference behaviour against the log.
            const sim::RolloutResult reference = sim::rollout_episode(
                *controller, scenario, nullptr, sub_seed(episode_seed, 2),
                cfg.bicycle, cfg.reward, cfg.observation);
            const adversary::EgoProfile profile =
                adversary::make_ego_profile(scenario,
                                            reference.ego_trajectory);
            std::vector<double> j_hats(set.candidates.size());
            for (std::size_t k = 0; k < set.candidates.size(); ++k)
                j_hats[k] = adversary::proxy_return(
                    scenario, profile, set.candidates[k].trajectory,
                    cfg.proxy);
            if (mode == AdversaryMode::ipl_energy_sample) {
                // The tuned scorer acts as the prior: subtracting
                // temperature * log p from the energy multiplies the
                // Boltzmann weight by p.
                const std::vector<double> logp = generator::log_softmax(
                    generator::scorer_logits(gen_tuned, set));
                for (std::size_t k = 0; k < j_hats.size(); ++k)
                    j_hats[k] -= cfg.sampler_temperature * logp[k];
            }
            adversary::SamplerConfig sampler;
            sampler.temperature = cfg.sampler_temperature;
            sampler.hard_min = mode == AdversaryMode::hard_min;
            auto pick =
                rng::make_stream(sub_seed(episode_seed, 3), "eval/select");
            chosen = set.candidates[adversary::softmax_select(j_hats, sampler,
                                                              pick)
                                        .index]
                         .trajectory;
            plan = &chosen;
            break;
        }
    }

    return sim::rollout_episode(*controller, scenario, plan,
                                sub_seed(episode_seed, 4), cfg.bicycle,
                                cfg.reward, cfg.observation);
}

EvalCell eval_cell(const EvalPolicy& policy, AdversaryMode mode,
                   const std::vector<sim::Scenario>& corpus,
                   const std::map<std::string, generator::CandidateSet>& sets,
                   const generator::GeneratorParams& gen_tuned,
                   const generator::GeneratorParams& gen_prior,
                   const EvalConfig& cfg) {
    const std::uint64_t cell_seed =
        rng::mix(cfg.seed ^ rng::fnv1a64(policy.name) ^
                 rng::mix(static_cast<std::uint64_t>(mode) + 17));
    std::vector<double> rc, crash, reward, cost;
    for (int e = 0; e < cfg.episodes_per_cell; ++e) {
        const sim::Scenario& scenario = corpus[e % corpus.size()];
        const sim::RolloutResult r = eval_episode(
            policy, mode, scenario, sets.at(scenario.id), gen_tuned,
            gen_prior, cfg, sub_seed(cell_seed, static_cast<std::uint64_t>(e)));
        rc.push_back(r.final_route_fraction);
        crash.push_back(r.termination == sim::Termination::crash ? 1.0 : 0.0);
        reward.push_back(r.undiscounted_return);
        cost.push_back(r.cost);
    }
    EvalCell cell;
    cell.policy = policy.name;
    cell.adversary = mode;
    cell.rc = mean_of(rc);
    cell.crash = mean_of(crash);
    cell.reward = mean_of(reward);
    cell.cost = mean_of(cost);
    cell.se_rc = standard_error(rc);
    cell.se_crash = standard_error(crash);
    cell.se_reward = standard_error(reward);
    cell.se_cost = standard_error(cost);
    cell.episodes = cfg.episodes_per_cell;
    return cell;
}

} // namespace

std::string to_string(Algorithm a) {
    return a == Algorithm::grpo ? "grpo" : "ppo";
}

Algorithm algorithm_from_string(const std::string& name) {
    if (name == "grpo") return Algorithm::grpo;
    if (name == "ppo") return Algorithm::ppo;
    throw std::invalid_argument("unknown algorithm: " + name);
}

std::string to_string(AdversaryMode m) {
    switch (m) {
        case AdversaryMode::replay: return "replay";
        case AdversaryMode::prior_sample: return "prior-sample";
        case AdversaryMode::energy_sample: return "energy-sample";
        case AdversaryMode::ipl_energy_sample: return "ipl-energy-sample";
        case AdversaryMode::hard_min: return "hard-min";
    }
    throw std::invalid_argument("unknown adversary mode value");
}

AdversaryMode adversary_mode_from_string(const std::string& name) {
    for (AdversaryMode m : kAllAdversaryModes)
        if (to_string(m) == name) return m;
    throw std::invalid_argument("unknown adversary mode: " + name);
}

void TrainConfig::validate() const {
    if (max_steps < 1)
        throw std::invalid_argument("max_steps must be positive");
    if (adversary_update_frequency < 1)
        throw std::invalid_argument(
            "adversary_update_frequency must be at least 1");
    if (ipl_rounds_per_block < 1)
        throw std::invalid_argument("ipl_rounds_per_block must be at least 1");
    if (!(probability_floor >= 0.0 && probability_floor <= 1.0))
        throw std::invalid_argument("probability_floor must lie in [0, 1]");
    if (!(anneal_fraction >= 0.0 && anneal_fraction <= 1.0))
        throw std::invalid_argument("anneal_fraction must lie in [0, 1]");
    if (!(sampler_temperature > 0.0))
        throw std::invalid_argument("sampler_temperature must be positive");
    if (history_capacity < 1)
        throw std::invalid_argument("history_capacity must be at least 1");
    if (checkpoint_every_updates < 1)
        throw std::invalid_argument(
            "checkpoint_every_updates must be at least 1");
    if (keep_checkpoint_every < 0)
        throw std::invalid_argument("keep_checkpoint_every must be >= 0");
    if (jobs < 1) throw std::invalid_argument("jobs must be at least 1");
    if (grpo.group_size < 2)
        throw std::invalid_argument("grpo group_size must be at least 2");
    if (ppo.update_timesteps < 1)
        throw std::invalid_argument("ppo update_timesteps must be positive");
}

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                     const TrainConfig& cfg) {
    std::filesystem::create_directories(dir);
    policy::save_policy(dir / "policy.json", state.net, state.adam);
    generator::save_generator(dir / "generator.json", state.gen,
                              state.gen_ref);
    ckpt::write_versioned(dir / "buffer.json", "history-buffer",
                          state.history.to_json());
    ckpt::write_versioned(dir / "rng.json", "rng-streams",
                          nlohmann::json{{"master_seed", cfg.seed},
                                         {"episode_index",
                                          state.episode_index}});
    ckpt::write_versioned(dir / "meta.json", "train-meta",
                          nlohmann::json{{"config_hash", cfg.config_hash},
                                         {"algorithm",
                                          to_string(cfg.algorithm)},
                                         {"env_steps", state.env_steps},
                                         {"episode_index",
                                          state.episode_index},
                                         {"ego_updates", state.ego_updates},
                                         {"ipl_rounds", state.ipl_rounds},
                                         {"metrics_lines",
                                          state.metrics_lines},
                                         {"decisions_lines",
                                          state.decisions_lines}});
}

TrainState load_checkpoint(const std::filesystem::path& dir) {
    auto [net, adam] = policy::load_policy(dir / "policy.json");
    auto [gen, gen_ref] = generator::load_generator(dir / "generator.json");
    adversary::HistoryBuffer history = adversary::HistoryBuffer::from_json(
        ckpt::read_versioned(dir / "buffer.json", "history-buffer"));
    const nlohmann::json meta =
        ckpt::read_versioned(dir / "meta.json", "train-meta");
    // rng.json is read for validation; the streams themselves are pure
    // functions of (master seed, counters).
    ckpt::read_versioned(dir / "rng.json", "rng-streams");
    return TrainState{std::move(net),
                      std::move(adam),
                      std::move(gen),
                      std::move(gen_ref),
                      std::move(history),
                      meta.at("env_steps").get<std::int64_t>(),
                      meta.at("episode_index").get<std::int64_t>(),
                      meta.at("ego_updates").get<int>(),
                      meta.at("ipl_rounds").get<int>(),
                      meta.at("metrics_lines").get<std::int64_t>(),
                      meta.at("decisions_lines").get<std::int64_t>()};
}

bool checkpoint_exists(const std::filesystem::path& dir) {
    for (const char* name :
         {"policy.json", "generator.json", "buffer.json", "rng.json",
          "meta.json"})
        if (!std::filesystem::exists(dir / name)) return false;
    return true;
}

TrainResult train(const TrainConfig& cfg,
                  const std::vector<sim::Scenario>& corpus,
                  const std::filesystem::path& run_dir, bool resume) {
    cfg.validate();
    if (corpus.empty())
        throw std::invalid_argument("train: corpus must not be empty");
    std::filesystem::create_directories(run_dir);

    const std::filesystem::path metrics_path = run_dir / "metrics.jsonl";
    const std::filesystem::path decisions_path = run_dir / "decisions.jsonl";

    TrainState state = [&] {
        if (resume) {
            if (!checkpoint_exists(run_dir))
                throw std::runtime_error(
                    "resume requested but no checkpoint under " +
                    run_dir.string());
            const nlohmann::json meta =
                ckpt::read_versioned(run_dir / "meta.json", "train-meta");
            const std::string held_hash =
                meta.at("config_hash").get<std::string>();
            if (!cfg.config_hash.empty() && !held_hash.empty() &&
                held_hash != cfg.config_hash)
                throw std::runtime_error(
                    "checkpoint was written under a different configuration");
            const nlohmann::json rng_meta =
                ckpt::read_versioned(run_dir / "rng.json", "rng-streams");
            if (rng_meta.at("master_seed").get<std::uint64_t>() != cfg.seed)
                throw std::runtime_error(
                    "checkpoint seed differs from the configured seed");
            TrainState loaded = load_checkpoint(run_dir);
            truncate_lines(metrics_path, loaded.metrics_lines);
            truncate_lines(decisions_path, loaded.decisions_lines);
            return loaded;
        }
        policy::PolicyNet net(cfg.net, sub_seed(cfg.seed, 0, 7));
        const double lr = cfg.algorithm == Algorithm::grpo
                              ? cfg.grpo.learning_rate
                              : cfg.ppo.learning_rate;
        policy::Adam adam(net.param_count(), lr);
        generator::GeneratorParams gen =
            generator::pretrained_params(cfg.seed, cfg.generator);
        generator::GeneratorParams ref = generator::freeze_reference(gen);
        return TrainState{std::move(net),
                          std::move(adam),
                          std::move(gen),
                          std::move(ref),
                          adversary::HistoryBuffer(static_cast<std::size_t>(
                              cfg.history_capacity)),
                          0,
                          0,
                          0,
                          0,
                          0,
                          0};
    }();

    JsonlWriter metrics(metrics_path, /*truncate=*/!resume);
    JsonlWriter decisions(decisions_path, /*truncate=*/!resume);
    if (!resume) {
        metrics.write(nlohmann::json{{"type", "header"},
                                     {"format", 1},
                                     {"algorithm", to_string(cfg.algorithm)},
                                     {"config_hash", cfg.config_hash},
                                     {"seed", cfg.seed}});
        ++state.metrics_lines;
        save_checkpoint(run_dir, state, cfg);
    }

    CandidateCache cache(cfg.seed, cfg.generator);
    TrainResult result;

    // Phase 1: one block of preference rounds per N owed. Self-healing on
    // resume because the owed count is derived from the counters.
    auto run_owed_ipl = [&]() -> bool {
        if (!cfg.ipl_enabled) return true;
        const int owed_blocks =
            state.ego_updates / cfg.adversary_update_frequency;
        while (state.ipl_rounds < owed_blocks * cfg.ipl_rounds_per_block) {
            const std::vector<sim::Scenario> pool =
                warm_pool(corpus, state.history);
            ipl::IplRoundStats stats;
            if (!pool.empty())
                stats = ipl::run_ipl_round(state.gen, state.gen_ref, pool,
                                           state.history, cfg.proxy, cfg.ipl,
                                           cfg.seed, state.ipl_rounds);
            if (!all_finite(state.gen.weights)) {
                result.nan_halt = true;
                result.halt_reason =
                    "non-finite generator weight after preference round " +
                    std::to_string(state.ipl_rounds);
                return false;
            }
            const AdversaryMonitor mon =
                monitor_adversary(cfg, state, pool, cache);
            ++state.ipl_rounds;
            metrics.write(nlohmann::json{
                {"type", "ipl_round"},
                {"round", state.ipl_rounds},
                {"step", state.env_steps},
                {"mean_loss", stats.mean_loss},
                {"pairs", stats.pair_count},
                {"grad_norm", stats.grad_norm},
                {"step_scale", stats.step_scale},
                {"kl_to_ref", mon.kl_to_ref},
                {"expected_negative_return", mon.expected_negative_return}});
            ++state.metrics_lines;
        }
        return true;
    };

    // Phase 2 state for the ppo path: episodes accumulated toward the next
    // update. Always empty at checkpoint time.
    std::vector<sim::RolloutResult> pending;
    std::int64_t pending_steps = 0;
    BatchStats batch;

    auto after_update = [&](const rl::UpdateStats& stats) -> bool {
        ++state.ego_updates;
        metrics.write(ego_update_record(cfg, state, batch, stats));
        ++state.metrics_lines;
        batch.clear();
        if (!all_finite(state.net.params())) {
            result.nan_halt = true;
            result.halt_reason =
                "non-finite policy parameter after ego update " +
                std::to_string(state.ego_updates);
            return false;
        }
        if (!run_owed_ipl()) return false;
        if (state.ego_updates % cfg.checkpoint_every_updates == 0)
            save_checkpoint(run_dir, state, cfg);
        if (cfg.keep_checkpoint_every > 0 &&
            state.ego_updates % cfg.keep_checkpoint_every == 0)
            copy_milestone(run_dir, state, cfg);
        return true;
    };

    while (state.env_steps < cfg.max_steps && !result.nan_halt) {
        if (cfg.algorithm == Algorithm::grpo) {
            const std::int64_t decision_episode = state.episode_index;
            const PlanDecision d =
                decide_plan(cfg, corpus, state, cache, decision_episode,
                            state.env_steps);
            const sim::Scenario& scenario = corpus[d.scenario_index];
            write_decision(decisions, state, corpus, d, decision_episode);
            const sim::Trajectory* plan = d.attack ? &d.plan : nullptr;

            std::vector<sim::RolloutResult> group(
                static_cast<std::size_t>(cfg.grpo.group_size));
            const int workers =
                std::min(cfg.jobs, cfg.grpo.group_size);
            if (workers > 1) {
                std::vector<std::future<sim::RolloutResult>> futures;
                futures.reserve(group.size());
                for (int k = 0; k < cfg.grpo.group_size; ++k)
                    futures.push_back(std::async(
                        std::launch::async, roll_training_episode,
                        std::cref(cfg), std::cref(state.net),
                        std::cref(scenario), plan, decision_episode + k));
                for (std::size_t k = 0; k < futures.size(); ++k)
                    group[k] = futures[k].get();
            } else {
                for (int k = 0; k < cfg.grpo.group_size; ++k)
                    group[static_cast<std::size_t>(k)] = roll_training_episode(
                        cfg, state.net, scenario, plan, decision_episode + k);
            }
            for (const sim::RolloutResult& r : group) {
                state.env_steps += static_cast<std::int64_t>(r.steps.size());
                state.history.push(scenario.id, r.ego_trajectory);
                batch.add(r, !d.attack);
            }
            state.episode_index += cfg.grpo.group_size;

            const rl::UpdateStats stats =
                rl::grpo_update(state.net, state.adam, group, cfg.grpo);
            if (!after_update(stats)) break;
        } else {
            const std::int64_t episode = state.episode_index;
            const PlanDecision d =
                decide_plan(cfg, corpus, state, cache, episode,
                            state.env_steps);
            const sim::Scenario& scenario = corpus[d.scenario_index];
            write_decision(decisions, state, corpus, d, episode);
            const sim::RolloutResult r = roll_training_episode(
                cfg, state.net, scenario, d.attack ? &d.plan : nullptr,
                episode);
            state.env_steps += static_cast<std::int64_t>(r.steps.size());
            pending_steps += static_cast<std::int64_t>(r.steps.size());
            state.history.push(scenario.id, r.ego_trajectory);
            batch.add(r, !d.attack);
            pending.push_back(r);
            ++state.episode_index;

            if (pending_steps >= cfg.ppo.update_timesteps) {
                const std::vector<rl::Transition> transitions =
                    rl::build_ppo_batch(pending, cfg.ppo);
                auto shuffle = rng::make_stream(
                    sub_seed(cfg.seed,
                             static_cast<std::uint64_t>(state.ego_updates), 5),
                    "train/ppo-shuffle");
                const rl::UpdateStats stats = rl::ppo_update(
                    state.net, state.adam, transitions, cfg.ppo, shuffle);
                pending.clear();
                pending_steps = 0;
                if (!after_update(stats)) break;
            }
        }
    }

    if (!result.nan_halt) save_checkpoint(run_dir, state, cfg);
    result.env_steps = state.env_steps;
    result.ego_updates = state.ego_updates;
    result.ipl_rounds = state.ipl_rounds;
    return result;
}

EvalPolicy replay_eval_policy(const sim::BicycleParams& params) {
    return EvalPolicy{"replay", [params]() {
                          return std::make_unique<sim::RouteFollowController>(
                              params);
                      }};
}

EvalPolicy net_eval_policy(std::string name, const policy::PolicyNet& net,
                           bool stochastic) {
    return EvalPolicy{std::move(name), [&net, stochastic]() {
                          return std::make_unique<policy::NetController>(
                              net, stochastic);
                      }};
}

std::vector<EvalCell> evaluate_cross(
    const std::vector<EvalPolicy>& policies,
    const std::vector<AdversaryMode>& modes,
    const std::vector<sim::Scenario>& corpus,
    const generator::GeneratorParams& gen_tuned,
    const generator::GeneratorParams& gen_prior, const EvalConfig& cfg) {
    if (policies.empty() || modes.empty())
        throw std::invalid_argument(
            "evaluate_cross: need at least one policy and one mode");
    if (corpus.empty())
        throw std::invalid_argument("evaluate_cross: corpus must not be empty");
    if (cfg.episodes_per_cell < 1)
        throw std::invalid_argument(
            "evaluate_cross: episodes_per_cell must be positive");

    // Candidate libraries are shared by every cell: pure in (seed, id).
    std::map<std::string, generator::CandidateSet> sets;
    for (const sim::Scenario& s : corpus)
        sets.emplace(s.id, generator::synthesize_candidates(
                               s, cfg.generator,
                               rng::mix(cfg.seed ^ rng::fnv1a64(s.id))));

    struct Job {
        std::size_t policy;
        AdversaryMode mode;
    };
    std::vector<Job> jobs;
    for (std::size_t p = 0; p < policies.size(); ++p)
        for (AdversaryMode m : modes) jobs.push_back({p, m});

    std::vector<EvalCell> cells(jobs.size());
    auto run_one = [&](std::size_t i) {
        cells[i] = eval_cell(policies[jobs[i].policy], jobs[i].mode, corpus,
                             sets, gen_tuned, gen_prior, cfg);
    };
    if (cfg.jobs > 1) {
        std::atomic<std::size_t> next{0};
        std::vector<std::future<void>> workers;
        const std::size_t n = std::min<std::size_t>(
            static_cast<std::size_t>(cfg.jobs), jobs.size());
        for (std::size_t w = 0; w < n; ++w)
            workers.push_back(std::async(std::launch::async, [&]() {
                for (std::size_t i = next.fetch_add(1); i < jobs.size();
                     i = next.fetch_add(1))
                    run_one(i);
            }));
        for (auto& w : workers) w.get();
    } else {
        for (std::size_t i = 0; i < jobs.size(); ++i) run_one(i);
    }
    return cells;
}

void write_eval_csv(const std::filesystem::path& path,
                    const std::vector<EvalCell>& cells) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open csv for writing: " +
                                 path.string());
    out << "policy,adversary,rc,crash,reward,cost,se_rc,se_crash,se_reward,"
           "se_cost\n";
    char buf[256];
    for (const EvalCell& c : cells) {
        std::snprintf(buf, sizeof(buf),
                      ",%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                      c.rc, c.crash, c.reward, c.cost, c.se_rc, c.se_crash,
                      c.se_reward, c.se_cost);
        out << c.policy << ',' << to_string(c.adversary) << buf;
    }
}

BoundReport bound_report(const policy::PolicyNet& net,
                         const generator::GeneratorParams& gen_tuned,
                         const generator::GeneratorParams& gen_ref,
                         const std::vector<sim::Scenario>& corpus,
                         int episodes, const EvalConfig& cfg) {
    if (corpus.empty())
        throw std::invalid_argument("bound_report: corpus must not be empty");
    if (episodes < 1)
        throw std::invalid_argument("bound_report: episodes must be positive");

    BoundReport rep;
    rep.episodes = episodes;
    // Analytic per-step bound: max progress in one tick, the speed term at
    // the cap, and the largest terminal bonus.
    rep.r_max = cfg.reward.progress_coef * cfg.bicycle.max_speed *
                    cfg.bicycle.dt +
                cfg.reward.speed_coef * cfg.bicycle.max_speed +
                cfg.reward.success_bonus;
    const double gamma = cfg.reward.gamma;
    rep.v_max = rep.r_max / (1.0 - gamma);

    std::vector<generator::CandidateSet> contexts;
    std::map<std::string, std::size_t> context_of;
    policy::NetController controller(net, /*stochastic=*/false);

    double robust = 0.0;
    double reference = 0.0;
    for (int e = 0; e < episodes; ++e) {
        const sim::Scenario& scenario =
            corpus[static_cast<std::size_t>(e) % corpus.size()];
        if (!context_of.count(scenario.id)) {
            context_of[scenario.id] = contexts.size();
            contexts.push_back(generator::synthesize_candidates(
                scenario, cfg.generator,
                rng::mix(cfg.seed ^ rng::fnv1a64(scenario.id))));
        }
        const generator::CandidateSet& set =
            contexts[context_of[scenario.id]];
        const std::uint64_t ep =
            sub_seed(cfg.seed, static_cast<std::uint64_t>(e), 11);

        // Identical streams for both generators: with gen_tuned == gen_ref
        // the two measurements coincide exactly.
        auto pick_tuned = rng::make_stream(ep, "bound/plan");
        auto pick_ref = rng::make_stream(ep, "bound/plan");
        const sim::Trajectory& plan_tuned =
            set.candidates[generator::sample_candidate(gen_tuned, set, 1.0,
                                                       pick_tuned)]
                .trajectory;
        const sim::Trajectory& plan_ref =
            set.candidates[generator::sample_candidate(gen_ref, set, 1.0,
                                                       pick_ref)]
                .trajectory;

        robust += sim::rollout_episode(controller, scenario, &plan_tuned,
                                       sub_seed(ep, 1), cfg.bicycle,
                                       cfg.reward, cfg.observation)
                      .discounted_return;
        reference += sim::rollout_episode(controller, scenario, &plan_ref,
                                          sub_seed(ep, 1), cfg.bicycle,
                                          cfg.reward, cfg.observation)
                         .discounted_return;
    }
    rep.robust_return = robust / episodes;
    rep.replay_return = reference / episodes;
    rep.mean_kl = adversary::kl_to_ref(gen_tuned, gen_ref, contexts);
    rep.penalty = gamma * rep.v_max * std::sqrt(2.0) / (1.0 - gamma) *
                  std::sqrt(rep.mean_kl);
    rep.certified_bound = rep.robust_return - rep.penalty;
    return rep;
}

nlohmann::json bound_report_to_json(const BoundReport& report) {
    return nlohmann::json{{"format", 1},
                          {"robust_return", report.robust_return},
                          {"mean_kl", report.mean_kl},
                          {"penalty", report.penalty},
                          {"certified_bound", report.certified_bound},
                          {"replay_return", report.replay_return},
                          {"r_max", report.r_max},
                          {"v_max", report.v_max},
                          {"episodes", report.episodes}};
}

} // namespace advloop::game
