// Acceptance gate: one line per criterion, [PASS] or [FAIL], with the
// measured quantities. Exit code 0 only when every criterion holds.
//
//   1 theory sweeps        randomized operator/inequality suites + runtime
//   2 sampler equivalence  Boltzmann pick == Gibbs posterior, monotone, limits
//   3 preference learning  anchored loss at ref, gradient vs FD, toy ranking
//   4 proxy fidelity       rank correlation to live rollouts, replay equality
//   5 attack efficacy      energy/hard-min vs prior crash rates, IPL damage
//   6 defense direction    adversarial vs replay training, 3 seeds, held out
//   7 group normalization  hand-computed example, clipping, padding
//   8 bound soundness      certified lower bound on every kept checkpoint
//   9 determinism          byte-identical streams on rerun

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "advloop/adversary.hpp"
#include "advloop/game.hpp"
#include "advloop/generator.hpp"
#include "advloop/ipl.hpp"
#include "advloop/policy.hpp"
#include "advloop/rl.hpp"
#include "advloop/rng.hpp"
#include "advloop/scenario_gen.hpp"
#include "advloop/sim.hpp"
#include "advloop/theory.hpp"

namespace fs = std::filesystem;
using namespace advloop;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int id, const std::string& name, bool pass,
            const std::string& detail, double secs) {
    if (!pass) ++g_failures;
    std::printf("[%s] %d %-20s %s (%.1f s)\n", pass ? "PASS" : "FAIL", id,
                name.c_str(), detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

fs::path workspace() {
    static const fs::path dir = [] {
        const fs::path p = fs::temp_directory_path() / "advloop_acceptance";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

std::vector<sim::Scenario> corpus_of(int count, std::uint64_t seed) {
    sim::CorpusConfig cfg;
    cfg.count = count;
    cfg.seed = seed;
    return sim::make_synthetic_scenarios(cfg);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Average ranks (ties averaged), then the Pearson correlation of the two
/// rank vectors.
std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * (static_cast<double>(i) +
                                static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------

void criterion_1_theory() {
    const auto t0 = Clock::now();
    const nlohmann::json r = theory::theory_report(7);
    const auto& c = r.at("checks");
    bool ok = r.at("pass").get<bool>();
    ok = ok && c.at("contraction").at("instances") == 1000 &&
         c.at("contraction").at("worst_ratio_minus_gamma").get<double>() <=
             1e-9;
    ok = ok && c.at("softmin_nonexpansive").at("pairs") == 10000 &&
         c.at("softmin_nonexpansive")
                 .at("worst_gap_minus_delta")
                 .get<double>() <= 1e-9;
    ok = ok && c.at("pinsker").at("pairs") == 10000 &&
         c.at("pinsker").at("violations") == 0;
    ok = ok && c.at("value_difference_identity").at("instances") == 500 &&
         c.at("value_difference_identity").at("worst_residual").get<double>() <
             1e-9;
    ok = ok && c.at("generalization_bound").at("instances") == 200 &&
         c.at("generalization_bound").at("pass").get<bool>();
    ok = ok && c.at("safety_bound").at("instances") == 200 &&
         c.at("safety_bound").at("pass").get<bool>();
    ok = ok &&
         c.at("saddle_point").at("worst_violation").get<double>() <= 1e-6;
    const double secs = seconds_since(t0);
    ok = ok && secs < 120.0;
    report(1, "theory-sweeps", ok,
           "9 randomized suites, worst contraction margin " +
               fmt(c.at("contraction")
                       .at("worst_ratio_minus_gamma")
                       .get<double>()) +
               ", worst identity residual " +
               fmt(c.at("value_difference_identity")
                       .at("worst_residual")
                       .get<double>()),
           secs);
}

// ---------------------------------------------------------------------------

void criterion_2_sampler() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng = rng::make_stream(2, "acc/sampler");
    bool equiv_ok = true, order_ok = true, perturb_ok = true, limit_ok = true;
    double worst_gap = 0.0;

    for (int i = 0; i < 500; ++i) {
        const std::size_t m = 2 + rng::uniform_index(rng, 8);
        const double temp = (i % 3 == 0) ? 0.05 : (i % 3 == 1 ? 0.3 : 1.0);
        std::vector<double> j_hats(m);
        for (double& j : j_hats) j = rng::uniform_in(rng, -5.0, 5.0);

        // The Boltzmann pick's distribution must equal the Gibbs posterior
        // under a uniform prior with tau = temperature.
        std::mt19937_64 pick = rng::make_stream(9000 + i, "acc/pick");
        const adversary::Selection sel = adversary::softmax_select(
            j_hats, adversary::SamplerConfig{temp, false}, pick);
        const std::vector<double> uniform(m, 1.0 / static_cast<double>(m));
        const theory::GibbsPosterior gp =
            theory::gibbs_posterior(uniform, j_hats, temp);
        for (std::size_t k = 0; k < m; ++k) {
            worst_gap = std::max(
                worst_gap, std::abs(sel.probabilities[k] - gp.probs[k]));
            equiv_ok =
                equiv_ok && std::abs(sel.probabilities[k] - gp.probs[k]) < 1e-12;
        }

        // Monotonicity: strictly lower estimated return, strictly higher
        // selection probability; lowering one entry raises its probability.
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t b = 0; b < m; ++b)
                if (j_hats[a] < j_hats[b] &&
                    sel.probabilities[a] <= sel.probabilities[b])
                    order_ok = false;
        // Lowering an entry can only raise its probability, strictly so
        // whenever it is not already pinned at 1.0 in double precision.
        std::vector<double> lowered = j_hats;
        lowered[0] -= 1.0;
        std::mt19937_64 pick2 = rng::make_stream(9000 + i, "acc/pick");
        const adversary::Selection sel2 = adversary::softmax_select(
            lowered, adversary::SamplerConfig{temp, false}, pick2);
        perturb_ok = perturb_ok && sel2.probabilities[0] >= sel.probabilities[0];
        if (sel.probabilities[0] < 1.0 - 1e-9)
            perturb_ok =
                perturb_ok && sel2.probabilities[0] > sel.probabilities[0];
    }

    // Temperature limits: the cold end is the deterministic argmin, the hot
    // end is uniform.
    for (int i = 0; i < 100; ++i) {
        const std::size_t m = 3 + rng::uniform_index(rng, 6);
        std::vector<double> j_hats(m);
        for (double& j : j_hats) j = rng::uniform_in(rng, -5.0, 5.0);
        const std::size_t argmin = static_cast<std::size_t>(
            std::min_element(j_hats.begin(), j_hats.end()) - j_hats.begin());

        std::mt19937_64 p1 = rng::make_stream(100 + i, "acc/cold");
        const adversary::Selection cold = adversary::softmax_select(
            j_hats, adversary::SamplerConfig{1e-13, false}, p1);
        limit_ok = limit_ok && cold.index == argmin &&
                   cold.probabilities[argmin] == 1.0;

        std::mt19937_64 p2 = rng::make_stream(100 + i, "acc/cool");
        const adversary::Selection cool = adversary::softmax_select(
            j_hats, adversary::SamplerConfig{1e-4, false}, p2);
        limit_ok = limit_ok && cool.probabilities[argmin] > 0.999;

        std::mt19937_64 p3 = rng::make_stream(100 + i, "acc/hot");
        const adversary::Selection hot = adversary::softmax_select(
            j_hats, adversary::SamplerConfig{1e9, false}, p3);
        for (std::size_t k = 0; k < m; ++k)
            limit_ok = limit_ok && std::abs(hot.probabilities[k] -
                                            1.0 / static_cast<double>(m)) <
                                      1e-6;
    }

    const auto mark = [](bool flag) { return flag ? "ok" : "FAILED"; };
    report(2, "sampler-equivalence",
           equiv_ok && order_ok && perturb_ok && limit_ok,
           "500 draws, worst |P_select - P_gibbs| = " + fmt(worst_gap) +
               " (< 1e-12); ordering " + mark(order_ok) + "; perturbation " +
               mark(perturb_ok) + "; cold/hot limits " + mark(limit_ok),
           seconds_since(t0));
}

// ---------------------------------------------------------------------------

void criterion_3_preference() {
    const auto t0 = Clock::now();
    bool ok = true;

    // (a) At the anchor the preference logit vanishes, so the loss is ln 2.
    double worst_ln2 = 0.0;
    for (int i = 0; i < 20; ++i) {
        const sim::Scenario scn = sim::make_scenario(
            sim::kScenarioTemplates[i % 4], 500 + static_cast<unsigned>(i),
            i);
        generator::GeneratorConfig gcfg;
        gcfg.num_candidates = 8;
        const generator::CandidateSet set =
            generator::synthesize_candidates(scn, gcfg, 600 + i);
        const generator::GeneratorParams params =
            generator::pretrained_params(600 + i, gcfg);
        const generator::GeneratorParams ref =
            generator::freeze_reference(params);
        std::vector<ipl::PreferencePair> pairs;
        for (std::size_t w = 0; w + 1 < set.candidates.size(); w += 2)
            pairs.push_back({w, w + 1, 1.0});
        const double loss = ipl::ipl_loss(params, ref, set, pairs, 0.05);
        worst_ln2 = std::max(worst_ln2, std::abs(loss - std::numbers::ln2));
    }
    ok = ok && worst_ln2 <= 1e-9;

    // (b) Analytic gradient against central finite differences of the mean
    // loss, 100 random batches.
    std::mt19937_64 rng = rng::make_stream(3, "acc/fd");
    double worst_rel = 0.0;
    for (int b = 0; b < 100; ++b) {
        const sim::Scenario scn = sim::make_scenario(
            sim::kScenarioTemplates[b % 4], 700 + static_cast<unsigned>(b),
            b);
        generator::GeneratorConfig gcfg;
        gcfg.num_candidates = 8;
        const generator::CandidateSet set =
            generator::synthesize_candidates(scn, gcfg, 800 + b);
        generator::GeneratorParams params =
            generator::pretrained_params(800 + b, gcfg);
        for (double& w : params.weights) w += rng::uniform_in(rng, -1.0, 1.0);
        const generator::GeneratorParams ref =
            generator::freeze_reference(generator::pretrained_params(
                800 + b, gcfg));
        const double tau = (b % 2 == 0) ? 0.05 : 0.5;
        std::vector<ipl::PreferencePair> pairs;
        for (int p = 0; p < 4; ++p) {
            const std::size_t w =
                rng::uniform_index(rng, set.candidates.size());
            std::size_t l = rng::uniform_index(rng, set.candidates.size());
            while (l == w) l = rng::uniform_index(rng, set.candidates.size());
            pairs.push_back({w, l, 1.0});
        }
        const generator::Features sum =
            ipl::ipl_gradient_sum(params, ref, set, pairs, tau);
        for (int d = 0; d < generator::kFeatureDim; ++d) {
            const std::size_t k = static_cast<std::size_t>(d);
            const double analytic =
                sum[k] / static_cast<double>(pairs.size());
            const double h = 1e-6;
            generator::GeneratorParams plus = params, minus = params;
            plus.weights[k] += h;
            minus.weights[k] -= h;
            const double fd = (ipl::ipl_loss(plus, ref, set, pairs, tau) -
                               ipl::ipl_loss(minus, ref, set, pairs, tau)) /
                              (2.0 * h);
            // Central differences bottom out at ~eps * |loss| / (2h) ~ 1e-10
            // absolute; below that the comparison is roundoff, not signal,
            // so gaps under 1e-9 pass outright. Resolvable components must
            // agree to 1e-4 relative.
            if (std::abs(analytic - fd) < 1e-9) continue;
            const double denom =
                std::max(1e-7, std::abs(analytic) + std::abs(fd));
            worst_rel = std::max(worst_rel, std::abs(analytic - fd) / denom);
        }
    }
    ok = ok && worst_rel < 1e-4;

    // (c) Exhaustive-pair training on a four-outcome toy must reproduce the
    // Gibbs posterior's ranking of the outcomes.
    generator::CandidateSet toy;
    toy.scenario_id = "toy";
    const std::vector<double> energies = {2.0, 0.0, 3.0, 1.0};
    for (std::size_t k = 0; k < 4; ++k) {
        generator::Candidate c;
        c.features.fill(0.0);
        c.features[k + 1] = 1.0;
        toy.candidates.push_back(c);
    }
    generator::GeneratorParams toy_params;
    toy_params.weights.fill(0.0);
    const generator::GeneratorParams toy_ref = toy_params;
    std::vector<ipl::PreferencePair> all_pairs;
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b)
            if (energies[a] < energies[b])
                all_pairs.push_back({a, b, energies[b] - energies[a]});
    for (int step = 0; step < 2000; ++step) {
        const generator::Features g = ipl::ipl_gradient_sum(
            toy_params, toy_ref, toy, all_pairs, 0.5);
        for (std::size_t d = 0; d < toy_params.weights.size(); ++d)
            toy_params.weights[d] -=
                0.5 * g[d] / static_cast<double>(all_pairs.size());
    }
    const std::vector<double> learned = generator::log_softmax(
        generator::scorer_logits(toy_params, toy));
    const theory::GibbsPosterior gibbs = theory::gibbs_posterior(
        std::vector<double>(4, 0.25), energies, 0.5);
    std::vector<double> neg_energy;
    for (double e : energies) neg_energy.push_back(-e);
    const double rank_agreement = spearman(learned, neg_energy);
    ok = ok && rank_agreement == 1.0 && spearman(learned, gibbs.probs) == 1.0;

    report(3, "preference-learning", ok,
           "anchor loss |loss - ln2| = " + fmt(worst_ln2) +
               ", worst FD rel err = " + fmt(worst_rel) +
               ", toy rank agreement = " + fmt(rank_agreement),
           seconds_since(t0));
}

// ---------------------------------------------------------------------------

void criterion_4_proxy() {
    const auto t0 = Clock::now();
    generator::GeneratorConfig gcfg;
    gcfg.num_candidates = 8;
    const adversary::ProxyConfig proxy;

    // Rank fidelity with a stochastic ego: the offline estimate orders
    // candidates like live rollouts do.
    const std::vector<sim::Scenario> scenarios = corpus_of(25, 1001);
    std::vector<double> j_hat_all, j_live_all;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        const sim::Scenario& scn = scenarios[i];
        sim::RouteFollowController ego({}, /*action_noise=*/0.1);
        adversary::HistoryBuffer buffer(3);
        adversary::warmup_if_empty(buffer, scn, ego, 40'000 + i);
        const generator::CandidateSet set =
            generator::synthesize_candidates(scn, gcfg, 41'000 + i);
        const std::vector<double> j_hats =
            adversary::estimate_returns(scn, buffer, set, proxy);
        for (std::size_t k = 0; k < set.candidates.size(); ++k) {
            const sim::RolloutResult live = sim::rollout_episode(
                ego, scn, &set.candidates[k].trajectory,
                42'000 + 100 * i + k);
            j_hat_all.push_back(j_hats[k]);
            j_live_all.push_back(live.discounted_return);
        }
    }
    const double rho = spearman(j_hat_all, j_live_all);

    // Exact agreement on non-interacting replays of a deterministic ego:
    // candidate 0 is the logged trajectory, and the cached response is the
    // rollout the estimate is judged against.
    const std::vector<sim::Scenario> calm = corpus_of(12, 1002);
    double worst_replay_gap = 0.0;
    int replay_pairs = 0;
    for (std::size_t i = 0; i < calm.size(); ++i) {
        const sim::Scenario& scn = calm[i];
        sim::RouteFollowController ego; // deterministic
        adversary::HistoryBuffer buffer(1);
        adversary::warmup_if_empty(buffer, scn, ego, 43'000 + i);
        const generator::CandidateSet set =
            generator::synthesize_candidates(scn, gcfg, 44'000 + i);
        const sim::RolloutResult live = sim::rollout_episode(
            ego, scn, &set.candidates[0].trajectory, 43'000 + i);
        if (live.termination == sim::Termination::crash ||
            live.termination == sim::Termination::offroad)
            continue;
        const double j_hat = adversary::estimate_expected_return(
            scn, buffer, set.candidates[0].trajectory, proxy);
        worst_replay_gap = std::max(
            worst_replay_gap, std::abs(j_hat - live.discounted_return));
        ++replay_pairs;
    }

    const bool ok = j_hat_all.size() >= 200 && rho >= 0.70 &&
                    replay_pairs >= 5 && worst_replay_gap < 1e-6;
    report(4, "proxy-fidelity", ok,
           "Spearman over " + std::to_string(j_hat_all.size()) +
               " pairs = " + fmt(rho) + " (>= 0.70); replay gap " +
               fmt(worst_replay_gap) + " over " +
               std::to_string(replay_pairs) + " non-interacting pairs",
           seconds_since(t0));
}

// ---------------------------------------------------------------------------

void criterion_5_attack() {
    const auto t0 = Clock::now();

    // Crash-rate ordering against a replay ego on held-out scenarios.
    const std::vector<sim::Scenario> held_out = corpus_of(100, 2002);
    const generator::GeneratorParams prior = generator::pretrained_params(7);
    game::EvalConfig ecfg;
    ecfg.episodes_per_cell = 200;
    ecfg.seed = 55;
    const std::vector<game::EvalCell> cells = game::evaluate_cross(
        {game::replay_eval_policy()},
        {game::AdversaryMode::prior_sample, game::AdversaryMode::energy_sample,
         game::AdversaryMode::hard_min},
        held_out, prior, prior, ecfg);
    std::map<std::string, double> crash;
    for (const game::EvalCell& c : cells)
        crash[game::to_string(c.adversary)] = c.crash;
    const double p = crash.at("prior-sample");
    const double e = crash.at("energy-sample");
    const double h = crash.at("hard-min");
    const bool ordering_ok =
        (p > 0.0) ? (e >= 2.0 * p && h >= 2.0 * p) : (e > 0.0 && h > 0.0);

    // Preference fine-tuning against a fixed ego strictly raises the
    // sampler's expected damage E[-J_hat].
    const std::vector<sim::Scenario> pool = corpus_of(30, 3003);
    adversary::HistoryBuffer buffer(5);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        sim::RouteFollowController ego;
        adversary::warmup_if_empty(buffer, pool[i], ego, 50'000 + i);
    }
    generator::GeneratorParams gen = generator::pretrained_params(7);
    const generator::GeneratorParams ref = generator::freeze_reference(gen);
    const adversary::ProxyConfig proxy;
    std::vector<generator::CandidateSet> probe_sets;
    std::vector<std::vector<double>> probe_jhats;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        probe_sets.push_back(generator::synthesize_candidates(
            pool[i], gen.config, 51'000 + i));
        probe_jhats.push_back(adversary::estimate_returns(
            pool[i], buffer, probe_sets.back(), proxy));
    }
    const auto mean_damage = [&](const generator::GeneratorParams& params) {
        double total = 0.0;
        for (std::size_t i = 0; i < probe_sets.size(); ++i)
            total += ipl::expected_negative_return(params, probe_sets[i],
                                                   probe_jhats[i]);
        return total / static_cast<double>(probe_sets.size());
    };
    const double damage_before = mean_damage(gen);
    ipl::IplConfig icfg;
    icfg.total_rounds = 50;
    for (int round = 0; round < 50; ++round)
        ipl::run_ipl_round(gen, ref, pool, buffer, proxy, icfg, 52'000,
                           round);
    const double damage_after = mean_damage(gen);
    const bool damage_ok = damage_after > damage_before;

    report(5, "attack-efficacy", ordering_ok && damage_ok,
           "crash rates prior " + fmt(p) + ", energy " + fmt(e) +
               ", hard-min " + fmt(h) + " (>= 2x prior); E[-Jhat] " +
               fmt(damage_before) + " -> " + fmt(damage_after) +
               " after 50 rounds",
           seconds_since(t0));
}

// ---------------------------------------------------------------------------

struct DefenseArtifacts {
    std::vector<fs::path> adv_runs; // one per seed, with kept checkpoints
};

DefenseArtifacts g_defense;

void criterion_6_defense() {
    const auto t0 = Clock::now();
    const std::vector<sim::Scenario> train_corpus = corpus_of(200, 11);
    const std::vector<sim::Scenario> held_out = corpus_of(100, 4004);
    const std::vector<std::uint64_t> seeds = {1, 2, 3};

    game::EvalConfig ecfg;
    ecfg.episodes_per_cell = 150;
    ecfg.seed = 77;
    const generator::GeneratorParams prior = generator::pretrained_params(7);

    bool ok = true;
    std::string detail;
    for (std::uint64_t seed : seeds) {
        game::TrainConfig adv_cfg;
        adv_cfg.algorithm = game::Algorithm::grpo;
        adv_cfg.max_steps = 200'000;
        adv_cfg.seed = seed;
        adv_cfg.keep_checkpoint_every = 100;
        adv_cfg.config_hash = "acceptance-defense-adv";

        game::TrainConfig replay_cfg = adv_cfg;
        replay_cfg.probability_floor = 1.0; // every episode replays the log
        replay_cfg.ipl_enabled = false;
        replay_cfg.keep_checkpoint_every = 0;
        replay_cfg.config_hash = "acceptance-defense-replay";

        const fs::path adv_dir =
            workspace() / ("defense_adv_" + std::to_string(seed));
        const fs::path rep_dir =
            workspace() / ("defense_replay_" + std::to_string(seed));
        const game::TrainResult ra =
            game::train(adv_cfg, train_corpus, adv_dir);
        const game::TrainResult rb =
            game::train(replay_cfg, train_corpus, rep_dir);
        if (ra.nan_halt || rb.nan_halt) {
            ok = false;
            detail += " seed " + std::to_string(seed) + ": halted;";
            continue;
        }
        g_defense.adv_runs.push_back(adv_dir);

        const auto [adv_net, a1] = policy::load_policy(adv_dir / "policy.json");
        const auto [rep_net, a2] = policy::load_policy(rep_dir / "policy.json");
        const std::vector<game::EvalCell> cells = game::evaluate_cross(
            {game::net_eval_policy("adversarial", adv_net),
             game::net_eval_policy("replay-trained", rep_net)},
            {game::AdversaryMode::energy_sample}, held_out, prior, prior,
            ecfg);
        const game::EvalCell& a = cells[0];
        const game::EvalCell& b = cells[1];
        const bool seed_ok = a.crash < b.crash && a.reward > b.reward;
        ok = ok && seed_ok;
        detail += " s" + std::to_string(seed) + ": crash " + fmt(a.crash) +
                  " vs " + fmt(b.crash) + ", return " + fmt(a.reward) +
                  " vs " + fmt(b.reward) + (seed_ok ? ";" : " (WRONG SIGN);");
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 7200.0;
    report(6, "defense-direction", ok, "3 seeds, 2e5 steps each:" + detail,
           secs);
}

// ---------------------------------------------------------------------------

void criterion_7_grpo() {
    const auto t0 = Clock::now();
    bool ok = true;

    // Hand-worked three-episode group, gamma = 0.5.
    //   returns-to-go: {2, 2}, {2}, {3.5, 1}
    //   t = 0 column {2, 2, 3.5}: mean 2.5, population std sqrt(0.5)
    //   t = 1 column {2, 0 (pad), 1}: mean 1, population std sqrt(2/3)
    const std::vector<std::vector<double>> rewards = {
        {1.0, 2.0}, {2.0}, {3.0, 1.0}};
    const auto adv = rl::grpo_advantages(rewards, 0.5);
    const double s0 = std::sqrt(0.5) + 1e-8;
    const double s1 = std::sqrt(2.0 / 3.0) + 1e-8;
    const std::vector<std::vector<double>> expected = {
        {(2.0 - 2.5) / s0, (2.0 - 1.0) / s1},
        {(2.0 - 2.5) / s0},
        {(3.5 - 2.5) / s0, (1.0 - 1.0) / s1}};
    double worst = 0.0;
    ok = ok && adv.size() == expected.size();
    for (std::size_t g = 0; g < expected.size() && ok; ++g) {
        ok = ok && adv[g].size() == expected[g].size();
        for (std::size_t t = 0; t < expected[g].size() && ok; ++t)
            worst = std::max(worst, std::abs(adv[g][t] - expected[g][t]));
    }
    ok = ok && worst <= 1e-12;

    // Clipping. A normalized column can never exceed sqrt(n - 1) in
    // magnitude, so forcing the clamp takes a wide group: 40 single-step
    // episodes with one extreme outlier put the outlier at z ~ 6.2, which
    // must come back as exactly +/-5.
    for (const double sign : {1.0, -1.0}) {
        std::vector<std::vector<double>> wide(40, std::vector<double>{0.0});
        wide[0][0] = sign * 1e6;
        const auto clipped = rl::grpo_advantages(wide, 0.99);
        ok = ok && clipped[0][0] == sign * 5.0;
        for (std::size_t g = 1; g < clipped.size(); ++g)
            ok = ok && std::abs(clipped[g][0]) <= 5.0;
    }
    // And the bound holds for arbitrary groups.
    std::mt19937_64 rng = rng::make_stream(7, "acc/grpo");
    for (int trial = 0; trial < 200 && ok; ++trial) {
        std::vector<std::vector<double>> group(
            2 + rng::uniform_index(rng, 6));
        for (auto& ep : group) {
            ep.resize(1 + rng::uniform_index(rng, 12));
            for (double& r : ep) r = rng::uniform_in(rng, -2.0, 2.0);
        }
        for (const auto& ep : rl::grpo_advantages(group, 0.99))
            for (double a : ep)
                ok = ok && std::abs(a) <= 5.0 + 1e-12;
    }

    // Identical episodes carry exactly zero advantage everywhere.
    const auto zeros = rl::grpo_advantages(
        {{1.0, -1.0, 0.5}, {1.0, -1.0, 0.5}, {1.0, -1.0, 0.5}}, 0.9);
    for (const auto& ep : zeros)
        for (double a : ep) ok = ok && a == 0.0;

    // Zero-padding: the shorter episode's absence counts as a zero return
    // in later columns, and outputs keep the real lengths.
    const auto padded = rl::grpo_advantages({{1.0}, {1.0, 1.0}}, 1.0);
    const double p0 = 0.5 + 1e-8;  // t=0: {1, 2} -> std 0.5
    const double p1 = 0.5 + 1e-8;  // t=1: {0 (pad), 1} -> std 0.5
    ok = ok && padded[0].size() == 1 && padded[1].size() == 2;
    ok = ok && std::abs(padded[0][0] - (1.0 - 1.5) / p0) <= 1e-12;
    ok = ok && std::abs(padded[1][0] - (2.0 - 1.5) / p0) <= 1e-12;
    ok = ok && std::abs(padded[1][1] - (1.0 - 0.5) / p1) <= 1e-12;

    report(7, "group-normalization", ok,
           "hand example worst gap " + fmt(worst) +
               " (<= 1e-12); clipped to [-5, 5]; identical-group zeros; "
               "padding exact",
           seconds_since(t0));
}

// ---------------------------------------------------------------------------

void criterion_8_bound() {
    const auto t0 = Clock::now();
    const std::vector<sim::Scenario> held_out = corpus_of(100, 4004);
    game::EvalConfig ecfg;
    ecfg.seed = 88;

    bool ok = !g_defense.adv_runs.empty();
    int checked = 0;
    double worst_slack = std::numeric_limits<double>::infinity();
    double ref_penalty = 0.0;
    for (const fs::path& run : g_defense.adv_runs) {
        std::vector<fs::path> points;
        if (fs::exists(run / "checkpoints"))
            for (const auto& e : fs::directory_iterator(run / "checkpoints"))
                if (e.is_directory()) points.push_back(e.path());
        std::sort(points.begin(), points.end());
        points.push_back(run); // the final state
        for (const fs::path& point : points) {
            const auto [net, adam] =
                policy::load_policy(point / "policy.json");
            const auto [tuned, ref] =
                generator::load_generator(point / "generator.json");
            const game::BoundReport r =
                game::bound_report(net, tuned, ref, held_out, 100, ecfg);
            worst_slack =
                std::min(worst_slack, r.replay_return - r.certified_bound);
            ok = ok && r.replay_return >= r.certified_bound;
            ++checked;

            // With the reference generator in both roles the divergence
            // penalty must vanish identically.
            const game::BoundReport at_ref =
                game::bound_report(net, ref, ref, held_out, 20, ecfg);
            ref_penalty = std::max(ref_penalty, at_ref.penalty);
            ok = ok && at_ref.penalty == 0.0 && at_ref.mean_kl == 0.0 &&
                 at_ref.robust_return == at_ref.replay_return;
        }
    }
    ok = ok && checked > 0;
    report(8, "bound-soundness", ok,
           std::to_string(checked) + " checkpoints: min(replay - bound) = " +
               fmt(worst_slack) + " (>= 0); penalty at reference = " +
               fmt(ref_penalty) + " (exactly 0)",
           seconds_since(t0));
}

// ---------------------------------------------------------------------------

void criterion_9_determinism() {
    const auto t0 = Clock::now();
    const std::vector<sim::Scenario> corpus = corpus_of(20, 21);
    bool ok = true;
    std::string parts;

    const auto run_twice = [&](game::TrainConfig cfg, const std::string& tag) {
        const fs::path a = workspace() / ("det_" + tag + "_a");
        const fs::path b = workspace() / ("det_" + tag + "_b");
        game::train(cfg, corpus, a);
        game::train(cfg, corpus, b);
        const bool same =
            slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl") &&
            slurp(a / "decisions.jsonl") == slurp(b / "decisions.jsonl") &&
            slurp(a / "policy.json") == slurp(b / "policy.json");
        ok = ok && same;
        parts += " " + tag + (same ? " identical;" : " DIFFERS;");
    };

    game::TrainConfig grpo;
    grpo.max_steps = 6000;
    grpo.seed = 42;
    grpo.adversary_update_frequency = 2;
    grpo.ipl_rounds_per_block = 2;
    grpo.checkpoint_every_updates = 5;
    grpo.anneal_fraction = 0.1;
    grpo.probability_floor = 0.3;
    grpo.ipl.accumulation = 4;
    grpo.config_hash = "acceptance-det";
    run_twice(grpo, "grpo");

    game::TrainConfig ppo = grpo;
    ppo.algorithm = game::Algorithm::ppo;
    ppo.max_steps = 4000;
    ppo.ppo.update_timesteps = 512;
    ppo.ppo.minibatch = 128;
    run_twice(ppo, "ppo");

    const generator::GeneratorParams prior = generator::pretrained_params(7);
    game::EvalConfig ecfg;
    ecfg.episodes_per_cell = 20;
    ecfg.seed = 5;
    const auto eval_once = [&](const fs::path& out) {
        const std::vector<game::EvalCell> cells = game::evaluate_cross(
            {game::replay_eval_policy()}, game::kAllAdversaryModes, corpus,
            prior, prior, ecfg);
        game::write_eval_csv(out, cells);
    };
    eval_once(workspace() / "det_eval_a.csv");
    eval_once(workspace() / "det_eval_b.csv");
    const bool eval_same = slurp(workspace() / "det_eval_a.csv") ==
                           slurp(workspace() / "det_eval_b.csv");
    ok = ok && eval_same;
    parts += std::string(" eval ") + (eval_same ? "identical;" : "DIFFERS;");

    const bool theory_same =
        theory::theory_report(7).dump() == theory::theory_report(7).dump();
    ok = ok && theory_same;
    parts += std::string(" theory ") + (theory_same ? "identical" : "DIFFERS");

    report(9, "determinism", ok, "reruns:" + parts, seconds_since(t0));
}

} // namespace

int main() {
    const auto t0 = Clock::now();
    criterion_1_theory();
    criterion_2_sampler();
    criterion_3_preference();
    criterion_4_proxy();
    criterion_5_attack();
    criterion_6_defense();
    criterion_7_grpo();
    criterion_8_bound();
    criterion_9_determinism();
    std::printf("%d/9 criteria passed (total %.1f s)\n", 9 - g_failures,
                seconds_since(t0));
    return g_failures == 0 ? 0 : 1;
}
