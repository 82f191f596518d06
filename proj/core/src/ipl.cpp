#include "advloop/ipl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "advloop/rng.hpp"

namespace advloop::ipl {

namespace {

double softplus(double x) {
    // Stable log(1 + e^x).
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
}

} // namespace

std::vector<PreferencePair> build_pairs(const generator::CandidateSet& set,
                                        const std::vector<double>& j_hats,
                                        const IplConfig& cfg) {
    if (j_hats.size() != set.candidates.size())
        throw std::invalid_argument("build_pairs: estimate count mismatch");
    std::vector<PreferencePair> out;
    const std::size_t n = set.candidates.size();
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            if (a == b) continue;
            const double margin = j_hats[b] - j_hats[a];
            if (margin <= cfg.margin_delta) continue;
            if (sim::max_pointwise_distance(set.candidates[a].trajectory,
                                            set.candidates[b].trajectory) <=
                cfg.diversity_xi)
                continue;
            out.push_back(PreferencePair{a, b, margin});
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const PreferencePair& x, const PreferencePair& y) {
                         return x.margin > y.margin;
                     });
    if (cfg.pairs_per_scenario >= 0 &&
        out.size() > static_cast<std::size_t>(cfg.pairs_per_scenario))
        out.resize(static_cast<std::size_t>(cfg.pairs_per_scenario));
    return out;
}

double pair_logit(const generator::GeneratorParams& params,
                  const generator::GeneratorParams& reference,
                  const generator::CandidateSet& set,
                  const PreferencePair& pair, double tau) {
    const generator::Features& fw =
        set.candidates.at(pair.winner).features;
    const generator::Features& fl = set.candidates.at(pair.loser).features;
    double h = 0.0;
    for (int i = 0; i < generator::kFeatureDim; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        h += (params.weights[k] - reference.weights[k]) * (fw[k] - fl[k]);
    }
    return tau * h;
}

double ipl_loss(const generator::GeneratorParams& params,
                const generator::GeneratorParams& reference,
                const generator::CandidateSet& set,
                const std::vector<PreferencePair>& pairs, double tau) {
    if (pairs.empty()) throw std::invalid_argument("ipl_loss: no pairs");
    double total = 0.0;
    for (const PreferencePair& p : pairs)
        total += softplus(-pair_logit(params, reference, set, p, tau));
    return total / static_cast<double>(pairs.size());
}

generator::Features ipl_gradient_sum(
    const generator::GeneratorParams& params,
    const generator::GeneratorParams& reference,
    const generator::CandidateSet& set,
    const std::vector<PreferencePair>& pairs, double tau) {
    generator::Features grad{};
    for (const PreferencePair& p : pairs) {
        const double h = pair_logit(params, reference, set, p, tau);
        const double scale = -sigmoid(-h) * tau;
        const generator::Features& fw =
            set.candidates.at(p.winner).features;
        const generator::Features& fl = set.candidates.at(p.loser).features;
        for (int i = 0; i < generator::kFeatureDim; ++i) {
            const std::size_t k = static_cast<std::size_t>(i);
            grad[k] += scale * (fw[k] - fl[k]);
        }
    }
    return grad;
}

std::vector<IplBatch> draw_batches(const std::vector<sim::Scenario>& pool,
                                   const adversary::HistoryBuffer& buffer,
                                   const generator::GeneratorConfig& gen_cfg,
                                   const adversary::ProxyConfig& proxy_cfg,
                                   const IplConfig& cfg, std::uint64_t seed,
                                   int round_index) {
    if (pool.empty())
        throw std::invalid_argument("draw_batches: empty scenario pool");
    std::mt19937_64 rng = rng::make_stream(
        seed, "ipl/round/" + std::to_string(round_index));
    std::vector<IplBatch> out;
    out.reserve(static_cast<std::size_t>(cfg.accumulation));
    for (int b = 0; b < cfg.accumulation; ++b) {
        const sim::Scenario& sc = pool[rng::uniform_index(rng, pool.size())];
        const std::uint64_t synth_seed = rng();
        IplBatch batch;
        batch.set = generator::synthesize_candidates(sc, gen_cfg, synth_seed);
        batch.j_hats =
            adversary::estimate_returns(sc, buffer, batch.set, proxy_cfg);
        batch.pairs = build_pairs(batch.set, batch.j_hats, cfg);
        out.push_back(std::move(batch));
    }
    return out;
}

IplRoundStats apply_ipl_step(generator::GeneratorParams& params,
                             const generator::GeneratorParams& reference,
                             const std::vector<IplBatch>& batches,
                             const IplConfig& cfg, int round_index) {
    IplRoundStats stats;
    generator::Features grad_total{};
    double loss_total = 0.0;
    for (const IplBatch& batch : batches) {
        if (batch.pairs.empty()) continue;
        const generator::Features g = ipl_gradient_sum(
            params, reference, batch.set, batch.pairs, cfg.tau);
        for (std::size_t k = 0; k < g.size(); ++k) grad_total[k] += g[k];
        for (const PreferencePair& p : batch.pairs)
            loss_total += softplus(
                -pair_logit(params, reference, batch.set, p, cfg.tau));
        stats.pair_count += batch.pairs.size();
    }
    if (stats.pair_count == 0) return stats;

    const double inv = 1.0 / static_cast<double>(stats.pair_count);
    stats.mean_loss = loss_total * inv;
    double lr = cfg.learning_rate;
    if (cfg.cosine_decay && cfg.total_rounds > 0) {
        const double frac =
            std::clamp(static_cast<double>(round_index) /
                           static_cast<double>(cfg.total_rounds),
                       0.0, 1.0);
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    }
    stats.step_scale = lr;

    double norm_sq = 0.0;
    for (std::size_t k = 0; k < grad_total.size(); ++k) {
        const double g = grad_total[k] * inv;
        stats.applied_gradient[k] = g;
        norm_sq += g * g;
        params.weights[k] -= lr * g;
    }
    stats.grad_norm = std::sqrt(norm_sq);
    return stats;
}

IplRoundStats run_ipl_round(generator::GeneratorParams& params,
                            const generator::GeneratorParams& reference,
                            const std::vector<sim::Scenario>& pool,
                            const adversary::HistoryBuffer& buffer,
                            const adversary::ProxyConfig& proxy_cfg,
                            const IplConfig& cfg, std::uint64_t seed,
                            int round_index) {
    const std::vector<IplBatch> batches =
        draw_batches(pool, buffer, params.config, proxy_cfg, cfg, seed,
                     round_index);
    return apply_ipl_step(params, reference, batches, cfg, round_index);
}

double expected_negative_return(const generator::GeneratorParams& params,
                                const generator::CandidateSet& set,
                                const std::vector<double>& j_hats) {
    if (j_hats.size() != set.candidates.size())
        throw std::invalid_argument(
            "expected_negative_return: estimate count mismatch");
    const std::vector<double> logp =
        generator::log_softmax(generator::scorer_logits(params, set));
    double total = 0.0;
    for (std::size_t k = 0; k < logp.size(); ++k)
        total += std::exp(logp[k]) * (-j_hats[k]);
    return total;
}

} // namespace advloop::ipl
