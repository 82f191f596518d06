#include "advloop/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "advloop/rng.hpp"

namespace advloop::rl {

namespace {

// Shared per-step surrogate + k3 contribution. Returns the derivative of
// the total loss with respect to the fresh log-probability and accumulates
// the loss terms.
struct StepLoss {
    double dlp = 0.0;
    double surrogate = 0.0;
    double k3 = 0.0;
};

StepLoss clipped_step(double new_lp, double old_lp, double adv, double clip,
                      double kl_beta) {
    StepLoss out;
    const double ratio = std::exp(new_lp - old_lp);
    const double unclipped = ratio * adv;
    const double clipped =
        std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv;
    out.surrogate = -std::min(unclipped, clipped);
    if (unclipped <= clipped) out.dlp -= adv * ratio;

    if (kl_beta != 0.0) {
        const double delta = old_lp - new_lp;
        const double e = std::exp(delta);
        out.k3 = e - 1.0 - delta;
        out.dlp += kl_beta * (1.0 - e);
    }
    return out;
}

double grad_norm_of(const std::vector<double>& g) {
    double s = 0.0;
    for (double v : g) s += v * v;
    return std::sqrt(s);
}

} // namespace

std::vector<std::vector<double>> grpo_advantages(
    const std::vector<std::vector<double>>& rewards, double gamma,
    double adv_clip) {
    if (rewards.empty())
        throw std::invalid_argument("grpo_advantages: empty group");
    const std::size_t g_count = rewards.size();
    std::size_t t_max = 0;

    std::vector<std::vector<double>> rtg(g_count);
    for (std::size_t g = 0; g < g_count; ++g) {
        const std::vector<double>& r = rewards[g];
        if (r.empty())
            throw std::invalid_argument("grpo_advantages: empty episode");
        rtg[g].resize(r.size());
        double acc = 0.0;
        for (std::size_t t = r.size(); t-- > 0;) {
            acc = r[t] + gamma * acc;
            rtg[g][t] = acc;
        }
        t_max = std::max(t_max, r.size());
    }

    std::vector<std::vector<double>> adv(g_count);
    for (std::size_t g = 0; g < g_count; ++g)
        adv[g].resize(rtg[g].size());

    for (std::size_t t = 0; t < t_max; ++t) {
        double mean = 0.0;
        for (std::size_t g = 0; g < g_count; ++g)
            mean += t < rtg[g].size() ? rtg[g][t] : 0.0;
        mean /= static_cast<double>(g_count);
        double var = 0.0;
        for (std::size_t g = 0; g < g_count; ++g) {
            const double v = (t < rtg[g].size() ? rtg[g][t] : 0.0) - mean;
            var += v * v;
        }
        const double sigma = std::sqrt(var / static_cast<double>(g_count));
        for (std::size_t g = 0; g < g_count; ++g) {
            if (t >= rtg[g].size()) continue;
            adv[g][t] = std::clamp((rtg[g][t] - mean) / (sigma + 1e-8),
                                   -adv_clip, adv_clip);
        }
    }
    return adv;
}

UpdateStats grpo_update(policy::PolicyNet& net, policy::Adam& adam,
                        const std::vector<sim::RolloutResult>& group,
                        const GrpoConfig& cfg) {
    if (group.empty())
        throw std::invalid_argument("grpo_update: empty group");
    std::vector<std::vector<double>> rewards(group.size());
    std::size_t total = 0;
    for (std::size_t g = 0; g < group.size(); ++g) {
        rewards[g].reserve(group[g].steps.size());
        for (const sim::StepRecord& rec : group[g].steps)
            rewards[g].push_back(rec.reward);
        total += group[g].steps.size();
    }
    const std::vector<std::vector<double>> adv =
        grpo_advantages(rewards, cfg.gamma, cfg.adv_clip);

    UpdateStats stats;
    stats.steps = total;
    const double inv = 1.0 / static_cast<double>(total);
    std::vector<double> grad(net.param_count());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double surr = 0.0, kl = 0.0, ent = 0.0;
        for (std::size_t g = 0; g < group.size(); ++g) {
            for (std::size_t t = 0; t < group[g].steps.size(); ++t) {
                const sim::StepRecord& rec = group[g].steps[t];
                const policy::ForwardCache cache = net.forward(rec.obs);
                const double new_lp = policy::tanh_gaussian_log_prob(
                    cache.mean, cache.logstd, rec.info.pre_squash);
                const StepLoss sl =
                    clipped_step(new_lp, rec.info.log_prob, adv[g][t],
                                 cfg.clip, cfg.kl_beta);
                surr += sl.surrogate;
                kl += sl.k3;
                ent += policy::gaussian_entropy(cache.logstd);

                std::array<double, 2> dm{}, ds{};
                policy::tanh_gaussian_log_prob_grads(
                    cache.mean, cache.logstd, rec.info.pre_squash, dm, ds);
                const double scale = sl.dlp * inv;
                for (std::size_t a = 0; a < 2; ++a) {
                    dm[a] *= scale;
                    ds[a] *= scale;
                }
                net.backward(cache, dm, ds, 0.0, grad);
            }
        }
        adam.step(net.params(), grad);
        stats.surrogate = surr * inv;
        stats.kl = kl * inv;
        stats.entropy = ent * inv;
        stats.grad_norm = grad_norm_of(grad);
    }
    return stats;
}

std::pair<std::vector<double>, std::vector<double>> gae(
    const std::vector<double>& rewards, const std::vector<double>& values,
    double gamma, double lam) {
    if (rewards.size() != values.size())
        throw std::invalid_argument("gae: reward/value size mismatch");
    const std::size_t n = rewards.size();
    std::vector<double> adv(n), ret(n);
    double acc = 0.0;
    for (std::size_t t = n; t-- > 0;) {
        const double v_next = t + 1 < n ? values[t + 1] : 0.0;
        const double delta = rewards[t] + gamma * v_next - values[t];
        acc = delta + gamma * lam * acc;
        adv[t] = acc;
        ret[t] = acc + values[t];
    }
    return {std::move(adv), std::move(ret)};
}

std::vector<Transition> build_ppo_batch(
    const std::vector<sim::RolloutResult>& episodes, const PpoConfig& cfg) {
    std::vector<Transition> batch;
    for (const sim::RolloutResult& ep : episodes) {
        std::vector<double> rewards, values;
        rewards.reserve(ep.steps.size());
        values.reserve(ep.steps.size());
        for (const sim::StepRecord& rec : ep.steps) {
            rewards.push_back(rec.reward);
            values.push_back(rec.info.value);
        }
        if (rewards.empty()) continue;
        const auto [adv, ret] = gae(rewards, values, cfg.gamma, cfg.lam);
        for (std::size_t t = 0; t < ep.steps.size(); ++t) {
            Transition tr;
            tr.obs = ep.steps[t].obs;
            tr.pre_squash = ep.steps[t].info.pre_squash;
            tr.old_log_prob = ep.steps[t].info.log_prob;
            tr.advantage = adv[t];
            tr.value_target = ret[t];
            batch.push_back(std::move(tr));
        }
    }
    if (batch.empty()) return batch;

    double mean = 0.0;
    for (const Transition& tr : batch) mean += tr.advantage;
    mean /= static_cast<double>(batch.size());
    double var = 0.0;
    for (const Transition& tr : batch) {
        const double d = tr.advantage - mean;
        var += d * d;
    }
    const double sigma =
        std::sqrt(var / static_cast<double>(batch.size()));
    for (Transition& tr : batch)
        tr.advantage = (tr.advantage - mean) / (sigma + 1e-8);
    return batch;
}

UpdateStats ppo_update(policy::PolicyNet& net, policy::Adam& adam,
                       const std::vector<Transition>& batch,
                       const PpoConfig& cfg, std::mt19937_64& rng) {
    if (batch.empty()) throw std::invalid_argument("ppo_update: empty batch");
    const std::size_t n = batch.size();
    const std::size_t mb =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatch), n);

    UpdateStats stats;
    stats.steps = n;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grad(net.param_count());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the engine-native index draw.
        for (std::size_t i = n; i-- > 1;)
            std::swap(order[i], order[rng::uniform_index(rng, i + 1)]);

        double surr = 0.0, kl = 0.0, ent = 0.0, vloss = 0.0, gnorm = 0.0;
        for (std::size_t start = 0; start < n; start += mb) {
            const std::size_t end = std::min(n, start + mb);
            const double inv = 1.0 / static_cast<double>(end - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = start; i < end; ++i) {
                const Transition& tr = batch[order[i]];
                const policy::ForwardCache cache = net.forward(tr.obs);
                const double new_lp = policy::tanh_gaussian_log_prob(
                    cache.mean, cache.logstd, tr.pre_squash);
                const StepLoss sl = clipped_step(new_lp, tr.old_log_prob,
                                                 tr.advantage, cfg.clip, 0.0);
                const double vdiff = cache.value - tr.value_target;
                surr += sl.surrogate;
                kl += std::exp(tr.old_log_prob - new_lp) - 1.0 -
                      (tr.old_log_prob - new_lp);
                ent += policy::gaussian_entropy(cache.logstd);
                vloss += cfg.value_coef * vdiff * vdiff;

                std::array<double, 2> dm{}, ds{};
                policy::tanh_gaussian_log_prob_grads(
                    cache.mean, cache.logstd, tr.pre_squash, dm, ds);
                const double scale = sl.dlp * inv;
                for (std::size_t a = 0; a < 2; ++a) {
                    dm[a] *= scale;
                    // Entropy bonus pushes log-std up.
                    ds[a] = ds[a] * scale - cfg.entropy_coef * inv;
                }
                net.backward(cache, dm, ds,
                             2.0 * cfg.value_coef * vdiff * inv, grad);
            }
            adam.step(net.params(), grad);
            gnorm = grad_norm_of(grad);
        }
        const double invn = 1.0 / static_cast<double>(n);
        stats.surrogate = surr * invn;
        stats.kl = kl * invn;
        stats.entropy = ent * invn;
        stats.value_loss = vloss * invn;
        stats.grad_norm = gnorm;
    }
    return stats;
}

} // namespace advloop::rl
