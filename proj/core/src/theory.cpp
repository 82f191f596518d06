#include "advloop/theory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "advloop/adversary.hpp"
#include "advloop/generator.hpp"
#include "advloop/rng.hpp"

namespace advloop::theory {

namespace {

void check_simplex_row(const std::vector<double>& v, std::size_t offset,
                       std::size_t n, const char* what) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = v[offset + i];
        if (!(p >= 0.0))
            throw std::invalid_argument(std::string(what) +
                                        ": negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument(std::string(what) +
                                    ": row does not sum to 1");
}

/// Dense solve of A x = b with partial pivoting; A is row-major n x n and
/// is destroyed. The Bellman systems passed here are strictly diagonally
/// dominant, so the pivot never degenerates in practice.
std::vector<double> linear_solve(std::vector<double> a, std::vector<double> b,
                                 std::size_t n) {
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col]))
                pivot = r;
        if (std::abs(a[pivot * n + col]) < 1e-300)
            throw std::runtime_error("linear_solve: singular system");
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c)
                std::swap(a[col * n + c], a[pivot * n + c]);
            std::swap(b[col], b[pivot]);
        }
        const double inv = 1.0 / a[col * n + col];
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] * inv;
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c)
                a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t ri = n; ri-- > 0;) {
        double acc = b[ri];
        for (std::size_t c = ri + 1; c < n; ++c)
            acc -= a[ri * n + c] * x[c];
        x[ri] = acc / a[ri * n + ri];
    }
    return x;
}

/// Q(s, a, y) = R(s,a) + gamma * E_{s' ~ P(.|s,a,y)}[v(s')] for every y.
void q_row(const TabularGame& game, const std::vector<double>& v,
           std::size_t s, std::size_t a, std::vector<double>& out) {
    out.resize(game.n_outcomes);
    const double r = game.reward[game.sa_index(s, a)];
    for (std::size_t y = 0; y < game.n_outcomes; ++y) {
        const std::size_t base = game.say_index(s, a, y) * game.n_states;
        double ev = 0.0;
        for (std::size_t sn = 0; sn < game.n_states; ++sn)
            ev += game.transition[base + sn] * v[sn];
        out[y] = r + game.gamma * ev;
    }
}

std::vector<double> prior_row(const TabularGame& game, std::size_t s,
                              std::size_t a) {
    const std::size_t base = game.say_index(s, a, 0);
    return {game.prior.begin() + static_cast<std::ptrdiff_t>(base),
            game.prior.begin() +
                static_cast<std::ptrdiff_t>(base + game.n_outcomes)};
}

std::vector<double> row_of(const std::vector<double>& flat, std::size_t row,
                           std::size_t width) {
    const std::size_t base = row * width;
    return {flat.begin() + static_cast<std::ptrdiff_t>(base),
            flat.begin() + static_cast<std::ptrdiff_t>(base + width)};
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (const double x : v) s += x;
    return s / static_cast<double>(v.size());
}

/// Visitation-weighted expected KL(adversary || prior) with weights
/// (1 - gamma) * occupancy(s) * policy(a|s), which sum to one.
double expected_visitation_kl(const TabularGame& game,
                              const std::vector<double>& adversary,
                              const std::vector<double>& policy,
                              const std::vector<double>& occupancy) {
    double acc = 0.0;
    for (std::size_t s = 0; s < game.n_states; ++s)
        for (std::size_t a = 0; a < game.n_actions; ++a) {
            const double w = (1.0 - game.gamma) * occupancy[s] *
                             policy[game.sa_index(s, a)];
            if (w <= 0.0) continue;
            acc += w * adversary::kl_categorical(
                           row_of(adversary, game.sa_index(s, a),
                                  game.n_outcomes),
                           prior_row(game, s, a));
        }
    return acc;
}

}  // namespace

void TabularGame::validate() const {
    if (n_states == 0 || n_actions == 0 || n_outcomes == 0)
        throw std::invalid_argument("TabularGame: empty dimension");
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw std::invalid_argument("TabularGame: gamma outside [0, 1)");
    if (!(tau > 0.0))
        throw std::invalid_argument("TabularGame: tau must be positive");
    const std::size_t sa = n_states * n_actions;
    if (reward.size() != sa)
        throw std::invalid_argument("TabularGame: reward size mismatch");
    if (!cost.empty() && cost.size() != sa)
        throw std::invalid_argument("TabularGame: cost size mismatch");
    if (prior.size() != sa * n_outcomes)
        throw std::invalid_argument("TabularGame: prior size mismatch");
    if (transition.size() != sa * n_outcomes * n_states)
        throw std::invalid_argument("TabularGame: transition size mismatch");
    for (const double r : reward)
        if (std::abs(r) > r_max + 1e-12)
            throw std::invalid_argument("TabularGame: reward exceeds r_max");
    for (const double c : cost)
        if (c < -1e-12 || c > c_max + 1e-12)
            throw std::invalid_argument("TabularGame: cost outside [0, c_max]");
    for (std::size_t row = 0; row < sa; ++row)
        check_simplex_row(prior, row * n_outcomes, n_outcomes,
                          "TabularGame prior");
    for (std::size_t row = 0; row < sa * n_outcomes; ++row)
        check_simplex_row(transition, row * n_states, n_states,
                          "TabularGame transition");
}

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
    if (n == 0) throw std::invalid_argument("random_simplex: empty");
    std::vector<double> out(n);
    double sum = 0.0;
    for (double& x : out) {
        // -log(U) draws are Exp(1); normalizing gives a flat Dirichlet.
        x = -std::log(std::max(rng::uniform(rng), 0x1.0p-53));
        sum += x;
    }
    for (double& x : out) x /= sum;
    return out;
}

TabularGame random_game(std::mt19937_64& rng, std::size_t n_states,
                        std::size_t n_actions, std::size_t n_outcomes,
                        double gamma, double tau, bool with_cost) {
    TabularGame g;
    g.n_states = n_states;
    g.n_actions = n_actions;
    g.n_outcomes = n_outcomes;
    g.gamma = gamma;
    g.tau = tau;
    g.r_max = 1.0;
    g.c_max = 1.0;
    const std::size_t sa = n_states * n_actions;
    g.reward.resize(sa);
    for (double& r : g.reward) r = rng::uniform_in(rng, -1.0, 1.0);
    if (with_cost) {
        g.cost.resize(sa);
        for (double& c : g.cost) c = rng::uniform(rng);
    }
    g.prior.reserve(sa * n_outcomes);
    for (std::size_t row = 0; row < sa; ++row) {
        const std::vector<double> p = random_simplex(rng, n_outcomes);
        g.prior.insert(g.prior.end(), p.begin(), p.end());
    }
    g.transition.reserve(sa * n_outcomes * n_states);
    for (std::size_t row = 0; row < sa * n_outcomes; ++row) {
        const std::vector<double> p = random_simplex(rng, n_states);
        g.transition.insert(g.transition.end(), p.begin(), p.end());
    }
    g.validate();
    return g;
}

GibbsPosterior gibbs_posterior(const std::vector<double>& prior,
                               const std::vector<double>& energies,
                               double tau) {
    if (prior.empty() || prior.size() != energies.size())
        throw std::invalid_argument("gibbs_posterior: size mismatch");
    if (!(tau > 0.0))
        throw std::invalid_argument("gibbs_posterior: tau must be positive");
    // Max-shifted logsumexp over log prior - energy / tau; zero-prior
    // outcomes stay at probability zero.
    std::vector<double> logits(prior.size(),
                               -std::numeric_limits<double>::infinity());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < prior.size(); ++i) {
        if (prior[i] <= 0.0) continue;
        logits[i] = std::log(prior[i]) - energies[i] / tau;
        m = std::max(m, logits[i]);
    }
    if (!std::isfinite(m))
        throw std::invalid_argument("gibbs_posterior: prior has no support");
    GibbsPosterior out;
    out.probs.assign(prior.size(), 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < prior.size(); ++i) {
        if (!std::isfinite(logits[i])) continue;
        out.probs[i] = std::exp(logits[i] - m);
        z += out.probs[i];
    }
    for (double& p : out.probs) p /= z;
    out.log_z = m + std::log(z);
    return out;
}

double gibbs_objective(const std::vector<double>& probs,
                       const std::vector<double>& prior,
                       const std::vector<double>& energies, double tau) {
    if (probs.size() != prior.size() || probs.size() != energies.size())
        throw std::invalid_argument("gibbs_objective: size mismatch");
    double expected = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        expected += probs[i] * -energies[i];
    return expected - tau * adversary::kl_categorical(probs, prior);
}

double softmin_omega(const std::vector<double>& q_values,
                     const std::vector<double>& prior, double tau) {
    return -tau * gibbs_posterior(prior, q_values, tau).log_z;
}

double softmin_by_search(const std::vector<double>& q_values,
                         const std::vector<double>& prior, double tau,
                         std::size_t max_iters) {
    if (prior.empty() || prior.size() != q_values.size())
        throw std::invalid_argument("softmin_by_search: size mismatch");
    if (!(tau > 0.0))
        throw std::invalid_argument("softmin_by_search: tau must be positive");
    const std::size_t n = prior.size();
    std::vector<double> log_prior(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (prior[i] <= 0.0)
            throw std::invalid_argument(
                "softmin_by_search: prior needs full support");
        log_prior[i] = std::log(prior[i]);
    }

    // Gradient descent on F(p) = E_p[q] + tau * KL(p || prior) with
    // multiplicative (mirror) steps kept in log space: p <- p * exp(-step*g)
    // renormalized. The simplex projection this implies never produces the
    // boundary log blowups a Euclidean projection would, and near-vertex
    // optima (tiny tau) keep full descent speed.
    auto objective = [&](const std::vector<double>& logp) {
        double f = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            f += std::exp(logp[i]) *
                 (q_values[i] + tau * (logp[i] - log_prior[i]));
        return f;
    };

    std::vector<double> logp = generator::log_softmax(log_prior);
    double f = objective(logp);
    double step = 1.0;
    std::vector<double> g(n), trial(n);
    for (std::size_t it = 0; it < max_iters; ++it) {
        for (std::size_t i = 0; i < n; ++i)
            g[i] = q_values[i] + tau * (logp[i] - log_prior[i] + 1.0);
        bool moved = false;
        while (step > 1e-16) {
            for (std::size_t i = 0; i < n; ++i)
                trial[i] = logp[i] - step * g[i];
            const std::vector<double> trial_logp =
                generator::log_softmax(trial);
            const double ft = objective(trial_logp);
            if (ft < f - 1e-16) {
                logp = trial_logp;
                f = ft;
                step = std::min(step * 2.0, 1e3);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
    }
    return f;
}

std::vector<double> robust_bellman_apply(const TabularGame& game,
                                         const std::vector<double>& v) {
    if (v.size() != game.n_states)
        throw std::invalid_argument("robust_bellman_apply: value size");
    for (const double x : v)
        if (!std::isfinite(x))
            throw std::invalid_argument(
                "robust_bellman_apply: non-finite value");
    std::vector<double> out(game.n_states, 0.0);
    std::vector<double> q;
    for (std::size_t s = 0; s < game.n_states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < game.n_actions; ++a) {
            q_row(game, v, s, a, q);
            best = std::max(best,
                            softmin_omega(q, prior_row(game, s, a), game.tau));
        }
        out[s] = best;
    }
    return out;
}

double contraction_ratio(const TabularGame& game,
                         const std::vector<double>& v1,
                         const std::vector<double>& v2) {
    if (v1.size() != v2.size())
        throw std::invalid_argument("contraction_ratio: size mismatch");
    double denom = 0.0;
    for (std::size_t i = 0; i < v1.size(); ++i)
        denom = std::max(denom, std::abs(v1[i] - v2[i]));
    if (denom == 0.0)
        throw std::invalid_argument(
            "contraction_ratio: identical value functions");
    const std::vector<double> t1 = robust_bellman_apply(game, v1);
    const std::vector<double> t2 = robust_bellman_apply(game, v2);
    double numer = 0.0;
    for (std::size_t i = 0; i < t1.size(); ++i)
        numer = std::max(numer, std::abs(t1[i] - t2[i]));
    return numer / denom;
}

NashSolution solve_nash_vi(const TabularGame& game, double tol,
                           std::size_t max_iters) {
    if (!(tol > 0.0))
        throw std::invalid_argument("solve_nash_vi: tol must be positive");
    NashSolution out;
    out.value.assign(game.n_states, 0.0);
    for (std::size_t it = 0; it < max_iters; ++it) {
        const std::vector<double> next = robust_bellman_apply(game, out.value);
        double resid = 0.0;
        for (std::size_t s = 0; s < game.n_states; ++s)
            resid = std::max(resid, std::abs(next[s] - out.value[s]));
        out.value = next;
        out.residuals.push_back(resid);
        out.iterations = it + 1;
        if (resid < tol) break;
        if (it + 1 == max_iters)
            throw std::runtime_error("solve_nash_vi: did not converge");
    }
    out.greedy.assign(game.n_states, 0);
    out.policy.assign(game.n_states * game.n_actions, 0.0);
    out.adversary.assign(game.n_states * game.n_actions * game.n_outcomes,
                         0.0);
    std::vector<double> q;
    for (std::size_t s = 0; s < game.n_states; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < game.n_actions; ++a) {
            q_row(game, out.value, s, a, q);
            const std::vector<double> p = prior_row(game, s, a);
            const double omega = softmin_omega(q, p, game.tau);
            if (omega > best) {
                best = omega;
                out.greedy[s] = a;
            }
            const GibbsPosterior gp = gibbs_posterior(p, q, game.tau);
            std::copy(gp.probs.begin(), gp.probs.end(),
                      out.adversary.begin() +
                          static_cast<std::ptrdiff_t>(game.say_index(s, a, 0)));
        }
        out.policy[game.sa_index(s, out.greedy[s])] = 1.0;
    }
    return out;
}

std::vector<double> induced_dynamics(const TabularGame& game,
                                     const std::vector<double>& adversary) {
    if (adversary.size() != game.n_states * game.n_actions * game.n_outcomes)
        throw std::invalid_argument("induced_dynamics: adversary size");
    std::vector<double> dyn(game.n_states * game.n_actions * game.n_states,
                            0.0);
    for (std::size_t s = 0; s < game.n_states; ++s)
        for (std::size_t a = 0; a < game.n_actions; ++a) {
            const std::size_t out_base = game.sa_index(s, a) * game.n_states;
            for (std::size_t y = 0; y < game.n_outcomes; ++y) {
                const double w = adversary[game.say_index(s, a, y)];
                if (w == 0.0) continue;
                const std::size_t in_base =
                    game.say_index(s, a, y) * game.n_states;
                for (std::size_t sn = 0; sn < game.n_states; ++sn)
                    dyn[out_base + sn] += w * game.transition[in_base + sn];
            }
        }
    return dyn;
}

std::vector<double> exact_policy_value(const TabularGame& game,
                                       const std::vector<double>& sa_reward,
                                       const std::vector<double>& dynamics,
                                       const std::vector<double>& policy) {
    const std::size_t n = game.n_states;
    if (sa_reward.size() != n * game.n_actions)
        throw std::invalid_argument("exact_policy_value: reward size");
    if (policy.size() != n * game.n_actions)
        throw std::invalid_argument("exact_policy_value: policy size");
    if (dynamics.size() != n * game.n_actions * n)
        throw std::invalid_argument("exact_policy_value: dynamics size");
    std::vector<double> a(n * n, 0.0);
    std::vector<double> b(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        a[s * n + s] = 1.0;
        for (std::size_t act = 0; act < game.n_actions; ++act) {
            const double w = policy[game.sa_index(s, act)];
            if (w == 0.0) continue;
            b[s] += w * sa_reward[game.sa_index(s, act)];
            const std::size_t base = game.sa_index(s, act) * n;
            for (std::size_t sn = 0; sn < n; ++sn)
                a[s * n + sn] -= game.gamma * w * dynamics[base + sn];
        }
    }
    return linear_solve(std::move(a), std::move(b), n);
}

std::vector<double> discounted_occupancy(const TabularGame& game,
                                         const std::vector<double>& dynamics,
                                         const std::vector<double>& policy) {
    const std::size_t n = game.n_states;
    if (policy.size() != n * game.n_actions)
        throw std::invalid_argument("discounted_occupancy: policy size");
    if (dynamics.size() != n * game.n_actions * n)
        throw std::invalid_argument("discounted_occupancy: dynamics size");
    // Solve d = rho0 + gamma * P_pi^T d with uniform rho0.
    std::vector<double> a(n * n, 0.0);
    std::vector<double> b(n, 1.0 / static_cast<double>(n));
    for (std::size_t s = 0; s < n; ++s) {
        a[s * n + s] += 1.0;
        for (std::size_t act = 0; act < game.n_actions; ++act) {
            const double w = policy[game.sa_index(s, act)];
            if (w == 0.0) continue;
            const std::size_t base = game.sa_index(s, act) * n;
            for (std::size_t sn = 0; sn < n; ++sn)
                a[sn * n + s] -= game.gamma * w * dynamics[base + sn];
        }
    }
    return linear_solve(std::move(a), std::move(b), n);
}

double regularized_objective(const TabularGame& game,
                             const std::vector<double>& policy,
                             const std::vector<double>& adversary) {
    std::vector<double> sa_reward(game.n_states * game.n_actions, 0.0);
    for (std::size_t s = 0; s < game.n_states; ++s)
        for (std::size_t a = 0; a < game.n_actions; ++a) {
            const std::size_t i = game.sa_index(s, a);
            sa_reward[i] =
                game.reward[i] +
                game.tau * adversary::kl_categorical(
                               row_of(adversary, i, game.n_outcomes),
                               prior_row(game, s, a));
        }
    const std::vector<double> dyn = induced_dynamics(game, adversary);
    return mean_of(exact_policy_value(game, sa_reward, dyn, policy));
}

SaddleReport saddle_check(const TabularGame& game, const NashSolution& nash,
                          std::size_t deviations, std::mt19937_64& rng,
                          double tol) {
    const double j_star =
        regularized_objective(game, nash.policy, nash.adversary);
    SaddleReport report;
    for (std::size_t i = 0; i < deviations; ++i) {
        std::vector<double> dev_policy;
        dev_policy.reserve(game.n_states * game.n_actions);
        for (std::size_t s = 0; s < game.n_states; ++s) {
            const std::vector<double> row =
                random_simplex(rng, game.n_actions);
            dev_policy.insert(dev_policy.end(), row.begin(), row.end());
        }
        report.ego_gain = std::max(
            report.ego_gain,
            regularized_objective(game, dev_policy, nash.adversary) - j_star);

        std::vector<double> dev_adv;
        dev_adv.reserve(game.n_states * game.n_actions * game.n_outcomes);
        for (std::size_t row = 0; row < game.n_states * game.n_actions; ++row) {
            const std::vector<double> r = random_simplex(rng, game.n_outcomes);
            dev_adv.insert(dev_adv.end(), r.begin(), r.end());
        }
        report.adversary_gain = std::max(
            report.adversary_gain,
            j_star - regularized_objective(game, nash.policy, dev_adv));
    }
    report.ok = report.ego_gain <= tol && report.adversary_gain <= tol;
    return report;
}

DivergenceCheck tv_kl_checks(const std::vector<double>& p,
                             const std::vector<double>& q) {
    DivergenceCheck out;
    out.tv = adversary::tv_distance(p, q);
    out.kl = adversary::kl_categorical(p, q);
    out.pinsker_ok =
        !std::isfinite(out.kl) || out.tv <= std::sqrt(0.5 * out.kl) + 1e-12;
    return out;
}

double value_diff_check(const TabularGame& game_a, const TabularGame& game_b,
                        const std::vector<double>& policy) {
    if (game_a.n_states != game_b.n_states ||
        game_a.n_actions != game_b.n_actions ||
        game_a.gamma != game_b.gamma || game_a.reward != game_b.reward)
        throw std::invalid_argument(
            "value_diff_check: games must differ only in dynamics");
    const std::vector<double> dyn_a = induced_dynamics(game_a, game_a.prior);
    const std::vector<double> dyn_b = induced_dynamics(game_b, game_b.prior);
    const std::vector<double> va =
        exact_policy_value(game_a, game_a.reward, dyn_a, policy);
    const std::vector<double> vb =
        exact_policy_value(game_b, game_b.reward, dyn_b, policy);
    const double lhs = mean_of(va) - mean_of(vb);

    const std::vector<double> occ = discounted_occupancy(game_a, dyn_a, policy);
    double rhs = 0.0;
    for (std::size_t s = 0; s < game_a.n_states; ++s)
        for (std::size_t a = 0; a < game_a.n_actions; ++a) {
            const double w = occ[s] * policy[game_a.sa_index(s, a)];
            if (w == 0.0) continue;
            const std::size_t base = game_a.sa_index(s, a) * game_a.n_states;
            double gap = 0.0;
            for (std::size_t sn = 0; sn < game_a.n_states; ++sn)
                gap += (dyn_a[base + sn] - dyn_b[base + sn]) * vb[sn];
            rhs += w * gap;
        }
    rhs *= game_a.gamma;
    return std::abs(lhs - rhs);
}

BoundCheck generalization_gap_check(const TabularGame& game,
                                    const std::vector<double>& adversary,
                                    const std::vector<double>& policy) {
    BoundCheck out;
    const std::vector<double> dyn_real = induced_dynamics(game, game.prior);
    const std::vector<double> dyn_psi = induced_dynamics(game, adversary);
    const std::vector<double> v_psi =
        exact_policy_value(game, game.reward, dyn_psi, policy);
    out.real_return = mean_of(
        exact_policy_value(game, game.reward, dyn_real, policy));
    out.shifted_return = mean_of(v_psi);

    const std::vector<double> occ =
        discounted_occupancy(game, dyn_real, policy);
    out.expected_kl = expected_visitation_kl(game, adversary, policy, occ);

    const double v_max = game.r_max / (1.0 - game.gamma);
    out.lower_bound = out.shifted_return -
                      game.gamma * v_max * std::sqrt(2.0) /
                          (1.0 - game.gamma) * std::sqrt(out.expected_kl);
    out.holds = out.real_return >= out.lower_bound - 1e-9;

    out.worst_pointwise = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < game.n_states; ++s)
        for (std::size_t a = 0; a < game.n_actions; ++a) {
            const std::size_t base = game.sa_index(s, a) * game.n_states;
            double gap = 0.0;
            for (std::size_t sn = 0; sn < game.n_states; ++sn)
                gap += (dyn_real[base + sn] - dyn_psi[base + sn]) * v_psi[sn];
            const double tv = adversary::tv_distance(
                prior_row(game, s, a),
                row_of(adversary, game.sa_index(s, a), game.n_outcomes));
            out.worst_pointwise = std::max(out.worst_pointwise,
                                           std::abs(gap) - 2.0 * v_max * tv);
        }
    out.pointwise_ok = out.worst_pointwise <= 1e-9;
    return out;
}

SafetyCheck safety_bound_check(const TabularGame& game,
                               const std::vector<double>& adversary,
                               const std::vector<double>& policy,
                               double delta) {
    if (game.cost.empty())
        throw std::invalid_argument("safety_bound_check: game has no costs");
    SafetyCheck out;
    const std::vector<double> dyn_real = induced_dynamics(game, game.prior);
    const std::vector<double> dyn_psi = induced_dynamics(game, adversary);
    out.adversarial_cost =
        mean_of(exact_policy_value(game, game.cost, dyn_psi, policy));
    out.real_cost =
        mean_of(exact_policy_value(game, game.cost, dyn_real, policy));

    const std::vector<double> occ =
        discounted_occupancy(game, dyn_real, policy);
    out.expected_kl = expected_visitation_kl(game, adversary, policy, occ);

    out.bound = delta + game.gamma * game.c_max * std::sqrt(2.0) /
                            ((1.0 - game.gamma) * (1.0 - game.gamma)) *
                            std::sqrt(out.expected_kl);
    out.premise_ok = out.adversarial_cost <= delta + 1e-12;
    out.holds = out.real_cost <= out.bound + 1e-9;
    return out;
}

namespace {

/// Size draws shared by the random sweeps in theory_report.
struct SweepDims {
    std::size_t states, actions, outcomes;
    double gamma, tau;
};

SweepDims draw_dims(std::mt19937_64& rng, std::size_t i) {
    SweepDims d;
    d.states = 2 + rng::uniform_index(rng, 7);    // 2..8
    d.actions = 1 + rng::uniform_index(rng, 4);   // 1..4
    d.outcomes = 2 + rng::uniform_index(rng, 5);  // 2..6
    d.gamma = (i % 2 == 0) ? 0.9 : 0.99;
    d.tau = (i / 2 % 2 == 0) ? 0.1 : 1.0;
    return d;
}

}  // namespace

nlohmann::json theory_report(std::uint64_t seed) {
    nlohmann::json checks = nlohmann::json::object();

    {  // Contraction of the soft-robust operator on random games.
        std::mt19937_64 rng = rng::make_stream(seed, "theory/contraction");
        double worst = -std::numeric_limits<double>::infinity();
        bool ok = true;
        const std::size_t n = 1000;
        for (std::size_t i = 0; i < n; ++i) {
            const SweepDims d = draw_dims(rng, i);
            const TabularGame g = random_game(rng, d.states, d.actions,
                                              d.outcomes, d.gamma, d.tau);
            std::vector<double> v1(d.states), v2(d.states);
            for (std::size_t s = 0; s < d.states; ++s) {
                v1[s] = rng::uniform_in(rng, -10.0, 10.0);
                v2[s] = rng::uniform_in(rng, -10.0, 10.0);
            }
            const double margin = contraction_ratio(g, v1, v2) - g.gamma;
            worst = std::max(worst, margin);
            ok = ok && margin <= 1e-9;
        }
        checks["contraction"] = {{"instances", n},
                                 {"worst_ratio_minus_gamma", worst},
                                 {"pass", ok}};
    }

    {  // Soft-min changes by at most the sup-norm of the input change.
        std::mt19937_64 rng = rng::make_stream(seed, "theory/softmin");
        double worst = -std::numeric_limits<double>::infinity();
        bool ok = true;
        const std::size_t n = 10000;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t m = 2 + rng::uniform_index(rng, 7);
            const double tau = (i % 2 == 0) ? 0.1 : 1.0;
            const std::vector<double> prior = random_simplex(rng, m);
            std::vector<double> q1(m), q2(m);
            double delta = 0.0;
            for (std::size_t k = 0; k < m; ++k) {
                q1[k] = rng::uniform_in(rng, -5.0, 5.0);
                q2[k] = rng::uniform_in(rng, -5.0, 5.0);
                delta = std::max(delta, std::abs(q1[k] - q2[k]));
            }
            const double gap = std::abs(softmin_omega(q1, prior, tau) -
                                        softmin_omega(q2, prior, tau));
            const double margin = gap - delta;
            worst = std::max(worst, margin);
            ok = ok && margin <= 1e-9;
        }
        checks["softmin_nonexpansive"] = {
            {"pairs", n}, {"worst_gap_minus_delta", worst}, {"pass", ok}};
    }

    {  // Pinsker: TV bounded by sqrt(KL / 2) on random distribution pairs.
        std::mt19937_64 rng = rng::make_stream(seed, "theory/pinsker");
        std::size_t violations = 0;
        const std::size_t n = 10000;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t m = 2 + rng::uniform_index(rng, 7);
            const DivergenceCheck d =
                tv_kl_checks(random_simplex(rng, m), random_simplex(rng, m));
            if (!d.pinsker_ok) ++violations;
        }
        checks["pinsker"] = {{"pairs", n},
                             {"violations", violations},
                             {"pass", violations == 0}};
    }

    {  // Telescoping value-difference identity on dynamics-shifted pairs.
        std::mt19937_64 rng = rng::make_stream(seed, "theory/value-diff");
        double worst = 0.0;
        const std::size_t n = 500;
        for (std::size_t i = 0; i < n; ++i) {
            const SweepDims d = draw_dims(rng, i);
            TabularGame ga =
                random_game(rng, 4, d.actions, d.outcomes, d.gamma, d.tau);
            TabularGame gb =
                random_game(rng, 4, d.actions, d.outcomes, d.gamma, d.tau);
            gb.reward = ga.reward;
            std::vector<double> policy;
            for (std::size_t s = 0; s < 4; ++s) {
                const std::vector<double> row =
                    random_simplex(rng, d.actions);
                policy.insert(policy.end(), row.begin(), row.end());
            }
            worst = std::max(worst, value_diff_check(ga, gb, policy));
        }
        checks["value_difference_identity"] = {
            {"instances", n}, {"worst_residual", worst},
            {"pass", worst < 1e-9}};
    }

    {  // Return under real dynamics is above the divergence-penalized bound.
        std::mt19937_64 rng = rng::make_stream(seed, "theory/generalization");
        double min_slack = std::numeric_limits<double>::infinity();
        double worst_pointwise = -std::numeric_limits<double>::infinity();
        bool ok = true;
        const std::size_t n = 200;
        for (std::size_t i = 0; i < n; ++i) {
            const SweepDims d = draw_dims(rng, i);
            const TabularGame g = random_game(rng, d.states, d.actions,
                                              d.outcomes, d.gamma, d.tau);
            std::vector<double> adv, policy;
            for (std::size_t row = 0; row < d.states * d.actions; ++row) {
                const std::vector<double> r =
                    random_simplex(rng, d.outcomes);
                adv.insert(adv.end(), r.begin(), r.end());
            }
            for (std::size_t s = 0; s < d.states; ++s) {
                const std::vector<double> r =
                    random_simplex(rng, d.actions);
                policy.insert(policy.end(), r.begin(), r.end());
            }
            const BoundCheck b = generalization_gap_check(g, adv, policy);
            min_slack = std::min(min_slack, b.real_return - b.lower_bound);
            worst_pointwise = std::max(worst_pointwise, b.worst_pointwise);
            ok = ok && b.holds && b.pointwise_ok;
        }
        checks["generalization_bound"] = {{"instances", n},
                                          {"min_slack", min_slack},
                                          {"worst_pointwise", worst_pointwise},
                                          {"pass", ok}};
    }

    {  // Safety certificate: real cost below delta plus divergence penalty.
        std::mt19937_64 rng = rng::make_stream(seed, "theory/safety");
        double min_slack = std::numeric_limits<double>::infinity();
        bool ok = true;
        const std::size_t n = 200;
        for (std::size_t i = 0; i < n; ++i) {
            const SweepDims d = draw_dims(rng, i);
            const TabularGame g = random_game(rng, d.states, d.actions,
                                              d.outcomes, d.gamma, d.tau,
                                              /*with_cost=*/true);
            std::vector<double> adv, policy;
            for (std::size_t row = 0; row < d.states * d.actions; ++row) {
                const std::vector<double> r =
                    random_simplex(rng, d.outcomes);
                adv.insert(adv.end(), r.begin(), r.end());
            }
            for (std::size_t s = 0; s < d.states; ++s) {
                const std::vector<double> r =
                    random_simplex(rng, d.actions);
                policy.insert(policy.end(), r.begin(), r.end());
            }
            // Pick delta at the measured adversarial cost plus slack so the
            // certificate's premise holds by construction.
            const std::vector<double> dyn_psi = induced_dynamics(g, adv);
            const double j_c =
                mean_of(exact_policy_value(g, g.cost, dyn_psi, policy));
            const SafetyCheck s =
                safety_bound_check(g, adv, policy,
                                   j_c + 0.1 * rng::uniform(rng));
            min_slack = std::min(min_slack, s.bound - s.real_cost);
            ok = ok && s.premise_ok && s.holds;
        }
        checks["safety_bound"] = {{"instances", n},
                                  {"min_slack", min_slack},
                                  {"pass", ok}};
    }

    {  // Saddle inequality at the value-iteration fixed point.
        std::mt19937_64 rng = rng::make_stream(seed, "theory/saddle");
        double worst = 0.0;
        bool ok = true;
        const std::size_t n = 50;
        for (std::size_t i = 0; i < n; ++i) {
            const SweepDims d = draw_dims(rng, i);
            const TabularGame g = random_game(rng, d.states, d.actions,
                                              d.outcomes, d.gamma, d.tau);
            const NashSolution nash = solve_nash_vi(g, 1e-10);
            const SaddleReport rep = saddle_check(g, nash, 100, rng, 1e-6);
            worst = std::max({worst, rep.ego_gain, rep.adversary_gain});
            ok = ok && rep.ok;
        }
        checks["saddle_point"] = {{"instances", n},
                                  {"worst_violation", worst},
                                  {"pass", ok}};
    }

    {  // The Gibbs posterior beats random perturbations of itself on the
       // regularized objective, and attains exactly tau * log Z.
        std::mt19937_64 rng = rng::make_stream(seed, "theory/gibbs-opt");
        double min_margin = std::numeric_limits<double>::infinity();
        double worst_identity = 0.0;
        bool ok = true;
        const std::size_t n = 200;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t m = 2 + rng::uniform_index(rng, 7);
            const double tau = (i % 2 == 0) ? 0.1 : 1.0;
            const std::vector<double> prior = random_simplex(rng, m);
            std::vector<double> energies(m);
            for (double& e : energies) e = rng::uniform_in(rng, -5.0, 5.0);
            const GibbsPosterior gp = gibbs_posterior(prior, energies, tau);
            const double j_star =
                gibbs_objective(gp.probs, prior, energies, tau);
            worst_identity =
                std::max(worst_identity, std::abs(j_star - tau * gp.log_z));
            for (std::size_t k = 0; k < 1000; ++k) {
                const double alpha = rng::uniform_in(rng, 1e-3, 1.0);
                const std::vector<double> dir = random_simplex(rng, m);
                std::vector<double> perturbed(m);
                for (std::size_t j = 0; j < m; ++j)
                    perturbed[j] =
                        (1.0 - alpha) * gp.probs[j] + alpha * dir[j];
                const double margin =
                    j_star -
                    gibbs_objective(perturbed, prior, energies, tau);
                min_margin = std::min(min_margin, margin);
                ok = ok && margin > 0.0;
            }
        }
        ok = ok && worst_identity < 1e-9;
        checks["gibbs_optimality"] = {{"instances", n},
                                      {"perturbations_each", 1000},
                                      {"min_margin", min_margin},
                                      {"worst_log_z_identity", worst_identity},
                                      {"pass", ok}};
    }

    {  // Closed-form soft-min equals an independent iterative minimization.
        std::mt19937_64 rng = rng::make_stream(seed, "theory/duality");
        double worst = 0.0;
        const std::size_t n = 200;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t m = 2 + rng::uniform_index(rng, 7);
            const double tau = (i % 2 == 0) ? 0.1 : 1.0;
            const std::vector<double> prior = random_simplex(rng, m);
            std::vector<double> q(m);
            for (double& x : q) x = rng::uniform_in(rng, -5.0, 5.0);
            worst = std::max(worst,
                             std::abs(softmin_by_search(q, prior, tau) -
                                      softmin_omega(q, prior, tau)));
        }
        checks["duality_gap"] = {
            {"instances", n}, {"worst_gap", worst}, {"pass", worst <= 1e-6}};
    }

    bool all = true;
    for (const auto& [name, body] : checks.items())
        all = all && body.at("pass").get<bool>();
    return nlohmann::json{{"seed", seed}, {"checks", checks}, {"pass", all}};
}

}  // namespace advloop::theory
