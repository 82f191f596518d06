#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

namespace advloop::theory {

/// Finite zero-sum Markov game between an ego picking actions and an
/// adversary picking one of finitely many outcome trajectories per step.
/// The adversary pays a KL penalty (temperature tau) for deviating from the
/// per-(state, action) prior over outcomes.
struct TabularGame {
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    std::size_t n_outcomes = 0;
    /// reward[s * n_actions + a], |reward| <= r_max.
    std::vector<double> reward;
    /// Optional per-step safety cost in [0, c_max]; empty when unused.
    std::vector<double> cost;
    /// transition[((s * n_actions + a) * n_outcomes + y) * n_states + s'].
    std::vector<double> transition;
    /// prior[(s * n_actions + a) * n_outcomes + y], rows sum to 1.
    std::vector<double> prior;
    double r_max = 1.0;
    double c_max = 1.0;
    double gamma = 0.99;
    double tau = 0.1;

    std::size_t sa_index(std::size_t s, std::size_t a) const {
        return s * n_actions + a;
    }
    std::size_t say_index(std::size_t s, std::size_t a, std::size_t y) const {
        return (s * n_actions + a) * n_outcomes + y;
    }
    /// Throws std::invalid_argument when shapes, row sums, or bounds are off.
    void validate() const;
};

/// Random instance: rewards uniform in [-r_max, r_max], transition and prior
/// rows flat-Dirichlet, optional costs uniform in [0, c_max].
TabularGame random_game(std::mt19937_64& rng, std::size_t n_states,
                        std::size_t n_actions, std::size_t n_outcomes,
                        double gamma, double tau, bool with_cost = false);

/// Probability vector on the n-simplex drawn from a flat Dirichlet.
std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n);

struct GibbsPosterior {
    std::vector<double> probs;
    /// log sum_y prior(y) * exp(-energy(y) / tau).
    double log_z = 0.0;
};

/// Closed-form minimizer of E_p[energy] + tau * KL(p || prior):
/// p(y) proportional to prior(y) * exp(-energy(y) / tau).
GibbsPosterior gibbs_posterior(const std::vector<double>& prior,
                               const std::vector<double>& energies,
                               double tau);

/// E_p[-energy] - tau * KL(p || prior); the Gibbs posterior maximizes this
/// and attains exactly tau * log_z there.
double gibbs_objective(const std::vector<double>& probs,
                       const std::vector<double>& prior,
                       const std::vector<double>& energies, double tau);

/// Soft minimum -tau * log E_prior[exp(-q / tau)]; equals the value of the
/// KL-regularized inner minimization at its Gibbs argmin.
double softmin_omega(const std::vector<double>& q_values,
                     const std::vector<double>& prior, double tau);

/// Independent iterative check on softmin_omega: gradient descent on
/// E_p[q] + tau * KL(p || prior) with p in softmax parameterization.
/// Returns the objective value reached.
double softmin_by_search(const std::vector<double>& q_values,
                         const std::vector<double>& prior, double tau,
                         std::size_t max_iters = 20000);

/// One application of the soft-robust Bellman operator:
/// (T v)(s) = max_a softmin over outcomes of R(s,a) + gamma E[v(s')].
std::vector<double> robust_bellman_apply(const TabularGame& game,
                                         const std::vector<double>& v);

/// ||T v1 - T v2||_inf / ||v1 - v2||_inf. Throws when v1 == v2.
double contraction_ratio(const TabularGame& game,
                         const std::vector<double>& v1,
                         const std::vector<double>& v2);

struct NashSolution {
    std::vector<double> value;
    /// Greedy action per state (lowest index on ties).
    std::vector<std::size_t> greedy;
    /// One-hot form of greedy, policy[s * n_actions + a].
    std::vector<double> policy;
    /// Gibbs posterior at the fixed point for every (s, a) row.
    std::vector<double> adversary;
    std::size_t iterations = 0;
    /// Sup-norm step sizes per sweep, for convergence-rate fits.
    std::vector<double> residuals;
};

/// Value iteration with the soft-robust operator until the sup-norm step
/// drops below tol. Throws std::runtime_error past max_iters.
NashSolution solve_nash_vi(const TabularGame& game, double tol,
                           std::size_t max_iters = 100000);

/// Discounted return plus tau-weighted KL penalty of a stationary pair,
/// averaged over a uniform initial state. policy is row-stochastic over
/// actions; adversary is row-stochastic over outcomes per (s, a).
double regularized_objective(const TabularGame& game,
                             const std::vector<double>& policy,
                             const std::vector<double>& adversary);

struct SaddleReport {
    /// max over sampled ego deviations of J(dev, G*) - J(pi*, G*).
    double ego_gain = 0.0;
    /// max over sampled adversary deviations of J(pi*, G*) - J(pi*, dev).
    double adversary_gain = 0.0;
    bool ok = false;
};

/// Samples random stationary deviations for both players and checks the
/// saddle inequality at the solved equilibrium within tol.
SaddleReport saddle_check(const TabularGame& game, const NashSolution& nash,
                          std::size_t deviations, std::mt19937_64& rng,
                          double tol = 1e-6);

struct DivergenceCheck {
    double tv = 0.0;
    double kl = 0.0;
    bool pinsker_ok = false;
};

/// Total variation, KL (infinite on support violation), and whether
/// tv <= sqrt(kl / 2) + 1e-12 holds.
DivergenceCheck tv_kl_checks(const std::vector<double>& p,
                             const std::vector<double>& q);

/// Marginal ego-visible dynamics p(s'|s,a) = sum_y adversary(y|s,a) *
/// transition(s'|s,a,y). Layout [(s * n_actions + a) * n_states + s'].
std::vector<double> induced_dynamics(const TabularGame& game,
                                     const std::vector<double>& adversary);

/// Exact fixed-policy value from the linear Bellman system
/// (I - gamma P_pi) v = r_pi, with per-(s,a) rewards and marginal dynamics.
std::vector<double> exact_policy_value(const TabularGame& game,
                                       const std::vector<double>& sa_reward,
                                       const std::vector<double>& dynamics,
                                       const std::vector<double>& policy);

/// Unnormalized discounted state occupancy sum_t gamma^t Pr(s_t = s) from a
/// uniform initial state; entries sum to 1 / (1 - gamma).
std::vector<double> discounted_occupancy(const TabularGame& game,
                                         const std::vector<double>& dynamics,
                                         const std::vector<double>& policy);

/// Residual of the telescoping identity relating the return gap of one
/// policy under two dynamics to occupancy-weighted next-state value gaps.
/// Both games must share rewards, shapes, and discount.
double value_diff_check(const TabularGame& game_a, const TabularGame& game_b,
                        const std::vector<double>& policy);

struct BoundCheck {
    /// Return under the prior-induced ("real") dynamics.
    double real_return = 0.0;
    /// Return under the adversary-induced dynamics.
    double shifted_return = 0.0;
    /// Visitation-weighted E[KL(adversary || prior)].
    double expected_kl = 0.0;
    /// shifted_return minus the divergence penalty.
    double lower_bound = 0.0;
    bool holds = false;
    /// Worst margin of the per-(s,a) next-state value gap against
    /// 2 * v_max * TV; non-positive when the pointwise bound holds.
    double worst_pointwise = 0.0;
    bool pointwise_ok = false;
};

/// Checks real_return >= shifted_return -
/// gamma * v_max * sqrt(2) / (1 - gamma) * sqrt(expected_kl),
/// treating the game's prior as the real-world generator.
BoundCheck generalization_gap_check(const TabularGame& game,
                                    const std::vector<double>& adversary,
                                    const std::vector<double>& policy);

struct SafetyCheck {
    double real_cost = 0.0;
    double adversarial_cost = 0.0;
    double expected_kl = 0.0;
    double bound = 0.0;
    /// Whether adversarial_cost <= delta, the certificate's premise.
    bool premise_ok = false;
    bool holds = false;
};

/// Checks real_cost <= delta +
/// gamma * c_max * sqrt(2) / (1 - gamma)^2 * sqrt(expected_kl).
SafetyCheck safety_bound_check(const TabularGame& game,
                               const std::vector<double>& adversary,
                               const std::vector<double>& policy,
                               double delta);

/// Random sweep suite over all of the above. Returns a report with one
/// entry per check (instances, worst residuals, pass flag) plus an overall
/// "pass" boolean. Deterministic in the seed.
nlohmann::json theory_report(std::uint64_t seed);

}  // namespace advloop::theory
