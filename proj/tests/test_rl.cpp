#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "advloop/checkpoint.hpp"
#include "advloop/policy.hpp"
#include "advloop/rl.hpp"
#include "advloop/rng.hpp"
#include "advloop/scenario_gen.hpp"

using namespace advloop;
namespace fs = std::filesystem;

namespace {

std::vector<double> random_obs(std::mt19937_64& rng, int dim = 34) {
    std::vector<double> obs(static_cast<std::size_t>(dim));
    for (double& v : obs) v = rng::uniform_in(rng, -1.0, 1.0);
    return obs;
}

sim::RolloutResult one_step_episode(const std::vector<double>& obs,
                                    const std::array<double, 2>& u,
                                    double log_prob, double value,
                                    double reward) {
    sim::RolloutResult ep;
    sim::StepRecord rec;
    rec.obs = obs;
    rec.info.pre_squash = u;
    rec.info.action = {std::tanh(u[0]), std::tanh(u[1])};
    rec.info.log_prob = log_prob;
    rec.info.value = value;
    rec.reward = reward;
    ep.steps.push_back(std::move(rec));
    return ep;
}

double bandit_reward(const sim::Action& a) {
    const double d0 = a.steer - 0.5;
    const double d1 = a.accel + 0.3;
    return 1.0 - d0 * d0 - d1 * d1;
}

} // namespace

TEST_CASE("the all-zero network is a fixed point of the forward pass") {
    const policy::PolicyNet net = policy::PolicyNet::zeros({});
    std::mt19937_64 rng = rng::make_stream(0, "obs");
    const policy::ForwardCache c = net.forward(random_obs(rng));
    CHECK(c.mean[0] == 0.0);
    CHECK(c.mean[1] == 0.0);
    CHECK(c.logstd[0] == 0.0);
    CHECK(c.logstd[1] == 0.0);
    CHECK(c.value == 0.0);
    const policy::SampleResult g = policy::mean_action(net, c.obs);
    CHECK(g.action.steer == 0.0);
    CHECK(g.action.accel == 0.0);

    CHECK_THROWS_AS((void)net.forward(std::vector<double>(7, 0.0)),
                    std::invalid_argument);
}

TEST_CASE("squashed log density matches a by-hand change of variables") {
    const std::array<double, 2> mean{0.3, -0.5};
    const std::array<double, 2> logstd{-0.2, 0.4};
    const std::array<double, 2> u{0.7, -1.1};

    double want = 0.0;
    for (int i = 0; i < 2; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        const double sigma = std::exp(logstd[k]);
        const double gauss =
            std::exp(-0.5 * std::pow((u[k] - mean[k]) / sigma, 2)) /
            (sigma * std::sqrt(2.0 * std::numbers::pi));
        const double a = std::tanh(u[k]);
        want += std::log(gauss) - std::log(1.0 - a * a);
    }
    CHECK(policy::tanh_gaussian_log_prob(mean, logstd, u) ==
          doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("tanh Jacobian term stays finite far into the tails") {
    // Naively, 1 - tanh(20)^2 underflows; the stable form must not.
    for (double u : {12.0, 20.0, 35.0}) {
        const double got = policy::log_one_minus_tanh_sq(u);
        CHECK(std::isfinite(got));
        CHECK(got ==
              doctest::Approx(2.0 * (std::numbers::ln2 - u)).epsilon(1e-9));
        CHECK(policy::log_one_minus_tanh_sq(-u) ==
              doctest::Approx(got).epsilon(1e-9));
    }
    CHECK(policy::log_one_minus_tanh_sq(0.0) == doctest::Approx(0.0));

    const std::array<double, 2> mean{0.0, 0.0};
    const std::array<double, 2> logstd{0.0, 0.0};
    CHECK(std::isfinite(
        policy::tanh_gaussian_log_prob(mean, logstd, {20.0, -20.0})));
}

TEST_CASE("backpropagation matches finite differences through every head") {
    std::mt19937_64 rng = rng::make_stream(5, "fd");
    policy::PolicyNet net({}, 99);
    const std::vector<double> obs = random_obs(rng);
    const std::array<double, 2> u{0.4, -0.9};

    // Composite objective touching all three output groups:
    //   L = log prob(u) + 0.7 * value + 0.3 * entropy.
    auto loss = [&](const policy::PolicyNet& n) {
        const policy::ForwardCache c = n.forward(obs);
        return policy::tanh_gaussian_log_prob(c.mean, c.logstd, u) +
               0.7 * c.value + 0.3 * policy::gaussian_entropy(c.logstd);
    };

    const policy::ForwardCache cache = net.forward(obs);
    std::array<double, 2> dm{}, ds{};
    policy::tanh_gaussian_log_prob_grads(cache.mean, cache.logstd, u, dm,
                                         ds);
    ds[0] += 0.3;
    ds[1] += 0.3;
    std::vector<double> grad(net.param_count(), 0.0);
    net.backward(cache, dm, ds, 0.7, grad);

    // Central differences on a loss of magnitude ~1 carry ~1e-15 of
    // cancellation noise, so the quotient is meaningless for gradient
    // entries below ~1e-4; the floor compares those absolutely instead.
    const double eps = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 400; ++trial) {
        const std::size_t k = rng::uniform_index(rng, net.param_count());
        policy::PolicyNet up = net, dn = net;
        up.params()[k] += eps;
        dn.params()[k] -= eps;
        const double fd = (loss(up) - loss(dn)) / (2.0 * eps);
        const double an = grad[k];
        const double denom = std::max(1e-4, std::abs(an) + std::abs(fd));
        CHECK(std::abs(an - fd) / denom < 1e-4);
        ++checked;
    }
    CHECK(checked == 400);
}

TEST_CASE("clamped log-std outputs block their gradient") {
    policy::NetConfig cfg;
    cfg.logstd_max = -0.1; // the zero network's raw 0 output gets clamped
    const policy::PolicyNet net = policy::PolicyNet::zeros(cfg);
    std::mt19937_64 rng = rng::make_stream(1, "clamp");
    const std::vector<double> obs = random_obs(rng);

    const policy::ForwardCache c = net.forward(obs);
    CHECK(c.logstd[0] == -0.1);
    CHECK(c.logstd_raw[0] == 0.0);

    std::vector<double> grad(net.param_count(), 0.0);
    net.backward(c, {0.0, 0.0}, {1.0, 1.0}, 0.0, grad);
    for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("group advantages: three one-step returns normalize to the "
          "textbook values") {
    const std::vector<std::vector<double>> rewards = {{1.0}, {2.0}, {3.0}};
    const auto adv = rl::grpo_advantages(rewards, 0.99);
    REQUIRE(adv.size() == 3);
    const double sigma = std::sqrt(2.0 / 3.0);
    CHECK(adv[0][0] ==
          doctest::Approx(-1.0 / (sigma + 1e-8)).epsilon(1e-12));
    CHECK(adv[1][0] == doctest::Approx(0.0));
    CHECK(adv[2][0] ==
          doctest::Approx(1.0 / (sigma + 1e-8)).epsilon(1e-12));
    CHECK(adv[2][0] == doctest::Approx(1.2247).epsilon(1e-4));
}

TEST_CASE("group advantages: zero padding aligns unequal episode lengths") {
    // gamma 0.5. Episode A rewards (1, 1) -> returns-to-go (1.5, 1).
    // Episode B reward (2) -> (2). Padded column t=1 is (1, 0).
    const std::vector<std::vector<double>> rewards = {{1.0, 1.0}, {2.0}};
    const auto adv = rl::grpo_advantages(rewards, 0.5);
    REQUIRE(adv[0].size() == 2);
    REQUIRE(adv[1].size() == 1);
    CHECK(adv[0][0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(adv[1][0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(adv[0][1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("group advantages: common shifts cancel and clipping binds") {
    std::mt19937_64 rng = rng::make_stream(77, "adv");
    std::vector<std::vector<double>> rewards(4);
    for (auto& r : rewards) {
        r.resize(6);
        for (double& v : r) v = rng::uniform_in(rng, -2.0, 2.0);
    }
    const auto base = rl::grpo_advantages(rewards, 0.99);

    std::vector<std::vector<double>> shifted = rewards;
    for (auto& r : shifted) r[5] += 11.0; // same shift, same time index
    const auto moved = rl::grpo_advantages(shifted, 0.99);
    for (std::size_t g = 0; g < 4; ++g)
        for (std::size_t t = 0; t < 6; ++t)
            CHECK(moved[g][t] == doctest::Approx(base[g][t]).epsilon(1e-9));

    std::vector<std::vector<double>> outlier = rewards;
    outlier[0][0] += 1e9;
    const auto clipped = rl::grpo_advantages(outlier, 0.99);
    for (const auto& per : clipped)
        for (double a : per) {
            CHECK(a <= 5.0);
            CHECK(a >= -5.0);
        }

    CHECK_THROWS_AS((void)rl::grpo_advantages({}, 0.99),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)rl::grpo_advantages({{1.0}, {}}, 0.99),
                    std::invalid_argument);
}

TEST_CASE("identical groups produce a zero update") {
    policy::PolicyNet net({}, 3);
    std::mt19937_64 rng = rng::make_stream(3, "noop");
    const std::vector<double> obs = random_obs(rng);
    const std::array<double, 2> u{0.2, -0.4};
    const policy::ForwardCache c = net.forward(obs);
    const double lp = policy::tanh_gaussian_log_prob(c.mean, c.logstd, u);

    std::vector<sim::RolloutResult> group;
    for (int g = 0; g < 4; ++g)
        group.push_back(one_step_episode(obs, u, lp, 0.0, 1.7));

    const std::vector<double> before = net.params();
    policy::Adam adam(net.param_count(), 3e-4);
    const rl::UpdateStats stats = rl::grpo_update(net, adam, group, {});
    CHECK(stats.steps == 4);
    CHECK(stats.kl == 0.0);
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(net.params()[i] == before[i]);
}

TEST_CASE("ratios deep in the flat clip region pass no policy gradient") {
    policy::PolicyNet net({}, 8);
    std::mt19937_64 rng = rng::make_stream(8, "clip");
    const std::vector<double> obs = random_obs(rng);
    const std::array<double, 2> u{-0.3, 0.6};
    const policy::ForwardCache c = net.forward(obs);
    const double lp = policy::tanh_gaussian_log_prob(c.mean, c.logstd, u);

    rl::GrpoConfig cfg;
    cfg.kl_beta = 0.0;
    cfg.epochs = 1;

    SUBCASE("fully clipped group is a no-op") {
        // Episode 1: A = +1 after normalization with ratio e^{+2} > 1.2,
        // so the min picks the flat clipped term. Episode 2: A = -1 with
        // ratio e^{-2} < 0.8, flat again. No gradient anywhere.
        std::vector<sim::RolloutResult> group = {
            one_step_episode(obs, u, lp - 2.0, 0.0, 5.0),
            one_step_episode(obs, u, lp + 2.0, 0.0, 1.0)};
        const std::vector<double> before = net.params();
        policy::Adam adam(net.param_count(), 1e-3);
        (void)rl::grpo_update(net, adam, group, cfg);
        for (std::size_t i = 0; i < before.size(); ++i)
            CHECK(net.params()[i] == before[i]);
    }

    SUBCASE("an active unclipped branch does move the parameters") {
        // Episode 1 rides the clip as above, but episode 2 sits at ratio 1
        // with A = -1, which keeps its gradient alive.
        std::vector<sim::RolloutResult> group = {
            one_step_episode(obs, u, lp - 2.0, 0.0, 5.0),
            one_step_episode(obs, u, lp, 0.0, 1.0)};
        const std::vector<double> before = net.params();
        policy::Adam adam(net.param_count(), 1e-3);
        (void)rl::grpo_update(net, adam, group, cfg);
        CHECK(net.params() != before);
    }
}

TEST_CASE("generalized advantage estimation: hand case and the lambda=1 "
          "limit") {
    const std::vector<double> rewards = {1.0, 1.0};
    const std::vector<double> values = {0.5, 0.25};
    const auto [adv, ret] = rl::gae(rewards, values, 0.5, 0.5);
    // delta_1 = 1 - 0.25 = 0.75; delta_0 = 1 + 0.5*0.25 - 0.5 = 0.625.
    // A_1 = 0.75; A_0 = 0.625 + 0.25 * 0.75 = 0.8125.
    CHECK(adv[1] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(adv[0] == doctest::Approx(0.8125).epsilon(1e-15));
    CHECK(ret[0] == doctest::Approx(1.3125).epsilon(1e-15));
    CHECK(ret[1] == doctest::Approx(1.0).epsilon(1e-15));

    std::mt19937_64 rng = rng::make_stream(21, "gae");
    std::vector<double> r(40), v(40);
    for (double& x : r) x = rng::uniform_in(rng, -1.0, 1.0);
    for (double& x : v) x = rng::uniform_in(rng, -1.0, 1.0);
    const double gamma = 0.97;
    const auto [a1, ret1] = rl::gae(r, v, gamma, 1.0);
    // lambda = 1: advantage reduces to the discounted return minus the
    // value baseline.
    double mc = 0.0;
    for (std::size_t t = r.size(); t-- > 0;) {
        mc = r[t] + gamma * mc;
        CHECK(a1[t] == doctest::Approx(mc - v[t]).epsilon(1e-12));
        CHECK(ret1[t] == doctest::Approx(mc).epsilon(1e-12));
    }

    CHECK_THROWS_AS((void)rl::gae({1.0}, {}, 0.9, 0.9),
                    std::invalid_argument);
}

TEST_CASE("entropy of the pre-squash Gaussian has the closed form") {
    CHECK(policy::gaussian_entropy({0.3, -0.2}) ==
          doctest::Approx(2.0 * 1.4189385332046727 + 0.1).epsilon(1e-12));
    CHECK(policy::gaussian_entropy({0.0, 0.0}) ==
          doctest::Approx(2.8378770664093453).epsilon(1e-12));
}

TEST_CASE("whole-batch advantage normalization in the on-policy buffer") {
    policy::PolicyNet net({}, 14);
    std::mt19937_64 rng = rng::make_stream(14, "batch");
    std::vector<sim::RolloutResult> eps;
    for (int e = 0; e < 5; ++e) {
        sim::RolloutResult ep;
        const int len = 3 + static_cast<int>(rng::uniform_index(rng, 4));
        for (int t = 0; t < len; ++t) {
            sim::StepRecord rec;
            rec.obs = random_obs(rng);
            rec.info.pre_squash = {rng::gaussian(rng), rng::gaussian(rng)};
            rec.info.log_prob = -1.0;
            rec.info.value = rng::uniform_in(rng, -1.0, 1.0);
            rec.reward = rng::uniform_in(rng, -1.0, 1.0);
            ep.steps.push_back(std::move(rec));
        }
        eps.push_back(std::move(ep));
    }
    const std::vector<rl::Transition> batch = rl::build_ppo_batch(eps, {});
    REQUIRE(batch.size() >= 15);
    double mean = 0.0, var = 0.0;
    for (const rl::Transition& tr : batch) mean += tr.advantage;
    mean /= static_cast<double>(batch.size());
    for (const rl::Transition& tr : batch)
        var += (tr.advantage - mean) * (tr.advantage - mean);
    var /= static_cast<double>(batch.size());
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("group updates learn a two-dimensional bandit") {
    policy::PolicyNet net({}, 42);
    // Groups of six give a noisy signal, so this wants a gentler learning
    // rate and fewer re-uses of each group than the critic-based updater.
    policy::Adam adam(net.param_count(), 3e-4);
    std::mt19937_64 rng = rng::make_stream(42, "bandit-grpo");
    const std::vector<double> obs(34, 0.25);

    auto greedy_reward = [&]() {
        return bandit_reward(policy::mean_action(net, obs).action);
    };

    const double before = greedy_reward();
    rl::GrpoConfig cfg;
    cfg.epochs = 2;
    for (int update = 0; update < 300; ++update) {
        std::vector<sim::RolloutResult> group;
        for (int g = 0; g < cfg.group_size; ++g) {
            const policy::SampleResult s =
                policy::sample_action(net, obs, rng);
            group.push_back(one_step_episode(obs, s.pre_squash, s.log_prob,
                                             s.value,
                                             bandit_reward(s.action)));
        }
        (void)rl::grpo_update(net, adam, group, cfg);
    }
    const double after = greedy_reward();
    MESSAGE("grpo bandit reward " << before << " -> " << after);
    CHECK(after > before + 0.2);
    CHECK(after > 0.5);
    const sim::Action a = policy::mean_action(net, obs).action;
    CHECK(std::abs(a.steer - 0.5) < 0.35);
    CHECK(std::abs(a.accel + 0.3) < 0.35);
}

TEST_CASE("clipped-surrogate updates with a critic learn the bandit and "
          "its value") {
    policy::PolicyNet net({}, 43);
    policy::Adam adam(net.param_count(), 3e-3);
    std::mt19937_64 rng = rng::make_stream(43, "bandit-ppo");
    const std::vector<double> obs(34, 0.25);

    rl::PpoConfig cfg;
    cfg.epochs = 4;
    cfg.minibatch = 64;

    const double before =
        bandit_reward(policy::mean_action(net, obs).action);
    double first_vloss = -1.0, last_vloss = -1.0;
    for (int update = 0; update < 150; ++update) {
        std::vector<sim::RolloutResult> eps;
        for (int g = 0; g < 64; ++g) {
            const policy::SampleResult s =
                policy::sample_action(net, obs, rng);
            eps.push_back(one_step_episode(obs, s.pre_squash, s.log_prob,
                                           s.value,
                                           bandit_reward(s.action)));
        }
        const std::vector<rl::Transition> batch =
            rl::build_ppo_batch(eps, cfg);
        const rl::UpdateStats stats =
            rl::ppo_update(net, adam, batch, cfg, rng);
        if (update == 0) first_vloss = stats.value_loss;
        if (update == 149) last_vloss = stats.value_loss;
    }
    const double after = bandit_reward(policy::mean_action(net, obs).action);
    MESSAGE("ppo bandit reward " << before << " -> " << after
                                 << ", value loss " << first_vloss << " -> "
                                 << last_vloss);
    CHECK(after > before + 0.2);
    CHECK(after > 0.5);
    CHECK(last_vloss < first_vloss);
    // The critic should sit near the current mean reward.
    const double v = net.forward(obs).value;
    CHECK(std::abs(v - after) < 0.5);
}

TEST_CASE("updates are deterministic given seeds") {
    auto run = [](std::uint64_t seed) {
        policy::PolicyNet net({}, seed);
        policy::Adam adam(net.param_count(), 1e-3);
        std::mt19937_64 rng = rng::make_stream(seed, "det");
        const std::vector<double> obs(34, -0.1);
        for (int update = 0; update < 20; ++update) {
            std::vector<sim::RolloutResult> group;
            for (int g = 0; g < 6; ++g) {
                const policy::SampleResult s =
                    policy::sample_action(net, obs, rng);
                group.push_back(one_step_episode(obs, s.pre_squash,
                                                 s.log_prob, s.value,
                                                 bandit_reward(s.action)));
            }
            policy::Adam a2 = adam;
            (void)rl::grpo_update(net, a2, group, {});
            adam = a2;
        }
        return net.params();
    };
    CHECK(run(11) == run(11));
    CHECK(run(11) != run(12));
}

TEST_CASE("policy checkpoints round trip the network and the optimizer") {
    const fs::path dir = fs::temp_directory_path() / "advloop_pol_ckpt";
    fs::create_directories(dir);
    const fs::path path = dir / "policy.json";

    policy::PolicyNet net({}, 31);
    policy::Adam adam(net.param_count(), 3e-4);
    // Burn in some optimizer state so the moments are nontrivial.
    std::mt19937_64 rng = rng::make_stream(31, "ckpt");
    std::vector<double> grad(net.param_count());
    for (int i = 0; i < 3; ++i) {
        for (double& g : grad) g = rng::uniform_in(rng, -0.1, 0.1);
        adam.step(net.params(), grad);
    }

    policy::save_policy(path, net, adam);
    auto [net2, adam2] = policy::load_policy(path);
    CHECK(net2.params() == net.params());
    CHECK(adam2.steps_taken() == adam.steps_taken());

    // Stepping both copies with the same gradient must stay in lockstep.
    for (double& g : grad) g = rng::uniform_in(rng, -0.1, 0.1);
    adam.step(net.params(), grad);
    adam2.step(net2.params(), grad);
    CHECK(net2.params() == net.params());

    SUBCASE("other checkpoint kinds are refused") {
        advloop::ckpt::write_versioned(path, "generator", nlohmann::json::object());
        CHECK_THROWS_AS((void)policy::load_policy(path), std::runtime_error);
    }

    SUBCASE("flipped payload bytes are caught by the checksum") {
        std::ifstream in(path);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        in.close();
        const auto pos = text.find("\"t\":");
        REQUIRE(pos != std::string::npos);
        text[pos + 5] = '9';
        std::ofstream out(path);
        out << text;
        out.close();
        CHECK_THROWS_WITH_AS((void)policy::load_policy(path),
                             doctest::Contains("corrupt"),
                             std::runtime_error);
    }

    fs::remove_all(dir);
}

TEST_CASE("the network drives the simulator end to end") {
    const sim::Scenario sc = sim::make_scenario("straight", 3, 0);
    policy::PolicyNet net({}, 100);

    policy::NetController stochastic(net, true);
    const sim::RolloutResult a = sim::rollout_episode(stochastic, sc,
                                                      nullptr, 50);
    CHECK(a.steps.size() >= 1);
    for (const sim::StepRecord& rec : a.steps) {
        CHECK(std::isfinite(rec.info.log_prob));
        CHECK(std::isfinite(rec.info.value));
        CHECK(rec.info.action.steer >= -1.0);
        CHECK(rec.info.action.steer <= 1.0);
    }

    const sim::RolloutResult b = sim::rollout_episode(stochastic, sc,
                                                      nullptr, 50);
    CHECK(a.discounted_return == b.discounted_return);
    CHECK(a.steps.size() == b.steps.size());

    policy::NetController greedy(net, false);
    const sim::RolloutResult c =
        sim::rollout_episode(greedy, sc, nullptr, 51);
    const sim::RolloutResult d =
        sim::rollout_episode(greedy, sc, nullptr, 52);
    CHECK(c.discounted_return == d.discounted_return);
}
