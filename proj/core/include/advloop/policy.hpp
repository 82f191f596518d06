#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "advloop/sim.hpp"

namespace advloop::policy {

struct NetConfig {
    int obs_dim = sim::kObservationDim;
    int hidden = 64;
    int act_dim = 2;
    double logstd_min = -5.0;
    double logstd_max = 2.0;
};

/// Everything the backward pass needs from one forward evaluation.
struct ForwardCache {
    std::vector<double> obs;
    std::vector<double> h1;
    std::vector<double> h2;
    std::array<double, 2> mean{};
    std::array<double, 2> logstd_raw{};
    std::array<double, 2> logstd{};
    double value = 0.0;
};

/// Two-hidden-layer tanh MLP with a Gaussian actor head (means and
/// state-dependent clamped log-stds) and a linear value head off the second
/// hidden layer. Parameters live in one flat vector so the optimizer and
/// checkpoints stay trivial.
class PolicyNet {
  public:
    /// Scaled-uniform initialization, deterministic in the seed.
    PolicyNet(const NetConfig& cfg, std::uint64_t seed);
    /// All-zero parameters (useful as a fixed point in tests).
    static PolicyNet zeros(const NetConfig& cfg);

    ForwardCache forward(const std::vector<double>& obs) const;

    /// Accumulates into `grad` (same layout as params()) the chain-rule
    /// pullback of the given output gradients. Clamped log-std outputs pass
    /// no gradient.
    void backward(const ForwardCache& cache,
                  const std::array<double, 2>& dmean,
                  const std::array<double, 2>& dlogstd, double dvalue,
                  std::vector<double>& grad) const;

    const NetConfig& config() const { return cfg_; }
    std::size_t param_count() const { return params_.size(); }
    const std::vector<double>& params() const { return params_; }
    std::vector<double>& params() { return params_; }

  private:
    explicit PolicyNet(const NetConfig& cfg);
    NetConfig cfg_;
    std::vector<double> params_;
    // Flat-layout offsets, fixed by the architecture.
    std::size_t w1_, b1_, w2_, b2_, w3_, b3_, w4_, b4_;
};

/// log N(u; mean, exp(logstd)) summed over dimensions, minus the exact
/// tanh change-of-variables term, so it is the log density of a = tanh(u).
double tanh_gaussian_log_prob(const std::array<double, 2>& mean,
                              const std::array<double, 2>& logstd,
                              const std::array<double, 2>& pre_squash);

/// d log prob / d mean and d log prob / d logstd at a fixed pre-squash
/// sample (the sample is a constant, not reparameterized).
void tanh_gaussian_log_prob_grads(const std::array<double, 2>& mean,
                                  const std::array<double, 2>& logstd,
                                  const std::array<double, 2>& pre_squash,
                                  std::array<double, 2>& dmean,
                                  std::array<double, 2>& dlogstd);

/// Entropy of the pre-squash Gaussian: sum of 0.5 ln(2 pi e) + logstd.
double gaussian_entropy(const std::array<double, 2>& logstd);

/// Numerically safe log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u)).
double log_one_minus_tanh_sq(double u);

struct SampleResult {
    sim::Action action;
    std::array<double, 2> pre_squash{};
    double log_prob = 0.0;
    double value = 0.0;
};

/// Draws u ~ N(mean, sigma), squashes to a = tanh(u).
SampleResult sample_action(const PolicyNet& net,
                           const std::vector<double>& obs,
                           std::mt19937_64& rng);

/// Deterministic a = tanh(mean) with the matching log density.
SampleResult mean_action(const PolicyNet& net,
                         const std::vector<double>& obs);

/// Drives the simulator with the network, stochastic or greedy.
class NetController : public sim::Controller {
  public:
    NetController(const PolicyNet& net, bool stochastic)
        : net_(&net), stochastic_(stochastic) {}
    sim::ActInfo act(const std::vector<double>& obs,
                     const sim::EgoState& state,
                     const sim::Scenario& scenario,
                     std::mt19937_64& rng) override;

  private:
    const PolicyNet* net_;
    bool stochastic_;
};

/// Adam with bias correction; moments are part of the training state and
/// serialize with the checkpoint.
class Adam {
  public:
    Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step(std::vector<double>& params, const std::vector<double>& grad);
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    std::int64_t steps_taken() const { return t_; }

    nlohmann::json to_json() const;
    static Adam from_json(const nlohmann::json& j);

  private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<double> m_, v_;
};

/// Versioned checkpoint for the driving policy and its optimizer.
void save_policy(const std::filesystem::path& path, const PolicyNet& net,
                 const Adam& adam);
std::pair<PolicyNet, Adam> load_policy(const std::filesystem::path& path);

} // namespace advloop::policy
