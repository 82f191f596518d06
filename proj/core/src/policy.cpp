#include "advloop/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "advloop/checkpoint.hpp"
#include "advloop/rng.hpp"

namespace advloop::policy {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727; // 0.5 ln(2 pi)

double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

} // namespace

PolicyNet::PolicyNet(const NetConfig& cfg) : cfg_(cfg) {
    if (cfg.obs_dim <= 0 || cfg.hidden <= 0 || cfg.act_dim != 2)
        throw std::invalid_argument("PolicyNet: bad architecture");
    const std::size_t o = static_cast<std::size_t>(cfg.obs_dim);
    const std::size_t h = static_cast<std::size_t>(cfg.hidden);
    const std::size_t out = 2 * static_cast<std::size_t>(cfg.act_dim);
    w1_ = 0;
    b1_ = w1_ + h * o;
    w2_ = b1_ + h;
    b2_ = w2_ + h * h;
    w3_ = b2_ + h;
    b3_ = w3_ + out * h;
    w4_ = b3_ + out;
    b4_ = w4_ + h;
    params_.assign(b4_ + 1, 0.0);
}

PolicyNet::PolicyNet(const NetConfig& cfg, std::uint64_t seed)
    : PolicyNet(cfg) {
    std::mt19937_64 rng = rng::make_stream(seed, "policy-init");
    const std::size_t o = static_cast<std::size_t>(cfg.obs_dim);
    const std::size_t h = static_cast<std::size_t>(cfg.hidden);
    const std::size_t out = 2 * static_cast<std::size_t>(cfg.act_dim);
    auto fill = [&](std::size_t from, std::size_t count, std::size_t fan_in,
                    double gain) {
        const double bound = gain / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < count; ++i)
            params_[from + i] = rng::uniform_in(rng, -bound, bound);
    };
    fill(w1_, h * o, o, 1.0);
    fill(w2_, h * h, h, 1.0);
    // Small head weights keep the initial policy near zero mean / unit-ish
    // spread and the value near zero.
    fill(w3_, out * h, h, 0.01);
    fill(w4_, h, h, 0.01);
}

PolicyNet PolicyNet::zeros(const NetConfig& cfg) { return PolicyNet(cfg); }

ForwardCache PolicyNet::forward(const std::vector<double>& obs) const {
    const std::size_t o = static_cast<std::size_t>(cfg_.obs_dim);
    const std::size_t h = static_cast<std::size_t>(cfg_.hidden);
    if (obs.size() != o)
        throw std::invalid_argument("PolicyNet::forward: bad input size");

    ForwardCache c;
    c.obs = obs;
    c.h1.resize(h);
    c.h2.resize(h);
    for (std::size_t i = 0; i < h; ++i) {
        double z = params_[b1_ + i];
        const double* row = &params_[w1_ + i * o];
        for (std::size_t j = 0; j < o; ++j) z += row[j] * obs[j];
        c.h1[i] = std::tanh(z);
    }
    for (std::size_t i = 0; i < h; ++i) {
        double z = params_[b2_ + i];
        const double* row = &params_[w2_ + i * h];
        for (std::size_t j = 0; j < h; ++j) z += row[j] * c.h1[j];
        c.h2[i] = std::tanh(z);
    }
    for (std::size_t a = 0; a < 2; ++a) {
        double zm = params_[b3_ + a];
        double zs = params_[b3_ + 2 + a];
        const double* row_m = &params_[w3_ + a * h];
        const double* row_s = &params_[w3_ + (2 + a) * h];
        for (std::size_t j = 0; j < h; ++j) {
            zm += row_m[j] * c.h2[j];
            zs += row_s[j] * c.h2[j];
        }
        c.mean[a] = zm;
        c.logstd_raw[a] = zs;
        c.logstd[a] = std::clamp(zs, cfg_.logstd_min, cfg_.logstd_max);
    }
    double zv = params_[b4_];
    for (std::size_t j = 0; j < h; ++j) zv += params_[w4_ + j] * c.h2[j];
    c.value = zv;
    return c;
}

void PolicyNet::backward(const ForwardCache& cache,
                         const std::array<double, 2>& dmean,
                         const std::array<double, 2>& dlogstd, double dvalue,
                         std::vector<double>& grad) const {
    if (grad.size() != params_.size())
        throw std::invalid_argument("PolicyNet::backward: bad grad size");
    const std::size_t o = static_cast<std::size_t>(cfg_.obs_dim);
    const std::size_t h = static_cast<std::size_t>(cfg_.hidden);

    std::array<double, 4> dout{};
    for (std::size_t a = 0; a < 2; ++a) {
        dout[a] = dmean[a];
        const bool clamped = cache.logstd_raw[a] < cfg_.logstd_min ||
                             cache.logstd_raw[a] > cfg_.logstd_max;
        dout[2 + a] = clamped ? 0.0 : dlogstd[a];
    }

    std::vector<double> dh2(h, 0.0);
    for (std::size_t r = 0; r < 4; ++r) {
        const double g = dout[r];
        if (g == 0.0) continue;
        double* wrow = &grad[w3_ + r * h];
        const double* prow = &params_[w3_ + r * h];
        for (std::size_t j = 0; j < h; ++j) {
            wrow[j] += g * cache.h2[j];
            dh2[j] += g * prow[j];
        }
        grad[b3_ + r] += g;
    }
    if (dvalue != 0.0) {
        for (std::size_t j = 0; j < h; ++j) {
            grad[w4_ + j] += dvalue * cache.h2[j];
            dh2[j] += dvalue * params_[w4_ + j];
        }
        grad[b4_] += dvalue;
    }

    std::vector<double> dh1(h, 0.0);
    for (std::size_t i = 0; i < h; ++i) {
        const double dpre = dh2[i] * (1.0 - cache.h2[i] * cache.h2[i]);
        if (dpre == 0.0) continue;
        double* wrow = &grad[w2_ + i * h];
        const double* prow = &params_[w2_ + i * h];
        for (std::size_t j = 0; j < h; ++j) {
            wrow[j] += dpre * cache.h1[j];
            dh1[j] += dpre * prow[j];
        }
        grad[b2_ + i] += dpre;
    }
    for (std::size_t i = 0; i < h; ++i) {
        const double dpre = dh1[i] * (1.0 - cache.h1[i] * cache.h1[i]);
        if (dpre == 0.0) continue;
        double* wrow = &grad[w1_ + i * o];
        for (std::size_t j = 0; j < o; ++j) wrow[j] += dpre * cache.obs[j];
        grad[b1_ + i] += dpre;
    }
}

double log_one_minus_tanh_sq(double u) {
    return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
}

double tanh_gaussian_log_prob(const std::array<double, 2>& mean,
                              const std::array<double, 2>& logstd,
                              const std::array<double, 2>& pre_squash) {
    double lp = 0.0;
    for (std::size_t a = 0; a < 2; ++a) {
        const double inv_sigma = std::exp(-logstd[a]);
        const double z = (pre_squash[a] - mean[a]) * inv_sigma;
        lp += -0.5 * z * z - logstd[a] - kHalfLog2Pi;
        lp -= log_one_minus_tanh_sq(pre_squash[a]);
    }
    return lp;
}

void tanh_gaussian_log_prob_grads(const std::array<double, 2>& mean,
                                  const std::array<double, 2>& logstd,
                                  const std::array<double, 2>& pre_squash,
                                  std::array<double, 2>& dmean,
                                  std::array<double, 2>& dlogstd) {
    for (std::size_t a = 0; a < 2; ++a) {
        const double inv_sigma = std::exp(-logstd[a]);
        const double z = (pre_squash[a] - mean[a]) * inv_sigma;
        dmean[a] = z * inv_sigma;
        dlogstd[a] = z * z - 1.0;
    }
}

double gaussian_entropy(const std::array<double, 2>& logstd) {
    double h = 0.0;
    for (double ls : logstd) h += 0.5 + kHalfLog2Pi + ls;
    return h;
}

SampleResult sample_action(const PolicyNet& net,
                           const std::vector<double>& obs,
                           std::mt19937_64& rng) {
    const ForwardCache c = net.forward(obs);
    SampleResult out;
    for (std::size_t a = 0; a < 2; ++a)
        out.pre_squash[a] =
            c.mean[a] + std::exp(c.logstd[a]) * rng::gaussian(rng);
    out.action.steer = std::tanh(out.pre_squash[0]);
    out.action.accel = std::tanh(out.pre_squash[1]);
    out.log_prob = tanh_gaussian_log_prob(c.mean, c.logstd, out.pre_squash);
    out.value = c.value;
    return out;
}

SampleResult mean_action(const PolicyNet& net,
                         const std::vector<double>& obs) {
    const ForwardCache c = net.forward(obs);
    SampleResult out;
    out.pre_squash = c.mean;
    out.action.steer = std::tanh(c.mean[0]);
    out.action.accel = std::tanh(c.mean[1]);
    out.log_prob = tanh_gaussian_log_prob(c.mean, c.logstd, out.pre_squash);
    out.value = c.value;
    return out;
}

sim::ActInfo NetController::act(const std::vector<double>& obs,
                                const sim::EgoState&, const sim::Scenario&,
                                std::mt19937_64& rng) {
    const SampleResult s = stochastic_ ? sample_action(*net_, obs, rng)
                                       : mean_action(*net_, obs);
    return sim::ActInfo{s.action, {s.pre_squash[0], s.pre_squash[1]},
                        s.log_prob, s.value};
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0),
      v_(n, 0.0) {}

void Adam::step(std::vector<double>& params,
                const std::vector<double>& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
        throw std::invalid_argument("Adam::step: size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
}

nlohmann::json Adam::to_json() const {
    return nlohmann::json{{"lr", lr_},     {"beta1", beta1_},
                          {"beta2", beta2_}, {"eps", eps_},
                          {"t", t_},       {"m", m_},
                          {"v", v_}};
}

Adam Adam::from_json(const nlohmann::json& j) {
    Adam a(j.at("m").size(), j.at("lr").get<double>(),
           j.at("beta1").get<double>(), j.at("beta2").get<double>(),
           j.at("eps").get<double>());
    a.t_ = j.at("t").get<std::int64_t>();
    a.m_ = j.at("m").get<std::vector<double>>();
    a.v_ = j.at("v").get<std::vector<double>>();
    return a;
}

void save_policy(const std::filesystem::path& path, const PolicyNet& net,
                 const Adam& adam) {
    nlohmann::json payload;
    payload["config"] = {{"obs_dim", net.config().obs_dim},
                         {"hidden", net.config().hidden},
                         {"act_dim", net.config().act_dim},
                         {"logstd_min", net.config().logstd_min},
                         {"logstd_max", net.config().logstd_max}};
    payload["params"] = net.params();
    payload["adam"] = adam.to_json();
    ckpt::write_versioned(path, "policy", payload);
}

std::pair<PolicyNet, Adam> load_policy(const std::filesystem::path& path) {
    const nlohmann::json payload = ckpt::read_versioned(path, "policy");
    NetConfig cfg;
    const nlohmann::json& c = payload.at("config");
    cfg.obs_dim = c.at("obs_dim").get<int>();
    cfg.hidden = c.at("hidden").get<int>();
    cfg.act_dim = c.at("act_dim").get<int>();
    cfg.logstd_min = c.at("logstd_min").get<double>();
    cfg.logstd_max = c.at("logstd_max").get<double>();

    PolicyNet net = PolicyNet::zeros(cfg);
    std::vector<double> params =
        payload.at("params").get<std::vector<double>>();
    if (params.size() != net.param_count())
        throw std::runtime_error("load_policy: parameter count mismatch");
    net.params() = std::move(params);
    return {std::move(net), Adam::from_json(payload.at("adam"))};
}

} // namespace advloop::policy
