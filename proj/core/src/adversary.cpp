#include "advloop/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "advloop/rng.hpp"
#include "advloop/scenario_io.hpp"

namespace advloop::adversary {

EgoProfile make_ego_profile(const sim::Scenario& scenario,
                            const sim::Trajectory& ego) {
    if (ego.poses.empty())
        throw std::invalid_argument("make_ego_profile: empty ego trajectory");
    if (ego.speeds.size() != ego.poses.size())
        throw std::invalid_argument("make_ego_profile: ego speeds missing");

    EgoProfile p;
    p.ego = ego;
    p.route_total = scenario.ego_route.length();
    p.s.reserve(ego.poses.size());
    p.speed = ego.speeds;
    p.min_offset.reserve(ego.poses.size());
    for (const geom::Pose2D& pose : ego.poses) {
        const geom::Vec2 pt{pose.x, pose.y};
        p.s.push_back(geom::frenet_project(pt, scenario.ego_route).s);
        p.min_offset.push_back(sim::min_lane_offset(scenario, pt));
    }
    return p;
}

namespace {

bool ego_hits_any_agent(const sim::Scenario& scenario,
                        const geom::Pose2D& ego_pose, int step,
                        const sim::Trajectory& plan) {
    const geom::Obb ego_box{ego_pose, sim::kEgoLength, sim::kEgoWidth};
    for (int i = 0; i < static_cast<int>(scenario.agents.size()); ++i) {
        if (geom::sat_overlap(ego_box,
                              sim::agent_box_at(scenario, i, step, &plan)))
            return true;
    }
    return false;
}

} // namespace

double proxy_return(const sim::Scenario& scenario, const EgoProfile& profile,
                    const sim::Trajectory& adversary_plan,
                    const ProxyConfig& cfg) {
    if (adversary_plan.poses.empty())
        throw std::invalid_argument("proxy_return: empty adversary plan");
    const std::size_t n = profile.ego.poses.size();

    if (ego_hits_any_agent(scenario, profile.ego.poses[0], 0, adversary_plan))
        return cfg.r_crash;

    double j = 0.0;
    double discount = 1.0;
    for (std::size_t k = 1; k < n; ++k) {
        const int step = static_cast<int>(k);
        sim::Termination outcome = sim::Termination::none;
        if (ego_hits_any_agent(scenario, profile.ego.poses[k], step,
                               adversary_plan))
            outcome = sim::Termination::crash;
        else if (profile.min_offset[k] > cfg.offroad_meters)
            outcome = sim::Termination::offroad;
        else if (profile.route_total > 0.0 &&
                 profile.s[k] / profile.route_total > cfg.success_fraction)
            outcome = sim::Termination::success;

        double r = cfg.lambda_drive * (profile.s[k] - profile.s[k - 1]) +
                   cfg.speed_coef * profile.speed[k];
        switch (outcome) {
            case sim::Termination::crash: r += cfg.r_crash; break;
            case sim::Termination::offroad: r += cfg.r_offroad; break;
            case sim::Termination::success: r += cfg.r_success; break;
            default: break;
        }
        j += discount * r;
        discount *= cfg.gamma;
        if (sim::is_terminal(outcome)) break;
    }
    return j;
}

double proxy_return(const sim::Scenario& scenario, const sim::Trajectory& ego,
                    const sim::Trajectory& adversary_plan,
                    const ProxyConfig& cfg) {
    return proxy_return(scenario, make_ego_profile(scenario, ego),
                        adversary_plan, cfg);
}

void HistoryBuffer::push(const std::string& scenario_id,
                         sim::Trajectory ego) {
    std::deque<sim::Trajectory>& q = entries_[scenario_id];
    q.push_back(std::move(ego));
    while (q.size() > capacity_) q.pop_front();
}

bool HistoryBuffer::empty(const std::string& scenario_id) const {
    auto it = entries_.find(scenario_id);
    return it == entries_.end() || it->second.empty();
}

std::size_t HistoryBuffer::size(const std::string& scenario_id) const {
    auto it = entries_.find(scenario_id);
    return it == entries_.end() ? 0 : it->second.size();
}

const std::deque<sim::Trajectory>& HistoryBuffer::entries(
    const std::string& scenario_id) const {
    auto it = entries_.find(scenario_id);
    if (it == entries_.end())
        throw std::out_of_range("HistoryBuffer: no entries for " +
                                scenario_id);
    return it->second;
}

nlohmann::json HistoryBuffer::to_json() const {
    nlohmann::json out;
    out["capacity"] = capacity_;
    nlohmann::json items = nlohmann::json::object();
    for (const auto& [id, q] : entries_) {
        nlohmann::json arr = nlohmann::json::array();
        for (const sim::Trajectory& t : q)
            arr.push_back(sim::trajectory_to_json(t));
        items[id] = std::move(arr);
    }
    out["entries"] = std::move(items);
    return out;
}

HistoryBuffer HistoryBuffer::from_json(const nlohmann::json& j) {
    HistoryBuffer buf(j.at("capacity").get<std::size_t>());
    for (const auto& [id, arr] : j.at("entries").items()) {
        for (const nlohmann::json& tj : arr)
            buf.push(id, sim::trajectory_from_json(tj));
    }
    return buf;
}

double estimate_expected_return(const sim::Scenario& scenario,
                                const HistoryBuffer& buffer,
                                const sim::Trajectory& candidate,
                                const ProxyConfig& cfg) {
    if (buffer.empty(scenario.id))
        throw std::runtime_error("estimate_expected_return: no ego history "
                                 "for scenario " +
                                 scenario.id);
    const std::deque<sim::Trajectory>& q = buffer.entries(scenario.id);
    double sum = 0.0;
    for (const sim::Trajectory& ego : q)
        sum += proxy_return(scenario, make_ego_profile(scenario, ego),
                            candidate, cfg);
    return sum / static_cast<double>(q.size());
}

std::vector<double> estimate_returns(const sim::Scenario& scenario,
                                     const HistoryBuffer& buffer,
                                     const generator::CandidateSet& set,
                                     const ProxyConfig& cfg) {
    if (buffer.empty(scenario.id))
        throw std::runtime_error("estimate_returns: no ego history for "
                                 "scenario " +
                                 scenario.id);
    const std::deque<sim::Trajectory>& q = buffer.entries(scenario.id);
    std::vector<EgoProfile> profiles;
    profiles.reserve(q.size());
    for (const sim::Trajectory& ego : q)
        profiles.push_back(make_ego_profile(scenario, ego));

    std::vector<double> out;
    out.reserve(set.candidates.size());
    for (const generator::Candidate& c : set.candidates) {
        double sum = 0.0;
        for (const EgoProfile& p : profiles)
            sum += proxy_return(scenario, p, c.trajectory, cfg);
        out.push_back(sum / static_cast<double>(profiles.size()));
    }
    return out;
}

Selection softmax_select(const std::vector<double>& j_hats,
                         const SamplerConfig& cfg, std::mt19937_64& rng) {
    if (j_hats.empty())
        throw std::invalid_argument("softmax_select: empty estimates");
    const std::size_t n = j_hats.size();
    Selection sel;
    if (cfg.hard_min || cfg.temperature < 1e-12) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < n; ++k)
            if (j_hats[k] < j_hats[best]) best = k;
        sel.index = best;
        sel.probabilities.assign(n, 0.0);
        sel.probabilities[best] = 1.0;
        return sel;
    }
    std::vector<double> logits(n);
    for (std::size_t k = 0; k < n; ++k)
        logits[k] = -j_hats[k] / cfg.temperature;
    std::vector<double> logp = generator::log_softmax(std::move(logits));
    sel.probabilities.resize(n);
    for (std::size_t k = 0; k < n; ++k)
        sel.probabilities[k] = std::exp(logp[k]);

    const double u = rng::uniform(rng);
    double cum = 0.0;
    sel.index = n - 1;
    for (std::size_t k = 0; k < n; ++k) {
        cum += sel.probabilities[k];
        if (u < cum) {
            sel.index = k;
            break;
        }
    }
    return sel;
}

bool warmup_if_empty(HistoryBuffer& buffer, const sim::Scenario& scenario,
                     sim::Controller& controller, std::uint64_t seed) {
    if (!buffer.empty(scenario.id)) return false;
    const sim::RolloutResult res =
        sim::rollout_episode(controller, scenario, nullptr, seed);
    buffer.push(scenario.id, res.ego_trajectory);
    return true;
}

double kl_categorical(const std::vector<double>& p,
                      const std::vector<double>& q) {
    if (p.size() != q.size())
        throw std::invalid_argument("kl_categorical: size mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(kl, 0.0);
}

double tv_distance(const std::vector<double>& p,
                   const std::vector<double>& q) {
    if (p.size() != q.size())
        throw std::invalid_argument("tv_distance: size mismatch");
    double l1 = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) l1 += std::abs(p[i] - q[i]);
    return 0.5 * l1;
}

double kl_to_ref(const generator::GeneratorParams& current,
                 const generator::GeneratorParams& reference,
                 const std::vector<generator::CandidateSet>& contexts) {
    if (contexts.empty())
        throw std::invalid_argument("kl_to_ref: no contexts");
    double total = 0.0;
    for (const generator::CandidateSet& set : contexts) {
        std::vector<double> lp_cur =
            generator::log_softmax(generator::scorer_logits(current, set));
        std::vector<double> lp_ref =
            generator::log_softmax(generator::scorer_logits(reference, set));
        std::vector<double> p(lp_cur.size());
        std::vector<double> q(lp_cur.size());
        for (std::size_t i = 0; i < lp_cur.size(); ++i) {
            p[i] = std::exp(lp_cur[i]);
            q[i] = std::exp(lp_ref[i]);
        }
        total += kl_categorical(p, q);
    }
    return total / static_cast<double>(contexts.size());
}

} // namespace advloop::adversary
