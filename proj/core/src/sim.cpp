#include "advloop/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "advloop/rng.hpp"

namespace advloop::sim {

using geom::Vec2;

double max_pointwise_distance(const Trajectory& a, const Trajectory& b) {
    if (a.poses.empty() || b.poses.empty())
        throw std::invalid_argument("max_pointwise_distance: empty trajectory");
    const std::size_t n = std::min(a.poses.size(), b.poses.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 pa{a.poses[i].x, a.poses[i].y};
        const Vec2 pb{b.poses[i].x, b.poses[i].y};
        worst = std::max(worst, geom::distance(pa, pb));
    }
    return worst;
}

EgoState step_bicycle(const EgoState& state, const Action& action,
                      const BicycleParams& params) {
    const double steer_cmd = std::clamp(action.steer, -1.0, 1.0);
    const double accel_cmd = std::clamp(action.accel, -1.0, 1.0);
    const double delta = steer_cmd * params.max_steer;
    const double accel = accel_cmd * params.max_accel;
    const double dt = params.dt;

    const double v_new =
        std::clamp(state.speed + accel * dt, 0.0, params.max_speed);
    const double v_mid = 0.5 * (state.speed + v_new);
    const double yaw_rate = v_mid / params.wheelbase * std::tan(delta);
    const double yaw_mid = state.pose.yaw + 0.5 * yaw_rate * dt;

    EgoState next;
    next.pose.x = state.pose.x + v_mid * std::cos(yaw_mid) * dt;
    next.pose.y = state.pose.y + v_mid * std::sin(yaw_mid) * dt;
    next.pose.yaw = geom::normalize_angle(state.pose.yaw + yaw_rate * dt);
    next.speed = v_new;
    next.step = state.step + 1;
    return next;
}

double compute_reward(const RewardConfig& cfg, double delta_s,
                      double next_speed, Termination outcome) {
    double r = cfg.progress_coef * delta_s + cfg.speed_coef * next_speed;
    switch (outcome) {
        case Termination::crash: r -= cfg.crash_penalty; break;
        case Termination::offroad: r -= cfg.offroad_penalty; break;
        case Termination::success: r += cfg.success_bonus; break;
        default: break;
    }
    return r;
}

double min_lane_offset(const Scenario& scenario, Vec2 p) {
    double best = std::numeric_limits<double>::infinity();
    for (const geom::Polyline& lane : scenario.lanes)
        best = std::min(best, std::abs(geom::frenet_project(p, lane).d));
    return best;
}

geom::Obb agent_box_at(const Scenario& scenario, int idx, int step,
                       const Trajectory* adversary_plan) {
    const AgentTrack& agent = scenario.agents.at(static_cast<std::size_t>(idx));
    const Trajectory& traj =
        (adversary_plan != nullptr && idx == scenario.adversary_index)
            ? *adversary_plan
            : agent.trajectory;
    if (traj.poses.empty())
        throw std::invalid_argument("agent_box_at: empty trajectory");
    const std::size_t k = std::min<std::size_t>(
        static_cast<std::size_t>(std::max(step, 0)), traj.poses.size() - 1);
    return geom::Obb{traj.poses[k], agent.length, agent.width};
}

Termination check_termination(const Scenario& scenario, const EgoState& state,
                              const Trajectory* adversary_plan,
                              const RewardConfig& cfg) {
    const geom::Obb ego_box{state.pose, kEgoLength, kEgoWidth};
    for (int i = 0; i < static_cast<int>(scenario.agents.size()); ++i) {
        if (geom::sat_overlap(ego_box,
                              agent_box_at(scenario, i, state.step,
                                           adversary_plan)))
            return Termination::crash;
    }
    const Vec2 p{state.pose.x, state.pose.y};
    if (min_lane_offset(scenario, p) > cfg.offroad_meters)
        return Termination::offroad;
    const double total = scenario.ego_route.length();
    if (total > 0.0 &&
        geom::frenet_project(p, scenario.ego_route).s / total >
            cfg.success_fraction)
        return Termination::success;
    if (state.step >= scenario.horizon_steps - 1) return Termination::timeout;
    return Termination::none;
}

std::vector<double> build_observation(const Scenario& scenario,
                                      const EgoState& state,
                                      const Trajectory* adversary_plan,
                                      const BicycleParams& params,
                                      const ObservationConfig& obs_cfg) {
    std::vector<double> obs;
    obs.reserve(4 + static_cast<std::size_t>(obs_cfg.num_beams));

    const Vec2 p{state.pose.x, state.pose.y};
    const geom::FrenetCoord fc = geom::frenet_project(p, scenario.ego_route);
    const Vec2 tan = geom::tangent_at(scenario.ego_route, fc.s);
    const double route_yaw = std::atan2(tan.y, tan.x);
    const double total = scenario.ego_route.length();

    obs.push_back(state.speed / params.max_speed);
    obs.push_back(geom::normalize_angle(state.pose.yaw - route_yaw));
    obs.push_back(fc.d / 10.0);
    obs.push_back(total > 0.0 ? std::clamp(1.0 - fc.s / total, 0.0, 1.0) : 0.0);

    std::vector<geom::Obb> boxes;
    boxes.reserve(scenario.agents.size());
    for (int i = 0; i < static_cast<int>(scenario.agents.size()); ++i)
        boxes.push_back(agent_box_at(scenario, i, state.step, adversary_plan));

    const double two_pi = 2.0 * std::numbers::pi;
    for (int b = 0; b < obs_cfg.num_beams; ++b) {
        const double heading =
            state.pose.yaw + two_pi * static_cast<double>(b) /
                                 static_cast<double>(obs_cfg.num_beams);
        obs.push_back(
            geom::ray_cast(p, heading, obs_cfg.lidar_range, boxes) /
            obs_cfg.lidar_range);
    }
    return obs;
}

RolloutResult rollout_episode(Controller& controller, const Scenario& scenario,
                              const Trajectory* adversary_plan,
                              std::uint64_t seed, const BicycleParams& params,
                              const RewardConfig& reward_cfg,
                              const ObservationConfig& obs_cfg) {
    std::mt19937_64 rng = rng::make_stream(seed, "rollout");

    EgoState state{scenario.ego_start, scenario.ego_start_speed, 0};
    RolloutResult out;
    out.ego_trajectory.dt = scenario.dt;
    out.ego_trajectory.poses.push_back(state.pose);
    out.ego_trajectory.speeds.push_back(state.speed);

    double s_prev =
        geom::frenet_project({state.pose.x, state.pose.y}, scenario.ego_route)
            .s;
    const double total = scenario.ego_route.length();
    double discount = 1.0;

    while (state.step < scenario.horizon_steps - 1) {
        StepRecord rec;
        rec.obs = build_observation(scenario, state, adversary_plan, params,
                                    obs_cfg);
        rec.info = controller.act(rec.obs, state, scenario, rng);
        if (!std::isfinite(rec.info.action.steer) ||
            !std::isfinite(rec.info.action.accel))
            throw std::runtime_error("rollout_episode: non-finite control");

        const EgoState next = step_bicycle(state, rec.info.action, params);
        const Termination outcome =
            check_termination(scenario, next, adversary_plan, reward_cfg);

        const double s_next =
            geom::frenet_project({next.pose.x, next.pose.y},
                                 scenario.ego_route)
                .s;
        rec.reward =
            compute_reward(reward_cfg, s_next - s_prev, next.speed, outcome);
        rec.frenet_s = s_next;

        out.discounted_return += discount * rec.reward;
        out.undiscounted_return += rec.reward;
        discount *= reward_cfg.gamma;

        out.ego_trajectory.poses.push_back(next.pose);
        out.ego_trajectory.speeds.push_back(next.speed);
        out.steps.push_back(std::move(rec));

        state = next;
        s_prev = s_next;
        if (is_terminal(outcome)) {
            out.termination = outcome;
            break;
        }
    }
    if (out.termination == Termination::none)
        out.termination = Termination::timeout;
    out.final_route_fraction =
        total > 0.0 ? std::clamp(s_prev / total, 0.0, 1.0) : 0.0;
    out.cost = out.termination == Termination::crash ? 1.0 : 0.0;
    return out;
}

ActInfo RouteFollowController::act(const std::vector<double>&,
                                   const EgoState& state,
                                   const Scenario& scenario,
                                   std::mt19937_64& rng) {
    const Vec2 p{state.pose.x, state.pose.y};
    const geom::FrenetCoord fc = geom::frenet_project(p, scenario.ego_route);
    const double lookahead = std::max(3.0, 0.6 * state.speed);
    const Vec2 target =
        geom::frenet_to_point(scenario.ego_route, fc.s + lookahead, 0.0);
    const double alpha = geom::normalize_angle(
        std::atan2(target.y - p.y, target.x - p.x) - state.pose.yaw);
    const double steer_rad =
        std::atan2(2.0 * params_.wheelbase * std::sin(alpha), lookahead);

    Action a;
    a.steer = std::clamp(steer_rad / params_.max_steer, -1.0, 1.0);
    a.accel = std::clamp(
        (scenario.ego_target_speed - state.speed) / params_.max_accel, -1.0,
        1.0);
    if (action_noise_ > 0.0) {
        a.steer = std::clamp(a.steer + action_noise_ * rng::gaussian(rng),
                             -1.0, 1.0);
        a.accel = std::clamp(a.accel + action_noise_ * rng::gaussian(rng),
                             -1.0, 1.0);
    }
    return ActInfo{a, {0.0, 0.0}, 0.0, 0.0};
}

} // namespace advloop::sim
