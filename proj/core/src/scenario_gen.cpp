#include "advloop/scenario_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "advloop/rng.hpp"

namespace advloop::sim {

using geom::Polyline;
using geom::Vec2;

double ramp_travel_time(double s, double v0, double v_target, double accel,
                        double dt) {
    double covered = 0.0;
    double v = v0;
    double t = 0.0;
    while (covered < s && t < 120.0) {
        v = std::min(v + accel * dt, v_target);
        covered += v * dt;
        t += dt;
    }
    return t;
}

namespace {

constexpr int kHorizon = 90;
constexpr double kDt = 0.1;
constexpr double kLaneGap = 3.5;

Polyline line_segment_lane(Vec2 a, Vec2 b, double spacing = 2.0) {
    Polyline lane;
    const double len = geom::distance(a, b);
    const int n = std::max(2, static_cast<int>(std::ceil(len / spacing)) + 1);
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / (n - 1);
        lane.points.push_back(a + t * (b - a));
    }
    return lane;
}

Polyline arc_lane(Vec2 center, double radius, double phi_begin,
                  double phi_end, double spacing = 2.0) {
    Polyline lane;
    const double arc = std::abs(phi_end - phi_begin) * radius;
    const int n = std::max(2, static_cast<int>(std::ceil(arc / spacing)) + 1);
    for (int i = 0; i < n; ++i) {
        const double phi =
            phi_begin + (phi_end - phi_begin) * static_cast<double>(i) / (n - 1);
        lane.points.push_back(
            {center.x + radius * std::sin(phi), center.y - radius * std::cos(phi)});
    }
    return lane;
}

/// Constant-speed log along a lane, starting at arc length s0.
Trajectory follow_lane(const Polyline& lane, double s0, double speed) {
    Trajectory traj;
    traj.dt = kDt;
    traj.poses.reserve(kHorizon);
    traj.speeds.assign(kHorizon, speed);
    for (int k = 0; k < kHorizon; ++k) {
        const double s = s0 + speed * k * kDt;
        const Vec2 p = geom::frenet_to_point(lane, s, 0.0);
        const Vec2 tan = geom::tangent_at(lane, s);
        traj.poses.push_back({p.x, p.y, std::atan2(tan.y, tan.x)});
    }
    return traj;
}

/// Draws a signed time margin for crossing traffic: usually clear of the
/// nominal ego, occasionally tight so replay logs are not uniformly benign.
double crossing_margin(std::mt19937_64& rng) {
    const double sign = rng::uniform(rng) < 0.5 ? -1.0 : 1.0;
    if (rng::uniform(rng) < 0.7) return sign * rng::uniform_in(rng, 1.8, 4.5);
    return sign * rng::uniform_in(rng, 0.3, 1.2);
}

Scenario straight_template(std::mt19937_64& rng) {
    Scenario sc;
    sc.template_name = "straight";
    for (const double y : {-kLaneGap, 0.0, kLaneGap})
        sc.lanes.push_back(line_segment_lane({-30.0, y}, {170.0, y}));
    sc.ego_route = line_segment_lane({0.0, 0.0}, {90.0, 0.0});
    sc.ego_start = {0.0, 0.0, 0.0};
    sc.ego_start_speed = rng::uniform_in(rng, 6.0, 9.0);
    sc.ego_target_speed = rng::uniform_in(rng, 11.0, 14.0);

    // Adversary keeps to the adjacent lane in the log.
    const double adv_y = rng::uniform(rng) < 0.5 ? kLaneGap : -kLaneGap;
    const Polyline adv_lane = line_segment_lane({-30.0, adv_y}, {170.0, adv_y});
    AgentTrack adv;
    adv.trajectory = follow_lane(adv_lane, rng::uniform_in(rng, 25.0, 60.0),
                                 rng::uniform_in(rng, 6.0, 12.0));
    sc.agents.push_back(adv);
    sc.adversary_index = 0;

    if (rng::uniform(rng) < 0.6) {
        // Lead vehicle in the ego lane, fast enough that replay never closes.
        AgentTrack lead;
        lead.trajectory =
            follow_lane(sc.lanes[1], rng::uniform_in(rng, 95.0, 125.0),
                        sc.ego_target_speed + rng::uniform_in(rng, 1.0, 4.0));
        sc.agents.push_back(lead);
    }
    return sc;
}

Scenario curve_template(std::mt19937_64& rng) {
    Scenario sc;
    sc.template_name = "curve";
    const double radius = rng::uniform_in(rng, 50.0, 80.0);
    const Vec2 center{0.0, radius};
    const double phi_end = 130.0 / radius;
    for (const double dr : {-kLaneGap, 0.0, kLaneGap})
        sc.lanes.push_back(arc_lane(center, radius + dr, -0.1, phi_end));
    sc.ego_route = arc_lane(center, radius, 0.0, 90.0 / radius);
    sc.ego_start = {0.0, 0.0, 0.0};
    sc.ego_start_speed = rng::uniform_in(rng, 6.0, 9.0);
    sc.ego_target_speed = rng::uniform_in(rng, 10.0, 13.0);

    const std::size_t adv_lane_idx = rng::uniform(rng) < 0.5 ? 0 : 2;
    AgentTrack adv;
    adv.trajectory =
        follow_lane(sc.lanes[adv_lane_idx], rng::uniform_in(rng, 15.0, 50.0),
                    rng::uniform_in(rng, 7.0, 12.0));
    sc.agents.push_back(adv);
    sc.adversary_index = 0;
    return sc;
}

Scenario intersection_template(std::mt19937_64& rng) {
    Scenario sc;
    sc.template_name = "intersection";
    const double cross_x = 45.0;
    for (const double y : {0.0, kLaneGap})
        sc.lanes.push_back(line_segment_lane({-30.0, y}, {170.0, y}));
    for (const double x : {cross_x, cross_x + kLaneGap})
        sc.lanes.push_back(line_segment_lane({x, -70.0}, {x, 70.0}));
    sc.ego_route = line_segment_lane({0.0, 0.0}, {90.0, 0.0});
    sc.ego_start = {0.0, 0.0, 0.0};
    sc.ego_start_speed = rng::uniform_in(rng, 6.0, 9.0);
    sc.ego_target_speed = rng::uniform_in(rng, 11.0, 14.0);

    // Time the crossing agent against the nominal ego's arrival at cross_x.
    const double t_ego = ramp_travel_time(cross_x, sc.ego_start_speed,
                                          sc.ego_target_speed, 4.0, kDt);
    const double v_adv = rng::uniform_in(rng, 7.0, 12.0);
    const double t_adv = t_ego + crossing_margin(rng);
    const bool southbound = rng::uniform(rng) < 0.5;
    const Polyline& cross_lane = southbound ? sc.lanes[3] : sc.lanes[2];
    // Arc length of y = 0 along the crossing lane is 70 m from its start.
    const double s_at_crossing = 70.0;
    double s0 = s_at_crossing - v_adv * std::max(t_adv, 0.0);
    if (southbound) {
        // The southbound log runs the same lane geometry reversed.
        Polyline reversed = cross_lane;
        std::reverse(reversed.points.begin(), reversed.points.end());
        AgentTrack adv;
        adv.trajectory = follow_lane(reversed, std::max(0.0, s0), v_adv);
        sc.agents.push_back(adv);
    } else {
        AgentTrack adv;
        adv.trajectory = follow_lane(cross_lane, std::max(0.0, s0), v_adv);
        sc.agents.push_back(adv);
    }
    sc.adversary_index = 0;

    if (rng::uniform(rng) < 0.5) {
        AgentTrack parallel;
        parallel.trajectory =
            follow_lane(sc.lanes[1], rng::uniform_in(rng, 20.0, 60.0),
                        rng::uniform_in(rng, 8.0, 12.0));
        sc.agents.push_back(parallel);
    }
    return sc;
}

Scenario merge_template(std::mt19937_64& rng) {
    Scenario sc;
    sc.template_name = "merge";
    sc.lanes.push_back(line_segment_lane({-30.0, 0.0}, {170.0, 0.0}));
    sc.lanes.push_back(line_segment_lane({-30.0, kLaneGap}, {170.0, kLaneGap}));

    // Ramp easing into the main lane around x = 55.
    Polyline ramp;
    for (const Vec2 p : {Vec2{-10.0, 9.0}, Vec2{15.0, 6.2}, Vec2{35.0, 3.4},
                         Vec2{48.0, 1.2}, Vec2{55.0, 0.2}, Vec2{62.0, 0.0}})
        ramp.points.push_back(p);
    for (double x = 66.0; x <= 170.0; x += 4.0) ramp.points.push_back({x, 0.0});
    sc.lanes.push_back(ramp);

    sc.ego_route = line_segment_lane({0.0, 0.0}, {90.0, 0.0});
    sc.ego_start = {0.0, 0.0, 0.0};
    sc.ego_start_speed = rng::uniform_in(rng, 6.0, 9.0);
    sc.ego_target_speed = rng::uniform_in(rng, 11.0, 13.0);

    // Arc length of the ramp up to the merge point near x = 62.
    Polyline merge_head;
    merge_head.points.assign(ramp.points.begin(), ramp.points.begin() + 6);
    const double s_merge = merge_head.length();
    const double t_ego = ramp_travel_time(62.0, sc.ego_start_speed,
                                          sc.ego_target_speed, 4.0, kDt);
    const double margin = crossing_margin(rng);
    // Keep the log benign: whoever reaches the merge first keeps pulling away.
    double v_adv;
    if (margin < 0.0)
        v_adv = sc.ego_target_speed + rng::uniform_in(rng, 1.5, 4.0);
    else
        v_adv = std::max(5.0, sc.ego_target_speed - rng::uniform_in(rng, 1.5, 4.0));
    if (std::abs(margin) < 1.3) v_adv = rng::uniform_in(rng, 8.0, 12.0);
    v_adv = std::min(v_adv, 19.0);
    const double s0 = s_merge - v_adv * std::max(t_ego + margin, 0.0);
    AgentTrack adv;
    adv.trajectory = follow_lane(ramp, std::max(0.0, s0), v_adv);
    sc.agents.push_back(adv);
    sc.adversary_index = 0;
    return sc;
}

} // namespace

Scenario make_scenario(const std::string& template_name, std::uint64_t seed,
                       int index) {
    std::mt19937_64 rng = rng::make_stream(
        seed, template_name + "/" + std::to_string(index));
    Scenario sc;
    if (template_name == "straight") sc = straight_template(rng);
    else if (template_name == "curve") sc = curve_template(rng);
    else if (template_name == "intersection") sc = intersection_template(rng);
    else if (template_name == "merge") sc = merge_template(rng);
    else
        throw std::invalid_argument("make_scenario: unknown template '" +
                                    template_name + "'");
    sc.horizon_steps = kHorizon;
    sc.dt = kDt;
    // The seed is part of the id so corpora drawn with different seeds are
    // disjoint by construction (held-out evaluation checks id overlap).
    char buf[40];
    std::snprintf(buf, sizeof(buf), "-%llu-%04d",
                  static_cast<unsigned long long>(seed), index);
    sc.id = template_name + buf;
    return sc;
}

std::vector<Scenario> make_synthetic_scenarios(const CorpusConfig& cfg) {
    if (cfg.templates.empty())
        throw std::invalid_argument("make_synthetic_scenarios: no templates");
    for (const std::string& t : cfg.templates) {
        if (std::find(kScenarioTemplates.begin(), kScenarioTemplates.end(),
                      t) == kScenarioTemplates.end())
            throw std::invalid_argument(
                "make_synthetic_scenarios: unknown template '" + t + "'");
    }
    std::vector<Scenario> out;
    out.reserve(static_cast<std::size_t>(cfg.count));
    for (int i = 0; i < cfg.count; ++i) {
        const std::string& name =
            cfg.templates[static_cast<std::size_t>(i) % cfg.templates.size()];
        out.push_back(make_scenario(name, cfg.seed, i));
    }
    return out;
}

} // namespace advloop::sim
