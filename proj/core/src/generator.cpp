#include "advloop/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "advloop/checkpoint.hpp"
#include "advloop/rng.hpp"

namespace advloop::generator {

using geom::Polyline;
using geom::Vec2;
using sim::Trajectory;

namespace {

double peak_speed(const Trajectory& traj) {
    double peak = 0.0;
    if (!traj.speeds.empty()) {
        for (const double v : traj.speeds) peak = std::max(peak, v);
        return peak;
    }
    for (std::size_t k = 1; k < traj.poses.size(); ++k) {
        const Vec2 a{traj.poses[k - 1].x, traj.poses[k - 1].y};
        const Vec2 b{traj.poses[k].x, traj.poses[k].y};
        peak = std::max(peak, geom::distance(a, b) / traj.dt);
    }
    return peak;
}

double mean_speed_of(const Trajectory& traj) {
    if (traj.poses.size() < 2) return 0.0;
    double total = 0.0;
    for (std::size_t k = 1; k < traj.poses.size(); ++k) {
        const Vec2 a{traj.poses[k - 1].x, traj.poses[k - 1].y};
        const Vec2 b{traj.poses[k].x, traj.poses[k].y};
        total += geom::distance(a, b);
    }
    return total / (traj.dt * static_cast<double>(traj.poses.size() - 1));
}

/// Logged poses as a polyline, extended along the final heading so faster
/// variants can overrun the logged extent without stalling.
Polyline path_of(const Trajectory& traj, double extend_m = 120.0) {
    Polyline path;
    for (const auto& p : traj.poses) {
        const Vec2 v{p.x, p.y};
        if (path.points.empty() ||
            geom::distance(path.points.back(), v) > 1e-6)
            path.points.push_back(v);
    }
    if (path.points.size() < 2) {
        const auto& p0 = traj.poses.front();
        path.points = {{p0.x, p0.y},
                       {p0.x + std::cos(p0.yaw), p0.y + std::sin(p0.yaw)}};
    }
    const std::size_t n = path.points.size();
    const Vec2 tail = path.points[n - 1] - path.points[n - 2];
    const double tail_len = geom::norm(tail);
    if (tail_len > 1e-9)
        path.points.push_back(path.points[n - 1] +
                              (extend_m / tail_len) * tail);
    return path;
}

void fill_yaws_and_speeds(Trajectory& traj, double yaw0) {
    const std::size_t n = traj.poses.size();
    traj.speeds.assign(n, 0.0);
    double last_yaw = yaw0;
    for (std::size_t k = 0; k < n; ++k) {
        if (k + 1 < n) {
            const Vec2 a{traj.poses[k].x, traj.poses[k].y};
            const Vec2 b{traj.poses[k + 1].x, traj.poses[k + 1].y};
            const double ds = geom::distance(a, b);
            if (ds > 1e-4) last_yaw = std::atan2(b.y - a.y, b.x - a.x);
        }
        traj.poses[k].yaw = last_yaw;
        if (k > 0) {
            const Vec2 a{traj.poses[k - 1].x, traj.poses[k - 1].y};
            const Vec2 b{traj.poses[k].x, traj.poses[k].y};
            traj.speeds[k] = geom::distance(a, b) / traj.dt;
        }
    }
    if (n > 1) traj.speeds[0] = traj.speeds[1];
}

/// Constant-speed walk along `path` with a smoothly ramped lateral offset.
Trajectory walk_path(const Polyline& path, double speed, int horizon,
                     double dt, double yaw0, double lateral = 0.0,
                     double ramp_frac = 0.35) {
    Trajectory traj;
    traj.dt = dt;
    traj.poses.reserve(static_cast<std::size_t>(horizon));
    const int ramp_steps =
        std::max(1, static_cast<int>(ramp_frac * horizon));
    for (int k = 0; k < horizon; ++k) {
        const double blend =
            lateral == 0.0
                ? 0.0
                : std::min(1.0, static_cast<double>(k) / ramp_steps);
        const double smooth = blend * blend * (3.0 - 2.0 * blend);
        const Vec2 p = geom::frenet_to_point(path, speed * k * dt,
                                             lateral * smooth);
        traj.poses.push_back({p.x, p.y, 0.0});
    }
    fill_yaws_and_speeds(traj, yaw0);
    return traj;
}

Vec2 hermite(double u, Vec2 p0, Vec2 m0, Vec2 p1, Vec2 m1) {
    const double u2 = u * u;
    const double u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * p0 + (u3 - 2 * u2 + u) * m0 +
           (-2 * u3 + 3 * u2) * p1 + (u3 - u2) * m1;
}

struct InterceptSpec {
    Vec2 goal;
    double goal_dir = 0.0;     // heading to blend into at the goal
    double arrive_frac = 0.6;  // fraction of the horizon spent en route
    const Polyline* follow_after = nullptr;
    double follow_s0 = 0.0;    // arc position of the goal on follow_after
    bool stop_at_goal = false;
};

/// Cubic spline from the adversary's start to the goal, re-sampled at
/// constant speed, then either holding position or riding `follow_after`.
Trajectory intercept_trajectory(const geom::Pose2D& start,
                                const InterceptSpec& spec, int horizon,
                                double dt, double v_cap) {
    const Vec2 p0{start.x, start.y};
    const double reach = std::max(geom::distance(p0, spec.goal), 1.0);
    const Vec2 m0 = reach * Vec2{std::cos(start.yaw), std::sin(start.yaw)};
    const Vec2 m1 =
        reach * Vec2{std::cos(spec.goal_dir), std::sin(spec.goal_dir)};

    constexpr int kSamples = 240;
    std::array<double, kSamples + 1> arc{};
    std::array<Vec2, kSamples + 1> pts;
    pts[0] = p0;
    for (int i = 1; i <= kSamples; ++i) {
        pts[i] = hermite(static_cast<double>(i) / kSamples, p0, m0, spec.goal,
                         m1);
        arc[i] = arc[i - 1] + geom::distance(pts[i - 1], pts[i]);
    }
    const double total = arc[kSamples];
    const double t_arrive =
        std::max(spec.arrive_frac * (horizon - 1) * dt, 2.0 * dt);
    const double v_travel = std::clamp(total / t_arrive, 1.0, v_cap);

    Trajectory traj;
    traj.dt = dt;
    traj.poses.reserve(static_cast<std::size_t>(horizon));
    int lut = 0;
    for (int k = 0; k < horizon; ++k) {
        const double s = v_travel * k * dt;
        if (s < total) {
            while (lut < kSamples && arc[lut + 1] < s) ++lut;
            const double seg = arc[lut + 1] - arc[lut];
            const double t = seg > 1e-12 ? (s - arc[lut]) / seg : 0.0;
            const Vec2 p = pts[lut] + t * (pts[lut + 1] - pts[lut]);
            traj.poses.push_back({p.x, p.y, 0.0});
        } else if (spec.stop_at_goal || spec.follow_after == nullptr) {
            traj.poses.push_back({spec.goal.x, spec.goal.y, 0.0});
        } else {
            const Vec2 p = geom::frenet_to_point(
                *spec.follow_after, spec.follow_s0 + (s - total), 0.0);
            traj.poses.push_back({p.x, p.y, 0.0});
        }
    }
    fill_yaws_and_speeds(traj, start.yaw);
    return traj;
}

bool feasible(const Trajectory& traj, double v_cap, double max_step_yaw) {
    for (std::size_t k = 1; k < traj.poses.size(); ++k) {
        const Vec2 a{traj.poses[k - 1].x, traj.poses[k - 1].y};
        const Vec2 b{traj.poses[k].x, traj.poses[k].y};
        const double ds = geom::distance(a, b);
        if (ds / traj.dt > v_cap + 1e-6) return false;
        if (ds > 0.05) {
            const double dyaw = geom::normalize_angle(traj.poses[k].yaw -
                                                      traj.poses[k - 1].yaw);
            if (std::abs(dyaw) > max_step_yaw + 1e-9) return false;
        }
    }
    return true;
}

} // namespace

GeneratorParams pretrained_params(std::uint64_t synthesis_seed,
                                  GeneratorConfig config) {
    GeneratorParams p;
    p.weights.fill(0.0);
    p.weights[0] = 2.0;
    p.synthesis_seed = synthesis_seed;
    p.config = config;
    return p;
}

GeneratorParams freeze_reference(const GeneratorParams& params) {
    return params;
}

Features candidate_features(const sim::Scenario& scenario,
                            const sim::Trajectory& candidate) {
    if (candidate.poses.empty())
        throw std::invalid_argument("candidate_features: empty trajectory");
    const Trajectory& logged =
        scenario.agents.at(static_cast<std::size_t>(scenario.adversary_index))
            .trajectory;
    Features f{};
    f[0] = candidate.poses.size() == logged.poses.size() &&
                   sim::max_pointwise_distance(candidate, logged) < 1e-9
               ? 1.0
               : 0.0;

    const auto& last = candidate.poses.back();
    const auto end_fc =
        geom::frenet_project({last.x, last.y}, scenario.ego_route);
    const double route_len = std::max(scenario.ego_route.length(), 1e-9);
    f[1] = std::clamp(end_fc.s / route_len, 0.0, 1.5);
    f[2] = std::min(std::abs(end_fc.d), 25.0) / 10.0;

    double min_route_dist = std::numeric_limits<double>::infinity();
    for (const auto& p : candidate.poses) {
        const auto fc = geom::frenet_project({p.x, p.y}, scenario.ego_route);
        min_route_dist = std::min(min_route_dist, std::abs(fc.d));
    }
    f[3] = std::clamp(min_route_dist / 20.0, 0.0, 2.5);

    f[4] = std::clamp(mean_speed_of(candidate) / 25.0, 0.0, 2.0);

    double curv_sum = 0.0;
    int curv_n = 0;
    for (std::size_t k = 1; k < candidate.poses.size(); ++k) {
        const Vec2 a{candidate.poses[k - 1].x, candidate.poses[k - 1].y};
        const Vec2 b{candidate.poses[k].x, candidate.poses[k].y};
        const double ds = geom::distance(a, b);
        if (ds < 0.05) continue;
        const double dyaw = geom::normalize_angle(candidate.poses[k].yaw -
                                                  candidate.poses[k - 1].yaw);
        curv_sum += std::abs(dyaw) / ds;
        ++curv_n;
    }
    f[5] = std::clamp(curv_n > 0 ? 10.0 * curv_sum / curv_n : 0.0, 0.0, 3.0);

    const Polyline logged_path = path_of(logged, 0.0);
    double mean_d = 0.0;
    std::vector<double> ds_list;
    ds_list.reserve(candidate.poses.size());
    for (const auto& p : candidate.poses) {
        const auto fc = geom::frenet_project({p.x, p.y}, logged_path);
        ds_list.push_back(fc.d);
        mean_d += fc.d;
    }
    mean_d /= static_cast<double>(ds_list.size());
    double var = 0.0;
    for (const double d : ds_list) var += (d - mean_d) * (d - mean_d);
    var /= static_cast<double>(ds_list.size());
    f[6] = std::clamp(var / 4.0, 0.0, 5.0);
    return f;
}

CandidateSet synthesize_candidates(const sim::Scenario& scenario,
                                   const GeneratorConfig& config,
                                   std::uint64_t seed) {
    const Trajectory& logged =
        scenario.agents.at(static_cast<std::size_t>(scenario.adversary_index))
            .trajectory;
    if (logged.poses.empty())
        throw std::invalid_argument(
            "synthesize_candidates: adversary log is empty");
    std::mt19937_64 rng =
        rng::make_stream(seed, "candidates/" + scenario.id);

    const int horizon = static_cast<int>(logged.poses.size());
    const double dt = logged.dt;
    const double v_peak = std::max(peak_speed(logged), 1.0);
    const double v_cap = config.speed_cap_factor * v_peak;
    const double v_mean = std::max(mean_speed_of(logged), 1.0);
    const geom::Pose2D start = logged.poses.front();
    const Polyline own_path = path_of(logged);
    const double route_len = scenario.ego_route.length();

    CandidateSet set;
    set.scenario_id = scenario.id;

    std::vector<Trajectory> pool;
    pool.push_back(logged);

    const auto push_checked = [&](Trajectory t) {
        if (feasible(t, v_cap, config.max_step_yaw))
            pool.push_back(std::move(t));
    };

    // Speed-warped runs of the logged geometry.
    for (const double mult : {0.6, 0.8, 1.2, 1.4})
        push_checked(walk_path(own_path, std::min(mult * v_mean, v_cap),
                               horizon, dt, start.yaw));

    // Lane shifts off the logged geometry.
    for (const double lateral : {3.5, -3.5})
        for (const double mult : {0.85, 1.15})
            push_checked(walk_path(own_path, std::min(mult * v_mean, v_cap),
                                   horizon, dt, start.yaw, lateral));

    const auto intercept = [&](double route_frac, double arrive_frac,
                               bool stop, double lateral_jitter) {
        const double goal_s = route_frac * route_len;
        const Vec2 goal =
            geom::frenet_to_point(scenario.ego_route, goal_s, lateral_jitter);
        const Vec2 tan = geom::tangent_at(scenario.ego_route, goal_s);
        InterceptSpec spec;
        spec.goal = goal;
        spec.goal_dir = std::atan2(tan.y, tan.x);
        spec.arrive_frac = arrive_frac;
        spec.follow_after = &scenario.ego_route;
        spec.follow_s0 = goal_s;
        spec.stop_at_goal = stop;
        // Shrink toward the logged endpoint until kinematics pass.
        InterceptSpec cur = spec;
        const auto& logged_end = logged.poses.back();
        for (int attempt = 0; attempt < 6; ++attempt) {
            Trajectory t =
                intercept_trajectory(start, cur, horizon, dt, v_cap);
            if (feasible(t, v_cap, config.max_step_yaw)) {
                pool.push_back(std::move(t));
                return;
            }
            cur.goal = cur.goal + 0.35 * (Vec2{logged_end.x, logged_end.y} -
                                          cur.goal);
            cur.arrive_frac = std::min(cur.arrive_frac + 0.12, 0.95);
        }
    };

    // Route interceptions across arrival times, plus a pair of blockers
    // that stop on the route.
    for (const double fs : {0.3, 0.45, 0.6, 0.75, 0.9})
        for (const double af : {0.4, 0.6, 0.8})
            intercept(fs, af, false, 0.0);
    intercept(0.5, 0.5, true, 0.0);
    intercept(0.7, 0.75, true, 0.0);

    // De-duplicate in order, then backfill with jittered interceptions.
    const int want = config.num_candidates;
    const auto try_add = [&](Trajectory t) {
        if (static_cast<int>(set.candidates.size()) >= want) return;
        for (const Candidate& kept : set.candidates)
            if (sim::max_pointwise_distance(t, kept.trajectory) <
                config.dedup_distance)
                return;
        Candidate c;
        c.features = candidate_features(scenario, t);
        c.trajectory = std::move(t);
        set.candidates.push_back(std::move(c));
    };

    for (Trajectory& t : pool) try_add(std::move(t));
    pool.clear();

    int attempts = 0;
    while (static_cast<int>(set.candidates.size()) < want && attempts < 400) {
        ++attempts;
        const double fs = rng::uniform_in(rng, 0.2, 0.95);
        const double af = rng::uniform_in(rng, 0.35, 0.9);
        const double jitter = rng::uniform_in(rng, -2.5, 2.5);
        intercept(fs, af, rng::uniform(rng) < 0.15, jitter);
        for (Trajectory& t : pool) try_add(std::move(t));
        pool.clear();
    }
    // Last resort: growing lateral copies of the log are mutually distinct.
    double lateral = 0.9;
    while (static_cast<int>(set.candidates.size()) < want) {
        try_add(
            walk_path(own_path, v_mean, horizon, dt, start.yaw, lateral, 0.2));
        lateral = lateral > 0.0 ? -(lateral + 0.9) : -(lateral - 0.9);
    }
    return set;
}

std::vector<double> log_softmax(std::vector<double> logits) {
    if (logits.empty())
        throw std::invalid_argument("log_softmax: empty logits");
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (const double l : logits) sum += std::exp(l - peak);
    const double lse = peak + std::log(sum);
    for (double& l : logits) l -= lse;
    return logits;
}

std::vector<double> scorer_logits(const GeneratorParams& params,
                                  const CandidateSet& set) {
    std::vector<double> logits;
    logits.reserve(set.candidates.size());
    for (const Candidate& c : set.candidates) {
        double z = 0.0;
        for (int i = 0; i < kFeatureDim; ++i)
            z += params.weights[static_cast<std::size_t>(i)] *
                 c.features[static_cast<std::size_t>(i)];
        logits.push_back(z);
    }
    return logits;
}

double log_prob(const GeneratorParams& params, const CandidateSet& set,
                std::size_t index) {
    if (index >= set.candidates.size())
        throw std::out_of_range("log_prob: candidate index out of range");
    return log_softmax(scorer_logits(params, set))[index];
}

std::size_t sample_candidate(const GeneratorParams& params,
                             const CandidateSet& set, double temperature,
                             std::mt19937_64& rng) {
    if (set.candidates.empty())
        throw std::invalid_argument("sample_candidate: empty candidate set");
    std::vector<double> logits = scorer_logits(params, set);
    if (temperature <= 1e-9) {
        return static_cast<std::size_t>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    for (double& l : logits) l /= temperature;
    const std::vector<double> logp = log_softmax(std::move(logits));
    const double u = rng::uniform(rng);
    double cum = 0.0;
    for (std::size_t i = 0; i < logp.size(); ++i) {
        cum += std::exp(logp[i]);
        if (u < cum) return i;
    }
    return logp.size() - 1;
}

namespace {

nlohmann::json params_to_json(const GeneratorParams& p) {
    return {{"weights", p.weights},
            {"synthesis_seed", p.synthesis_seed},
            {"config",
             {{"num_candidates", p.config.num_candidates},
              {"speed_cap_factor", p.config.speed_cap_factor},
              {"dedup_distance", p.config.dedup_distance},
              {"max_step_yaw", p.config.max_step_yaw}}}};
}

GeneratorParams params_from_json(const nlohmann::json& j) {
    GeneratorParams p;
    const auto w = j.at("weights").get<std::vector<double>>();
    if (w.size() != kFeatureDim)
        throw std::runtime_error("generator checkpoint: weight size " +
                                 std::to_string(w.size()) + ", expected " +
                                 std::to_string(kFeatureDim));
    std::copy(w.begin(), w.end(), p.weights.begin());
    p.synthesis_seed = j.at("synthesis_seed").get<std::uint64_t>();
    const auto& c = j.at("config");
    p.config.num_candidates = c.at("num_candidates").get<int>();
    p.config.speed_cap_factor = c.at("speed_cap_factor").get<double>();
    p.config.dedup_distance = c.at("dedup_distance").get<double>();
    p.config.max_step_yaw = c.at("max_step_yaw").get<double>();
    return p;
}

} // namespace

void save_generator(const std::filesystem::path& path,
                    const GeneratorParams& current,
                    const GeneratorParams& reference) {
    ckpt::write_versioned(path, "generator",
                          {{"current", params_to_json(current)},
                           {"reference", params_to_json(reference)}});
}

std::pair<GeneratorParams, GeneratorParams> load_generator(
    const std::filesystem::path& path) {
    const nlohmann::json payload = ckpt::read_versioned(path, "generator");
    return {params_from_json(payload.at("current")),
            params_from_json(payload.at("reference"))};
}

} // namespace advloop::generator
