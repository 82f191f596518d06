#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "advloop/geom.hpp"

namespace advloop::sim {

/// Sampled path of one actor. poses[k] is the state at time k * dt; speeds,
/// when present, run parallel to poses and record the scalar speed at each
/// sample (used to reconstruct dense rewards without re-simulating).
struct Trajectory {
    std::vector<geom::Pose2D> poses;
    std::vector<double> speeds;
    double dt = 0.1;
};

/// Maximum over paired timesteps of the Euclidean distance between the two
/// position samples. Compares up to the shorter length; throws
/// std::invalid_argument when either trajectory is empty.
double max_pointwise_distance(const Trajectory& a, const Trajectory& b);

struct AgentTrack {
    double length = 4.6;
    double width = 1.9;
    Trajectory trajectory;
};

struct Scenario {
    std::string id;
    std::string template_name;
    int horizon_steps = 90;
    double dt = 0.1;
    std::vector<geom::Polyline> lanes;
    geom::Polyline ego_route;
    geom::Pose2D ego_start;
    double ego_start_speed = 0.0;
    double ego_target_speed = 0.0;
    std::vector<AgentTrack> agents;
    /// Index into `agents` of the actor the attack generator may re-plan.
    int adversary_index = 0;
};

/// Ego footprint used for collision checks.
inline constexpr double kEgoLength = 4.8;
inline constexpr double kEgoWidth = 2.0;

struct BicycleParams {
    double wheelbase = 2.8;
    double max_steer = 0.5;    // rad
    double max_accel = 4.0;    // m/s^2
    double max_speed = 25.0;   // m/s
    double dt = 0.1;           // s
};

struct RewardConfig {
    double progress_coef = 1.0;
    double speed_coef = 0.1;
    double success_bonus = 10.0;
    double crash_penalty = 10.0;
    double offroad_penalty = 10.0;
    double gamma = 0.99;
    double success_fraction = 0.95;
    double offroad_meters = 10.0;
};

struct ObservationConfig {
    int num_beams = 30;
    double lidar_range = 50.0;
};

/// Observation length: 4 scalar channels plus the lidar beams.
inline constexpr int kObservationDim = 34;

struct EgoState {
    geom::Pose2D pose;
    double speed = 0.0;
    int step = 0;
};

/// Normalized controls in [-1, 1]; scaled by BicycleParams on integration.
struct Action {
    double steer = 0.0;
    double accel = 0.0;
};

enum class Termination { none, crash, offroad, success, timeout };

inline bool is_terminal(Termination t) { return t != Termination::none; }

/// Kinematic bicycle step with midpoint integration. Clamps controls to
/// [-1, 1], speed to [0, max_speed], and wraps yaw into (-pi, pi].
EgoState step_bicycle(const EgoState& state, const Action& action,
                      const BicycleParams& params);

/// Dense progress-plus-speed reward with terminal bonuses:
/// progress_coef * delta_s + speed_coef * next_speed, then +success_bonus,
/// -crash_penalty, or -offroad_penalty depending on the outcome.
double compute_reward(const RewardConfig& cfg, double delta_s,
                      double next_speed, Termination outcome);

/// Smallest |lateral offset| from `p` to any lane centerline.
double min_lane_offset(const Scenario& scenario, geom::Vec2 p);

/// Pose of agent `idx` at time index `step`, holding the final sample when
/// the log is shorter. `adversary_plan`, when non-null, replaces the logged
/// trajectory of the adversary agent.
geom::Obb agent_box_at(const Scenario& scenario, int idx, int step,
                       const Trajectory* adversary_plan);

/// Terminal test at the ego's current time index, in priority order:
/// crash (footprint overlap with any agent) > offroad (nearest-lane offset
/// beyond offroad_meters) > success (route fraction above success_fraction)
/// > timeout (final time index of the horizon).
Termination check_termination(const Scenario& scenario, const EgoState& state,
                              const Trajectory* adversary_plan,
                              const RewardConfig& cfg);

/// 34-entry observation: [speed / max_speed, yaw error to route tangent,
/// lateral offset / 10, remaining route fraction] followed by 30 lidar
/// fractions (hit distance / range) cast at evenly spaced headings starting
/// straight ahead and sweeping counter-clockwise.
std::vector<double> build_observation(const Scenario& scenario,
                                      const EgoState& state,
                                      const Trajectory* adversary_plan,
                                      const BicycleParams& params,
                                      const ObservationConfig& obs_cfg);

/// Per-step control output plus bookkeeping the learner needs later. The
/// pre-squash sample and log-density are only meaningful for stochastic
/// controllers; scripted ones leave them zero.
struct ActInfo {
    Action action;
    std::array<double, 2> pre_squash{0.0, 0.0};
    double log_prob = 0.0;
    double value = 0.0;
};

class Controller {
  public:
    virtual ~Controller() = default;
    virtual ActInfo act(const std::vector<double>& obs, const EgoState& state,
                        const Scenario& scenario, std::mt19937_64& rng) = 0;
};

struct StepRecord {
    std::vector<double> obs;
    ActInfo info;
    double reward = 0.0;
    double frenet_s = 0.0;
};

struct RolloutResult {
    Trajectory ego_trajectory;
    std::vector<StepRecord> steps;
    double discounted_return = 0.0;
    double undiscounted_return = 0.0;
    Termination termination = Termination::none;
    double final_route_fraction = 0.0;
    /// 1 on crash, else 0; the safety cost channel.
    double cost = 0.0;
};

/// Runs one episode. A pure function of (controller, scenario, plan, seed):
/// the RNG stream drives only the controller. Throws std::runtime_error when
/// the controller emits a non-finite control.
RolloutResult rollout_episode(Controller& controller, const Scenario& scenario,
                              const Trajectory* adversary_plan,
                              std::uint64_t seed,
                              const BicycleParams& params = {},
                              const RewardConfig& reward_cfg = {},
                              const ObservationConfig& obs_cfg = {});

/// Pure-pursuit route follower tracking the scenario's target speed. Used
/// for replay baselines and history warm-up; ignores the lidar channels.
class RouteFollowController : public Controller {
  public:
    explicit RouteFollowController(BicycleParams params = {},
                                   double action_noise = 0.0)
        : params_(params), action_noise_(action_noise) {}
    ActInfo act(const std::vector<double>& obs, const EgoState& state,
                const Scenario& scenario, std::mt19937_64& rng) override;

  private:
    BicycleParams params_;
    double action_noise_;
};

/// Constant-control controller for tests and probes.
class ConstantController : public Controller {
  public:
    explicit ConstantController(Action a) : action_(a) {}
    ActInfo act(const std::vector<double>&, const EgoState&, const Scenario&,
                std::mt19937_64&) override {
        return ActInfo{action_, {0.0, 0.0}, 0.0, 0.0};
    }

  private:
    Action action_;
};

} // namespace advloop::sim
