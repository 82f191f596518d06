#include "advloop/scenario_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace advloop::sim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json polyline_to_json(const geom::Polyline& line) {
    json arr = json::array();
    for (const geom::Vec2& p : line.points) arr.push_back({p.x, p.y});
    return arr;
}

geom::Polyline polyline_from_json(const json& arr) {
    geom::Polyline line;
    for (const json& p : arr)
        line.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return line;
}

void require_finite(double v, const char* what) {
    if (!std::isfinite(v))
        throw std::invalid_argument(std::string("scenario: non-finite ") +
                                    what);
}

} // namespace

json trajectory_to_json(const Trajectory& trajectory) {
    json poses = json::array();
    for (const geom::Pose2D& p : trajectory.poses)
        poses.push_back({p.x, p.y, p.yaw});
    return {{"dt", trajectory.dt},
            {"poses", poses},
            {"speeds", trajectory.speeds}};
}

Trajectory trajectory_from_json(const json& j) {
    Trajectory t;
    t.dt = j.at("dt").get<double>();
    for (const json& p : j.at("poses"))
        t.poses.push_back({p.at(0).get<double>(), p.at(1).get<double>(),
                           p.at(2).get<double>()});
    t.speeds = j.at("speeds").get<std::vector<double>>();
    return t;
}

json scenario_to_json(const Scenario& sc) {
    json agents = json::array();
    for (const AgentTrack& a : sc.agents) {
        json poses = json::array();
        for (const geom::Pose2D& p : a.trajectory.poses)
            poses.push_back({p.x, p.y, p.yaw});
        agents.push_back({{"length", a.length},
                          {"width", a.width},
                          {"poses", poses},
                          {"speeds", a.trajectory.speeds}});
    }
    json lanes = json::array();
    for (const geom::Polyline& lane : sc.lanes)
        lanes.push_back(polyline_to_json(lane));
    return json{{"format", kScenarioFormat},
                {"id", sc.id},
                {"template", sc.template_name},
                {"horizon_steps", sc.horizon_steps},
                {"dt", sc.dt},
                {"lanes", lanes},
                {"ego_route", polyline_to_json(sc.ego_route)},
                {"ego_start",
                 {{"x", sc.ego_start.x},
                  {"y", sc.ego_start.y},
                  {"yaw", sc.ego_start.yaw},
                  {"speed", sc.ego_start_speed},
                  {"target_speed", sc.ego_target_speed}}},
                {"adversary_index", sc.adversary_index},
                {"agents", agents}};
}

Scenario scenario_from_json(const json& j) {
    const int format = j.at("format").get<int>();
    if (format != kScenarioFormat)
        throw std::invalid_argument(
            "scenario: unsupported format revision " + std::to_string(format) +
            " (expected " + std::to_string(kScenarioFormat) + ")");
    Scenario sc;
    sc.id = j.at("id").get<std::string>();
    sc.template_name = j.at("template").get<std::string>();
    sc.horizon_steps = j.at("horizon_steps").get<int>();
    sc.dt = j.at("dt").get<double>();
    for (const json& lane : j.at("lanes"))
        sc.lanes.push_back(polyline_from_json(lane));
    sc.ego_route = polyline_from_json(j.at("ego_route"));
    const json& start = j.at("ego_start");
    sc.ego_start = {start.at("x").get<double>(), start.at("y").get<double>(),
                    start.at("yaw").get<double>()};
    sc.ego_start_speed = start.at("speed").get<double>();
    sc.ego_target_speed = start.at("target_speed").get<double>();
    sc.adversary_index = j.at("adversary_index").get<int>();
    for (const json& ja : j.at("agents")) {
        AgentTrack a;
        a.length = ja.at("length").get<double>();
        a.width = ja.at("width").get<double>();
        a.trajectory.dt = sc.dt;
        for (const json& p : ja.at("poses")) {
            a.trajectory.poses.push_back({p.at(0).get<double>(),
                                          p.at(1).get<double>(),
                                          p.at(2).get<double>()});
            require_finite(a.trajectory.poses.back().x, "agent pose");
            require_finite(a.trajectory.poses.back().y, "agent pose");
            require_finite(a.trajectory.poses.back().yaw, "agent pose");
        }
        if (ja.contains("speeds"))
            a.trajectory.speeds = ja.at("speeds").get<std::vector<double>>();
        if (static_cast<int>(a.trajectory.poses.size()) != sc.horizon_steps)
            throw std::invalid_argument(
                "scenario '" + sc.id + "': agent log has " +
                std::to_string(a.trajectory.poses.size()) +
                " poses, expected horizon_steps = " +
                std::to_string(sc.horizon_steps));
        sc.agents.push_back(std::move(a));
    }
    if (sc.adversary_index < 0 ||
        sc.adversary_index >= static_cast<int>(sc.agents.size()))
        throw std::invalid_argument("scenario '" + sc.id +
                                    "': adversary_index out of range");
    require_finite(sc.ego_start.x, "ego start");
    require_finite(sc.ego_start_speed, "ego speed");
    return sc;
}

void write_scenario(const fs::path& path, const Scenario& sc) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("write_scenario: cannot open " +
                                 path.string());
    out << scenario_to_json(sc).dump(2) << "\n";
}

Scenario read_scenario(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("read_scenario: cannot open " +
                                 path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("read_scenario: " + path.string() + ": " +
                                 e.what());
    }
    return scenario_from_json(j);
}

void write_corpus(const fs::path& dir, const std::vector<Scenario>& scenarios,
                  bool force) {
    const fs::path sub = dir / "scenarios";
    if (fs::exists(sub) && !fs::is_empty(sub) && !force)
        throw std::runtime_error("write_corpus: " + sub.string() +
                                 " already holds scenarios (use force)");
    fs::create_directories(sub);
    for (const Scenario& sc : scenarios)
        write_scenario(sub / (sc.id + ".json"), sc);
}

std::vector<Scenario> read_corpus(const fs::path& dir) {
    const fs::path sub = dir / "scenarios";
    if (!fs::is_directory(sub))
        throw std::runtime_error("read_corpus: no scenarios/ under " +
                                 dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(sub))
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<Scenario> out;
    out.reserve(files.size());
    for (const fs::path& f : files) out.push_back(read_scenario(f));
    return out;
}

} // namespace advloop::sim
