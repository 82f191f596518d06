#pragma once

#include <array>
#include <cmath>
#include <vector>

namespace advloop::geom {

/// Planar pose. Yaw is measured counter-clockwise from the +x axis, radians.
struct Pose2D {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double k, Vec2 v) { return {k * v.x, k * v.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

/// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

/// Oriented bounding box: a rectangle of the given length (along the heading
/// axis) and width (across it) centered on `center`.
struct Obb {
    Pose2D center;
    double length = 0.0;
    double width = 0.0;
};

/// Corners in world frame, counter-clockwise starting at the front-left
/// corner: front-left, rear-left, rear-right, front-right.
/// Throws std::invalid_argument when length or width is not positive.
std::array<Vec2, 4> obb_corners(const Obb& box);

/// Exact rectangle intersection via the separating-axis test over the four
/// edge normals of the two boxes. Touching boundaries count as overlap.
bool sat_overlap(const Obb& a, const Obb& b);

/// Signed depth on the tightest axis of the separating-axis test. Positive
/// means the boxes intersect by at least that distance; negative gives the
/// separation gap. Useful for telling genuine contacts from slivers.
double sat_margin(const Obb& a, const Obb& b);

/// True when `p` lies inside or on the boundary of `box`.
bool point_in_obb(Vec2 p, const Obb& box);

/// Piecewise-linear curve. Arc length accumulates along segments in order.
struct Polyline {
    std::vector<Vec2> points;

    /// Total arc length. Zero-length segments contribute nothing.
    double length() const;
};

/// Arc-length position along a polyline plus signed lateral offset.
/// d is positive to the left of the local segment direction.
struct FrenetCoord {
    double s = 0.0;
    double d = 0.0;
};

/// Projects `p` onto the closest point of `line` (per-segment perpendicular
/// projection, clamped to segment endpoints). Distance ties between segments
/// resolve to the lower arc length. Throws std::invalid_argument when the
/// polyline has fewer than two points.
FrenetCoord frenet_project(Vec2 p, const Polyline& line);

/// Inverse of frenet_project for on-curve frames: walks to arc length `s`
/// (clamped to [0, length]) and offsets by `d` along the left normal of the
/// containing segment.
Vec2 frenet_to_point(const Polyline& line, double s, double d);

/// Tangent direction (unit vector) of the segment containing arc length `s`.
Vec2 tangent_at(const Polyline& line, double s);

/// Distance from `origin` along `direction` (radians, world frame) to the
/// first edge of any box, capped at `max_range`. Rays starting inside a box
/// report the first edge crossed, not zero.
double ray_cast(Vec2 origin, double direction, double max_range,
                const std::vector<Obb>& boxes);

} // namespace advloop::geom
