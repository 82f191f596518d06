#include "advloop/geom.hpp"

#include <algorithm>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace advloop::geom {

double normalize_angle(double a) {
    const double two_pi = 2.0 * std::numbers::pi;
    double r = std::fmod(a, two_pi);
    if (r <= -std::numbers::pi) r += two_pi;
    if (r > std::numbers::pi) r -= two_pi;
    return r;
}

std::array<Vec2, 4> obb_corners(const Obb& box) {
    if (!(box.length > 0.0) || !(box.width > 0.0))
        throw std::invalid_argument("obb_corners: non-positive extent");
    const double c = std::cos(box.center.yaw);
    const double s = std::sin(box.center.yaw);
    const double hl = 0.5 * box.length;
    const double hw = 0.5 * box.width;
    // Body-frame offsets, counter-clockwise from front-left.
    const std::array<Vec2, 4> local = {
        Vec2{hl, hw}, Vec2{-hl, hw}, Vec2{-hl, -hw}, Vec2{hl, -hw}};
    std::array<Vec2, 4> out;
    for (std::size_t i = 0; i < 4; ++i) {
        out[i] = {box.center.x + c * local[i].x - s * local[i].y,
                  box.center.y + s * local[i].x + c * local[i].y};
    }
    return out;
}

namespace {

struct Interval {
    double lo;
    double hi;
};

Interval project(const std::array<Vec2, 4>& corners, Vec2 axis) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const Vec2& c : corners) {
        const double v = dot(c, axis);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {lo, hi};
}

} // namespace

double sat_margin(const Obb& a, const Obb& b) {
    const auto ca = obb_corners(a);
    const auto cb = obb_corners(b);
    const std::array<Vec2, 4> axes = {
        Vec2{std::cos(a.center.yaw), std::sin(a.center.yaw)},
        Vec2{-std::sin(a.center.yaw), std::cos(a.center.yaw)},
        Vec2{std::cos(b.center.yaw), std::sin(b.center.yaw)},
        Vec2{-std::sin(b.center.yaw), std::cos(b.center.yaw)}};
    double margin = std::numeric_limits<double>::infinity();
    for (const Vec2& axis : axes) {
        const Interval ia = project(ca, axis);
        const Interval ib = project(cb, axis);
        // Signed overlap of the two projection intervals on this axis.
        margin = std::min(margin,
                          std::min(ia.hi, ib.hi) - std::max(ia.lo, ib.lo));
    }
    return margin;
}

bool sat_overlap(const Obb& a, const Obb& b) { return sat_margin(a, b) >= 0.0; }

bool point_in_obb(Vec2 p, const Obb& box) {
    const double c = std::cos(box.center.yaw);
    const double s = std::sin(box.center.yaw);
    const Vec2 rel{p.x - box.center.x, p.y - box.center.y};
    const double lx = c * rel.x + s * rel.y;
    const double ly = -s * rel.x + c * rel.y;
    return std::abs(lx) <= 0.5 * box.length && std::abs(ly) <= 0.5 * box.width;
}

double Polyline::length() const {
    double total = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
        total += distance(points[i - 1], points[i]);
    return total;
}

FrenetCoord frenet_project(Vec2 p, const Polyline& line) {
    if (line.points.size() < 2)
        throw std::invalid_argument("frenet_project: polyline needs >= 2 points");
    double best_dist = std::numeric_limits<double>::infinity();
    FrenetCoord best{0.0, 0.0};
    double s_base = 0.0;
    for (std::size_t i = 1; i < line.points.size(); ++i) {
        const Vec2 a = line.points[i - 1];
        const Vec2 b = line.points[i];
        const Vec2 ab = b - a;
        const double len = norm(ab);
        if (len == 0.0) continue;
        const double t = std::clamp(dot(p - a, ab) / (len * len), 0.0, 1.0);
        const Vec2 foot = a + t * ab;
        const double dist = distance(p, foot);
        // Strict < keeps the lower-s candidate on exact ties.
        if (dist < best_dist) {
            best_dist = dist;
            const double side = cross(ab, p - foot) >= 0.0 ? 1.0 : -1.0;
            best = {s_base + t * len, side * dist};
        }
        s_base += len;
    }
    return best;
}

Vec2 frenet_to_point(const Polyline& line, double s, double d) {
    if (line.points.size() < 2)
        throw std::invalid_argument("frenet_to_point: polyline needs >= 2 points");
    const double total = line.length();
    const double target = std::clamp(s, 0.0, total);
    double s_base = 0.0;
    for (std::size_t i = 1; i < line.points.size(); ++i) {
        const Vec2 a = line.points[i - 1];
        const Vec2 b = line.points[i];
        const double len = distance(a, b);
        if (len == 0.0) continue;
        if (target <= s_base + len || i + 1 == line.points.size()) {
            const double t = (target - s_base) / len;
            const Vec2 dir = (1.0 / len) * (b - a);
            const Vec2 left{-dir.y, dir.x};
            return a + t * len * dir + d * left;
        }
        s_base += len;
    }
    throw std::invalid_argument("frenet_to_point: degenerate polyline");
}

Vec2 tangent_at(const Polyline& line, double s) {
    if (line.points.size() < 2)
        throw std::invalid_argument("tangent_at: polyline needs >= 2 points");
    const double total = line.length();
    const double target = std::clamp(s, 0.0, total);
    double s_base = 0.0;
    for (std::size_t i = 1; i < line.points.size(); ++i) {
        const Vec2 a = line.points[i - 1];
        const Vec2 b = line.points[i];
        const double len = distance(a, b);
        if (len == 0.0) continue;
        if (target <= s_base + len || i + 1 == line.points.size())
            return (1.0 / len) * (b - a);
        s_base += len;
    }
    throw std::invalid_argument("tangent_at: degenerate polyline");
}

namespace {

/// Parametric distance along a ray to one segment, or infinity on a miss.
double ray_segment(Vec2 origin, Vec2 dir, Vec2 a, Vec2 b) {
    const Vec2 seg = b - a;
    const double denom = cross(dir, seg);
    if (std::abs(denom) < 1e-15) return std::numeric_limits<double>::infinity();
    const Vec2 diff = a - origin;
    const double t = cross(diff, seg) / denom;   // along the ray
    const double u = cross(diff, dir) / denom;   // along the segment
    if (t < 0.0 || u < 0.0 || u > 1.0)
        return std::numeric_limits<double>::infinity();
    return t;
}

} // namespace

double ray_cast(Vec2 origin, double direction, double max_range,
                const std::vector<Obb>& boxes) {
    if (!(max_range > 0.0))
        throw std::invalid_argument("ray_cast: max_range must be positive");
    const Vec2 dir{std::cos(direction), std::sin(direction)};
    double best = max_range;
    for (const Obb& box : boxes) {
        const auto corners = obb_corners(box);
        for (std::size_t i = 0; i < 4; ++i) {
            const double t =
                ray_segment(origin, dir, corners[i], corners[(i + 1) % 4]);
            best = std::min(best, t);
        }
    }
    return best;
}

} // namespace advloop::geom
