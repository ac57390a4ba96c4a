#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sdtag/errors.hpp"

namespace sdtag {

inline constexpr double kEarthRadiusM = 6371000.0;
inline constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }
};

struct LonLat {
    double lon = 0.0;  // degrees
    double lat = 0.0;  // degrees
};

struct EgoPose {
    LonLat origin;
    double heading = 0.0;  // radians, CCW from east, in (-pi, pi]
};

struct RangeSpec {
    double length = 0.0;  // extent along ego x (heading direction), meters
    double width = 0.0;   // extent along ego y, meters
};

// Local equirectangular projection about the ego origin, rotated so the
// ego heading points along +x.
inline Vec2 to_ego(const LonLat& p, const EgoPose& ego) {
    const double d2r = kPi / 180.0;
    const double dx = kEarthRadiusM * (p.lon - ego.origin.lon) * d2r * std::cos(ego.origin.lat * d2r);
    const double dy = kEarthRadiusM * (p.lat - ego.origin.lat) * d2r;
    const double c = std::cos(ego.heading), s = std::sin(ego.heading);
    return {dx * c + dy * s, -dx * s + dy * c};
}

inline LonLat from_ego(const Vec2& p, const EgoPose& ego) {
    const double c = std::cos(ego.heading), s = std::sin(ego.heading);
    const double dx = p.x * c - p.y * s;
    const double dy = p.x * s + p.y * c;
    const double r2d = 180.0 / kPi;
    LonLat out;
    out.lat = ego.origin.lat + dy / kEarthRadiusM * r2d;
    out.lon = ego.origin.lon + dx / (kEarthRadiusM * std::cos(ego.origin.lat * kPi / 180.0)) * r2d;
    return out;
}

inline bool point_in_range(const Vec2& p, const RangeSpec& r) {
    return std::abs(p.x) <= r.length / 2.0 && std::abs(p.y) <= r.width / 2.0;
}

// Liang-Barsky: does segment a-b intersect the axis-aligned range rectangle?
inline bool segment_intersects_range(const Vec2& a, const Vec2& b, const RangeSpec& r) {
    const double xmin = -r.length / 2.0, xmax = r.length / 2.0;
    const double ymin = -r.width / 2.0, ymax = r.width / 2.0;
    const double dx = b.x - a.x, dy = b.y - a.y;
    double t0 = 0.0, t1 = 1.0;
    const double p[4] = {-dx, dx, -dy, dy};
    const double q[4] = {a.x - xmin, xmax - a.x, a.y - ymin, ymax - a.y};
    for (int i = 0; i < 4; ++i) {
        if (p[i] == 0.0) {
            if (q[i] < 0.0) return false;  // parallel and outside this edge
        } else {
            const double t = q[i] / p[i];
            if (p[i] < 0.0) {
                t0 = std::max(t0, t);
            } else {
                t1 = std::min(t1, t);
            }
            if (t0 > t1) return false;
        }
    }
    return true;
}

inline bool polyline_intersects_range(const std::vector<Vec2>& pts, const RangeSpec& r) {
    if (pts.size() == 1) return point_in_range(pts[0], r);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        if (segment_intersects_range(pts[i], pts[i + 1], r)) return true;
    }
    return false;
}

inline double polyline_length(const std::vector<Vec2>& pts) {
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        total += std::hypot(pts[i + 1].x - pts[i].x, pts[i + 1].y - pts[i].y);
    }
    return total;
}

// Equal arc-length resampling; endpoints are preserved exactly.
inline std::vector<Vec2> resample_polyline(const std::vector<Vec2>& pts, std::size_t P) {
    if (pts.size() < 2) throw ContractError("resample_polyline: need at least 2 points");
    if (P < 2) throw ContractError("resample_polyline: P must be >= 2");

    std::vector<double> cum(pts.size(), 0.0);
    for (std::size_t i = 1; i < pts.size(); ++i) {
        cum[i] = cum[i - 1] + std::hypot(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
    }
    const double total = cum.back();

    std::vector<Vec2> out(P);
    out.front() = pts.front();
    out.back() = pts.back();
    if (total == 0.0) {
        std::fill(out.begin(), out.end(), pts.front());
        return out;
    }
    std::size_t seg = 0;
    for (std::size_t k = 1; k + 1 < P; ++k) {
        const double s = total * static_cast<double>(k) / static_cast<double>(P - 1);
        while (seg + 2 < pts.size() && cum[seg + 1] < s) ++seg;
        const double seg_len = cum[seg + 1] - cum[seg];
        const double t = seg_len > 0.0 ? (s - cum[seg]) / seg_len : 0.0;
        out[k] = {pts[seg].x + t * (pts[seg + 1].x - pts[seg].x),
                  pts[seg].y + t * (pts[seg + 1].y - pts[seg].y)};
    }
    return out;
}

}  // namespace sdtag
