#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdtag/errors.hpp"
#include "sdtag/frame.hpp"
#include "sdtag/geometry.hpp"
#include "sdtag/jsonw.hpp"
#include "sdtag/metrics.hpp"
#include "sdtag/rng.hpp"

namespace sdtag {

inline constexpr int kClassCenterline = 0;
inline constexpr int kClassBoundary = 1;
inline constexpr int kClassDivider = 2;
inline constexpr std::size_t kToyClassCount = 3;

inline const std::vector<std::string>& toy_class_names() {
    static const std::vector<std::string> names = {"centerline", "boundary", "divider"};
    return names;
}

inline int toy_class_from_name(const std::string& name) {
    const auto& names = toy_class_names();
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return static_cast<int>(i);
    }
    throw ContractError("unknown instance class: " + name);
}

struct SceneSpec {
    std::size_t roads = 1;
    int min_lanes = 1;
    int max_lanes = 3;
    double lane_width = 3.5;
    double oneway_prob = 0.5;
    double signal_prob = 0.3;
    RangeSpec range{60.0, 30.0};
    double geometry_noise = 0.0;
    std::size_t points = 10;

    void validate() const {
        if (lane_width <= 0.0) throw ContractError("scene: lane width must be positive");
        if (min_lanes < 1 || max_lanes < min_lanes) throw ContractError("scene: bad lane range");
        if (roads < 1) throw ContractError("scene: need at least one road");
        if (points < 2) throw ContractError("scene: need at least two points per polyline");
    }
};

struct Scene {
    SdFrame frame;
    std::vector<MapInstance> gt;
};

namespace detail_scene {

// Unit normals of a polyline, one per point, from central differences.
inline std::vector<Vec2> normals_of(const std::vector<Vec2>& pts) {
    std::vector<Vec2> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec2& a = pts[i == 0 ? 0 : i - 1];
        const Vec2& b = pts[i + 1 == pts.size() ? i : i + 1];
        double dx = b.x - a.x, dy = b.y - a.y;
        const double n = std::hypot(dx, dy);
        if (n < 1e-12) {
            out[i] = {0.0, 1.0};
        } else {
            out[i] = {-dy / n, dx / n};
        }
    }
    return out;
}

inline std::vector<Vec2> offset_polyline(const std::vector<Vec2>& pts,
                                         const std::vector<Vec2>& normals, double offset) {
    std::vector<Vec2> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        out[i] = {pts[i].x + normals[i].x * offset, pts[i].y + normals[i].y * offset};
    }
    return out;
}

// Road chord endpoints: a random center/direction clipped against an inset
// rectangle, then shrunk so the road sits comfortably inside the range.
inline std::pair<Vec2, Vec2> sample_chord(Rng& g, const RangeSpec& range) {
    const double margin = 3.0;
    const double hx = range.length / 2.0 - margin;
    const double hy = range.width / 2.0 - margin;
    const double theta = g.uniform(0.0, kPi);
    const Vec2 dir{std::cos(theta), std::sin(theta)};
    const Vec2 c{g.uniform(-0.4 * hx, 0.4 * hx), g.uniform(-0.4 * hy, 0.4 * hy)};
    double t_lo = -1e18, t_hi = 1e18;
    auto clip = [&](double p, double d, double lo, double hi) {
        if (std::abs(d) < 1e-12) return;
        double t0 = (lo - p) / d, t1 = (hi - p) / d;
        if (t0 > t1) std::swap(t0, t1);
        t_lo = std::max(t_lo, t0);
        t_hi = std::min(t_hi, t1);
    };
    clip(c.x, dir.x, -hx, hx);
    clip(c.y, dir.y, -hy, hy);
    const double sa = g.uniform(0.75, 0.95);
    const double sb = g.uniform(0.75, 0.95);
    return {{c.x + dir.x * t_lo * sa, c.y + dir.y * t_lo * sa},
            {c.x + dir.x * t_hi * sb, c.y + dir.y * t_hi * sb}};
}

// Quadratic Bezier through a jittered control point, densely sampled then
// resampled to equal arc steps.
inline std::vector<Vec2> sample_centerline(Rng& g, const SceneSpec& spec) {
    auto [a, b] = sample_chord(g, spec.range);
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    Vec2 mid{(a.x + b.x) / 2.0, (a.y + b.y) / 2.0};
    Vec2 norm{-(b.y - a.y) / len, (b.x - a.x) / len};
    const double bow = g.uniform(-0.08, 0.08) * len;
    Vec2 ctrl{mid.x + norm.x * bow, mid.y + norm.y * bow};
    if (spec.geometry_noise > 0.0) {
        a.x += g.normal(0.0, spec.geometry_noise);
        a.y += g.normal(0.0, spec.geometry_noise);
        b.x += g.normal(0.0, spec.geometry_noise);
        b.y += g.normal(0.0, spec.geometry_noise);
        ctrl.x += g.normal(0.0, spec.geometry_noise);
        ctrl.y += g.normal(0.0, spec.geometry_noise);
    }
    std::vector<Vec2> dense(64);
    for (std::size_t i = 0; i < dense.size(); ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(dense.size() - 1);
        const double u = 1.0 - t;
        dense[i] = {u * u * a.x + 2.0 * u * t * ctrl.x + t * t * b.x,
                    u * u * a.y + 2.0 * u * t * ctrl.y + t * t * b.y};
    }
    return resample_polyline(dense, spec.points);
}

}  // namespace detail_scene

// Generates one synthetic scene. Road geometry and road tags come from
// independent child streams of the seed, so the polyline shape carries no
// information about the drawn lane count: with identical seeds, changing the
// lane-range bounds changes tags and ground truth but not SD geometry.
inline Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng master(seed);
    Scene scene;
    scene.frame.id = static_cast<std::int64_t>(seed);
    scene.frame.range = spec.range;

    for (std::size_t r = 0; r < spec.roads; ++r) {
        Rng geo(master.child_seed("geometry", r));
        Rng tag(master.child_seed("tags", r));
        Rng sig(master.child_seed("signal", r));

        auto pts = detail_scene::sample_centerline(geo, spec);
        auto normals = detail_scene::normals_of(pts);

        const int k = spec.min_lanes +
                      static_cast<int>(tag.below(static_cast<std::uint64_t>(spec.max_lanes - spec.min_lanes + 1)));
        const bool oneway = tag.bernoulli(spec.oneway_prob);
        static const char* kHighway[3] = {"residential", "secondary", "tertiary"};
        const char* highway = kHighway[tag.below(3)];
        const std::string name = "street " + std::to_string(tag.below(50));
        const bool tiger = tag.bernoulli(0.5);

        FrameElement road;
        road.id = static_cast<std::int64_t>(r) + 1;
        road.kind = ElementKind::Way;
        road.xy = pts;
        road.tags.set("highway", highway);
        road.tags.set("lanes", std::to_string(k));
        road.tags.set("oneway", oneway ? "yes" : "no");
        road.tags.set("name", name);
        if (tiger) road.tags.set("tiger:cfcc", "a4" + std::to_string(tag.below(5)));
        scene.frame.elements.push_back(std::move(road));

        if (sig.bernoulli(spec.signal_prob)) {
            FrameElement node;
            node.id = 100 + static_cast<std::int64_t>(r);
            node.kind = ElementKind::Node;
            node.xy = {pts[sig.below(pts.size())]};
            node.tags.set("highway", "traffic_signals");
            scene.frame.elements.push_back(std::move(node));
        }

        // Ground truth: boundaries at +-k*w/2, k-1 dividers, k lane
        // centerlines; two-way return lanes run in the reverse direction.
        const double w = spec.lane_width;
        const double half = static_cast<double>(k) * w / 2.0;
        auto add_instance = [&](int cls, double offset, bool reverse) {
            MapInstance inst;
            inst.cls = cls;
            inst.points = detail_scene::offset_polyline(pts, normals, offset);
            if (reverse) std::reverse(inst.points.begin(), inst.points.end());
            scene.gt.push_back(std::move(inst));
        };
        add_instance(kClassBoundary, -half, false);
        add_instance(kClassBoundary, half, false);
        for (int j = 1; j < k; ++j) add_instance(kClassDivider, -half + j * w, false);
        for (int j = 0; j < k; ++j) {
            const double offset = -half + (static_cast<double>(j) + 0.5) * w;
            const bool reverse = !oneway && offset > 1e-9;
            add_instance(kClassCenterline, offset, reverse);
        }
    }
    return scene;
}

// ---- scene JSONL: {"frame": <frame>, "gt": [{"cls", "points"}, ...]} ----

inline std::string serialize_scene(const Scene& scene) {
    std::string out = "{\"frame\":";
    out += serialize_frame(scene.frame);
    out += ",\"gt\":[";
    for (std::size_t i = 0; i < scene.gt.size(); ++i) {
        const auto& g = scene.gt[i];
        if (i) out += ',';
        out += "{\"cls\":";
        jsonw::append_string(out, class_label(g.cls, toy_class_names()));
        if (g.confidence != 1.0) {
            out += ",\"confidence\":";
            jsonw::append_fixed6(out, g.confidence);
        }
        out += ",\"points\":[";
        for (std::size_t p = 0; p < g.points.size(); ++p) {
            if (p) out += ',';
            out += '[';
            jsonw::append_fixed6(out, g.points[p].x);
            out += ',';
            jsonw::append_fixed6(out, g.points[p].y);
            out += ']';
        }
        out += "]}";
    }
    out += "]}";
    return out;
}

inline void save_scenes(const std::string& path, const std::vector<Scene>& scenes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open for writing: " + path);
    for (const auto& s : scenes) f << serialize_scene(s) << '\n';
}

inline Scene parse_scene_json(const std::string& line, std::size_t line_offset = 0) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("scene line: ") + e.what(), line_offset);
    }
    Scene scene;
    try {
        scene.frame = parse_frame_json(j.at("frame").dump(), line_offset);
        for (const auto& g : j.at("gt")) {
            MapInstance inst;
            inst.cls = toy_class_from_name(g.at("cls").get<std::string>());
            if (g.contains("confidence")) inst.confidence = g.at("confidence").get<double>();
            for (const auto& p : g.at("points")) {
                inst.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            }
            scene.gt.push_back(std::move(inst));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("scene line: ") + e.what(), line_offset);
    }
    return scene;
}

inline std::vector<Scene> load_scenes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open scene file: " + path);
    std::vector<Scene> out;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(f, line)) {
        if (!line.empty()) out.push_back(parse_scene_json(line, offset));
        offset += line.size() + 1;
    }
    return out;
}

}  // namespace sdtag
