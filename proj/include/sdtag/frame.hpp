#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sdtag/errors.hpp"
#include "sdtag/geometry.hpp"
#include "sdtag/jsonw.hpp"
#include "sdtag/osm.hpp"
#include "sdtag/tags.hpp"

namespace sdtag {

struct FrameElement {
    std::int64_t id = 0;
    ElementKind kind = ElementKind::Node;
    TagSet tags;
    std::vector<Vec2> xy;  // node: one point; way: exactly P points
    std::vector<std::pair<std::int64_t, std::int64_t>> members;  // relations
};

struct SdFrame {
    std::int64_t id = 0;
    RangeSpec range;
    std::vector<FrameElement> elements;
};

inline constexpr std::size_t kDefaultPolylinePoints = 10;

// Projects parsed OSM elements into an ego-centric frame. Whole elements are
// kept when their geometry intersects the range rectangle; polylines are
// resampled to P points; relations survive only if every member does.
inline SdFrame project_to_frame(const std::vector<OsmElement>& elements, const EgoPose& ego,
                                const RangeSpec& range, std::size_t P = kDefaultPolylinePoints,
                                std::int64_t frame_id = 0) {
    if (P < 2) throw ContractError("project_to_frame: P must be >= 2");
    std::unordered_map<std::int64_t, LonLat> node_pos;
    for (const auto& e : elements) {
        if (e.kind == ElementKind::Node) node_pos[e.id] = {e.lon, e.lat};
    }

    SdFrame frame;
    frame.id = frame_id;
    frame.range = range;
    std::unordered_set<std::int64_t> kept_nodes, kept_ways;

    for (const auto& e : elements) {
        if (e.kind == ElementKind::Node) {
            Vec2 p = to_ego({e.lon, e.lat}, ego);
            if (!point_in_range(p, range)) continue;
            FrameElement fe;
            fe.id = e.id;
            fe.kind = ElementKind::Node;
            fe.tags = e.tags;
            fe.xy = {p};
            frame.elements.push_back(std::move(fe));
            kept_nodes.insert(e.id);
        } else if (e.kind == ElementKind::Way) {
            std::vector<Vec2> pts;
            pts.reserve(e.node_refs.size());
            for (std::int64_t ref : e.node_refs) {
                auto it = node_pos.find(ref);
                if (it == node_pos.end()) {
                    throw DanglingReference(
                        "way " + std::to_string(e.id) + " references missing node " + std::to_string(ref),
                        ref);
                }
                pts.push_back(to_ego(it->second, ego));
            }
            if (!polyline_intersects_range(pts, range)) continue;
            FrameElement fe;
            fe.id = e.id;
            fe.kind = ElementKind::Way;
            fe.tags = e.tags;
            fe.xy = resample_polyline(pts, P);
            frame.elements.push_back(std::move(fe));
            kept_ways.insert(e.id);
        }
    }

    for (const auto& e : elements) {
        if (e.kind != ElementKind::Relation) continue;
        bool all_members_kept = true;
        for (const auto& m : e.members) {
            const bool kept = (m.kind == ElementKind::Node && kept_nodes.count(m.ref)) ||
                              (m.kind == ElementKind::Way && kept_ways.count(m.ref));
            if (!kept) {
                all_members_kept = false;
                break;
            }
        }
        if (!all_members_kept) continue;
        FrameElement fe;
        fe.id = e.id;
        fe.kind = ElementKind::Relation;
        fe.tags = e.tags;
        for (std::size_t i = 0; i + 1 < e.members.size(); ++i) {
            if (e.members[i].ref != e.members[i + 1].ref) {
                fe.members.emplace_back(e.members[i].ref, e.members[i + 1].ref);
            }
        }
        if (fe.members.empty()) continue;  // no usable pairs
        frame.elements.push_back(std::move(fe));
    }
    return frame;
}

// Removes relations whose member ids no longer resolve to a point or polyline
// element of the frame (used after augmentation drops elements).
inline void drop_dangling_relations(SdFrame& frame) {
    std::unordered_set<std::int64_t> geo_ids;
    for (const auto& e : frame.elements) {
        if (e.kind != ElementKind::Relation) geo_ids.insert(e.id);
    }
    std::vector<FrameElement> kept;
    kept.reserve(frame.elements.size());
    for (auto& e : frame.elements) {
        if (e.kind == ElementKind::Relation) {
            bool ok = true;
            for (const auto& [a, b] : e.members) {
                if (!geo_ids.count(a) || !geo_ids.count(b)) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
        }
        kept.push_back(std::move(e));
    }
    frame.elements = std::move(kept);
}

// ---- JSONL serialization (hand-written for byte determinism) ----

inline std::string serialize_frame(const SdFrame& f) {
    std::string out = "{\"id\":";
    out += std::to_string(f.id);
    out += ",\"range\":[";
    jsonw::append_fixed6(out, f.range.length);
    out += ',';
    jsonw::append_fixed6(out, f.range.width);
    out += "],\"elements\":[";
    for (std::size_t i = 0; i < f.elements.size(); ++i) {
        const auto& e = f.elements[i];
        if (i) out += ',';
        out += "{\"id\":";
        out += std::to_string(e.id);
        out += ",\"kind\":\"";
        out += kind_name(e.kind);
        out += "\",\"tags\":";
        out += e.tags.to_json();
        if (e.kind == ElementKind::Relation) {
            out += ",\"members\":[";
            for (std::size_t j = 0; j < e.members.size(); ++j) {
                if (j) out += ',';
                out += '[';
                out += std::to_string(e.members[j].first);
                out += ',';
                out += std::to_string(e.members[j].second);
                out += ']';
            }
            out += ']';
        } else {
            out += ",\"xy\":[";
            for (std::size_t j = 0; j < e.xy.size(); ++j) {
                if (j) out += ',';
                out += '[';
                jsonw::append_fixed6(out, e.xy[j].x);
                out += ',';
                jsonw::append_fixed6(out, e.xy[j].y);
                out += ']';
            }
            out += ']';
        }
        out += '}';
    }
    out += "]}";
    return out;
}

inline void save_frames(const std::string& path, const std::vector<SdFrame>& frames) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open for writing: " + path);
    for (const auto& fr : frames) f << serialize_frame(fr) << '\n';
}

inline SdFrame parse_frame_json(const std::string& line, std::size_t line_offset = 0) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed frame JSON", line_offset);
    try {
        SdFrame f;
        f.id = j.at("id").get<std::int64_t>();
        f.range.length = j.at("range").at(0).get<double>();
        f.range.width = j.at("range").at(1).get<double>();
        for (const auto& je : j.at("elements")) {
            FrameElement e;
            e.id = je.at("id").get<std::int64_t>();
            e.kind = kind_from_name(je.at("kind").get<std::string>());
            for (const auto& kv : je.at("tags")) {
                e.tags.set(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
            }
            if (e.kind == ElementKind::Relation) {
                for (const auto& m : je.at("members")) {
                    e.members.emplace_back(m.at(0).get<std::int64_t>(), m.at(1).get<std::int64_t>());
                }
            } else {
                for (const auto& p : je.at("xy")) {
                    e.xy.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
                }
            }
            f.elements.push_back(std::move(e));
        }
        return f;
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("bad frame JSON: ") + ex.what(), line_offset);
    } catch (const ContractError& ex) {
        throw ParseError(std::string("bad frame JSON: ") + ex.what(), line_offset);
    }
}

inline std::vector<SdFrame> load_frames(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open frames file: " + path);
    std::vector<SdFrame> out;
    std::string line;
    std::size_t offset = 0;
    while (std::getline(f, line)) {
        std::size_t line_start = offset;
        offset += line.size() + 1;
        if (line.empty()) continue;
        out.push_back(parse_frame_json(line, line_start));
    }
    return out;
}

}  // namespace sdtag
