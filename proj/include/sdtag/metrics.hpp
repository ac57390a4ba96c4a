#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sdtag/errors.hpp"
#include "sdtag/geometry.hpp"
#include "sdtag/jsonw.hpp"

namespace sdtag {

// A vectorized map instance: class label, fixed-length polyline, and (for
// predictions) a confidence score. Ground truth ignores the confidence.
struct MapInstance {
    int cls = 0;
    std::vector<Vec2> points;
    double confidence = 1.0;
};

inline const std::vector<double>& default_chamfer_taus() {
    static const std::vector<double> taus = {0.5, 1.0, 1.5};
    return taus;
}

// Symmetric point-set Chamfer distance: mean nearest-point distance in both
// directions, averaged.
inline double chamfer(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    if (a.empty() || b.empty()) throw ContractError("chamfer: empty polyline");
    auto directed = [](const std::vector<Vec2>& from, const std::vector<Vec2>& to) {
        double sum = 0.0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) {
                const double dx = p.x - q.x, dy = p.y - q.y;
                best = std::min(best, std::sqrt(dx * dx + dy * dy));
            }
            sum += best;
        }
        return sum / static_cast<double>(from.size());
    };
    return 0.5 * (directed(a, b) + directed(b, a));
}

namespace detail_metrics {

// Per-prediction match outcome: confidence and whether it was a true positive.
using Mark = std::pair<double, bool>;

// Greedy per-scene matching for one class at one threshold. Predictions are
// ranked by descending confidence (ties: lower index first); each is matched
// to the minimum-chamfer unmatched ground truth (ties: lower gt index) and is
// a true positive when that distance is < tau.
inline void match_scene(const std::vector<MapInstance>& preds, const std::vector<MapInstance>& gts,
                        int cls, double tau, std::vector<Mark>& marks, std::size_t& npos) {
    std::vector<std::size_t> pred_idx;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].cls == cls) pred_idx.push_back(i);
    }
    std::sort(pred_idx.begin(), pred_idx.end(), [&](std::size_t a, std::size_t b) {
        if (preds[a].confidence != preds[b].confidence)
            return preds[a].confidence > preds[b].confidence;
        return a < b;
    });
    std::vector<std::size_t> gt_idx;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        if (gts[i].cls == cls) gt_idx.push_back(i);
    }
    npos += gt_idx.size();

    std::vector<bool> gt_used(gt_idx.size(), false);
    for (std::size_t pi : pred_idx) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_g = gt_idx.size();
        for (std::size_t g = 0; g < gt_idx.size(); ++g) {
            if (gt_used[g]) continue;
            const double d = chamfer(preds[pi].points, gts[gt_idx[g]].points);
            if (d < best) {
                best = d;
                best_g = g;
            }
        }
        const bool tp = best_g < gt_idx.size() && best < tau;
        if (tp) gt_used[best_g] = true;
        marks.push_back({preds[pi].confidence, tp});
    }
}

// 101-point interpolated AP from match outcomes pooled over scenes. Marks are
// re-ranked globally by confidence (stable, so per-scene rank order breaks
// remaining ties deterministically).
inline double integrate_101(std::vector<Mark> marks, std::size_t npos) {
    if (marks.empty()) return 0.0;
    std::stable_sort(marks.begin(), marks.end(),
                     [](const Mark& a, const Mark& b) { return a.first > b.first; });
    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (const auto& m : marks) {
        (m.second ? tp : fp) += 1;
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(npos == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(npos));
    }
    // Running max of precision from the right, then sample 101 recall levels.
    std::vector<double> prec_at_least = precision;
    for (std::size_t i = prec_at_least.size(); i-- > 1;) {
        prec_at_least[i - 1] = std::max(prec_at_least[i - 1], prec_at_least[i]);
    }
    double sum = 0.0;
    for (int level = 0; level <= 100; ++level) {
        const double r = static_cast<double>(level) / 100.0;
        double p = 0.0;
        for (std::size_t i = 0; i < recall.size(); ++i) {
            if (recall[i] >= r) {
                p = prec_at_least[i];
                break;
            }
        }
        sum += p;
    }
    return sum / 101.0;
}

}  // namespace detail_metrics

// Single-scene average precision for one class at one Chamfer threshold.
inline double average_precision(const std::vector<MapInstance>& preds,
                                const std::vector<MapInstance>& gts, int cls, double tau) {
    std::vector<detail_metrics::Mark> marks;
    std::size_t npos = 0;
    detail_metrics::match_scene(preds, gts, cls, tau, marks, npos);
    return detail_metrics::integrate_101(std::move(marks), npos);
}

struct ApCell {
    int cls = 0;
    double tau = 0.0;
    double ap = 0.0;
};

struct ApResult {
    std::vector<ApCell> cells;  // ordered by class, then tau
    bool defined = false;
    double map = 0.0;

    std::string map_string() const {
        if (!defined) return "undefined";
        std::string s;
        jsonw::append_fixed6(s, map);
        return s;
    }
};

// Pools match outcomes over many scenes: matching runs within each scene,
// and the PR curve is integrated once over all pooled predictions with the
// summed positive counts.
class ApAccumulator {
public:
    explicit ApAccumulator(std::vector<double> taus = default_chamfer_taus())
        : taus_(std::move(taus)) {}

    void add_scene(const std::vector<MapInstance>& preds, const std::vector<MapInstance>& gts) {
        std::set<int> classes;
        for (const auto& p : preds) classes.insert(p.cls);
        for (const auto& g : gts) classes.insert(g.cls);
        for (int cls : classes) {
            for (double tau : taus_) {
                Cell& cell = cells_[{cls, tau}];
                detail_metrics::match_scene(preds, gts, cls, tau, cell.marks, cell.npos);
            }
        }
    }

    ApResult result() const {
        ApResult res;
        double sum = 0.0;
        for (const auto& [key, cell] : cells_) {
            const double ap = detail_metrics::integrate_101(cell.marks, cell.npos);
            res.cells.push_back({key.first, key.second, ap});
            sum += ap;
        }
        if (!res.cells.empty()) {
            res.defined = true;
            res.map = sum / static_cast<double>(res.cells.size());
        }
        return res;
    }

private:
    struct Cell {
        std::vector<detail_metrics::Mark> marks;
        std::size_t npos = 0;
    };
    std::vector<double> taus_;
    std::map<std::pair<int, double>, Cell> cells_;  // ordered: class, then tau
};

// AP per (class, tau) over every class present in predictions or ground
// truth; mAP is the joint mean over the grid. An empty grid leaves the mAP
// undefined.
inline ApResult map_over(const std::vector<MapInstance>& preds,
                         const std::vector<MapInstance>& gts,
                         const std::vector<double>& taus = default_chamfer_taus()) {
    ApAccumulator acc(taus);
    acc.add_scene(preds, gts);
    return acc.result();
}

inline std::string class_label(int cls, const std::vector<std::string>& names) {
    if (cls >= 0 && static_cast<std::size_t>(cls) < names.size())
        return names[static_cast<std::size_t>(cls)];
    return std::to_string(cls);
}

// CSV rows (class, tau, ap) followed by a final mAP line.
inline std::string eval_csv(const ApResult& res, const std::vector<std::string>& class_names) {
    std::string out = "class,tau,ap\n";
    for (const auto& c : res.cells) {
        out += class_label(c.cls, class_names);
        out += ',';
        char tau[32];
        std::snprintf(tau, sizeof(tau), "%.1f", c.tau);
        out += tau;
        out += ',';
        jsonw::append_fixed6(out, c.ap);
        out += '\n';
    }
    out += "mAP,all,";
    out += res.map_string();
    out += '\n';
    return out;
}

inline std::string eval_json(const ApResult& res, const std::vector<std::string>& class_names) {
    std::string out = "{\"cells\":[";
    for (std::size_t i = 0; i < res.cells.size(); ++i) {
        const auto& c = res.cells[i];
        if (i) out += ',';
        out += "{\"class\":";
        jsonw::append_string(out, class_label(c.cls, class_names));
        out += ",\"tau\":";
        char tau[32];
        std::snprintf(tau, sizeof(tau), "%.1f", c.tau);
        out += tau;
        out += ",\"ap\":";
        jsonw::append_fixed6(out, c.ap);
        out += '}';
    }
    out += "],\"map\":";
    if (res.defined) {
        jsonw::append_fixed6(out, res.map);
    } else {
        out += "\"undefined\"";
    }
    out += "}";
    return out;
}

}  // namespace sdtag
