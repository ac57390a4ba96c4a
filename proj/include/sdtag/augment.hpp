#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "sdtag/errors.hpp"
#include "sdtag/frame.hpp"
#include "sdtag/geometry.hpp"
#include "sdtag/rng.hpp"
#include "sdtag/tags.hpp"

namespace sdtag {

struct TagMaskConfig {
    double element_aug_rate = 0.5;  // fraction of elements whose tags are masked
    double tag_drop_rate = 0.6;     // per-tag drop probability within a masked element
    bool non_relevant_only = true;  // only tags matched by the relevance config are eligible

    void validate() const {
        if (element_aug_rate < 0.0 || element_aug_rate > 1.0 || tag_drop_rate < 0.0 ||
            tag_drop_rate > 1.0) {
            throw ContractError("tag mask: rates must lie in [0, 1]");
        }
    }
};

struct AugmentConfig {
    double element_drop_rate = 0.1;
    bool locally_constant = true;  // one shared offset/rotation per frame
    double sigma_trans = 1.0;      // metres, per axis
    double sigma_rot = 2.0;        // degrees, about the ego origin
    TagMaskConfig tag_mask;

    void validate() const {
        if (element_drop_rate < 0.0 || element_drop_rate > 1.0) {
            throw ContractError("augment: element drop rate must lie in [0, 1]");
        }
        if (sigma_trans < 0.0 || sigma_rot < 0.0) {
            throw ContractError("augment: sigma must be non-negative");
        }
        tag_mask.validate();
    }
};

namespace detail_augment {

inline void apply_rigid(std::vector<Vec2>& pts, double dx, double dy, double rot_deg) {
    const double theta = rot_deg * kPi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    for (auto& p : pts) {
        const double x = c * p.x - s * p.y + dx;
        const double y = s * p.x + c * p.y + dy;
        p = {x, y};
    }
}

}  // namespace detail_augment

// Gaussian position noise: a translation (sigma_trans per axis) plus a
// rotation about the ego origin (sigma_rot degrees), drawn once per frame in
// locally-constant mode or independently per element otherwise. Relations
// carry no geometry and pass through untouched.
inline SdFrame position_noise(const SdFrame& frame, const AugmentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SdFrame out = frame;
    if (cfg.sigma_trans == 0.0 && cfg.sigma_rot == 0.0) return out;
    Rng rng(seed);
    double dx = 0.0, dy = 0.0, rot = 0.0;
    if (cfg.locally_constant) {
        dx = rng.normal(0.0, cfg.sigma_trans);
        dy = rng.normal(0.0, cfg.sigma_trans);
        rot = rng.normal(0.0, cfg.sigma_rot);
    }
    for (auto& e : out.elements) {
        if (e.kind == ElementKind::Relation) continue;
        if (!cfg.locally_constant) {
            dx = rng.normal(0.0, cfg.sigma_trans);
            dy = rng.normal(0.0, cfg.sigma_trans);
            rot = rng.normal(0.0, cfg.sigma_rot);
        }
        detail_augment::apply_rigid(e.xy, dx, dy, rot);
    }
    return out;
}

// Drops each point/polyline element independently with the given probability;
// relations follow their members (any dropped member removes the relation),
// keeping the frame's member-closure invariant. Element order is preserved.
inline SdFrame element_drop(const SdFrame& frame, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw ContractError("element_drop: rate must lie in [0, 1]");
    Rng rng(seed);
    std::set<std::int64_t> kept;
    std::vector<bool> keep(frame.elements.size(), true);
    for (std::size_t i = 0; i < frame.elements.size(); ++i) {
        const auto& e = frame.elements[i];
        if (e.kind == ElementKind::Relation) continue;
        keep[i] = !rng.bernoulli(rate);
        if (keep[i]) kept.insert(e.id);
    }
    SdFrame out;
    out.id = frame.id;
    out.range = frame.range;
    for (std::size_t i = 0; i < frame.elements.size(); ++i) {
        const auto& e = frame.elements[i];
        if (e.kind == ElementKind::Relation) {
            bool members_alive = true;
            for (const auto& m : e.members) {
                if (!kept.count(m.first) || !kept.count(m.second)) members_alive = false;
            }
            if (members_alive) out.elements.push_back(e);
        } else if (keep[i]) {
            out.elements.push_back(e);
        }
    }
    return out;
}

// Masks tags: each element is selected with probability element_aug_rate; in
// a selected element every eligible tag is dropped independently with
// probability tag_drop_rate. Eligibility is restricted to non-relevant keys
// when non_relevant_only is set. An element may end up with an empty TagSet.
inline SdFrame tag_mask(const SdFrame& frame, const TagMaskConfig& cfg,
                        const RelevanceConfig& relevance, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    SdFrame out = frame;
    for (auto& e : out.elements) {
        if (!rng.bernoulli(cfg.element_aug_rate)) continue;
        TagSet masked;
        for (const auto& kv : e.tags.pairs()) {
            const bool eligible = !cfg.non_relevant_only || relevance.is_irrelevant(kv.first);
            if (eligible && rng.bernoulli(cfg.tag_drop_rate)) continue;
            masked.set(kv.first, kv.second);
        }
        e.tags = masked;
    }
    return out;
}

// Full augmentation pipeline in a fixed order: element drop, then position
// noise, then tag masking, each on its own child stream of the seed.
inline SdFrame augment_frame(const SdFrame& frame, const AugmentConfig& cfg,
                             const RelevanceConfig& relevance, std::uint64_t seed) {
    cfg.validate();
    Rng master(seed);
    SdFrame out = element_drop(frame, cfg.element_drop_rate, master.child_seed("drop"));
    out = position_noise(out, cfg, master.child_seed("noise"));
    return tag_mask(out, cfg.tag_mask, relevance, master.child_seed("tags"));
}

}  // namespace sdtag
