#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sdtag/adam.hpp"
#include "sdtag/errors.hpp"
#include "sdtag/jsonw.hpp"
#include "sdtag/metrics.hpp"
#include "sdtag/orf.hpp"
#include "sdtag/rng.hpp"
#include "sdtag/scene.hpp"
#include "sdtag/sd_encoder.hpp"
#include "sdtag/tensor.hpp"
#include "sdtag/text_encoder.hpp"
#include "sdtag/transformer.hpp"

namespace sdtag {

struct ToyDecoderConfig {
    std::size_t queries = 20;
    std::size_t d_model = 128;
    std::size_t d_ff = 256;
    std::size_t layers = 2;
    std::size_t heads = 8;
    double dropout = 0.1;
    std::size_t points = 10;
    std::size_t n_classes = kToyClassCount;  // plus one implicit "no object" slot
    double lambda = 5.0;

    std::size_t no_object() const { return n_classes; }

    void validate() const {
        if (d_model % heads != 0) throw ContractError("toy decoder: heads must divide d_model");
        if (queries == 0 || points == 0 || n_classes == 0) {
            throw ContractError("toy decoder: degenerate configuration");
        }
    }
};

// DETR-style decoder: learned queries attend to the encoded SD tokens through
// self-attention + cross-attention blocks; heads emit class logits (with a
// trailing "no object" slot) and P normalized (x, y) offsets per query.
class ToyDecoder {
public:
    struct Output {
        Tensor logits;  // [Q, n_classes + 1]
        Tensor points;  // [Q, 2P], frame-normalized, row layout x0,y0,x1,y1,...
    };

    ToyDecoder(ToyDecoderConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(init_seed);
        queries_ = reg_.randn("toy.queries", {cfg_.queries, cfg_.d_model}, rng);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            blocks_.push_back(make_decoder_block(reg_, "toy.block" + std::to_string(l),
                                                 cfg_.d_model, cfg_.heads, cfg_.d_ff, rng));
        }
        final_ln_ = make_layer_norm(reg_, "toy.final_ln", cfg_.d_model);
        cls_w_ = reg_.randn("toy.cls.w", {cfg_.d_model, cfg_.n_classes + 1}, rng);
        cls_b_ = reg_.zeros("toy.cls.b", {cfg_.n_classes + 1});
        pts_w_ = reg_.randn("toy.pts.w", {cfg_.d_model, 2 * cfg_.points}, rng);
        pts_b_ = reg_.zeros("toy.pts.b", {2 * cfg_.points});
    }

    const ToyDecoderConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }

    Output decode(const Tensor& memory, const DropoutPlan& drop = {}) const {
        if (memory.rank() != 2 || memory.dim(1) != cfg_.d_model) {
            throw ShapeError("decode: memory has shape " + shape_str(memory.shape()) +
                             ", expected [*, " + std::to_string(cfg_.d_model) + "]");
        }
        Tensor x = queries_;
        for (const auto& b : blocks_) x = decoder_block(b, x, memory, drop);
        x = layer_norm(x, final_ln_.gamma, final_ln_.beta);
        return {add_bias(matmul(x, cls_w_), cls_b_), add_bias(matmul(x, pts_w_), pts_b_)};
    }

private:
    ToyDecoderConfig cfg_;
    ParamRegistry reg_;
    Tensor queries_;
    std::vector<DecoderBlockParams> blocks_;
    LayerNormParams final_ln_;
    Tensor cls_w_, cls_b_, pts_w_, pts_b_;
};

// ---- bipartite matching ----

// Minimum-cost assignment of targets (columns) to queries (rows); every
// target must be matched, queries may stay unmatched (-1). Deterministic tie
// rule: scanning queries in order, each takes the lowest-index target that
// still permits an optimal completion, preferring a match over staying
// unmatched.
inline std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost) {
    const std::size_t q_count = cost.size();
    const std::size_t g_count = q_count == 0 ? 0 : cost[0].size();
    if (g_count == 0) return std::vector<int>(q_count, -1);
    if (g_count > q_count) throw ContractError("assignment: more targets than queries");
    if (g_count > 16) throw ContractError("assignment: supports at most 16 targets");
    for (const auto& row : cost) {
        if (row.size() != g_count) throw ContractError("assignment: ragged cost matrix");
    }
    const std::size_t nmask = std::size_t{1} << g_count;
    const std::size_t full = nmask - 1;
    const double inf = std::numeric_limits<double>::infinity();

    // f[q * nmask + s] = min cost of assigning queries q..Q-1 to exactly the
    // targets outside s.
    std::vector<double> f((q_count + 1) * nmask, inf);
    f[q_count * nmask + full] = 0.0;
    for (std::size_t q = q_count; q-- > 0;) {
        for (std::size_t s = 0; s < nmask; ++s) {
            double best = f[(q + 1) * nmask + s];  // leave query q unmatched
            for (std::size_t g = 0; g < g_count; ++g) {
                if (s & (std::size_t{1} << g)) continue;
                const double c = cost[q][g] + f[(q + 1) * nmask + (s | (std::size_t{1} << g))];
                if (c < best) best = c;
            }
            f[q * nmask + s] = best;
        }
    }
    if (!(f[0] < inf)) throw ContractError("assignment: infeasible cost matrix");

    std::vector<int> out(q_count, -1);
    std::size_t s = 0;
    for (std::size_t q = 0; q < q_count; ++q) {
        for (std::size_t g = 0; g < g_count; ++g) {
            if (s & (std::size_t{1} << g)) continue;
            // Bitwise-identical re-evaluation of the DP transition.
            if (cost[q][g] + f[(q + 1) * nmask + (s | (std::size_t{1} << g))] == f[q * nmask + s]) {
                out[q] = static_cast<int>(g);
                s |= std::size_t{1} << g;
                break;
            }
        }
    }
    return out;
}

// Frame-normalized target row (x0,y0,x1,y1,...) for a ground-truth instance.
inline std::vector<double> normalized_points_row(const MapInstance& inst, const RangeSpec& range) {
    std::vector<double> row(2 * inst.points.size());
    for (std::size_t i = 0; i < inst.points.size(); ++i) {
        row[2 * i] = inst.points[i].x / (range.length / 2.0);
        row[2 * i + 1] = inst.points[i].y / (range.width / 2.0);
    }
    return row;
}

struct MatchOutcome {
    Tensor loss;                 // scalar
    std::vector<int> gt_of_query;  // -1 for "no object"
};

// Bipartite match + DETR-style loss. Pair cost is
//   -log p_q(class_g) + lambda * L1(points_q, best orientation of points_g)
// with L1 the mean absolute difference over the 2P normalized coordinates.
// The loss is mean CE over all queries (unmatched -> "no object") plus
// lambda * (sum of matched L1 terms) / max(1, G).
inline MatchOutcome match_and_loss(const Tensor& logits, const Tensor& points,
                                   const std::vector<MapInstance>& gts,
                                   const ToyDecoderConfig& cfg, const RangeSpec& range) {
    const std::size_t q_count = cfg.queries;
    if (logits.rank() != 2 || logits.dim(0) != q_count || logits.dim(1) != cfg.n_classes + 1) {
        throw ShapeError("match_and_loss: logits " + shape_str(logits.shape()));
    }
    if (points.rank() != 2 || points.dim(0) != q_count || points.dim(1) != 2 * cfg.points) {
        throw ShapeError("match_and_loss: points " + shape_str(points.shape()));
    }
    if (gts.size() > q_count) {
        throw ContractError("match_and_loss: " + std::to_string(gts.size()) +
                            " instances exceed query count " + std::to_string(q_count));
    }
    for (const auto& g : gts) {
        if (g.points.size() != cfg.points) {
            throw ContractError("match_and_loss: instance has " + std::to_string(g.points.size()) +
                                " points, expected " + std::to_string(cfg.points));
        }
        if (g.cls < 0 || static_cast<std::size_t>(g.cls) >= cfg.n_classes) {
            throw ContractError("match_and_loss: class out of range");
        }
    }

    Tensor logp = log_softmax(logits);
    const std::size_t g_count = gts.size();
    const std::size_t width = 2 * cfg.points;

    // Normalized targets, both orientations.
    std::vector<std::vector<double>> fwd(g_count), rev(g_count);
    for (std::size_t g = 0; g < g_count; ++g) {
        fwd[g] = normalized_points_row(gts[g], range);
        MapInstance r = gts[g];
        std::reverse(r.points.begin(), r.points.end());
        rev[g] = normalized_points_row(r, range);
    }

    auto l1_mean = [&](std::size_t q, const std::vector<double>& target) {
        double s = 0.0;
        for (std::size_t c = 0; c < width; ++c) {
            s += std::abs(points.data()[q * width + c] - target[c]);
        }
        return s / static_cast<double>(width);
    };

    std::vector<std::vector<double>> cost(q_count, std::vector<double>(g_count));
    std::vector<std::vector<bool>> use_rev(q_count, std::vector<bool>(g_count, false));
    for (std::size_t q = 0; q < q_count; ++q) {
        for (std::size_t g = 0; g < g_count; ++g) {
            const double lf = l1_mean(q, fwd[g]);
            const double lr = l1_mean(q, rev[g]);
            const bool use_r = lr < lf;
            use_rev[q][g] = use_r;
            const double nll =
                -logp.data()[q * (cfg.n_classes + 1) + static_cast<std::size_t>(gts[g].cls)];
            cost[q][g] = nll + cfg.lambda * (use_r ? lr : lf);
        }
    }

    MatchOutcome out;
    out.gt_of_query = solve_assignment(cost);

    std::vector<std::size_t> targets(q_count, cfg.no_object());
    for (std::size_t q = 0; q < q_count; ++q) {
        if (out.gt_of_query[q] >= 0) {
            targets[q] = static_cast<std::size_t>(gts[static_cast<std::size_t>(out.gt_of_query[q])].cls);
        }
    }
    Tensor loss = nll_rows(logp, targets);

    if (g_count > 0) {
        Tensor l1_sum = Tensor::scalar(0.0);
        bool any = false;
        for (std::size_t q = 0; q < q_count; ++q) {
            if (out.gt_of_query[q] < 0) continue;
            const std::size_t g = static_cast<std::size_t>(out.gt_of_query[q]);
            const auto& target = use_rev[q][g] ? rev[g] : fwd[g];
            Tensor target_t({1, width}, target, false);
            Tensor term = mean_all(abs_val(sub(slice_rows(points, q, q + 1), target_t)));
            l1_sum = any ? add(l1_sum, term) : term;
            any = true;
        }
        if (any) {
            loss = add(loss, scale(l1_sum, cfg.lambda / static_cast<double>(g_count)));
        }
    }
    out.loss = loss;
    return out;
}

// Ranked predictions from decoder outputs: every query contributes one
// instance labeled with its best real class; the softmax probability of that
// class (against all classes including "no object") is the confidence.
inline std::vector<MapInstance> predictions_from(const std::vector<double>& logits,
                                                 const std::vector<double>& points,
                                                 const ToyDecoderConfig& cfg,
                                                 const RangeSpec& range) {
    const std::size_t q_count = cfg.queries;
    const std::size_t n_cls = cfg.n_classes + 1;
    const std::size_t width = 2 * cfg.points;
    std::vector<MapInstance> out;
    out.reserve(q_count);
    for (std::size_t q = 0; q < q_count; ++q) {
        const double* row = logits.data() + q * n_cls;
        double mx = row[0];
        for (std::size_t c = 1; c < n_cls; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < n_cls; ++c) z += std::exp(row[c] - mx);
        int best = 0;
        for (std::size_t c = 1; c < cfg.n_classes; ++c) {
            if (row[c] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
        }
        MapInstance inst;
        inst.cls = best;
        inst.confidence = std::exp(row[static_cast<std::size_t>(best)] - mx) / z;
        inst.points.resize(cfg.points);
        for (std::size_t i = 0; i < cfg.points; ++i) {
            inst.points[i] = {points[q * width + 2 * i] * (range.length / 2.0),
                              points[q * width + 2 * i + 1] * (range.width / 2.0)};
        }
        out.push_back(std::move(inst));
    }
    return out;
}

// ---- end-to-end toy training ----

enum class ToyMode { WithTags, NoTags, FrozenNlp, Finetune01 };

inline const char* toy_mode_name(ToyMode m) {
    switch (m) {
        case ToyMode::WithTags: return "with-tags";
        case ToyMode::NoTags: return "no-tags";
        case ToyMode::FrozenNlp: return "frozen-nlp";
        case ToyMode::Finetune01: return "finetune-0.1";
    }
    return "?";
}

inline ToyMode toy_mode_from_name(const std::string& s) {
    if (s == "with-tags") return ToyMode::WithTags;
    if (s == "no-tags") return ToyMode::NoTags;
    if (s == "frozen-nlp") return ToyMode::FrozenNlp;
    if (s == "finetune-0.1") return ToyMode::Finetune01;
    throw ContractError("unknown training mode: " + s);
}

// Text-encoder learning-rate multiplier per mode; "with-tags" is an alias for
// the 0.1 fine-tuning configuration.
inline double text_lr_multiplier(ToyMode m) {
    switch (m) {
        case ToyMode::NoTags: return 0.0;
        case ToyMode::FrozenNlp: return 0.0;
        case ToyMode::WithTags: return 0.1;
        case ToyMode::Finetune01: return 0.1;
    }
    return 0.0;
}

struct ToyTrainOptions {
    ToyMode mode = ToyMode::WithTags;
    std::size_t epochs = 3;
    double lr = 1e-3;
};

struct EpochEval {
    std::size_t epoch = 0;
    double mean_train_loss = 0.0;
    ApResult val;
};

struct ToyTrainResult {
    std::unique_ptr<TextEncoder> text;  // null in no-tags mode
    std::unique_ptr<SdEncoder> sd;
    std::unique_ptr<ToyDecoder> decoder;
    std::vector<EpochEval> epochs;
    std::vector<std::pair<std::string, double>> effective_lr;  // param name -> lr
    std::string metrics_csv;  // epoch,mode,<class APs averaged over taus>,mAP
};

namespace detail_toy {

// Per-tagset embedding rows for one frame, according to the training mode.
// In fine-tuning modes rows stay connected to the text-encoder graph; in
// frozen/no-tags modes they are cached constants.
class EmbeddingSource {
public:
    EmbeddingSource(ToyMode mode, const TextEncoder* text, std::size_t emb_dim)
        : mode_(mode), text_(text), emb_dim_(emb_dim) {
        if (mode_ != ToyMode::NoTags && text_ == nullptr) {
            throw ContractError("train_toy: mode requires pretrained text-encoder weights");
        }
    }

    std::map<std::int64_t, Tensor> rows_for(const SdFrame& frame) {
        std::map<std::int64_t, Tensor> out;
        for (const auto& e : frame.elements) {
            if (mode_ == ToyMode::NoTags) {
                out.emplace(e.id, Tensor({1, emb_dim_}, std::vector<double>(emb_dim_, 0.0), false));
            } else if (mode_ == ToyMode::FrozenNlp) {
                const std::string key = e.tags.to_json();
                auto it = frozen_cache_.find(key);
                if (it == frozen_cache_.end()) {
                    it = frozen_cache_.emplace(key, Tensor({1, emb_dim_}, text_->embed(e.tags), false))
                             .first;
                }
                out.emplace(e.id, it->second);
            } else {
                // Rebuilt each step so gradients reach the text encoder.
                const std::string key = e.tags.to_json();
                auto it = step_cache_.find(key);
                if (it == step_cache_.end()) {
                    it = step_cache_.emplace(key, text_->encode_tagset(e.tags)).first;
                }
                out.emplace(e.id, it->second);
            }
        }
        return out;
    }

    void end_step() { step_cache_.clear(); }

private:
    ToyMode mode_;
    const TextEncoder* text_;
    std::size_t emb_dim_;
    std::map<std::string, Tensor> frozen_cache_;
    std::map<std::string, Tensor> step_cache_;
};

inline std::vector<std::int64_t> element_ids(const SdFrame& frame) {
    std::vector<std::int64_t> ids;
    ids.reserve(frame.elements.size());
    for (const auto& e : frame.elements) ids.push_back(e.id);
    return ids;
}

}  // namespace detail_toy

// Joint training of the SD encoder and toy decoder (plus the text encoder at
// the mode's multiplier). Single-threaded and bitwise deterministic.
inline ToyTrainResult train_toy(const std::vector<Scene>& train, const std::vector<Scene>& val,
                                const TextEncoder* pretrained, SdEncoderConfig sd_cfg,
                                ToyDecoderConfig toy_cfg, const ToyTrainOptions& opts,
                                std::uint64_t seed) {
    if (train.empty()) throw ContractError("train_toy: empty training set");
    sd_cfg.validate();
    toy_cfg.validate();
    if (toy_cfg.d_model != sd_cfg.d_model) {
        throw ContractError("train_toy: decoder and SD encoder widths differ");
    }

    Rng master(seed);
    ToyTrainResult res;
    if (opts.mode != ToyMode::NoTags) {
        if (pretrained == nullptr) {
            throw ContractError("train_toy: mode requires pretrained text-encoder weights");
        }
        res.text = std::make_unique<TextEncoder>(pretrained->clone());
    }
    res.sd = std::make_unique<SdEncoder>(sd_cfg, master.child_seed("sd-init"));
    res.decoder = std::make_unique<ToyDecoder>(toy_cfg, master.child_seed("toy-init"));

    const double text_mult = text_lr_multiplier(opts.mode);
    std::vector<NamedParam> all_params;
    if (res.text) {
        res.text->params().set_lr_multiplier_prefix("text.", text_mult);
        for (const auto& p : res.text->params().params()) all_params.push_back(p);
    }
    for (const auto& p : res.sd->params().params()) all_params.push_back(p);
    for (const auto& p : res.decoder->params().params()) all_params.push_back(p);
    for (const auto& p : all_params) {
        res.effective_lr.push_back({p.name, opts.lr * p.lr_multiplier});
    }
    Adam opt(all_params, {.lr = opts.lr});

    detail_toy::EmbeddingSource embeddings(opts.mode, res.text.get(), sd_cfg.emb_dim);

    // Identifier tables are fixed per scene across epochs.
    auto orf_for = [&](const Scene& s, const char* split, std::size_t index) {
        return generate_orf(detail_toy::element_ids(s.frame), sd_cfg.d_orf,
                            master.child_seed(std::string(split) + "-orf", index));
    };
    std::vector<OrfTable> train_orf, val_orf;
    train_orf.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) train_orf.push_back(orf_for(train[i], "train", i));
    val_orf.reserve(val.size());
    for (std::size_t i = 0; i < val.size(); ++i) val_orf.push_back(orf_for(val[i], "val", i));

    Rng drop_rng(master.child_seed("dropout"));
    DropoutPlan drop(sd_cfg.dropout, &drop_rng);

    std::string csv = "epoch,mode";
    for (const auto& name : toy_class_names()) csv += "," + name;
    csv += ",map\n";

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng shuffle_rng(master.child_seed("order", epoch));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t si : order) {
            const Scene& scene = train[si];
            auto emb = embeddings.rows_for(scene.frame);
            auto tokens = assemble_tokens(scene.frame, emb, train_orf[si], sd_cfg);
            auto memory = res.sd->encode(tokens.matrix, drop);
            auto decoded = res.decoder->decode(memory, drop);
            auto outcome =
                match_and_loss(decoded.logits, decoded.points, scene.gt, toy_cfg, sd_cfg.range);
            opt.zero_grad();
            backward(outcome.loss);
            opt.step();
            loss_sum += outcome.loss.item();
            embeddings.end_step();
        }

        // Held-out evaluation with dropout disabled.
        ApAccumulator acc;
        for (std::size_t vi = 0; vi < val.size(); ++vi) {
            const Scene& scene = val[vi];
            auto emb = embeddings.rows_for(scene.frame);
            auto tokens = assemble_tokens(scene.frame, emb, val_orf[vi], sd_cfg);
            auto memory = res.sd->encode(tokens.matrix);
            auto decoded = res.decoder->decode(memory);
            acc.add_scene(predictions_from(decoded.logits.data(), decoded.points.data(), toy_cfg,
                                           sd_cfg.range),
                          scene.gt);
            embeddings.end_step();
        }
        EpochEval ev;
        ev.epoch = epoch;
        ev.mean_train_loss = loss_sum / static_cast<double>(train.size());
        ev.val = acc.result();
        res.epochs.push_back(ev);

        csv += std::to_string(epoch);
        csv += ",";
        csv += toy_mode_name(opts.mode);
        for (std::size_t cls = 0; cls < kToyClassCount; ++cls) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& cell : ev.val.cells) {
                if (cell.cls == static_cast<int>(cls)) {
                    sum += cell.ap;
                    ++n;
                }
            }
            csv += ",";
            if (n == 0) {
                csv += "undefined";
            } else {
                jsonw::append_fixed6(csv, sum / static_cast<double>(n));
            }
        }
        csv += ",";
        csv += ev.val.map_string();
        csv += "\n";
    }
    res.metrics_csv = csv;
    return res;
}

// Mean AP per class (averaged over thresholds) from a result grid.
inline double class_ap(const ApResult& res, int cls) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& cell : res.cells) {
        if (cell.cls == cls) {
            sum += cell.ap;
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace sdtag
