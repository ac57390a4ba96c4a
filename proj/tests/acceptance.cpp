// Acceptance gate for the SD-map-prior pipeline. Runs eleven end-to-end
// checks and prints one PASS/FAIL line per criterion with its measured value
// and pinned tolerance. Exit status is the number of failed criteria.
//
// Usage: acceptance [criterion-number ...]   (no arguments runs all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "sdtag/augment.hpp"
#include "sdtag/corpus.hpp"
#include "sdtag/frame.hpp"
#include "sdtag/metrics.hpp"
#include "sdtag/orf.hpp"
#include "sdtag/osm.hpp"
#include "sdtag/scene.hpp"
#include "sdtag/sd_encoder.hpp"
#include "sdtag/text_encoder.hpp"
#include "sdtag/toy.hpp"

namespace {

using namespace sdtag;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, const char* spec = "%.3g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness: reverse-mode vs central finite differences on the
//    tiny text encoder and the tiny SD encoder / toy decoder stack.
// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
    const double tol = 1e-4, h = 1e-5;
    double worst = 0.0;
    bool ok = true;

    {  // Text encoder: MNRL over a B=3 batch, every parameter.
        std::vector<TagSet> tagsets(6);
        tagsets[0].set("highway", "residential");
        tagsets[0].set("lanes", "2");
        tagsets[1].set("highway", "primary");
        tagsets[1].set("oneway", "yes");
        tagsets[2].set("highway", "service");
        tagsets[3].set("highway", "residential");
        tagsets[3].set("lanes", "2");
        tagsets[3].set("name", "a");
        tagsets[4].set("highway", "primary");
        tagsets[4].set("oneway", "yes");
        tagsets[4].set("name", "b");
        tagsets[5].set("highway", "service");
        tagsets[5].set("name", "c");

        TextEncoderConfig cfg;
        cfg.layers = 1;
        cfg.heads = 2;
        cfg.d_model = 8;
        cfg.d_ff = 16;
        cfg.max_len = 12;
        cfg.emb_dim = 6;
        cfg.max_vocab = 50;
        cfg.dropout = 0.0;
        cfg.scale = 5.0;
        TextEncoder enc(cfg, build_vocab(tagsets, cfg.max_vocab), 11);

        auto loss_fn = [&]() {
            Tensor a = concat_rows({enc.encode_tagset(tagsets[0]), enc.encode_tagset(tagsets[1]),
                                    enc.encode_tagset(tagsets[2])});
            Tensor p = concat_rows({enc.encode_tagset(tagsets[3]), enc.encode_tagset(tagsets[4]),
                                    enc.encode_tagset(tagsets[5])});
            return mnr_loss(a, p, cfg.scale);
        };
        std::vector<Tensor> leaves;
        for (const auto& p : enc.params().params()) leaves.push_back(p.tensor);
        auto res = gradcheck::check(leaves, loss_fn, tol, h);
        worst = std::max(worst, res.worst);
        ok = ok && res.ok;
    }

    {  // SD encoder + toy decoder: matching loss, every parameter.
        SdFrame frame;
        frame.id = 1;
        frame.range = {20.0, 10.0};
        FrameElement way;
        way.id = 1;
        way.kind = ElementKind::Way;
        way.xy = {{-4.0, -1.0}, {0.0, 0.5}, {4.0, 1.0}};
        way.tags.set("highway", "residential");
        frame.elements.push_back(way);
        FrameElement node;
        node.id = 2;
        node.kind = ElementKind::Node;
        node.xy = {{1.0, 0.5}};
        node.tags.set("highway", "traffic_signals");
        frame.elements.push_back(node);

        SdEncoderConfig sd;
        sd.d_model = 8;
        sd.d_ff = 16;
        sd.layers = 1;
        sd.heads = 2;
        sd.dropout = 0.0;
        sd.d_orf = 4;
        sd.d_pos = 4;
        sd.emb_dim = 4;
        sd.range = frame.range;
        SdEncoder encoder(sd, 21);

        ToyDecoderConfig toy;
        toy.queries = 3;
        toy.d_model = 8;
        toy.d_ff = 16;
        toy.layers = 1;
        toy.heads = 2;
        toy.dropout = 0.0;
        toy.points = 3;
        toy.lambda = 5.0;
        ToyDecoder decoder(toy, 22);

        Rng rng(23);
        std::map<std::int64_t, Tensor> emb;
        emb.emplace(1, Tensor::randn({1, sd.emb_dim}, rng, 0.5, true));
        emb.emplace(2, Tensor::randn({1, sd.emb_dim}, rng, 0.5, true));
        OrfTable orf = generate_orf({1, 2}, sd.d_orf, 24);

        std::vector<MapInstance> gts(2);
        gts[0].cls = kClassCenterline;
        gts[0].points = {{-4.0, -0.5}, {0.0, 1.0}, {4.0, 1.5}};
        gts[1].cls = kClassBoundary;
        gts[1].points = {{-4.0, -2.0}, {0.0, -0.5}, {4.0, 0.0}};

        auto loss_fn = [&]() {
            auto tokens = assemble_tokens(frame, emb, orf, sd);
            auto memory = encoder.encode(tokens.matrix);
            auto out = decoder.decode(memory);
            return match_and_loss(out.logits, out.points, gts, toy, sd.range).loss;
        };
        std::vector<Tensor> leaves;
        for (const auto& p : encoder.params().params()) leaves.push_back(p.tensor);
        for (const auto& p : decoder.params().params()) leaves.push_back(p.tensor);
        leaves.push_back(emb.at(1));
        leaves.push_back(emb.at(2));
        auto res = gradcheck::check(leaves, loss_fn, tol, h);
        worst = std::max(worst, res.worst);
        ok = ok && res.ok;
    }

    return {ok, "max_rel_err=" + fmt(worst) + " (tol 1e-4, h=1e-5)"};
}

// ---------------------------------------------------------------------------
// 2. ORF invariant: Gram matrix of assigned identifier rows equals identity.
// ---------------------------------------------------------------------------

Outcome criterion_orf() {
    Rng master(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d_orf = 1 + static_cast<std::size_t>(master.below(128));
        const std::size_t n = 1 + static_cast<std::size_t>(master.below(d_orf));
        std::vector<std::int64_t> ids(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::int64_t>(i) * 3 + 7;
        OrfTable table = generate_orf(ids, d_orf, master.child_seed("orf", trial));
        for (std::size_t i = 0; i < n; ++i) {
            const double* a = table.row(ids[i]);
            for (std::size_t j = 0; j < n; ++j) {
                const double* b = table.row(ids[j]);
                double dot = 0.0;
                for (std::size_t k = 0; k < d_orf; ++k) dot += a[k] * b[k];
                worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
            }
        }
    }
    return {worst < 1e-6, "100 seeds, n<=d_orf<=128, max |Gram - I| = " + fmt(worst) + " (tol 1e-6)"};
}

// ---------------------------------------------------------------------------
// 3. MNRL closed form: B=2, orthonormal anchors equal to positives, s=1.
// ---------------------------------------------------------------------------

Outcome criterion_mnrl_closed_form() {
    Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const double loss = mnr_loss(eye, eye, 1.0).item();
    const double expected = std::log1p(std::exp(-1.0));  // 0.313262...
    const double err = std::abs(loss - expected);
    return {err < 1e-9,
            "loss=" + fmt(loss, "%.9f") + " vs log(1+e^-1)=" + fmt(expected, "%.9f") +
                ", |diff|=" + fmt(err) + " (tol 1e-9)"};
}

// ---------------------------------------------------------------------------
// 4. Contrastive pretraining separability: 200 relevant tagsets x 5 variants
//    differing only in irrelevant tags; held-out variant retrieves its
//    relevant twin. rel-tag-CL off is recorded and must not beat on-mode.
// ---------------------------------------------------------------------------

struct TagFamily {
    TagSet relevant;
    std::vector<TagSet> variants;
};

std::vector<TagFamily> tag_families() {
    const char* highways[10] = {"residential",   "primary",      "secondary", "tertiary",
                                "service",       "trunk",        "motorway",  "unclassified",
                                "living_street", "track"};
    std::vector<TagFamily> fams;
    int counter = 0;
    for (int h = 0; h < 10; ++h)
        for (int l = 1; l <= 5; ++l)
            for (int ow = 0; ow < 2; ++ow)
                for (int ms = 0; ms < 2; ++ms) {
                    TagFamily f;
                    f.relevant.set("highway", highways[h]);
                    f.relevant.set("lanes", std::to_string(l));
                    f.relevant.set("oneway", ow ? "yes" : "no");
                    f.relevant.set("maxspeed", ms ? "30" : "50");
                    for (int v = 0; v < 5; ++v) {
                        TagSet t = f.relevant;
                        t.set("name", "Street" + std::to_string((counter * 5 + v) % 50));
                        t.set("tiger:cfcc", "A" + std::to_string((counter * 7 + v * 3) % 50));
                        f.variants.push_back(t);
                    }
                    ++counter;
                    fams.push_back(std::move(f));
                }
    return fams;
}

double retrieval_accuracy(const std::vector<TagFamily>& fams, const RelevanceConfig& rel,
                          bool rel_tag_cl, std::uint64_t seed) {
    std::vector<TagSet> train_raw;
    for (const auto& f : fams)
        for (int v = 0; v < 4; ++v) train_raw.push_back(f.variants[v]);
    TagsetCorpus corpus = build_corpus(train_raw, rel);

    TextEncoderConfig cfg;
    cfg.layers = 1;
    cfg.heads = 4;
    cfg.d_model = 64;
    cfg.d_ff = 128;
    cfg.max_len = 32;
    cfg.emb_dim = 64;
    cfg.max_vocab = 2048;
    cfg.dropout = 0.0;
    cfg.scale = 20.0;

    PretrainOptions opts;
    opts.epochs = 4;
    opts.batch_size = 256;
    opts.pairs_per_tagset = 20;
    opts.rel_tag_cl = rel_tag_cl;
    opts.lr = 1e-3;
    PretrainResult res = pretrain(corpus, rel, cfg, opts, seed);

    std::vector<std::vector<double>> gallery;
    gallery.reserve(fams.size());
    for (const auto& f : fams) gallery.push_back(res.encoder->embed(f.relevant));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < fams.size(); ++i) {
        const auto q = res.encoder->embed(fams[i].variants[4]);
        double best = -2.0;
        std::size_t arg = 0;
        for (std::size_t j = 0; j < gallery.size(); ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < q.size(); ++k) dot += q[k] * gallery[j][k];
            if (dot > best) {
                best = dot;
                arg = j;
            }
        }
        if (arg == i) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(fams.size());
}

Outcome criterion_contrastive_separability() {
    auto fams = tag_families();
    RelevanceConfig rel = RelevanceConfig::parse("name\nname:*\ntiger:*\naddr:*\n");
    const std::uint64_t seeds[3] = {101, 202, 303};
    double on_sum = 0.0, diff_sum = 0.0;
    std::string per_seed;
    for (std::uint64_t seed : seeds) {
        const double on = retrieval_accuracy(fams, rel, true, seed);
        const double off = retrieval_accuracy(fams, rel, false, seed);
        on_sum += on;
        diff_sum += off - on;
        per_seed += " s" + std::to_string(seed) + ":on=" + fmt(on, "%.3f") + ",off=" + fmt(off, "%.3f");
    }
    const double on_mean = on_sum / 3.0;
    const double diff_mean = diff_sum / 3.0;
    const bool pass = on_mean >= 0.95 && diff_mean <= 0.02;
    return {pass, "top-1 on-mode mean=" + fmt(on_mean, "%.3f") + " (>=0.95), off-on mean=" +
                      fmt(diff_mean, "%.3f") + " (<=0.02 noise);" + per_seed};
}

// ---------------------------------------------------------------------------
// 5 & 6. End-to-end tag utility and fine-tuning direction on the toy
//        benchmark. Nine trainings (3 seeds x {no-tags, frozen, finetune})
//        are shared between the two criteria.
// ---------------------------------------------------------------------------

struct ToyBenchResults {
    double no_tags[3] = {0, 0, 0};
    double frozen[3] = {0, 0, 0};
    double finetune[3] = {0, 0, 0};
    double divider_gap = 0.0;     // with-tags minus no-tags, per-class mean AP
    double centerline_gap = 0.0;
    double boundary_gap = 0.0;
    bool ran = false;
};

SceneSpec ambiguous_scene_spec() {
    SceneSpec s;
    s.roads = 1;
    s.min_lanes = 1;
    s.max_lanes = 2;
    s.lane_width = 2.8;
    s.oneway_prob = 0.5;
    s.signal_prob = 0.3;
    s.range = {60.0, 30.0};
    s.geometry_noise = 0.0;
    s.points = 10;
    return s;
}

const ToyBenchResults& toy_bench() {
    static const ToyBenchResults results = [] {
        ToyBenchResults r;
        SceneSpec spec = ambiguous_scene_spec();
        Rng master(42);
        std::vector<Scene> train, val;
        train.reserve(2000);
        val.reserve(500);
        for (std::size_t i = 0; i < 2000; ++i)
            train.push_back(generate_scene(spec, master.child_seed("train", i)));
        for (std::size_t i = 0; i < 500; ++i)
            val.push_back(generate_scene(spec, master.child_seed("val", i)));

        RelevanceConfig rel = RelevanceConfig::parse("name\nname:*\ntiger:*\n");
        std::vector<SdFrame> frames;
        frames.reserve(train.size());
        for (const auto& s : train) frames.push_back(s.frame);
        TagsetCorpus corpus = build_corpus_from_frames(frames, rel);

        TextEncoderConfig tcfg;
        tcfg.layers = 1;
        tcfg.heads = 2;
        tcfg.d_model = 16;
        tcfg.d_ff = 32;
        tcfg.max_len = 16;
        tcfg.emb_dim = 16;
        tcfg.max_vocab = 256;
        tcfg.dropout = 0.0;
        tcfg.scale = 20.0;
        PretrainOptions popts;
        popts.epochs = 1;
        popts.batch_size = 8;
        popts.pairs_per_tagset = 20;
        popts.rel_tag_cl = true;
        popts.lr = 1e-3;
        PretrainResult pre = pretrain(corpus, rel, tcfg, popts, 7);

        SdEncoderConfig sd;
        sd.d_model = 64;
        sd.d_ff = 128;
        sd.layers = 1;
        sd.heads = 4;
        sd.dropout = 0.0;
        sd.d_orf = 16;
        sd.d_pos = 16;
        sd.emb_dim = 16;
        sd.range = spec.range;

        ToyDecoderConfig toy;
        toy.queries = 8;
        toy.d_model = 64;
        toy.d_ff = 128;
        toy.layers = 2;
        toy.heads = 4;
        toy.dropout = 0.0;
        toy.points = spec.points;
        toy.lambda = 5.0;

        // A run's score is its best validation epoch (standard model
        // selection); per-class APs are read from that same epoch.
        auto best_epoch = [](const ToyTrainResult& res) -> const ApResult& {
            const EpochEval* best = &res.epochs.front();
            for (const auto& ev : res.epochs) {
                if (ev.val.map > best->val.map) best = &ev;
            }
            return best->val;
        };

        const std::uint64_t seeds[3] = {1001, 2002, 3003};
        double div_gap = 0.0, cen_gap = 0.0, bnd_gap = 0.0;
        for (int si = 0; si < 3; ++si) {
            auto run = [&](ToyMode mode) {
                ToyTrainOptions opts;
                opts.mode = mode;
                opts.epochs = 55;
                opts.lr = 1e-3;
                return train_toy(train, val, pre.encoder.get(), sd, toy, opts, seeds[si]);
            };
            ToyTrainResult no_tags = run(ToyMode::NoTags);
            ToyTrainResult frozen = run(ToyMode::FrozenNlp);
            ToyTrainResult finetune = run(ToyMode::Finetune01);
            const ApResult& nt = best_epoch(no_tags);
            const ApResult& fz = best_epoch(frozen);
            const ApResult& ft = best_epoch(finetune);
            r.no_tags[si] = nt.map;
            r.frozen[si] = fz.map;
            r.finetune[si] = ft.map;
            div_gap += class_ap(ft, kClassDivider) - class_ap(nt, kClassDivider);
            cen_gap += class_ap(ft, kClassCenterline) - class_ap(nt, kClassCenterline);
            bnd_gap += class_ap(ft, kClassBoundary) - class_ap(nt, kClassBoundary);
        }
        r.divider_gap = div_gap / 3.0;
        r.centerline_gap = cen_gap / 3.0;
        r.boundary_gap = bnd_gap / 3.0;
        r.ran = true;
        return r;
    }();
    return results;
}

double mean3(const double v[3]) { return (v[0] + v[1] + v[2]) / 3.0; }

Outcome criterion_tag_utility() {
    const ToyBenchResults& r = toy_bench();
    const double with_tags = mean3(r.finetune);  // with-tags is the finetune-0.1 configuration
    const double no_tags = mean3(r.no_tags);
    const double gap = with_tags - no_tags;
    const bool divider_largest =
        r.divider_gap >= r.centerline_gap && r.divider_gap >= r.boundary_gap;
    const bool pass = gap >= 0.15 && divider_largest;
    return {pass, "mAP with-tags=" + fmt(with_tags, "%.3f") + " no-tags=" + fmt(no_tags, "%.3f") +
                      " gap=" + fmt(gap, "%.3f") + " (>=0.15); class gaps divider=" +
                      fmt(r.divider_gap, "%.3f") + " centerline=" + fmt(r.centerline_gap, "%.3f") +
                      " boundary=" + fmt(r.boundary_gap, "%.3f") + " (divider largest: " +
                      (divider_largest ? "yes" : "no") +
                      "); time covers all 9 trainings shared with criterion 6"};
}

Outcome criterion_finetune_direction() {
    const ToyBenchResults& r = toy_bench();
    const double ft = mean3(r.finetune);
    const double fz = mean3(r.frozen);
    const double gap = ft - fz;
    return {ft >= fz - 0.01, "mAP finetune-0.1=" + fmt(ft, "%.3f") + " frozen=" + fmt(fz, "%.3f") +
                                 " diff=" + fmt(gap, "%+.3f") + " (>= -0.01; sign " +
                                 (gap >= 0 ? "positive" : "negative") + ")"};
}

// ---------------------------------------------------------------------------
// 7. Metric oracle: AP/mAP vs an independent implementation; Chamfer vs the
//    direct O(P^2) double loop.
// ---------------------------------------------------------------------------

namespace oracle {

double chamfer(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
    double sum_ab = 0.0;
    for (const auto& p : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : b) {
            const double dx = p.x - q.x, dy = p.y - q.y;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d < best) best = d;
        }
        sum_ab += best;
    }
    double sum_ba = 0.0;
    for (const auto& q : b) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : a) {
            const double dx = q.x - p.x, dy = q.y - p.y;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d < best) best = d;
        }
        sum_ba += best;
    }
    return 0.5 * (sum_ab / static_cast<double>(a.size()) + sum_ba / static_cast<double>(b.size()));
}

struct Mark {
    double conf;
    bool tp;
    std::size_t order;  // global insertion order, for the stable tie-break
};

// Greedy per-scene matching in confidence-rank order, from the full distance
// matrix; true positive iff the nearest unmatched same-class gt is < tau.
void match_scene(const std::vector<MapInstance>& preds, const std::vector<MapInstance>& gts,
                 int cls, double tau, std::vector<Mark>& marks, std::size_t& npos) {
    std::vector<std::size_t> ps, gs;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i].cls == cls) ps.push_back(i);
    for (std::size_t i = 0; i < gts.size(); ++i)
        if (gts[i].cls == cls) gs.push_back(i);
    npos += gs.size();
    std::sort(ps.begin(), ps.end(), [&](std::size_t a, std::size_t b) {
        if (preds[a].confidence != preds[b].confidence)
            return preds[a].confidence > preds[b].confidence;
        return a < b;
    });
    std::vector<std::vector<double>> dist(ps.size(), std::vector<double>(gs.size()));
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t j = 0; j < gs.size(); ++j)
            dist[i][j] = oracle::chamfer(preds[ps[i]].points, gts[gs[j]].points);
    std::vector<bool> used(gs.size(), false);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = gs.size();
        for (std::size_t j = 0; j < gs.size(); ++j) {
            if (!used[j] && dist[i][j] < best) {
                best = dist[i][j];
                arg = j;
            }
        }
        const bool tp = arg < gs.size() && best < tau;
        if (tp) used[arg] = true;
        marks.push_back({preds[ps[i]].confidence, tp, marks.size()});
    }
}

// Direct 101-point interpolated PR construction.
double ap_from_marks(std::vector<Mark> marks, std::size_t npos) {
    if (marks.empty()) return 0.0;
    std::sort(marks.begin(), marks.end(), [](const Mark& a, const Mark& b) {
        if (a.conf != b.conf) return a.conf > b.conf;
        return a.order < b.order;
    });
    const std::size_t n = marks.size();
    std::vector<double> prec(n), rec(n);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (marks[i].tp) ++tp;
        prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        rec[i] = npos == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(npos);
    }
    std::vector<double> envelope(n);
    double run = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        run = std::max(run, prec[i]);
        envelope[i] = run;
    }
    double sum = 0.0;
    for (int level = 0; level <= 100; ++level) {
        const double want = static_cast<double>(level) / 100.0;
        double p = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (rec[i] >= want) {
                p = envelope[i];
                break;
            }
        }
        sum += p;
    }
    return sum / 101.0;
}

}  // namespace oracle

std::vector<MapInstance> random_instances(Rng& rng, std::size_t max_count, bool with_conf) {
    const std::size_t count = rng.below(max_count + 1);
    std::vector<MapInstance> out(count);
    for (auto& inst : out) {
        inst.cls = static_cast<int>(rng.below(3));
        const std::size_t pts = 3 + rng.below(4);
        inst.points.resize(pts);
        for (auto& p : inst.points) {
            p.x = rng.uniform(-10.0, 10.0);
            p.y = rng.uniform(-10.0, 10.0);
        }
        if (with_conf) inst.confidence = rng.uniform01();
    }
    return out;
}

Outcome criterion_metric_oracle() {
    Rng rng(777);
    double worst_ap = 0.0;
    std::size_t chamfer_mismatches = 0;

    std::vector<std::vector<MapInstance>> all_preds, all_gts;
    for (int s = 0; s < 50; ++s) {
        all_preds.push_back(random_instances(rng, 5, true));
        all_gts.push_back(random_instances(rng, 5, false));
    }

    // Chamfer: library vs direct double loop, bitwise.
    for (int t = 0; t < 200; ++t) {
        std::vector<MapInstance> a = random_instances(rng, 1, false);
        std::vector<MapInstance> b = random_instances(rng, 1, false);
        if (a.empty() || b.empty()) continue;
        if (sdtag::chamfer(a[0].points, b[0].points) != oracle::chamfer(a[0].points, b[0].points)) {
            ++chamfer_mismatches;
        }
    }

    // Per-scene AP grids.
    for (int s = 0; s < 50; ++s) {
        ApResult lib = map_over(all_preds[s], all_gts[s]);
        for (const auto& cell : lib.cells) {
            std::vector<oracle::Mark> marks;
            std::size_t npos = 0;
            oracle::match_scene(all_preds[s], all_gts[s], cell.cls, cell.tau, marks, npos);
            worst_ap = std::max(worst_ap, std::abs(cell.ap - oracle::ap_from_marks(marks, npos)));
        }
    }

    // Pooled accumulation across all 50 scenes.
    ApAccumulator acc;
    for (int s = 0; s < 50; ++s) acc.add_scene(all_preds[s], all_gts[s]);
    ApResult pooled = acc.result();
    double pooled_sum = 0.0;
    for (const auto& cell : pooled.cells) {
        std::vector<oracle::Mark> marks;
        std::size_t npos = 0;
        for (int s = 0; s < 50; ++s) {
            std::set<int> classes;
            for (const auto& p : all_preds[s]) classes.insert(p.cls);
            for (const auto& g : all_gts[s]) classes.insert(g.cls);
            if (classes.count(cell.cls)) {
                oracle::match_scene(all_preds[s], all_gts[s], cell.cls, cell.tau, marks, npos);
            }
        }
        const double oap = oracle::ap_from_marks(marks, npos);
        worst_ap = std::max(worst_ap, std::abs(cell.ap - oap));
        pooled_sum += oap;
    }
    if (!pooled.cells.empty()) {
        worst_ap = std::max(
            worst_ap, std::abs(pooled.map - pooled_sum / static_cast<double>(pooled.cells.size())));
    }

    const bool pass = worst_ap < 1e-9 && chamfer_mismatches == 0;
    return {pass, "50 scenes: max |AP - oracle| = " + fmt(worst_ap) +
                      " (tol 1e-9); chamfer bitwise mismatches = " +
                      std::to_string(chamfer_mismatches) + "/200"};
}

// ---------------------------------------------------------------------------
// 8. Matching oracle: solve_assignment vs exhaustive permutation search.
// ---------------------------------------------------------------------------

namespace oracle {

// Minimum total cost over all injective target->query assignments.
double brute_min(const std::vector<std::vector<double>>& cost, std::size_t gi,
                 std::vector<bool>& used) {
    if (cost.empty()) return 0.0;
    const std::size_t g = cost[0].size();
    if (gi == g) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < cost.size(); ++q) {
        if (used[q]) continue;
        used[q] = true;
        const double rest = brute_min(cost, gi + 1, used);
        used[q] = false;
        best = std::min(best, cost[q][gi] + rest);
    }
    return best;
}

}  // namespace oracle

Outcome criterion_matching_oracle() {
    Rng rng(31415);
    double worst = 0.0;
    int trials = 0;
    for (int t = 0; t < 400; ++t) {
        const std::size_t q = 1 + rng.below(6);
        const std::size_t g = rng.below(q + 1);
        std::vector<std::vector<double>> cost(q, std::vector<double>(g));
        for (auto& row : cost)
            for (auto& c : row) {
                c = rng.uniform(-5.0, 5.0);
                if (rng.bernoulli(0.3)) c = std::round(c);  // force ties
            }
        auto assign = solve_assignment(cost);
        double total = 0.0;
        std::vector<bool> gt_seen(g, false);
        bool valid = true;
        for (std::size_t i = 0; i < q; ++i) {
            if (assign[i] < 0) continue;
            const auto gi = static_cast<std::size_t>(assign[i]);
            if (gi >= g || gt_seen[gi]) {
                valid = false;
                continue;
            }
            gt_seen[gi] = true;
            total += cost[i][gi];
        }
        for (bool seen : gt_seen) valid = valid && seen;
        if (!valid) return {false, "invalid assignment on trial " + std::to_string(t)};
        std::vector<bool> used(q, false);
        const double expect = g == 0 ? 0.0 : oracle::brute_min(cost, 0, used);
        worst = std::max(worst, std::abs(total - expect));
        ++trials;
    }
    return {worst < 1e-12, std::to_string(trials) + " random cost matrices up to 6x6, max |cost - "
                                                    "permutation optimum| = " +
                               fmt(worst) + " (tol 1e-12)"};
}

// ---------------------------------------------------------------------------
// 9. Parser robustness on the bundled fixtures; serialization fixed point.
// ---------------------------------------------------------------------------

std::string data_path(const std::string& name) {
    return std::string(SDTAG_DATA_DIR) + "/" + name;
}

Outcome criterion_parser_robustness() {
    std::string detail;

    auto elements = load_osm_file(data_path("valid.osm"));
    std::size_t nodes = 0, ways = 0, relations = 0;
    const TagSet* way10 = nullptr;
    for (const auto& e : elements) {
        if (e.kind == ElementKind::Node) ++nodes;
        if (e.kind == ElementKind::Way) {
            ++ways;
            if (e.id == 10) way10 = &e.tags;
        }
        if (e.kind == ElementKind::Relation) ++relations;
    }
    const bool valid_ok = nodes == 12 && ways == 3 && relations == 2 && way10 != nullptr &&
                          way10->has("lanes") && way10->get("lanes") == "2";
    detail += "valid: " + std::to_string(nodes) + "n/" + std::to_string(ways) + "w/" +
              std::to_string(relations) + "r";

    bool truncated_ok = false;
    try {
        load_osm_file(data_path("truncated.osm"));
    } catch (const ParseError& e) {
        truncated_ok = e.byte_offset == 1200;
        detail += "; truncated: ParseError@" + std::to_string(e.byte_offset) + " (want 1200)";
    }

    bool dangling_ok = false;
    try {
        load_osm_file(data_path("dangling.osm"));
    } catch (const DanglingReference& e) {
        dangling_ok = e.element_id == 99;
        detail += "; dangling: node " + std::to_string(e.element_id) + " (want 99)";
    }

    EgoPose ego;
    ego.origin = {13.39, 52.52};
    ego.heading = 0.0;
    SdFrame frame = project_to_frame(elements, ego, {60.0, 30.0});
    const std::string once = serialize_frame(frame);
    const std::string twice = serialize_frame(parse_frame_json(once));
    const bool fixed_point = once == twice && !frame.elements.empty();
    detail += "; parse->serialize->parse fixed point: ";
    detail += fixed_point ? "yes" : "NO";

    return {valid_ok && truncated_ok && dangling_ok && fixed_point, detail};
}

// ---------------------------------------------------------------------------
// 10. CLI determinism: every subcommand rerun into a parallel directory
//     produces byte-identical artifacts.
// ---------------------------------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Outcome criterion_cli_determinism() {
    namespace fs = std::filesystem;
    const fs::path root = fs::temp_directory_path() / "sdtag_acceptance_cli";
    fs::remove_all(root);

    const std::string data = SDTAG_DATA_DIR;
    const std::vector<std::string> commands = {
        "extract --osm " + data + "/valid.osm --ego 13.39,52.52,0 --range near --out frames.jsonl",
        "build-corpus --input frames.jsonl --relevance " + data +
            "/relevance_default.txt --out corpus.jsonl",
        "pretrain-tags --corpus corpus.jsonl --relevance " + data +
            "/relevance_default.txt --epochs 1 --batch 4 --pairs-per-tagset 3 --layers 1"
            " --heads 2 --d-model 8 --d-ff 16 --max-len 16 --emb-dim 6 --max-vocab 64 --seed 5"
            " --out enc.sdtk",
        "embed --checkpoint enc.sdtk --frames frames.jsonl --out emb.sdem",
        "orf-check --n 8 --dorf 16 --seed 3 > orf_stdout.txt",
        "gen-scenes --count 4 --seed 9 --roads 2 --out scenes.jsonl",
        "train-toy --train scenes.jsonl --val scenes.jsonl --mode no-tags --epochs 1 --seed 4"
        " --d-model 16 --d-ff 32 --sd-layers 1 --toy-layers 1 --heads 2 --d-orf 16 --d-pos 8"
        " --queries 8 --emb-dim 6 --dropout 0 --out toy",
        "eval --pred scenes.jsonl --gt scenes.jsonl --out-csv eval.csv --out-json eval.json"
        " > eval_stdout.txt",
        "augment --in frames.jsonl --relevance " + data +
            "/relevance_default.txt --seed 7 --out aug.jsonl",
    };

    for (const char* dir : {"a", "b"}) {
        fs::create_directories(root / dir);
        for (const auto& cmd : commands) {
            const std::string full = "cd " + (root / dir).string() + " && " + SDTAG_CLI_PATH + " " +
                                     cmd + " > /dev/null 2>&1";
            // Commands with their own redirection keep it; the trailing
            // redirect then applies to an empty remainder harmlessly.
            if (std::system(full.c_str()) != 0) {
                return {false, "subcommand failed in " + std::string(dir) + ": " + cmd};
            }
        }
    }

    std::size_t artifacts = 0, mismatches = 0;
    std::string first_mismatch;
    for (const auto& entry : fs::directory_iterator(root / "a")) {
        const std::string name = entry.path().filename().string();
        ++artifacts;
        if (slurp(root / "a" / name) != slurp(root / "b" / name)) {
            ++mismatches;
            if (first_mismatch.empty()) first_mismatch = name;
        }
    }
    const bool pass = artifacts >= 20 && mismatches == 0;
    std::string detail = "9 subcommands, " + std::to_string(artifacts) +
                         " artifacts compared, mismatches=" + std::to_string(mismatches);
    if (!first_mismatch.empty()) detail += " (first: " + first_mismatch + ")";
    return {pass, detail};
}

// ---------------------------------------------------------------------------
// 11. Augmentation statistics at paper parameters over 10 000 samples.
// ---------------------------------------------------------------------------

double sample_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::sqrt(var / static_cast<double>(xs.size() - 1));
}

Outcome criterion_augment_statistics() {
    const std::size_t n = 10000;
    std::string detail;
    bool pass = true;

    {  // Element drop at rate 0.1: kept fraction ~ 0.9 within 5%.
        SdFrame frame;
        frame.range = {60.0, 30.0};
        for (std::size_t i = 0; i < n; ++i) {
            FrameElement e;
            e.id = static_cast<std::int64_t>(i) + 1;
            e.kind = ElementKind::Node;
            e.xy = {{0.0, 0.0}};
            e.tags.set("highway", "stop");
            frame.elements.push_back(std::move(e));
        }
        SdFrame out = element_drop(frame, 0.1, 17);
        const double kept = static_cast<double>(out.elements.size()) / static_cast<double>(n);
        const bool ok = std::abs(kept - 0.9) <= 0.05 * 0.9;
        pass = pass && ok;
        detail += "drop: kept=" + fmt(kept, "%.4f") + " (0.9 +-5%)";
    }

    {  // Per-element translation noise: per-axis std ~ 1 m within 5%.
        SdFrame frame;
        frame.range = {60.0, 30.0};
        for (std::size_t i = 0; i < n; ++i) {
            FrameElement e;
            e.id = static_cast<std::int64_t>(i) + 1;
            e.kind = ElementKind::Node;
            e.xy = {{0.0, 0.0}};
            frame.elements.push_back(std::move(e));
        }
        AugmentConfig cfg;
        cfg.locally_constant = false;
        cfg.sigma_trans = 1.0;
        cfg.sigma_rot = 2.0;
        SdFrame out = position_noise(frame, cfg, 29);
        std::vector<double> xs(n), ys(n);
        for (std::size_t i = 0; i < n; ++i) {
            xs[i] = out.elements[i].xy[0].x;
            ys[i] = out.elements[i].xy[0].y;
        }
        const double sx = sample_std(xs), sy = sample_std(ys);
        const bool ok = std::abs(sx - 1.0) <= 0.05 && std::abs(sy - 1.0) <= 0.05;
        pass = pass && ok;
        detail += "; trans: std=(" + fmt(sx, "%.3f") + "," + fmt(sy, "%.3f") + ") (1.0 +-5%)";
    }

    {  // Rotation noise: angular std ~ 2 degrees within 5%, measured on a
       // lever arm long enough that translation noise is negligible.
        SdFrame frame;
        frame.range = {60.0, 30.0};
        for (std::size_t i = 0; i < n; ++i) {
            FrameElement e;
            e.id = static_cast<std::int64_t>(i) + 1;
            e.kind = ElementKind::Node;
            e.xy = {{1000.0, 0.0}};
            frame.elements.push_back(std::move(e));
        }
        AugmentConfig cfg;
        cfg.locally_constant = false;
        cfg.sigma_trans = 1.0;
        cfg.sigma_rot = 2.0;
        SdFrame out = position_noise(frame, cfg, 31);
        std::vector<double> angles(n);
        for (std::size_t i = 0; i < n; ++i) {
            angles[i] =
                std::atan2(out.elements[i].xy[0].y, out.elements[i].xy[0].x) * 180.0 / kPi;
        }
        const double sr = sample_std(angles);
        const bool ok = std::abs(sr - 2.0) <= 0.1;
        pass = pass && ok;
        detail += "; rot: std=" + fmt(sr, "%.3f") + " deg (2.0 +-5%)";
    }

    {  // Tag masking 0.5 x 0.6, non-relevant only: non-relevant retention
       // ~ 0.7 within 5%; relevant tags never touched.
        RelevanceConfig rel = RelevanceConfig::parse("name\ntiger:*\n");
        SdFrame frame;
        frame.range = {60.0, 30.0};
        for (std::size_t i = 0; i < n; ++i) {
            FrameElement e;
            e.id = static_cast<std::int64_t>(i) + 1;
            e.kind = ElementKind::Node;
            e.xy = {{0.0, 0.0}};
            e.tags.set("highway", "stop");
            e.tags.set("name", "x" + std::to_string(i % 10));
            frame.elements.push_back(std::move(e));
        }
        TagMaskConfig cfg;  // defaults: 0.5 / 0.6 / non-relevant only
        SdFrame out = tag_mask(frame, cfg, rel, 37);
        std::size_t kept_rel = 0, kept_non = 0;
        for (const auto& e : out.elements) {
            if (e.tags.has("highway")) ++kept_rel;
            if (e.tags.has("name")) ++kept_non;
        }
        const double retention = static_cast<double>(kept_non) / static_cast<double>(n);
        const bool ok = kept_rel == n && std::abs(retention - 0.7) <= 0.035;
        pass = pass && ok;
        detail += "; mask: non-relevant retention=" + fmt(retention, "%.4f") + " (0.7 +-5%), relevant kept=" +
                  std::to_string(kept_rel) + "/" + std::to_string(n);
    }

    return {pass, detail};
}

// ---------------------------------------------------------------------------

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "gradient-correctness", criterion_gradients},
        {2, "orf-invariant", criterion_orf},
        {3, "mnrl-closed-form", criterion_mnrl_closed_form},
        {4, "contrastive-separability", criterion_contrastive_separability},
        {5, "end-to-end-tag-utility", criterion_tag_utility},
        {6, "finetune-direction", criterion_finetune_direction},
        {7, "metric-oracle", criterion_metric_oracle},
        {8, "matching-oracle", criterion_matching_oracle},
        {9, "parser-robustness", criterion_parser_robustness},
        {10, "cli-determinism", criterion_cli_determinism},
        {11, "augmentation-statistics", criterion_augment_statistics},
    };

    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double dt =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%2d] %s %s: %s [%.1fs]\n", c.id, out.pass ? "PASS" : "FAIL", c.name,
                    out.detail.c_str(), dt);
        std::fflush(stdout);
        if (!out.pass) ++failures;
    }
    if (selected.empty() || selected.size() > 1) {
        std::printf("%s (%d failure%s)\n", failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
                    failures, failures == 1 ? "" : "s");
    }
    return failures;
}
