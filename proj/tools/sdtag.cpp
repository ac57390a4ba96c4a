// sdtag: command-line front end for the SD-map-prior pipeline.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 invariant/acceptance failure. Errors print a single line
// "error: <category>: <message>" on stderr.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdtag/augment.hpp"
#include "sdtag/corpus.hpp"
#include "sdtag/frame.hpp"
#include "sdtag/metrics.hpp"
#include "sdtag/orf.hpp"
#include "sdtag/osm.hpp"
#include "sdtag/runconfig.hpp"
#include "sdtag/scene.hpp"
#include "sdtag/sd_encoder.hpp"
#include "sdtag/text_encoder.hpp"
#include "sdtag/toy.hpp"

namespace {

using namespace sdtag;

struct CliError {
    int code;
    std::string category;
    std::string message;
};

std::string single_line(std::string s) {
    for (auto& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

void require_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CliError{2, "data", "missing file: " + path};
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double to_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw CliError{1, "usage", "bad " + what + ": " + s};
    }
}

// "near" (60x30) and "far" (120x60) presets, or an explicit "LxW".
RangeSpec parse_range(const std::string& s) {
    if (s == "near") return {60.0, 30.0};
    if (s == "far") return {120.0, 60.0};
    auto parts = split(s, 'x');
    if (parts.size() != 2) {
        throw CliError{1, "usage", "bad --range (want near, far, or LxW): " + s};
    }
    RangeSpec r{to_double(parts[0], "--range length"), to_double(parts[1], "--range width")};
    if (r.length <= 0.0 || r.width <= 0.0) {
        throw CliError{1, "usage", "--range extents must be positive: " + s};
    }
    return r;
}

EgoPose parse_ego(const std::string& s) {
    auto parts = split(s, ',');
    if (parts.size() != 3) {
        throw CliError{1, "usage", "bad --ego (want LON,LAT,HEADING_DEG): " + s};
    }
    EgoPose ego;
    ego.origin.lon = to_double(parts[0], "--ego longitude");
    ego.origin.lat = to_double(parts[1], "--ego latitude");
    ego.heading = to_double(parts[2], "--ego heading") * kPi / 180.0;
    return ego;
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_f6(double v) {
    std::string out;
    jsonw::append_fixed6(out, v);
    return out;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CliError{2, "data", "cannot write " + path};
    f << text;
}

// Resolved-config sidecar next to an artifact; makes every run re-playable.
void write_provenance(const std::string& artifact, const std::string& command, RunConfig resolved) {
    resolved.set("command", command);
    write_text_file(artifact + ".run", resolved.serialized());
}

template <typename Fn>
auto usage_checked(Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ContractError& e) {
        throw CliError{1, "config", e.what()};
    }
}

// Appends "--flag=value" arguments from the config file for every
// "<subcommand>.<flag>" key whose flag is absent from the command line, so
// explicit flags always win over the file.
std::vector<std::string> apply_config_defaults(std::vector<std::string> args) {
    std::string sub;
    for (const auto& a : args) {
        if (!a.empty() && a[0] != '-') {
            sub = a;
            break;
        }
    }
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (sub.empty() || config_path.empty()) return args;
    require_file(config_path);
    RunConfig cfg;
    try {
        cfg = RunConfig::load(config_path);
    } catch (const sdtag::ParseError& e) {
        throw CliError{1, "config", e.what()};
    }
    for (const auto& [key, value] : cfg.values()) {
        if (key.rfind(sub + ".", 0) != 0) continue;
        const std::string flag = "--" + key.substr(sub.size() + 1);
        bool given = false;
        for (const auto& a : args) {
            if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
        }
        if (!given) args.push_back(flag + "=" + value);
    }
    return args;
}

// ---- extract ----

struct ExtractOpts {
    std::string osm, ego = "0,0,0", range = "near", out = "frames.jsonl", config;
    std::size_t points = kDefaultPolylinePoints;
    std::int64_t frame_id = 0;
};

void run_extract(const ExtractOpts& o) {
    if (o.osm.empty()) throw CliError{1, "usage", "extract requires --osm"};
    require_file(o.osm);
    const EgoPose ego = parse_ego(o.ego);
    const RangeSpec range = parse_range(o.range);
    if (o.points < 2) throw CliError{1, "usage", "--points must be >= 2"};
    auto elements = load_osm_file(o.osm);
    SdFrame frame = project_to_frame(elements, ego, range, o.points, o.frame_id);
    save_frames(o.out, {frame});

    RunConfig prov;
    prov.set("extract.osm", o.osm);
    prov.set("extract.ego", o.ego);
    prov.set("extract.range", o.range);
    prov.set("extract.points", std::to_string(o.points));
    prov.set("extract.frame-id", std::to_string(o.frame_id));
    prov.set("extract.out", o.out);
    write_provenance(o.out, "extract", prov);
    std::cout << "extract frames=1 elements=" << frame.elements.size() << " out=" << o.out << "\n";
}

// ---- build-corpus ----

struct BuildCorpusOpts {
    std::string input, relevance, out = "corpus.jsonl", config;
};

void run_build_corpus(const BuildCorpusOpts& o) {
    if (o.input.empty()) throw CliError{1, "usage", "build-corpus requires --input"};
    if (o.relevance.empty()) throw CliError{1, "usage", "build-corpus requires --relevance"};
    require_file(o.input);
    require_file(o.relevance);
    auto frames = load_frames(o.input);
    RelevanceConfig rel = RelevanceConfig::load(o.relevance);
    TagsetCorpus corpus = build_corpus_from_frames(frames, rel);
    save_corpus(o.out, corpus);

    std::size_t largest = 0, singletons = 0;
    for (const auto& [key, bucket] : corpus.index) {
        largest = std::max(largest, bucket.size());
        if (bucket.size() == 1) ++singletons;
    }
    RunConfig stats;
    stats.set("tagsets", std::to_string(corpus.tagsets.size()));
    stats.set("buckets", std::to_string(corpus.index.size()));
    stats.set("largest-bucket", std::to_string(largest));
    stats.set("singleton-buckets", std::to_string(singletons));
    write_text_file(o.out + ".stats", stats.serialized());

    RunConfig prov;
    prov.set("build-corpus.input", o.input);
    prov.set("build-corpus.relevance", o.relevance);
    prov.set("build-corpus.out", o.out);
    write_provenance(o.out, "build-corpus", prov);
    std::cout << "build-corpus tagsets=" << corpus.tagsets.size() << " buckets="
              << corpus.index.size() << " largest_bucket=" << largest << " out=" << o.out << "\n";
}

// ---- pretrain-tags ----

struct PretrainOpts_ {
    std::string corpus, relevance, out = "text_encoder.sdtk", rel_tag_cl = "on", config;
    std::size_t epochs = 4, batch = 256, pairs_per_tagset = 20;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    // encoder dimensions
    std::size_t layers = 2, heads = 4, d_model = 64, d_ff = 128, max_len = 64, emb_dim = 144,
                max_vocab = 2048;
    double dropout = 0.1, scale = 20.0;
};

void run_pretrain(const PretrainOpts_& o) {
    if (o.corpus.empty()) throw CliError{1, "usage", "pretrain-tags requires --corpus"};
    if (o.relevance.empty()) throw CliError{1, "usage", "pretrain-tags requires --relevance"};
    if (o.rel_tag_cl != "on" && o.rel_tag_cl != "off") {
        throw CliError{1, "usage", "--rel-tag-cl must be on or off"};
    }
    require_file(o.corpus);
    require_file(o.relevance);
    auto tagsets = load_tagsets(o.corpus);
    RelevanceConfig rel = RelevanceConfig::load(o.relevance);
    TagsetCorpus corpus = build_corpus(tagsets, rel);
    if (corpus.tagsets.empty()) throw CliError{2, "data", "corpus is empty: " + o.corpus};

    TextEncoderConfig cfg;
    cfg.layers = o.layers;
    cfg.heads = o.heads;
    cfg.d_model = o.d_model;
    cfg.d_ff = o.d_ff;
    cfg.max_len = o.max_len;
    cfg.emb_dim = o.emb_dim;
    cfg.max_vocab = o.max_vocab;
    cfg.dropout = o.dropout;
    cfg.scale = o.scale;
    usage_checked([&] { cfg.validate(); return 0; });

    PretrainOptions opts;
    opts.epochs = o.epochs;
    opts.batch_size = o.batch;
    opts.pairs_per_tagset = o.pairs_per_tagset;
    opts.rel_tag_cl = o.rel_tag_cl == "on";
    opts.lr = o.lr;

    PretrainResult res = pretrain(corpus, rel, cfg, opts, o.seed);
    res.encoder->save(o.out);

    std::string log = "epoch,step,loss\n";
    for (const auto& e : res.log) {
        log += std::to_string(e.epoch) + "," + std::to_string(e.step) + "," + fmt_g(e.loss) + "\n";
    }
    write_text_file(o.out + ".loss.csv", log);

    RunConfig prov;
    prov.set("pretrain-tags.corpus", o.corpus);
    prov.set("pretrain-tags.relevance", o.relevance);
    prov.set("pretrain-tags.epochs", std::to_string(o.epochs));
    prov.set("pretrain-tags.batch", std::to_string(o.batch));
    prov.set("pretrain-tags.pairs-per-tagset", std::to_string(o.pairs_per_tagset));
    prov.set("pretrain-tags.rel-tag-cl", o.rel_tag_cl);
    prov.set("pretrain-tags.lr", fmt_g(o.lr));
    prov.set("pretrain-tags.seed", std::to_string(o.seed));
    prov.set("pretrain-tags.layers", std::to_string(o.layers));
    prov.set("pretrain-tags.heads", std::to_string(o.heads));
    prov.set("pretrain-tags.d-model", std::to_string(o.d_model));
    prov.set("pretrain-tags.d-ff", std::to_string(o.d_ff));
    prov.set("pretrain-tags.max-len", std::to_string(o.max_len));
    prov.set("pretrain-tags.emb-dim", std::to_string(o.emb_dim));
    prov.set("pretrain-tags.max-vocab", std::to_string(o.max_vocab));
    prov.set("pretrain-tags.dropout", fmt_g(o.dropout));
    prov.set("pretrain-tags.scale", fmt_g(o.scale));
    prov.set("pretrain-tags.out", o.out);
    write_provenance(o.out, "pretrain-tags", prov);

    const double final_mean = res.epoch_mean_loss.empty() ? 0.0 : res.epoch_mean_loss.back();
    std::cout << "pretrain-tags epochs=" << o.epochs << " steps=" << res.log.size()
              << " final_epoch_mean=" << fmt_f6(final_mean) << " out=" << o.out << "\n";
}

// ---- embed ----

struct EmbedOpts {
    std::string checkpoint, frames, out = "embeddings.sdem", config;
};

void run_embed(const EmbedOpts& o) {
    if (o.checkpoint.empty()) throw CliError{1, "usage", "embed requires --checkpoint"};
    if (o.frames.empty()) throw CliError{1, "usage", "embed requires --frames"};
    require_file(o.checkpoint);
    require_file(o.checkpoint + ".meta");
    require_file(o.checkpoint + ".vocab");
    require_file(o.frames);
    TextEncoder enc = TextEncoder::load(o.checkpoint);
    auto frames = load_frames(o.frames);

    std::vector<TagSet> tagsets;
    std::set<std::string> seen;
    for (const auto& f : frames) {
        for (const auto& e : f.elements) {
            if (seen.insert(e.tags.to_json()).second) tagsets.push_back(e.tags);
        }
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(tagsets.size());
    for (const auto& t : tagsets) rows.push_back(enc.embed(t));
    save_embedding_dump(o.out, rows, tagsets);

    RunConfig prov;
    prov.set("embed.checkpoint", o.checkpoint);
    prov.set("embed.frames", o.frames);
    prov.set("embed.out", o.out);
    write_provenance(o.out, "embed", prov);
    std::cout << "embed rows=" << rows.size() << " dim=" << enc.config().emb_dim
              << " out=" << o.out << "\n";
}

// ---- orf-check ----

struct OrfCheckOpts {
    std::size_t n = 8, dorf = 16;
    std::uint64_t seed = 1;
    std::string config;
};

void run_orf_check(const OrfCheckOpts& o) {
    std::vector<std::int64_t> ids(o.n);
    for (std::size_t i = 0; i < o.n; ++i) ids[i] = static_cast<std::int64_t>(i) + 1;
    OrfTable table = generate_orf(ids, o.dorf, o.seed);
    double max_offdiag = 0.0, max_diag_err = 0.0;
    for (std::size_t i = 0; i < o.n; ++i) {
        const double* a = table.row(ids[i]);
        for (std::size_t j = 0; j < o.n; ++j) {
            const double* b = table.row(ids[j]);
            double dot = 0.0;
            for (std::size_t k = 0; k < o.dorf; ++k) dot += a[k] * b[k];
            if (i == j) {
                max_diag_err = std::max(max_diag_err, std::abs(dot - 1.0));
            } else {
                max_offdiag = std::max(max_offdiag, std::abs(dot));
            }
        }
    }
    const bool ok = max_offdiag <= 1e-6 && max_diag_err <= 1e-6;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "orf-check n=%zu dorf=%zu seed=%llu max_offdiag=%.3e max_diag_err=%.3e status=%s",
                  o.n, o.dorf, static_cast<unsigned long long>(o.seed), max_offdiag, max_diag_err,
                  ok ? "ok" : "fail");
    std::cout << buf << "\n";
    if (!ok) {
        throw CliError{3, "invariant", "orf-check: Gram deviation exceeds 1e-6"};
    }
}

// ---- gen-scenes ----

struct GenScenesOpts {
    std::size_t count = 10;
    std::uint64_t seed = 1;
    std::string out = "scenes.jsonl", range = "near", config;
    std::size_t roads = 1;
    int min_lanes = 1, max_lanes = 3;
    double lane_width = 3.5, oneway_prob = 0.5, signal_prob = 0.3, noise = 0.0;
    std::size_t points = kDefaultPolylinePoints;
};

void run_gen_scenes(const GenScenesOpts& o) {
    SceneSpec spec;
    spec.roads = o.roads;
    spec.min_lanes = o.min_lanes;
    spec.max_lanes = o.max_lanes;
    spec.lane_width = o.lane_width;
    spec.oneway_prob = o.oneway_prob;
    spec.signal_prob = o.signal_prob;
    spec.range = parse_range(o.range);
    spec.geometry_noise = o.noise;
    spec.points = o.points;
    usage_checked([&] { spec.validate(); return 0; });

    Rng master(o.seed);
    std::vector<Scene> scenes;
    scenes.reserve(o.count);
    for (std::size_t i = 0; i < o.count; ++i) {
        scenes.push_back(generate_scene(spec, master.child_seed("scene", i)));
    }
    save_scenes(o.out, scenes);

    RunConfig prov;
    prov.set("gen-scenes.count", std::to_string(o.count));
    prov.set("gen-scenes.seed", std::to_string(o.seed));
    prov.set("gen-scenes.range", o.range);
    prov.set("gen-scenes.roads", std::to_string(o.roads));
    prov.set("gen-scenes.min-lanes", std::to_string(o.min_lanes));
    prov.set("gen-scenes.max-lanes", std::to_string(o.max_lanes));
    prov.set("gen-scenes.lane-width", fmt_g(o.lane_width));
    prov.set("gen-scenes.oneway-prob", fmt_g(o.oneway_prob));
    prov.set("gen-scenes.signal-prob", fmt_g(o.signal_prob));
    prov.set("gen-scenes.noise", fmt_g(o.noise));
    prov.set("gen-scenes.points", std::to_string(o.points));
    prov.set("gen-scenes.out", o.out);
    write_provenance(o.out, "gen-scenes", prov);
    std::cout << "gen-scenes count=" << o.count << " out=" << o.out << "\n";
}

// ---- train-toy ----

struct TrainToyOpts {
    std::string train, val, mode = "with-tags", text_checkpoint, out = "toy", config;
    std::size_t epochs = 3;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    std::size_t d_model = 128, d_ff = 256, sd_layers = 2, toy_layers = 2, heads = 8, d_orf = 64,
                d_pos = 32, queries = 20, emb_dim = 144;
    double dropout = 0.1, lambda = 5.0;
};

void run_train_toy(const TrainToyOpts& o) {
    if (o.train.empty()) throw CliError{1, "usage", "train-toy requires --train"};
    if (o.val.empty()) throw CliError{1, "usage", "train-toy requires --val"};
    const ToyMode mode = usage_checked([&] { return toy_mode_from_name(o.mode); });
    require_file(o.train);
    require_file(o.val);
    auto train = load_scenes(o.train);
    auto val = load_scenes(o.val);
    if (train.empty()) throw CliError{2, "data", "empty training set: " + o.train};

    // Point count comes from the data; every instance must agree.
    std::size_t points = 0;
    std::size_t max_gt = 0;
    for (const auto* setp : {&train, &val}) {
        for (const auto& s : *setp) {
            max_gt = std::max(max_gt, s.gt.size());
            for (const auto& g : s.gt) {
                if (points == 0) points = g.points.size();
                if (g.points.size() != points) {
                    throw CliError{2, "data", "instances disagree on point count"};
                }
            }
        }
    }
    if (points == 0) throw CliError{2, "data", "no ground-truth instances in the training data"};
    if (max_gt > o.queries) {
        throw CliError{1, "usage",
                       "a scene has " + std::to_string(max_gt) + " instances; raise --queries"};
    }

    std::unique_ptr<TextEncoder> text;
    if (mode != ToyMode::NoTags) {
        if (o.text_checkpoint.empty()) {
            throw CliError{1, "usage", "mode " + o.mode + " requires --text-checkpoint"};
        }
        require_file(o.text_checkpoint);
        require_file(o.text_checkpoint + ".meta");
        require_file(o.text_checkpoint + ".vocab");
        text = std::make_unique<TextEncoder>(TextEncoder::load(o.text_checkpoint));
    }

    SdEncoderConfig sd;
    sd.d_model = o.d_model;
    sd.d_ff = o.d_ff;
    sd.layers = o.sd_layers;
    sd.heads = o.heads;
    sd.dropout = o.dropout;
    sd.d_orf = o.d_orf;
    sd.d_pos = o.d_pos;
    sd.emb_dim = text ? text->config().emb_dim : o.emb_dim;
    sd.range = train[0].frame.range;
    usage_checked([&] { sd.validate(); return 0; });

    ToyDecoderConfig toy;
    toy.queries = o.queries;
    toy.d_model = o.d_model;
    toy.d_ff = o.d_ff;
    toy.layers = o.toy_layers;
    toy.heads = o.heads;
    toy.dropout = o.dropout;
    toy.points = points;
    toy.lambda = o.lambda;
    usage_checked([&] { toy.validate(); return 0; });

    ToyTrainOptions opts;
    opts.mode = mode;
    opts.epochs = o.epochs;
    opts.lr = o.lr;

    ToyTrainResult res = train_toy(train, val, text.get(), sd, toy, opts, o.seed);
    for (const auto& e : res.epochs) {
        std::cout << "epoch=" << e.epoch << " loss=" << fmt_f6(e.mean_train_loss)
                  << " map=" << e.val.map_string() << "\n";
    }

    write_text_file(o.out + ".metrics.csv", res.metrics_csv);
    std::vector<ckpt::Entry> entries;
    auto collect = [&entries](const ParamRegistry& reg) {
        for (const auto& p : reg.params()) entries.push_back({p.name, p.tensor.shape(), p.tensor.data()});
    };
    if (res.text) collect(res.text->params());
    collect(res.sd->params());
    collect(res.decoder->params());
    ckpt::save(o.out + ".sdtk", entries);

    RunConfig prov;
    prov.set("train-toy.train", o.train);
    prov.set("train-toy.val", o.val);
    prov.set("train-toy.mode", o.mode);
    prov.set("train-toy.text-checkpoint", o.text_checkpoint);
    prov.set("train-toy.epochs", std::to_string(o.epochs));
    prov.set("train-toy.lr", fmt_g(o.lr));
    prov.set("train-toy.seed", std::to_string(o.seed));
    prov.set("train-toy.d-model", std::to_string(o.d_model));
    prov.set("train-toy.d-ff", std::to_string(o.d_ff));
    prov.set("train-toy.sd-layers", std::to_string(o.sd_layers));
    prov.set("train-toy.toy-layers", std::to_string(o.toy_layers));
    prov.set("train-toy.heads", std::to_string(o.heads));
    prov.set("train-toy.d-orf", std::to_string(o.d_orf));
    prov.set("train-toy.d-pos", std::to_string(o.d_pos));
    prov.set("train-toy.queries", std::to_string(o.queries));
    prov.set("train-toy.emb-dim", std::to_string(sd.emb_dim));
    prov.set("train-toy.dropout", fmt_g(o.dropout));
    prov.set("train-toy.lambda", fmt_g(o.lambda));
    prov.set("train-toy.out", o.out);
    write_provenance(o.out, "train-toy", prov);

    const std::string final_map = res.epochs.empty() ? "undefined" : res.epochs.back().val.map_string();
    std::cout << "train-toy mode=" << o.mode << " epochs=" << o.epochs << " final_map=" << final_map
              << " out=" << o.out << "\n";
}

// ---- eval ----

struct EvalOpts {
    std::string pred, gt, out_csv, out_json, taus = "0.5,1.0,1.5", config;
};

void run_eval(const EvalOpts& o) {
    if (o.pred.empty()) throw CliError{1, "usage", "eval requires --pred"};
    if (o.gt.empty()) throw CliError{1, "usage", "eval requires --gt"};
    require_file(o.pred);
    require_file(o.gt);
    auto preds = load_scenes(o.pred);
    auto gts = load_scenes(o.gt);
    if (preds.size() != gts.size()) {
        throw CliError{2, "data",
                       "scene count mismatch: " + std::to_string(preds.size()) + " predictions vs " +
                           std::to_string(gts.size()) + " ground truths"};
    }
    std::vector<double> taus;
    for (const auto& part : split(o.taus, ',')) {
        if (!part.empty()) taus.push_back(to_double(part, "--taus entry"));
    }
    if (taus.empty()) throw CliError{1, "usage", "--taus must name at least one threshold"};

    ApAccumulator acc(taus);
    for (std::size_t i = 0; i < preds.size(); ++i) acc.add_scene(preds[i].gt, gts[i].gt);
    ApResult res = acc.result();

    const std::string csv = eval_csv(res, toy_class_names());
    std::cout << csv;
    if (!o.out_csv.empty()) {
        write_text_file(o.out_csv, csv);
        RunConfig prov;
        prov.set("eval.pred", o.pred);
        prov.set("eval.gt", o.gt);
        prov.set("eval.taus", o.taus);
        prov.set("eval.out-csv", o.out_csv);
        prov.set("eval.out-json", o.out_json);
        write_provenance(o.out_csv, "eval", prov);
    }
    if (!o.out_json.empty()) write_text_file(o.out_json, eval_json(res, toy_class_names()) + "\n");
}

// ---- augment ----

struct AugmentOpts {
    std::string in, out = "augmented.jsonl", relevance, config;
    std::uint64_t seed = 1;
    double element_drop_rate = 0.1;
    bool locally_constant = true;
    double sigma_trans = 1.0, sigma_rot = 2.0;
    double element_aug_rate = 0.5, tag_drop_rate = 0.6;
    bool non_relevant_only = true;
};

void run_augment(const AugmentOpts& o) {
    if (o.in.empty()) throw CliError{1, "usage", "augment requires --in"};
    require_file(o.in);
    AugmentConfig cfg;
    cfg.element_drop_rate = o.element_drop_rate;
    cfg.locally_constant = o.locally_constant;
    cfg.sigma_trans = o.sigma_trans;
    cfg.sigma_rot = o.sigma_rot;
    cfg.tag_mask.element_aug_rate = o.element_aug_rate;
    cfg.tag_mask.tag_drop_rate = o.tag_drop_rate;
    cfg.tag_mask.non_relevant_only = o.non_relevant_only;
    usage_checked([&] { cfg.validate(); return 0; });

    RelevanceConfig rel;
    if (!o.relevance.empty()) {
        require_file(o.relevance);
        rel = RelevanceConfig::load(o.relevance);
    } else if (cfg.tag_mask.element_aug_rate > 0.0 && cfg.tag_mask.non_relevant_only) {
        throw CliError{1, "usage", "non-relevant-only tag masking requires --relevance"};
    }

    auto frames = load_frames(o.in);
    Rng master(o.seed);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        frames[i] = augment_frame(frames[i], cfg, rel, master.child_seed("frame", i));
    }
    save_frames(o.out, frames);

    RunConfig prov;
    prov.set("augment.in", o.in);
    prov.set("augment.relevance", o.relevance);
    prov.set("augment.seed", std::to_string(o.seed));
    prov.set("augment.element-drop-rate", fmt_g(o.element_drop_rate));
    prov.set("augment.locally-constant", o.locally_constant ? "true" : "false");
    prov.set("augment.sigma-trans", fmt_g(o.sigma_trans));
    prov.set("augment.sigma-rot", fmt_g(o.sigma_rot));
    prov.set("augment.element-aug-rate", fmt_g(o.element_aug_rate));
    prov.set("augment.tag-drop-rate", fmt_g(o.tag_drop_rate));
    prov.set("augment.non-relevant-only", o.non_relevant_only ? "true" : "false");
    prov.set("augment.out", o.out);
    write_provenance(o.out, "augment", prov);
    std::cout << "augment frames=" << frames.size() << " out=" << o.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SD map prior pipeline: tag encoding, token assembly, toy map decoding"};
    app.require_subcommand(0, 1);

    auto extract_opts = std::make_shared<ExtractOpts>();
    auto* extract = app.add_subcommand("extract", "Project an OSM extract into an ego frame");
    extract->add_option("--osm", extract_opts->osm, "OSM XML input");
    extract->add_option("--ego", extract_opts->ego, "Ego pose LON,LAT,HEADING_DEG");
    extract->add_option("--range", extract_opts->range, "near, far, or LxW meters");
    extract->add_option("--points", extract_opts->points, "Points per resampled polyline");
    extract->add_option("--frame-id", extract_opts->frame_id, "Frame id for the output");
    extract->add_option("--out", extract_opts->out, "Output frame JSONL");
    extract->add_option("--config", extract_opts->config, "Run-config file with defaults");
    extract->callback([extract_opts] { run_extract(*extract_opts); });

    auto corpus_opts = std::make_shared<BuildCorpusOpts>();
    auto* corpus = app.add_subcommand("build-corpus", "Collect unique tagsets from frames");
    corpus->add_option("--input", corpus_opts->input, "Frame JSONL input");
    corpus->add_option("--relevance", corpus_opts->relevance, "Relevance matcher file");
    corpus->add_option("--out", corpus_opts->out, "Output corpus JSONL");
    corpus->add_option("--config", corpus_opts->config, "Run-config file with defaults");
    corpus->callback([corpus_opts] { run_build_corpus(*corpus_opts); });

    auto pre_opts = std::make_shared<PretrainOpts_>();
    auto* pre = app.add_subcommand("pretrain-tags", "Contrastive pretraining of the tag encoder");
    pre->add_option("--corpus", pre_opts->corpus, "Corpus JSONL");
    pre->add_option("--relevance", pre_opts->relevance, "Relevance matcher file");
    pre->add_option("--epochs", pre_opts->epochs, "Training epochs");
    pre->add_option("--batch", pre_opts->batch, "Contrastive batch size");
    pre->add_option("--pairs-per-tagset", pre_opts->pairs_per_tagset, "Positive pairs per tagset");
    pre->add_option("--rel-tag-cl", pre_opts->rel_tag_cl, "Relevant-tag curriculum: on or off");
    pre->add_option("--lr", pre_opts->lr, "Adam learning rate");
    pre->add_option("--seed", pre_opts->seed, "Master seed");
    pre->add_option("--layers", pre_opts->layers, "Encoder blocks");
    pre->add_option("--heads", pre_opts->heads, "Attention heads");
    pre->add_option("--d-model", pre_opts->d_model, "Model width");
    pre->add_option("--d-ff", pre_opts->d_ff, "Feed-forward width");
    pre->add_option("--max-len", pre_opts->max_len, "Maximum token sequence length");
    pre->add_option("--emb-dim", pre_opts->emb_dim, "Output embedding dimension");
    pre->add_option("--max-vocab", pre_opts->max_vocab, "Vocabulary cap");
    pre->add_option("--dropout", pre_opts->dropout, "Dropout rate");
    pre->add_option("--scale", pre_opts->scale, "Similarity temperature");
    pre->add_option("--out", pre_opts->out, "Checkpoint path");
    pre->add_option("--config", pre_opts->config, "Run-config file with defaults");
    pre->callback([pre_opts] { run_pretrain(*pre_opts); });

    auto embed_opts = std::make_shared<EmbedOpts>();
    auto* embed = app.add_subcommand("embed", "Embed the tagsets of a frame file");
    embed->add_option("--checkpoint", embed_opts->checkpoint, "Text-encoder checkpoint");
    embed->add_option("--frames", embed_opts->frames, "Frame JSONL input");
    embed->add_option("--out", embed_opts->out, "Embedding dump path");
    embed->add_option("--config", embed_opts->config, "Run-config file with defaults");
    embed->callback([embed_opts] { run_embed(*embed_opts); });

    auto orf_opts = std::make_shared<OrfCheckOpts>();
    auto* orf = app.add_subcommand("orf-check", "Verify identifier-vector orthonormality");
    orf->add_option("--n", orf_opts->n, "Number of identifiers");
    orf->add_option("--dorf", orf_opts->dorf, "Identifier dimension");
    orf->add_option("--seed", orf_opts->seed, "Seed");
    orf->add_option("--config", orf_opts->config, "Run-config file with defaults");
    orf->callback([orf_opts] { run_orf_check(*orf_opts); });

    auto gen_opts = std::make_shared<GenScenesOpts>();
    auto* gen = app.add_subcommand("gen-scenes", "Generate synthetic lane scenes");
    gen->add_option("--count", gen_opts->count, "Number of scenes");
    gen->add_option("--seed", gen_opts->seed, "Master seed");
    gen->add_option("--range", gen_opts->range, "near, far, or LxW meters");
    gen->add_option("--roads", gen_opts->roads, "Roads per scene");
    gen->add_option("--min-lanes", gen_opts->min_lanes, "Minimum lane count");
    gen->add_option("--max-lanes", gen_opts->max_lanes, "Maximum lane count");
    gen->add_option("--lane-width", gen_opts->lane_width, "Lane width in meters");
    gen->add_option("--oneway-prob", gen_opts->oneway_prob, "Probability of a oneway road");
    gen->add_option("--signal-prob", gen_opts->signal_prob, "Probability of a signal node");
    gen->add_option("--noise", gen_opts->noise, "Geometry noise sigma");
    gen->add_option("--points", gen_opts->points, "Points per polyline");
    gen->add_option("--out", gen_opts->out, "Output scene JSONL");
    gen->add_option("--config", gen_opts->config, "Run-config file with defaults");
    gen->callback([gen_opts] { run_gen_scenes(*gen_opts); });

    auto toy_opts = std::make_shared<TrainToyOpts>();
    auto* toy = app.add_subcommand("train-toy", "Train the toy map decoder on scenes");
    toy->add_option("--train", toy_opts->train, "Training scene JSONL");
    toy->add_option("--val", toy_opts->val, "Validation scene JSONL");
    toy->add_option("--mode", toy_opts->mode,
                    "with-tags, no-tags, frozen-nlp, or finetune-0.1");
    toy->add_option("--text-checkpoint", toy_opts->text_checkpoint, "Pretrained text encoder");
    toy->add_option("--epochs", toy_opts->epochs, "Training epochs");
    toy->add_option("--lr", toy_opts->lr, "Adam learning rate");
    toy->add_option("--seed", toy_opts->seed, "Master seed");
    toy->add_option("--d-model", toy_opts->d_model, "Model width");
    toy->add_option("--d-ff", toy_opts->d_ff, "Feed-forward width");
    toy->add_option("--sd-layers", toy_opts->sd_layers, "SD encoder blocks");
    toy->add_option("--toy-layers", toy_opts->toy_layers, "Decoder blocks");
    toy->add_option("--heads", toy_opts->heads, "Attention heads");
    toy->add_option("--d-orf", toy_opts->d_orf, "Identifier dimension");
    toy->add_option("--d-pos", toy_opts->d_pos, "Positional encoding dimension");
    toy->add_option("--queries", toy_opts->queries, "Decoder queries");
    toy->add_option("--emb-dim", toy_opts->emb_dim, "Tag embedding width (no-tags mode)");
    toy->add_option("--dropout", toy_opts->dropout, "Dropout rate");
    toy->add_option("--lambda", toy_opts->lambda, "Point-loss weight");
    toy->add_option("--out", toy_opts->out, "Output prefix");
    toy->add_option("--config", toy_opts->config, "Run-config file with defaults");
    toy->callback([toy_opts] { run_train_toy(*toy_opts); });

    auto eval_opts = std::make_shared<EvalOpts>();
    auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
    ev->add_option("--pred", eval_opts->pred, "Prediction scene JSONL");
    ev->add_option("--gt", eval_opts->gt, "Ground-truth scene JSONL");
    ev->add_option("--taus", eval_opts->taus, "Comma-separated distance thresholds");
    ev->add_option("--out-csv", eval_opts->out_csv, "Also write the CSV here");
    ev->add_option("--out-json", eval_opts->out_json, "Also write a JSON report here");
    ev->add_option("--config", eval_opts->config, "Run-config file with defaults");
    ev->callback([eval_opts] { run_eval(*eval_opts); });

    auto aug_opts = std::make_shared<AugmentOpts>();
    auto* aug = app.add_subcommand("augment", "Apply SD prior augmentations to frames");
    aug->add_option("--in", aug_opts->in, "Frame JSONL input");
    aug->add_option("--out", aug_opts->out, "Frame JSONL output");
    aug->add_option("--relevance", aug_opts->relevance, "Relevance matcher file");
    aug->add_option("--seed", aug_opts->seed, "Master seed");
    aug->add_option("--element-drop-rate", aug_opts->element_drop_rate, "Element drop rate");
    aug->add_flag("--locally-constant,!--per-element", aug_opts->locally_constant,
                  "One shared offset/rotation per frame");
    aug->add_option("--sigma-trans", aug_opts->sigma_trans, "Translation sigma in meters");
    aug->add_option("--sigma-rot", aug_opts->sigma_rot, "Rotation sigma in degrees");
    aug->add_option("--element-aug-rate", aug_opts->element_aug_rate, "Tag-masked element rate");
    aug->add_option("--tag-drop-rate", aug_opts->tag_drop_rate, "Per-tag drop rate");
    aug->add_flag("--non-relevant-only,!--all-tags", aug_opts->non_relevant_only,
                  "Restrict masking to non-relevant tags");
    aug->add_option("--config", aug_opts->config, "Run-config file with defaults");
    aug->callback([aug_opts] { run_augment(*aug_opts); });

    std::vector<std::string> args;
    try {
        args = apply_config_defaults(std::vector<std::string>(argv + 1, argv + argc));
    } catch (const CliError& e) {
        std::cerr << "error: " << e.category << ": " << single_line(e.message) << "\n";
        return e.code;
    } catch (const sdtag::Error& e) {
        std::cerr << "error: config: " << single_line(e.what()) << "\n";
        return 1;
    }
    std::vector<std::string> full;
    full.push_back(argv[0]);
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> cargv;
    cargv.reserve(full.size());
    for (const auto& a : full) cargv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(cargv.size()), cargv.data());
        if (app.get_subcommands().empty()) {
            std::cout << app.help();
            return 1;
        }
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << single_line(e.what()) << "\n";
        return 1;
    } catch (const CliError& e) {
        std::cerr << "error: " << e.category << ": " << single_line(e.message) << "\n";
        return e.code;
    } catch (const sdtag::ParseError& e) {
        std::cerr << "error: data: " << single_line(e.what()) << "\n";
        return 2;
    } catch (const DanglingReference& e) {
        std::cerr << "error: data: " << single_line(e.what()) << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: data: " << single_line(e.what()) << "\n";
        return 2;
    } catch (const CapacityError& e) {
        std::cerr << "error: invariant: " << single_line(e.what()) << "\n";
        return 3;
    } catch (const sdtag::Error& e) {
        std::cerr << "error: invariant: " << single_line(e.what()) << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << single_line(e.what()) << "\n";
        return 3;
    }
    return 0;
}
