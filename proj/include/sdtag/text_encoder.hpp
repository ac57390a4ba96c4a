#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "sdtag/adam.hpp"
#include "sdtag/checkpoint.hpp"
#include "sdtag/corpus.hpp"
#include "sdtag/errors.hpp"
#include "sdtag/rng.hpp"
#include "sdtag/tags.hpp"
#include "sdtag/tensor.hpp"
#include "sdtag/transformer.hpp"
#include "sdtag/vocab.hpp"

namespace sdtag {

struct TextEncoderConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t d_model = 64;
    std::size_t d_ff = 128;
    std::size_t max_len = 64;
    std::size_t emb_dim = 144;
    std::size_t max_vocab = 2048;
    double dropout = 0.1;
    double scale = 20.0;  // cosine similarity temperature for MNRL

    void validate() const {
        if (d_model % heads != 0) throw ContractError("text encoder: heads must divide d_model");
        if (emb_dim == 0) throw ContractError("text encoder: embedding dimension must be > 0");
    }
};

// Miniature BERT-style encoder: token + learned positional embeddings,
// pre-norm transformer blocks, and an L2-normalized [CLS] projection.
class TextEncoder {
public:
    TextEncoder(TextEncoderConfig cfg, Vocabulary vocab, std::uint64_t init_seed)
        : cfg_(cfg), vocab_(std::move(vocab)) {
        cfg_.validate();
        Rng rng(init_seed);
        token_emb_ = reg_.randn("text.token_emb", {vocab_.size(), cfg_.d_model}, rng);
        pos_emb_ = reg_.randn("text.pos_emb", {cfg_.max_len, cfg_.d_model}, rng);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            blocks_.push_back(make_encoder_block(reg_, "text.block" + std::to_string(l), cfg_.d_model,
                                                 cfg_.heads, cfg_.d_ff, rng));
        }
        final_ln_ = make_layer_norm(reg_, "text.final_ln", cfg_.d_model);
        out_w_ = reg_.randn("text.out.w", {cfg_.d_model, cfg_.emb_dim}, rng);
        out_b_ = reg_.zeros("text.out.b", {cfg_.emb_dim});
    }

    const TextEncoderConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }

    // Forward for one id sequence; returns a unit-norm [1 x emb_dim] row in
    // the autodiff graph.
    Tensor encode_ids(const std::vector<int>& ids, const DropoutPlan& drop = {}) const {
        if (ids.empty()) throw ContractError("encode_ids: empty sequence");
        if (ids.size() > cfg_.max_len) {
            throw ContractError("encode_ids: sequence length " + std::to_string(ids.size()) +
                                " exceeds max_len " + std::to_string(cfg_.max_len));
        }
        std::vector<std::size_t> tok_idx(ids.size()), pos_idx(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            tok_idx[i] = static_cast<std::size_t>(ids[i]);
            pos_idx[i] = i;
        }
        Tensor x = add(embedding_lookup(token_emb_, tok_idx), embedding_lookup(pos_emb_, pos_idx));
        for (const auto& b : blocks_) x = encoder_block(b, x, drop);
        x = layer_norm(x, final_ln_.gamma, final_ln_.beta);
        Tensor cls = slice_rows(x, 0, 1);
        return l2_normalize(add_bias(matmul(cls, out_w_), out_b_));
    }

    Tensor encode_tagset(const TagSet& tags, const DropoutPlan& drop = {}) const {
        return encode_ids(tokenize_tagset(tags, vocab_, cfg_.max_len), drop);
    }

    // Plain-number embedding for inference paths that do not need the graph.
    std::vector<double> embed(const TagSet& tags) const {
        return encode_tagset(tags).data();
    }

    // Deep copy: fresh parameter tensors holding the same values, so the
    // clone can be trained without touching this encoder's weights.
    TextEncoder clone() const {
        TextEncoder out(cfg_, vocab_, 0);
        auto& dst = out.reg_.params();
        const auto& src = reg_.params();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i].tensor.data() = src[i].tensor.data();
            dst[i].lr_multiplier = src[i].lr_multiplier;
        }
        return out;
    }

    // ---- checkpointing (tensors + .meta config + .vocab token list) ----

    void save(const std::string& path) const {
        std::vector<ckpt::Entry> entries;
        for (const auto& p : reg_.params()) entries.push_back({p.name, p.tensor.shape(), p.tensor.data()});
        ckpt::save(path, entries);
        std::ofstream meta(path + ".meta", std::ios::binary);
        if (!meta) throw ContractError("cannot write " + path + ".meta");
        meta << "layers = " << cfg_.layers << "\nheads = " << cfg_.heads
             << "\nd_model = " << cfg_.d_model << "\nd_ff = " << cfg_.d_ff
             << "\nmax_len = " << cfg_.max_len << "\nemb_dim = " << cfg_.emb_dim
             << "\nmax_vocab = " << cfg_.max_vocab << "\ndropout = " << cfg_.dropout
             << "\nscale = " << cfg_.scale << "\n";
        std::ofstream vf(path + ".vocab", std::ios::binary);
        if (!vf) throw ContractError("cannot write " + path + ".vocab");
        for (std::size_t i = 0; i < vocab_.size(); ++i) vf << vocab_.token(static_cast<int>(i)) << '\n';
    }

    static TextEncoder load(const std::string& path) {
        TextEncoderConfig cfg;
        {
            std::ifstream meta(path + ".meta", std::ios::binary);
            if (!meta) throw ContractError("cannot open " + path + ".meta");
            std::string key, eq;
            double val;
            while (meta >> key >> eq >> val) {
                if (key == "layers") cfg.layers = static_cast<std::size_t>(val);
                else if (key == "heads") cfg.heads = static_cast<std::size_t>(val);
                else if (key == "d_model") cfg.d_model = static_cast<std::size_t>(val);
                else if (key == "d_ff") cfg.d_ff = static_cast<std::size_t>(val);
                else if (key == "max_len") cfg.max_len = static_cast<std::size_t>(val);
                else if (key == "emb_dim") cfg.emb_dim = static_cast<std::size_t>(val);
                else if (key == "max_vocab") cfg.max_vocab = static_cast<std::size_t>(val);
                else if (key == "dropout") cfg.dropout = val;
                else if (key == "scale") cfg.scale = val;
            }
        }
        Vocabulary vocab;
        {
            std::ifstream vf(path + ".vocab", std::ios::binary);
            if (!vf) throw ContractError("cannot open " + path + ".vocab");
            std::string line;
            std::vector<std::string> tokens;
            while (std::getline(vf, line)) {
                if (!line.empty()) tokens.push_back(line);
            }
            for (std::size_t i = 4; i < tokens.size(); ++i) vocab.add_token(tokens[i]);
        }
        TextEncoder enc(cfg, std::move(vocab), 0);
        auto tensors = ckpt::load_map(path);
        for (auto& p : enc.reg_.params()) {
            auto it = tensors.find(p.name);
            if (it == tensors.end()) throw ContractError("checkpoint missing tensor " + p.name);
            if (it->second.shape != p.tensor.shape()) {
                throw ShapeError("checkpoint tensor " + p.name + " has shape " +
                                 shape_str(it->second.shape) + ", expected " +
                                 shape_str(p.tensor.shape()));
            }
            p.tensor.data() = it->second.data;
        }
        return enc;
    }

private:
    TextEncoderConfig cfg_;
    Vocabulary vocab_;
    ParamRegistry reg_;
    Tensor token_emb_, pos_emb_;
    std::vector<EncoderBlockParams> blocks_;
    LayerNormParams final_ln_;
    Tensor out_w_, out_b_;
};

// Multiple negatives ranking loss over unit-norm rows:
// S[i][j] = s * <A[i], P[j]>, loss = -(1/B) sum_i log softmax-row(S)[i][i].
inline Tensor mnr_loss(const Tensor& anchors, const Tensor& positives, double s) {
    if (anchors.rank() != 2 || positives.rank() != 2 || anchors.shape() != positives.shape()) {
        throw ShapeError("mnr_loss: anchors " + shape_str(anchors.shape()) + " vs positives " +
                         shape_str(positives.shape()));
    }
    const std::size_t b = anchors.dim(0), d = anchors.dim(1);
    for (const Tensor* m : {&anchors, &positives}) {
        for (std::size_t i = 0; i < b; ++i) {
            double n2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double v = m->data()[i * d + j];
                n2 += v * v;
            }
            if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
                throw ContractError("mnr_loss: row " + std::to_string(i) + " is not unit-norm");
            }
        }
    }
    Tensor scores = scale(matmul_nt(anchors, positives), s);
    std::vector<std::size_t> diag(b);
    for (std::size_t i = 0; i < b; ++i) diag[i] = i;
    return nll_rows(log_softmax(scores), diag);
}

struct PretrainOptions {
    std::size_t epochs = 4;
    std::size_t batch_size = 256;
    std::size_t pairs_per_tagset = 20;
    bool rel_tag_cl = true;
    double lr = 1e-3;
};

struct PretrainLogEntry {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0.0;
};

struct PretrainResult {
    std::unique_ptr<TextEncoder> encoder;
    std::vector<PretrainLogEntry> log;
    std::vector<double> epoch_mean_loss;
};

// Contrastive pretraining: per epoch, re-pack pair batches and minimize the
// MNRL with Adam. Single-threaded and bitwise deterministic under the seed.
inline PretrainResult pretrain(const TagsetCorpus& corpus, const RelevanceConfig& rel_cfg,
                               const TextEncoderConfig& cfg, const PretrainOptions& opts,
                               std::uint64_t seed) {
    Rng master(seed);
    Vocabulary vocab = build_vocab(corpus.tagsets, cfg.max_vocab);
    PretrainResult res;
    res.encoder = std::make_unique<TextEncoder>(cfg, std::move(vocab), master.child_seed("init"));

    auto pairs = sample_positive_pairs(corpus, opts.pairs_per_tagset, opts.rel_tag_cl,
                                       master.child_seed("pairs"));
    Adam opt(res.encoder->params().params(), {.lr = opts.lr});
    Rng drop_rng(master.child_seed("dropout"));
    DropoutPlan drop(cfg.dropout, &drop_rng);

    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        auto batches =
            make_batches(pairs, rel_cfg, opts.batch_size, master.child_seed("batches", epoch));
        double epoch_sum = 0.0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& batch = batches[bi];
            std::vector<Tensor> a_rows, p_rows;
            a_rows.reserve(batch.size());
            p_rows.reserve(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) {
                a_rows.push_back(res.encoder->encode_tagset(batch.anchors[i], drop));
                p_rows.push_back(res.encoder->encode_tagset(batch.positives[i], drop));
            }
            Tensor loss = mnr_loss(concat_rows(a_rows), concat_rows(p_rows), cfg.scale);
            opt.zero_grad();
            backward(loss);
            opt.step();
            res.log.push_back({epoch, bi, loss.item()});
            epoch_sum += loss.item();
        }
        res.epoch_mean_loss.push_back(batches.empty() ? 0.0 : epoch_sum / batches.size());
    }
    return res;
}

// ---- embedding dump: "SDEM" binary + JSONL sidecar (row -> tagset) ----

inline void save_embedding_dump(const std::string& path, const std::vector<std::vector<double>>& rows,
                                const std::vector<TagSet>& tagsets) {
    if (rows.size() != tagsets.size()) throw ContractError("embedding dump: rows/tagsets mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open for writing: " + path);
    f.write("SDEM", 4);
    const std::uint32_t count = static_cast<std::uint32_t>(rows.size());
    const std::uint32_t dim = rows.empty() ? 0 : static_cast<std::uint32_t>(rows[0].size());
    auto put_u32 = [&f](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        f.write(reinterpret_cast<const char*>(b), 4);
    };
    put_u32(count);
    put_u32(dim);
    for (const auto& row : rows) {
        if (row.size() != dim) throw ContractError("embedding dump: ragged rows");
        for (double v : row) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            unsigned char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
            f.write(reinterpret_cast<const char*>(b), 8);
        }
    }
    std::ofstream side(path + ".jsonl", std::ios::binary);
    if (!side) throw ContractError("cannot open for writing: " + path + ".jsonl");
    for (const auto& t : tagsets) side << t.to_json() << '\n';
}

struct EmbeddingDump {
    std::uint32_t count = 0;
    std::uint32_t dim = 0;
    std::vector<std::vector<double>> rows;
};

inline EmbeddingDump load_embedding_dump(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ContractError("cannot open embedding dump: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "SDEM") throw ParseError("bad embedding dump magic", 0);
    auto get_u32 = [&f]() {
        unsigned char b[4];
        f.read(reinterpret_cast<char*>(b), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    };
    EmbeddingDump d;
    d.count = get_u32();
    d.dim = get_u32();
    d.rows.assign(d.count, std::vector<double>(d.dim));
    for (auto& row : d.rows) {
        for (auto& v : row) {
            unsigned char b[8];
            f.read(reinterpret_cast<char*>(b), 8);
            if (!f) throw ParseError("embedding dump truncated", 0);
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
            std::memcpy(&v, &bits, 8);
        }
    }
    return d;
}

}  // namespace sdtag
