#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sdtag/checkpoint.hpp"
#include "sdtag/errors.hpp"
#include "sdtag/frame.hpp"
#include "sdtag/geometry.hpp"
#include "sdtag/jsonw.hpp"
#include "sdtag/orf.hpp"
#include "sdtag/rng.hpp"
#include "sdtag/tensor.hpp"
#include "sdtag/transformer.hpp"

namespace sdtag {

// Fixed sin/cos positional encoding for ego-frame coordinates. Coordinates
// are normalized by the frame half-extents, so u, v land in [-1, 1] for
// in-range geometry (values outside are allowed and legal).
inline std::vector<double> posenc(double x, double y, std::size_t d_pos, const RangeSpec& range) {
    if (d_pos % 4 != 0) throw ContractError("posenc: d_pos must be divisible by 4");
    const double u = x / (range.length / 2.0);
    const double v = y / (range.width / 2.0);
    std::vector<double> out(d_pos);
    const std::size_t bands = d_pos / 4;
    for (std::size_t k = 0; k < bands; ++k) {
        const double t = kPi * std::pow(10000.0, 4.0 * static_cast<double>(k) /
                                                     static_cast<double>(d_pos));
        out[4 * k + 0] = std::sin(u * t);
        out[4 * k + 1] = std::cos(u * t);
        out[4 * k + 2] = std::sin(v * t);
        out[4 * k + 3] = std::cos(v * t);
    }
    return out;
}

enum class TokenKind { Point, PolylinePoint, Relation };

inline const char* token_kind_name(TokenKind k) {
    switch (k) {
        case TokenKind::Point: return "point";
        case TokenKind::PolylinePoint: return "polyline-point";
        case TokenKind::Relation: return "relation";
    }
    return "?";
}

struct TokenMeta {
    std::int64_t element_id = 0;
    TokenKind kind = TokenKind::Point;
    std::size_t point_index = 0;  // 0 for point/relation tokens
};

struct SdEncoderConfig {
    std::size_t d_model = 128;
    std::size_t d_ff = 256;
    std::size_t layers = 2;
    std::size_t heads = 8;
    double dropout = 0.1;
    std::size_t d_orf = 64;
    std::size_t d_pos = 32;
    std::size_t emb_dim = 144;
    RangeSpec range{60.0, 30.0};

    std::size_t raw_width() const { return d_pos + emb_dim + 2 * d_orf; }

    void validate() const {
        if (d_model % heads != 0) throw ContractError("sd encoder: heads must divide d_model");
        if (d_pos % 4 != 0) throw ContractError("sd encoder: d_pos must be divisible by 4");
    }
};

struct RawTokens {
    Tensor matrix;  // [N, d_pos + emb_dim + 2*d_orf], in the autodiff graph
    std::vector<TokenMeta> meta;
    std::size_t size() const { return meta.size(); }
};

// Builds one raw token row per point, per polyline point, and per relation
// member pair. Tag embeddings enter as [1 x emb_dim] tensors so gradients can
// flow back into the text encoder when fine-tuning.
inline RawTokens assemble_tokens(const SdFrame& frame,
                                 const std::map<std::int64_t, Tensor>& embeddings,
                                 const OrfTable& orf, const SdEncoderConfig& cfg) {
    cfg.validate();
    auto embedding_of = [&](std::int64_t id) -> const Tensor& {
        auto it = embeddings.find(id);
        if (it == embeddings.end()) {
            throw ContractError("assemble_tokens: element " + std::to_string(id) +
                                " has no tag embedding");
        }
        if (it->second.rank() != 2 || it->second.dim(0) != 1 || it->second.dim(1) != cfg.emb_dim) {
            throw ShapeError("assemble_tokens: embedding for element " + std::to_string(id) +
                             " has shape " + shape_str(it->second.shape()));
        }
        return it->second;
    };
    auto ident_segment = [&](std::int64_t a, std::int64_t b) {
        std::vector<double> seg(2 * cfg.d_orf);
        const double* ra = orf.row(a);
        const double* rb = orf.row(b);
        std::copy(ra, ra + cfg.d_orf, seg.begin());
        std::copy(rb, rb + cfg.d_orf, seg.begin() + static_cast<std::ptrdiff_t>(cfg.d_orf));
        return Tensor({1, 2 * cfg.d_orf}, std::move(seg), false);
    };
    auto posenc_row = [&](double x, double y) {
        return Tensor({1, cfg.d_pos}, posenc(x, y, cfg.d_pos, cfg.range), false);
    };

    RawTokens out;
    std::vector<Tensor> rows;
    for (const auto& e : frame.elements) {
        if (!orf.has(e.id)) {
            throw ContractError("assemble_tokens: element " + std::to_string(e.id) +
                                " has no identifier row");
        }
        if (e.kind == ElementKind::Relation) {
            const Tensor& emb = embedding_of(e.id);
            for (const auto& [a, b] : e.members) {
                rows.push_back(concat_cols({Tensor({1, cfg.d_pos}, std::vector<double>(cfg.d_pos, 0.0), false),
                                            emb, ident_segment(a, b)}));
                out.meta.push_back({e.id, TokenKind::Relation, 0});
            }
        } else {
            const Tensor& emb = embedding_of(e.id);
            Tensor ident = ident_segment(e.id, e.id);
            const TokenKind kind =
                e.kind == ElementKind::Node ? TokenKind::Point : TokenKind::PolylinePoint;
            for (std::size_t i = 0; i < e.xy.size(); ++i) {
                rows.push_back(concat_cols({posenc_row(e.xy[i].x, e.xy[i].y), emb, ident}));
                out.meta.push_back({e.id, kind, i});
            }
        }
    }
    if (rows.empty()) throw ContractError("assemble_tokens: frame produced no tokens");
    out.matrix = concat_rows(rows);
    return out;
}

// Transformer over raw SD tokens: learned projection to d_model, then L
// pre-norm self-attention blocks and a final layer norm. No positional
// indexing is added beyond token content, so the map from tokens to encoded
// tokens is permutation-equivariant.
class SdEncoder {
public:
    SdEncoder(SdEncoderConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(init_seed);
        proj_w_ = reg_.randn("sd.proj.w", {cfg_.raw_width(), cfg_.d_model}, rng);
        proj_b_ = reg_.zeros("sd.proj.b", {cfg_.d_model});
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            blocks_.push_back(make_encoder_block(reg_, "sd.block" + std::to_string(l), cfg_.d_model,
                                                 cfg_.heads, cfg_.d_ff, rng));
        }
        final_ln_ = make_layer_norm(reg_, "sd.final_ln", cfg_.d_model);
    }

    const SdEncoderConfig& config() const { return cfg_; }
    ParamRegistry& params() { return reg_; }
    const ParamRegistry& params() const { return reg_; }

    Tensor encode(const Tensor& raw_tokens, const DropoutPlan& drop = {}) const {
        if (raw_tokens.rank() != 2 || raw_tokens.dim(1) != cfg_.raw_width()) {
            throw ShapeError("encode: raw tokens have shape " + shape_str(raw_tokens.shape()) +
                             ", expected [*, " + std::to_string(cfg_.raw_width()) + "]");
        }
        Tensor x = add_bias(matmul(raw_tokens, proj_w_), proj_b_);
        for (const auto& b : blocks_) x = encoder_block(b, x, drop);
        return layer_norm(x, final_ln_.gamma, final_ln_.beta);
    }

private:
    SdEncoderConfig cfg_;
    ParamRegistry reg_;
    Tensor proj_w_, proj_b_;
    std::vector<EncoderBlockParams> blocks_;
    LayerNormParams final_ln_;
};

// Encoded-token dump: tensor container plus a JSON sidecar mapping token
// index -> (element id, kind, point index).
inline void save_encoded_tokens(const std::string& path, const Tensor& encoded,
                                const std::vector<TokenMeta>& meta) {
    if (encoded.rank() != 2 || encoded.dim(0) != meta.size()) {
        throw ContractError("save_encoded_tokens: tensor rows must match token metadata");
    }
    ckpt::save(path, {{"tokens", encoded.shape(), encoded.data()}});
    std::ofstream side(path + ".json", std::ios::binary);
    if (!side) throw ContractError("cannot open for writing: " + path + ".json");
    side << "[\n";
    for (std::size_t i = 0; i < meta.size(); ++i) {
        side << "  {\"index\":" << i << ",\"element\":" << meta[i].element_id << ",\"kind\":\""
             << token_kind_name(meta[i].kind) << "\",\"point\":" << meta[i].point_index << "}"
             << (i + 1 < meta.size() ? "," : "") << "\n";
    }
    side << "]\n";
}

}  // namespace sdtag
