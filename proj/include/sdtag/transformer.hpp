#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sdtag/adam.hpp"
#include "sdtag/errors.hpp"
#include "sdtag/rng.hpp"
#include "sdtag/tensor.hpp"

namespace sdtag {

// Collects named trainable tensors; the order of registration is the Adam
// moment-buffer order, so it must be deterministic.
class ParamRegistry {
public:
    Tensor randn(const std::string& name, Shape shape, Rng& rng, double stddev = 0.02,
                 double lr_multiplier = 1.0) {
        Tensor t = Tensor::randn(std::move(shape), rng, stddev, true);
        params_.push_back({name, t, lr_multiplier});
        return t;
    }

    Tensor zeros(const std::string& name, Shape shape, double lr_multiplier = 1.0) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        params_.push_back({name, t, lr_multiplier});
        return t;
    }

    Tensor full(const std::string& name, Shape shape, double v, double lr_multiplier = 1.0) {
        Tensor t = Tensor::full(std::move(shape), v, true);
        params_.push_back({name, t, lr_multiplier});
        return t;
    }

    void adopt(const std::string& name, Tensor t, double lr_multiplier = 1.0) {
        params_.push_back({std::move(name), std::move(t), lr_multiplier});
    }

    const std::vector<NamedParam>& params() const { return params_; }
    std::vector<NamedParam>& params() { return params_; }

    Tensor find(const std::string& name) const {
        for (const auto& p : params_) {
            if (p.name == name) return p.tensor;
        }
        throw ContractError("no parameter named " + name);
    }

    void set_lr_multiplier_prefix(const std::string& prefix, double m) {
        for (auto& p : params_) {
            if (p.name.compare(0, prefix.size(), prefix) == 0) p.lr_multiplier = m;
        }
    }

private:
    std::vector<NamedParam> params_;
};

struct LayerNormParams {
    Tensor gamma, beta;
};

inline LayerNormParams make_layer_norm(ParamRegistry& reg, const std::string& name, std::size_t d) {
    return {reg.full(name + ".gamma", {d}, 1.0), reg.zeros(name + ".beta", {d})};
}

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t heads = 1;
};

inline AttentionParams make_attention(ParamRegistry& reg, const std::string& name, std::size_t d,
                                      std::size_t heads, Rng& rng) {
    if (d % heads != 0) throw ContractError("attention: heads must divide d_model");
    AttentionParams p;
    p.heads = heads;
    p.wq = reg.randn(name + ".wq", {d, d}, rng);
    p.bq = reg.zeros(name + ".bq", {d});
    p.wk = reg.randn(name + ".wk", {d, d}, rng);
    p.bk = reg.zeros(name + ".bk", {d});
    p.wv = reg.randn(name + ".wv", {d, d}, rng);
    p.bv = reg.zeros(name + ".bv", {d});
    p.wo = reg.randn(name + ".wo", {d, d}, rng);
    p.bo = reg.zeros(name + ".bo", {d});
    return p;
}

struct FeedForwardParams {
    Tensor w1, b1, w2, b2;
};

inline FeedForwardParams make_feed_forward(ParamRegistry& reg, const std::string& name,
                                           std::size_t d, std::size_t d_ff, Rng& rng) {
    FeedForwardParams p;
    p.w1 = reg.randn(name + ".w1", {d, d_ff}, rng);
    p.b1 = reg.zeros(name + ".b1", {d_ff});
    p.w2 = reg.randn(name + ".w2", {d_ff, d}, rng);
    p.b2 = reg.zeros(name + ".b2", {d});
    return p;
}

// Scaled dot-product attention; queries from `xq`, keys/values from `xkv`
// (pass the same tensor for self-attention).
inline Tensor attention(const AttentionParams& p, const Tensor& xq, const Tensor& xkv) {
    const std::size_t d = xq.shape()[1];
    const std::size_t dh = d / p.heads;
    Tensor q = add_bias(matmul(xq, p.wq), p.bq);
    Tensor k = add_bias(matmul(xkv, p.wk), p.bk);
    Tensor v = add_bias(matmul(xkv, p.wv), p.bv);
    std::vector<Tensor> heads;
    heads.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        heads.push_back(matmul(softmax(scores), vh));
    }
    Tensor cat = p.heads == 1 ? heads[0] : concat_cols(heads);
    return add_bias(matmul(cat, p.wo), p.bo);
}

inline Tensor feed_forward(const FeedForwardParams& p, const Tensor& x) {
    return add_bias(matmul(gelu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

// Supplies inverted-dropout masks during training; default-constructed plan
// disables dropout (inference / gradcheck).
class DropoutPlan {
public:
    DropoutPlan() = default;
    DropoutPlan(double rate, Rng* rng) : rate_(rate), rng_(rng) {}

    bool active() const { return rng_ != nullptr && rate_ > 0.0; }

    Tensor apply(const Tensor& x) const {
        if (!active()) return x;
        std::vector<double> m(x.numel());
        const double keep = 1.0 - rate_;
        for (auto& v : m) v = rng_->uniform01() < rate_ ? 0.0 : 1.0 / keep;
        return dropout(x, Tensor(x.shape(), std::move(m)));
    }

private:
    double rate_ = 0.0;
    Rng* rng_ = nullptr;
};

struct EncoderBlockParams {
    LayerNormParams ln1, ln2;
    AttentionParams attn;
    FeedForwardParams ff;
};

inline EncoderBlockParams make_encoder_block(ParamRegistry& reg, const std::string& name,
                                             std::size_t d, std::size_t heads, std::size_t d_ff,
                                             Rng& rng) {
    EncoderBlockParams p;
    p.ln1 = make_layer_norm(reg, name + ".ln1", d);
    p.attn = make_attention(reg, name + ".attn", d, heads, rng);
    p.ln2 = make_layer_norm(reg, name + ".ln2", d);
    p.ff = make_feed_forward(reg, name + ".ff", d, d_ff, rng);
    return p;
}

// Pre-norm block: x + Drop(Attn(LN(x))), then x + Drop(FF(LN(x))).
inline Tensor encoder_block(const EncoderBlockParams& p, Tensor x, const DropoutPlan& drop) {
    Tensor h = layer_norm(x, p.ln1.gamma, p.ln1.beta);
    x = add(x, drop.apply(attention(p.attn, h, h)));
    Tensor h2 = layer_norm(x, p.ln2.gamma, p.ln2.beta);
    x = add(x, drop.apply(feed_forward(p.ff, h2)));
    return x;
}

struct DecoderBlockParams {
    LayerNormParams ln1, ln2, ln3;
    AttentionParams self_attn, cross_attn;
    FeedForwardParams ff;
};

inline DecoderBlockParams make_decoder_block(ParamRegistry& reg, const std::string& name,
                                             std::size_t d, std::size_t heads, std::size_t d_ff,
                                             Rng& rng) {
    DecoderBlockParams p;
    p.ln1 = make_layer_norm(reg, name + ".ln1", d);
    p.self_attn = make_attention(reg, name + ".self", d, heads, rng);
    p.ln2 = make_layer_norm(reg, name + ".ln2", d);
    p.cross_attn = make_attention(reg, name + ".cross", d, heads, rng);
    p.ln3 = make_layer_norm(reg, name + ".ln3", d);
    p.ff = make_feed_forward(reg, name + ".ff", d, d_ff, rng);
    return p;
}

// Pre-norm decoder block with cross-attention to `memory` in every layer.
inline Tensor decoder_block(const DecoderBlockParams& p, Tensor x, const Tensor& memory,
                            const DropoutPlan& drop) {
    Tensor h = layer_norm(x, p.ln1.gamma, p.ln1.beta);
    x = add(x, drop.apply(attention(p.self_attn, h, h)));
    Tensor h2 = layer_norm(x, p.ln2.gamma, p.ln2.beta);
    x = add(x, drop.apply(attention(p.cross_attn, h2, memory)));
    Tensor h3 = layer_norm(x, p.ln3.gamma, p.ln3.beta);
    x = add(x, drop.apply(feed_forward(p.ff, h3)));
    return x;
}

}  // namespace sdtag
