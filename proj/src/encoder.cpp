#include "poiformer/encoder.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

namespace poiformer {

LayerNormParams make_layer_norm(ParamStore& store, const std::string& prefix, std::size_t d) {
    return LayerNormParams{store.add(prefix + ".gamma", Tensor::full({d}, 1.0)),
                           store.add(prefix + ".beta", Tensor::zeros({d}))};
}

AttentionParams make_attention(ParamStore& store, const std::string& prefix, std::size_t d, Rng& rng) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
    AttentionParams p;
    p.w_q = store.add(prefix + ".w_q", init_normal({d, d}, stddev, rng));
    p.w_k = store.add(prefix + ".w_k", init_normal({d, d}, stddev, rng));
    p.w_v = store.add(prefix + ".w_v", init_normal({d, d}, stddev, rng));
    p.w_z = store.add(prefix + ".w_z", init_normal({d, d}, stddev, rng));
    return p;
}

EncoderBlockParams make_encoder_block(ParamStore& store, const std::string& prefix, std::size_t d,
                                      std::size_t heads, std::size_t ffn_mult, Rng& rng) {
    if (heads == 0 || d % heads != 0) {
        throw DimensionError(fmt::format("width {} is not divisible by {} heads", d, heads));
    }
    EncoderBlockParams b;
    b.heads = heads;
    b.ln_attn = make_layer_norm(store, prefix + ".ln_attn", d);
    b.attn = make_attention(store, prefix + ".attn", d, rng);
    b.ln_ffn = make_layer_norm(store, prefix + ".ln_ffn", d);
    const std::size_t hidden = ffn_mult * d;
    b.ffn_w1 = store.add(prefix + ".ffn_w1", init_normal({d, hidden}, std::sqrt(2.0 / double(d)), rng));
    b.ffn_w2 = store.add(prefix + ".ffn_w2", init_normal({hidden, d}, 1.0 / std::sqrt(double(hidden)), rng));
    return b;
}

EncoderStack make_encoder_stack(ParamStore& store, const std::string& prefix, std::size_t d,
                                std::size_t heads, std::size_t layers, std::size_t ffn_mult, Rng& rng) {
    if (layers == 0) throw std::invalid_argument("an encoder stack needs at least one block");
    EncoderStack s;
    for (std::size_t l = 0; l < layers; ++l)
        s.blocks.push_back(make_encoder_block(store, fmt::format("{}.{}", prefix, l), d, heads, ffn_mult, rng));
    s.final_ln = make_layer_norm(store, prefix + ".ln_final", d);
    return s;
}

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& ln, const ForwardContext& ctx) {
    return layer_norm(x, ln.gamma, ln.beta, ctx.ln_eps);
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                            std::span<const std::size_t> q_lengths,
                            std::span<const std::size_t> k_lengths, const AttentionParams& p,
                            std::size_t heads, const ForwardContext& ctx) {
    const std::size_t d = queries.cols();
    if (heads == 0 || d % heads != 0) {
        throw DimensionError(fmt::format("head count {} does not divide width {}", heads, d));
    }
    const double scale = ctx.attention_scaling ? 1.0 / std::sqrt(static_cast<double>(d / heads)) : 1.0;
    Tensor mixed = attention(matmul(queries, p.w_q), matmul(keys, p.w_k), matmul(values, p.w_v),
                             q_lengths, k_lengths, heads, scale, ctx.probe);
    return matmul(mixed, p.w_z);
}

Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& w2, const ForwardContext& ctx) {
    Tensor hidden = relu(matmul(x, w1));
    if (ctx.training && ctx.dropout > 0.0) {
        if (!ctx.rng) throw std::invalid_argument("dropout in training mode needs an rng");
        hidden = dropout(hidden, ctx.dropout, *ctx.rng, true);
    }
    return matmul(hidden, w2);
}

Tensor self_attention_block(const Tensor& x, std::span<const std::size_t> lengths,
                            const EncoderBlockParams& params, const ForwardContext& ctx) {
    Tensor normed = apply_layer_norm(x, params.ln_attn, ctx);
    Tensor y = add(x, multi_head_attention(normed, normed, normed, lengths, lengths, params.attn,
                                           params.heads, ctx));
    return add(y, feed_forward(apply_layer_norm(y, params.ln_ffn, ctx), params.ffn_w1, params.ffn_w2, ctx));
}

Tensor encode_history(const Tensor& e_rho, std::span<const std::size_t> lengths,
                      const EncoderStack& stack, const ForwardContext& ctx) {
    if (stack.blocks.empty()) throw std::invalid_argument("encode_history needs at least one block");
    Tensor h = e_rho;
    for (const auto& block : stack.blocks) h = self_attention_block(h, lengths, block, ctx);
    return apply_layer_norm(h, stack.final_ln, ctx);
}

}  // namespace poiformer
