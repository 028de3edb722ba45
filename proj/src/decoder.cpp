#include "poiformer/decoder.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

#include "poiformer/log.hpp"

namespace poiformer {

DecoderStack make_decoder_stack(ParamStore& store, const std::string& prefix, std::size_t d,
                                std::size_t heads, std::size_t layers, std::size_t ffn_mult, Rng& rng) {
    if (layers == 0) throw std::invalid_argument("a decoder stack needs at least one block");
    if (heads == 0 || d % heads != 0) {
        throw DimensionError(fmt::format("width {} is not divisible by {} heads", d, heads));
    }
    DecoderStack s;
    const std::size_t hidden = ffn_mult * d;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string p = fmt::format("{}.{}", prefix, l);
        DecoderBlockParams b;
        b.heads = heads;
        b.ln_self = make_layer_norm(store, p + ".ln_self", d);
        b.self_attn = make_attention(store, p + ".self_attn", d, rng);
        b.ln_cross = make_layer_norm(store, p + ".ln_cross", d);
        b.cross_attn = make_attention(store, p + ".cross_attn", d, rng);
        b.ln_ffn = make_layer_norm(store, p + ".ln_ffn", d);
        b.ffn_w1 = store.add(p + ".ffn_w1", init_normal({d, hidden}, std::sqrt(2.0 / double(d)), rng));
        b.ffn_w2 = store.add(p + ".ffn_w2", init_normal({hidden, d}, 1.0 / std::sqrt(double(hidden)), rng));
        s.blocks.push_back(std::move(b));
    }
    s.final_ln = make_layer_norm(store, prefix + ".ln_final", d);
    return s;
}

Tensor cross_attention(const Tensor& query, const Tensor& memory_keys, const Tensor& memory_values,
                       std::span<const std::size_t> memory_lengths, const LayerNormParams& ln,
                       const AttentionParams& params, std::size_t heads, const ForwardContext& ctx) {
    if (memory_keys.rows() == 0) throw std::invalid_argument("cross_attention: empty memory");
    for (auto n : memory_lengths)
        if (n == 0) throw std::invalid_argument("cross_attention: empty memory");
    const std::vector<std::size_t> single(query.rows(), 1);
    Tensor normed = apply_layer_norm(query, ln, ctx);
    return add(query, multi_head_attention(normed, memory_keys, memory_values, single, memory_lengths,
                                           params, heads, ctx));
}

Tensor decode(const Tensor& e_q, const Tensor& memory_keys, const Tensor& memory_values,
              std::span<const std::size_t> memory_lengths, const DecoderStack& stack,
              const ForwardContext& ctx) {
    if (stack.blocks.empty()) throw std::invalid_argument("decode needs at least one block");
    const std::vector<std::size_t> single(e_q.rows(), 1);
    Tensor x = e_q;
    for (const auto& b : stack.blocks) {
        Tensor normed = apply_layer_norm(x, b.ln_self, ctx);
        x = add(x, multi_head_attention(normed, normed, normed, single, single, b.self_attn, b.heads, ctx));
        x = cross_attention(x, memory_keys, memory_values, memory_lengths, b.ln_cross, b.cross_attn,
                            b.heads, ctx);
        x = add(x, feed_forward(apply_layer_norm(x, b.ln_ffn, ctx), b.ffn_w1, b.ffn_w2, ctx));
    }
    return l2_normalize_rows(apply_layer_norm(x, stack.final_ln, ctx));
}

std::vector<double> score_candidates(std::span<const double> e_hat, const Tensor& candidates) {
    if (candidates.cols() != e_hat.size()) {
        throw DimensionError(fmt::format("score_candidates: prediction width {} vs candidates {}",
                                         e_hat.size(), shape_str(candidates.shape())));
    }
    const std::size_t d = e_hat.size();
    std::vector<double> scores(candidates.rows());
    std::size_t excluded = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double* row = candidates.data().data() + i * d;
        double dot = 0.0, sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += e_hat[j] * row[j];
            sq += row[j] * row[j];
        }
        if (sq < 1e-24) {
            scores[i] = -std::numeric_limits<double>::infinity();
            ++excluded;
        } else {
            scores[i] = dot;
        }
    }
    if (excluded) log::warn("score_candidates: excluded {} zero-norm candidates", excluded);
    return scores;
}

}  // namespace poiformer
