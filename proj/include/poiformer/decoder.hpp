#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "poiformer/encoder.hpp"

namespace poiformer {

struct DecoderBlockParams {
    LayerNormParams ln_self;
    AttentionParams self_attn;
    LayerNormParams ln_cross;
    AttentionParams cross_attn;
    LayerNormParams ln_ffn;
    Tensor ffn_w1;
    Tensor ffn_w2;
    std::size_t heads = 1;
};

struct DecoderStack {
    std::vector<DecoderBlockParams> blocks;
    LayerNormParams final_ln;
};

DecoderStack make_decoder_stack(ParamStore& store, const std::string& prefix, std::size_t d,
                                std::size_t heads, std::size_t layers, std::size_t ffn_mult, Rng& rng);

/// Pre-norm cross-attention of one query row per sequence over that
/// sequence's memory rows: query + w_z * MHA(LN(query), keys, values).
/// `memory_keys` and `memory_values` are packed by `memory_lengths`.
Tensor cross_attention(const Tensor& query, const Tensor& memory_keys, const Tensor& memory_values,
                       std::span<const std::size_t> memory_lengths, const LayerNormParams& ln,
                       const AttentionParams& params, std::size_t heads, const ForwardContext& ctx);

/// Treats each row of `e_q` as a one-token sequence and runs it through the
/// decoder blocks (self-attention, cross-attention, FFN), a final layer
/// norm, and L2 normalization.
Tensor decode(const Tensor& e_q, const Tensor& memory_keys, const Tensor& memory_values,
              std::span<const std::size_t> memory_lengths, const DecoderStack& stack,
              const ForwardContext& ctx);

/// Dot products of the unit prediction with unit candidate rows. Candidates
/// with zero norm are excluded by scoring them -infinity.
std::vector<double> score_candidates(std::span<const double> e_hat, const Tensor& candidates);

}  // namespace poiformer
