#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "poiformer/ops.hpp"
#include "poiformer/params.hpp"
#include "poiformer/tensor.hpp"

namespace poiformer {

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
};

/// Query/key/value/output projections, all d x d. Head h owns columns
/// [h * d/H, (h + 1) * d/H) of w_q, w_k and w_v.
struct AttentionParams {
    Tensor w_q, w_k, w_v, w_z;
};

struct EncoderBlockParams {
    LayerNormParams ln_attn;
    AttentionParams attn;
    LayerNormParams ln_ffn;
    Tensor ffn_w1;  // d x ffn_mult*d
    Tensor ffn_w2;  // ffn_mult*d x d
    std::size_t heads = 1;
};

struct EncoderStack {
    std::vector<EncoderBlockParams> blocks;
    LayerNormParams final_ln;
};

/// Per-call switches shared by every transformer component.
struct ForwardContext {
    bool training = false;
    double dropout = 0.0;
    Rng* rng = nullptr;  // required when training with dropout > 0
    bool attention_scaling = true;
    double ln_eps = 1e-5;
    AttentionProbe* probe = nullptr;
};

LayerNormParams make_layer_norm(ParamStore& store, const std::string& prefix, std::size_t d);
AttentionParams make_attention(ParamStore& store, const std::string& prefix, std::size_t d, Rng& rng);
EncoderBlockParams make_encoder_block(ParamStore& store, const std::string& prefix, std::size_t d,
                                      std::size_t heads, std::size_t ffn_mult, Rng& rng);
EncoderStack make_encoder_stack(ParamStore& store, const std::string& prefix, std::size_t d,
                                std::size_t heads, std::size_t layers, std::size_t ffn_mult, Rng& rng);

Tensor apply_layer_norm(const Tensor& x, const LayerNormParams& ln, const ForwardContext& ctx);

/// w_z applied to the concatenated per-head attention outputs.
Tensor multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                            std::span<const std::size_t> q_lengths,
                            std::span<const std::size_t> k_lengths, const AttentionParams& p,
                            std::size_t heads, const ForwardContext& ctx);

/// Linear -> ReLU -> Dropout -> Linear.
Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& w2, const ForwardContext& ctx);

/// Pre-norm block: y = x + MHA(LN(x)); out = y + FFN(LN(y)). Attention is
/// unmasked within each packed sequence.
Tensor self_attention_block(const Tensor& x, std::span<const std::size_t> lengths,
                            const EncoderBlockParams& params, const ForwardContext& ctx);

/// Blocks in order followed by the closing layer norm.
Tensor encode_history(const Tensor& e_rho, std::span<const std::size_t> lengths,
                      const EncoderStack& stack, const ForwardContext& ctx);

}  // namespace poiformer
