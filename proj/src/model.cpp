#include "poiformer/model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace poiformer {

const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_contrastive: return "no_contrastive";
        case Ablation::encoder_only: return "encoder_only";
    }
    return "?";
}

Ablation parse_ablation(std::string_view name) {
    if (name == "full") return Ablation::full;
    if (name == "no_contrastive") return Ablation::no_contrastive;
    if (name == "encoder_only") return Ablation::encoder_only;
    throw std::invalid_argument(fmt::format("unknown ablation '{}'", name));
}

void ModelConfig::validate() const {
    if (d == 0 || heads == 0 || d % heads != 0)
        throw std::invalid_argument(fmt::format("d={} must be a positive multiple of heads={}", d, heads));
    if (encoder_layers == 0 || query_layers == 0 || decoder_layers == 0)
        throw std::invalid_argument("every stack needs at least one layer");
    if (ffn_mult == 0 || max_len == 0 || cat_dim == 0)
        throw std::invalid_argument("ffn_mult, max_len and cat_dim must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout outside [0, 1)");
    if (!(ln_eps > 0.0)) throw std::invalid_argument("ln_eps must be positive");
    if (!(tau_min > 0.0 && tau_min <= tau_init && tau_init <= tau_max))
        throw std::invalid_argument("tau_init must lie in [tau_min, tau_max] with tau_min > 0");
}

void SequenceBatch::append(std::span<const EncodedCheckIn> sequence) {
    if (sequence.empty()) throw std::invalid_argument("empty sequence in batch");
    rows.insert(rows.end(), sequence.begin(), sequence.end());
    lengths.push_back(sequence.size());
}

PoiFormer::PoiFormer(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const auto& c = config_;
    embedding_ = make_embedding_tables(params_, c.d, c.num_category_ids, c.cat_dim, c.max_len, rng);
    history_ = make_encoder_stack(params_, "enc", c.d, c.heads, c.encoder_layers, c.ffn_mult, rng);
    if (c.ablation == Ablation::encoder_only) {
        encoder_only_proj_ = params_.add("head.encoder_only_proj",
                                         init_normal({c.d, c.d}, 1.0 / std::sqrt(double(c.d)), rng));
    } else {
        EncoderStack pref_stack = c.share_with_history_encoder
            ? history_
            : make_encoder_stack(params_, "pref", c.d, c.heads, c.query_layers, c.ffn_mult, rng);
        preference_ = make_preference_encoder(params_, "pref", std::move(pref_stack), c.d, rng);
        decoder_ = make_decoder_stack(params_, "dec", c.d, c.heads, c.decoder_layers, c.ffn_mult, rng);
    }
    tau_ = params_.add("tau", Tensor::scalar(c.tau_init));
    tau_.set_requires_grad(c.learn_tau);
}

void PoiFormer::set_vocabulary(const PoiTable& pois) {
    vocab_ = pois;
    features_ = make_poi_features(vocab_, config_.bounds);
}

CheckInEmbedding PoiFormer::embed(const SequenceBatch& batch) const {
    return embed_sequences(embedding_, features_, batch.rows, batch.lengths,
                           config_.positions_from_end ? PositionOrder::from_end : PositionOrder::from_start);
}

Tensor PoiFormer::preference(const Tensor& e_rho, std::span<const std::size_t> lengths,
                             const ForwardContext& ctx) const {
    if (!preference_) throw std::logic_error("encoder_only model has no query generator");
    return encode_preference(e_rho, lengths, *preference_, ctx);
}

PoiFormer::Output PoiFormer::forward(const SequenceBatch& batch, const ForwardContext& ctx) const {
    const CheckInEmbedding emb = embed(batch);
    Tensor memory = encode_history(emb.e_rho, batch.lengths, history_, ctx);
    if (config_.ablation == Ablation::encoder_only) {
        Tensor pooled = segment_mean(memory, batch.lengths);
        return {l2_normalize_rows(matmul(pooled, encoder_only_proj_)), Tensor()};
    }
    Tensor query = preference(emb.e_rho, batch.lengths, ctx);
    const Tensor& values = config_.eq5_literal_values ? emb.e_rho : memory;
    Tensor e_hat = decode(query, memory, values, batch.lengths, *decoder_, ctx);
    return {e_hat, query};
}

Tensor PoiFormer::candidate_embeddings(std::span<const std::size_t> poi_indices) const {
    return l2_normalize_rows(embed_pois(embedding_, features_, poi_indices));
}

Tensor PoiFormer::all_candidates() const {
    std::vector<std::size_t> all(features_.size());
    std::iota(all.begin(), all.end(), 0);
    return candidate_embeddings(all);
}

void PoiFormer::clamp_tau() {
    auto d = tau_.data();
    d[0] = std::clamp(d[0], config_.tau_min, config_.tau_max);
}

}  // namespace poiformer
