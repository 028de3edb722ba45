#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poiformer/data.hpp"
#include "poiformer/decoder.hpp"
#include "poiformer/embedding.hpp"
#include "poiformer/encoder.hpp"
#include "poiformer/params.hpp"
#include "poiformer/query_generator.hpp"

namespace poiformer {

enum class Ablation {
    full,            // history encoder + query generator + contrastive loss
    no_contrastive,  // query generator kept, contrastive weight forced to 0
    encoder_only,    // mean-pooled history encoding projected to d; no decoder
};

const char* ablation_name(Ablation a);
Ablation parse_ablation(std::string_view name);

struct ModelConfig {
    std::size_t d = 32;
    std::size_t heads = 2;
    std::size_t encoder_layers = 2;
    std::size_t query_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t ffn_mult = 4;
    std::size_t max_len = 100;
    std::size_t cat_dim = 50;
    double dropout = 0.1;
    double ln_eps = 1e-5;
    bool attention_scaling = true;
    bool eq5_literal_values = false;
    bool share_with_history_encoder = false;
    bool positions_from_end = false;
    double tau_init = 1.0;
    bool learn_tau = true;
    double tau_min = 0.05;
    double tau_max = 5.0;
    Ablation ablation = Ablation::full;
    // Data-dependent, filled in from the training split.
    std::size_t num_category_ids = 1;
    CoordBounds bounds;

    void validate() const;
};

/// Packed batch of sequences ready for embedding.
struct SequenceBatch {
    std::vector<EncodedCheckIn> rows;
    std::vector<std::size_t> lengths;

    void append(std::span<const EncodedCheckIn> sequence);
    std::size_t size() const { return lengths.size(); }
};

class PoiFormer {
public:
    PoiFormer(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Binds the candidate vocabulary; coordinates are normalized with the
    /// bounds frozen in the config.
    void set_vocabulary(const PoiTable& pois);
    const PoiTable& vocabulary() const { return vocab_; }
    const PoiFeatures& features() const { return features_; }

    const EmbeddingTables& embedding() const { return embedding_; }
    const EncoderStack& history_encoder() const { return history_; }
    const std::optional<PreferenceEncoderParams>& preference_encoder() const { return preference_; }
    const std::optional<DecoderStack>& decoder() const { return decoder_; }
    const Tensor& tau() const { return tau_; }

    CheckInEmbedding embed(const SequenceBatch& batch) const;

    struct Output {
        Tensor e_hat;  // B x d, unit rows
        Tensor query;  // B x d preference queries; undefined for encoder_only
    };
    Output forward(const SequenceBatch& batch, const ForwardContext& ctx) const;

    /// Preference queries for an already embedded batch.
    Tensor preference(const Tensor& e_rho, std::span<const std::size_t> lengths,
                      const ForwardContext& ctx) const;

    /// Unit-norm e^p rows for the given vocabulary indices.
    Tensor candidate_embeddings(std::span<const std::size_t> poi_indices) const;
    /// Unit-norm e^p for the whole vocabulary.
    Tensor all_candidates() const;

    void clamp_tau();

private:
    ModelConfig config_;
    ParamStore params_;
    EmbeddingTables embedding_;
    EncoderStack history_;
    std::optional<PreferenceEncoderParams> preference_;
    std::optional<DecoderStack> decoder_;
    Tensor encoder_only_proj_;
    Tensor tau_;
    PoiTable vocab_;
    PoiFeatures features_;
};

}  // namespace poiformer
