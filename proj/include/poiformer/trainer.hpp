#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poiformer/data.hpp"
#include "poiformer/grad_check.hpp"
#include "poiformer/metrics.hpp"
#include "poiformer/model.hpp"
#include "poiformer/query_generator.hpp"

namespace poiformer {

enum class NegativeSampling { uniform, popularity };

const char* negative_sampling_name(NegativeSampling n);
NegativeSampling parse_negative_sampling(std::string_view name);

/// `n_s` distinct vocabulary indices drawn uniformly from [0, vocab_size)
/// without `positive`. Indices follow id order, so these are ids up to the
/// table mapping. Throws std::invalid_argument when n_s >= vocab_size.
std::vector<std::size_t> sample_negatives(std::size_t vocab_size, std::size_t positive,
                                          std::size_t n_s, Rng& rng);

/// Weighted sampling without replacement (exponential keys). Zero weights
/// are never drawn.
std::vector<std::size_t> sample_negatives_weighted(std::span<const double> weights,
                                                   std::size_t positive, std::size_t n_s, Rng& rng);

/// Mean over the batch of -log softmax(e_hat_b . c / tau) at the positive.
/// `candidates` holds K = N_s + 1 rows per batch row, positive first.
Tensor matching_loss(const Tensor& e_hat, const Tensor& candidates, const Tensor& tau);

Tensor total_loss(const Tensor& matching, const Tensor& contrastive, double lambda);

struct AdamConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool decoupled = false;  // AdamW-style decay instead of an L2 gradient term
};

struct OptimizerState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

/// One bias-corrected Adam update of every parameter that requires grad.
/// A missing gradient buffer counts as zero.
void adam_step(std::span<const Tensor> params, OptimizerState& state, const AdamConfig& cfg);

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);

struct TrainConfig {
    ModelConfig model;
    AugmentationConfig augmentation;
    std::size_t epochs = 100;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    bool decoupled_wd = false;
    double grad_clip = 0.0;  // 0 disables
    double lambda = 1.0;
    std::size_t num_negatives = 100;
    NegativeSampling negative_sampling = NegativeSampling::uniform;
    std::uint64_t seed = 1;
    std::string category_vectors;  // optional pretrained vectors file
    bool freeze_category_vectors = false;

    /// lambda actually applied; forced to 0 unless the ablation is full.
    double effective_lambda() const;
    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    Metrics val;
    double wall_seconds = 0.0;
};

struct EvalResult {
    Metrics metrics;
    std::vector<RankedPrediction> predictions;
};

/// Scores every vocabulary POI for each sample and ranks them. Dropout is
/// off and no graph is built. With `dump`, writes one JSON line per query
/// holding the top `dump_top` (poi_id, score) pairs.
EvalResult evaluate(const PoiFormer& model, const DatasetSplit& split, std::span<const Sample> samples,
                    std::ostream* dump = nullptr, std::size_t dump_top = 100);

/// Model configured from the split: category count and coordinate bounds.
ModelConfig resolve_model_config(const TrainConfig& cfg, const DatasetSplit& split);

struct TrainResult {
    PoiFormer model;
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
    double best_val_recall_5 = -1.0;
};

/// Return false from the hook to stop after the current epoch.
using EpochHook = std::function<bool(const EpochRecord&, const PoiFormer&)>;

/// Trains with seeded shuffling, equal-length batches and per-item random
/// streams derived from (seed, epoch, sample). The returned model holds the
/// parameters of the epoch with the best validation Recall@5 (the last
/// epoch when there is no validation data). Throws NumericError with a
/// diagnostic when the loss stops being finite.
TrainResult train(const TrainConfig& cfg, const DatasetSplit& split, const EpochHook& hook = {});

/// Finite-difference check of the complete training loss on a tiny model
/// (d=8, one block per stack, B=2, n=5, dropout off).
GradReport tiny_model_grad_check(std::uint64_t seed);

}  // namespace poiformer
