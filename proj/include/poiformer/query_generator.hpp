#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "poiformer/data.hpp"
#include "poiformer/encoder.hpp"
#include "poiformer/rng.hpp"

namespace poiformer {

enum class AugmentMethod { crop, mask, reorder };

struct AugmentationConfig {
    double apply_prob = 0.7;
    double crop_keep_ratio = 0.7;
    double mask_ratio = 0.3;
    double reorder_ratio = 0.3;
    std::vector<AugmentMethod> enabled_methods{AugmentMethod::crop, AugmentMethod::mask,
                                               AugmentMethod::reorder};

    /// Throws std::invalid_argument when a ratio or probability is out of range.
    void validate(bool contrastive_on = true) const;
};

const char* method_name(AugmentMethod m);
AugmentMethod parse_method(std::string_view name);

/// Uniformly random k-subset of {0..n-1} with no two members adjacent,
/// returned sorted. k is clamped to the largest feasible size ceil(n/2).
std::vector<std::size_t> sample_non_adjacent(std::size_t n, std::size_t k, Rng& rng);

/// Contiguous window of max(1, floor(keep_ratio * n)) check-ins.
std::vector<CheckIn> random_crop(std::span<const CheckIn> traj, double keep_ratio, Rng& rng);
/// Removes floor(mask_ratio * n) pairwise non-adjacent check-ins.
std::vector<CheckIn> random_mask(std::span<const CheckIn> traj, double mask_ratio, Rng& rng);
/// Swaps floor(reorder_ratio * n / 2) disjoint neighbouring pairs.
std::vector<CheckIn> random_reorder(std::span<const CheckIn> traj, double reorder_ratio, Rng& rng);

/// With probability apply_prob applies one uniformly chosen enabled method.
std::vector<CheckIn> augment(std::span<const CheckIn> traj, const AugmentationConfig& cfg, Rng& rng);

struct PreferenceEncoderParams {
    EncoderStack encoder;
    Tensor head_w1;  // d x d
    Tensor head_w2;  // d x d
};

/// Builds the projection head; the encoder stack is passed in so it can be
/// either dedicated or shared with the history encoder.
PreferenceEncoderParams make_preference_encoder(ParamStore& store, const std::string& prefix,
                                                EncoderStack encoder, std::size_t d, Rng& rng);

/// Transformer encoding, mean pooling per sequence, two-layer projection
/// head with ReLU, then L2 normalization. One unit row per sequence.
Tensor encode_preference(const Tensor& e_rho, std::span<const std::size_t> lengths,
                         const PreferenceEncoderParams& params, const ForwardContext& ctx);

/// Symmetric InfoNCE: mean over the batch of alpha_i + beta_i, each being
/// half the cross-entropy of matching view i against all B views of the
/// other side. `tau` is a single-value tensor.
Tensor info_nce(const Tensor& q, const Tensor& q_aug, const Tensor& tau);

}  // namespace poiformer
