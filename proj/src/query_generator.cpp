#include "poiformer/query_generator.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace poiformer {

void AugmentationConfig::validate(bool contrastive_on) const {
    auto ratio_ok = [](double r) { return r > 0.0 && r <= 1.0; };
    if (!(apply_prob >= 0.0 && apply_prob <= 1.0))
        throw std::invalid_argument(fmt::format("apply_prob {} outside [0, 1]", apply_prob));
    if (!ratio_ok(crop_keep_ratio) || !ratio_ok(mask_ratio) || !ratio_ok(reorder_ratio))
        throw std::invalid_argument("augmentation ratios must lie in (0, 1]");
    if (contrastive_on && enabled_methods.empty())
        throw std::invalid_argument("at least one augmentation method must be enabled");
}

const char* method_name(AugmentMethod m) {
    switch (m) {
        case AugmentMethod::crop: return "crop";
        case AugmentMethod::mask: return "mask";
        case AugmentMethod::reorder: return "reorder";
    }
    return "?";
}

AugmentMethod parse_method(std::string_view name) {
    if (name == "crop") return AugmentMethod::crop;
    if (name == "mask") return AugmentMethod::mask;
    if (name == "reorder") return AugmentMethod::reorder;
    throw std::invalid_argument(fmt::format("unknown augmentation method '{}'", name));
}

std::vector<std::size_t> sample_non_adjacent(std::size_t n, std::size_t k, Rng& rng) {
    k = std::min(k, (n + 1) / 2);
    if (k == 0) return {};
    // Sorted k-subsets b of {0..n-k} map one-to-one onto non-adjacent
    // k-subsets of {0..n-1} via a_j = b_j + j, so a uniform b is a uniform a.
    const std::size_t pool = n - k + 1;
    std::vector<std::size_t> chosen;
    chosen.reserve(k);
    for (std::size_t j = pool - k; j < pool; ++j) {
        const std::size_t t = rng.index(j + 1);
        if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) chosen.push_back(t);
        else chosen.push_back(j);
    }
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t j = 0; j < chosen.size(); ++j) chosen[j] += j;
    return chosen;
}

std::vector<CheckIn> random_crop(std::span<const CheckIn> traj, double keep_ratio, Rng& rng) {
    const std::size_t n = traj.size();
    if (n < 2) return {traj.begin(), traj.end()};
    const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(keep_ratio * double(n))));
    const std::size_t start = rng.index(n - len + 1);
    return {traj.begin() + static_cast<std::ptrdiff_t>(start),
            traj.begin() + static_cast<std::ptrdiff_t>(start + len)};
}

std::vector<CheckIn> random_mask(std::span<const CheckIn> traj, double mask_ratio, Rng& rng) {
    const std::size_t n = traj.size();
    if (n < 2) return {traj.begin(), traj.end()};
    const auto k = static_cast<std::size_t>(std::floor(mask_ratio * double(n)));
    const auto removed = sample_non_adjacent(n, k, rng);
    std::vector<CheckIn> out;
    out.reserve(n - removed.size());
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (next < removed.size() && removed[next] == i) {
            ++next;
            continue;
        }
        out.push_back(traj[i]);
    }
    return out;
}

std::vector<CheckIn> random_reorder(std::span<const CheckIn> traj, double reorder_ratio, Rng& rng) {
    const std::size_t n = traj.size();
    std::vector<CheckIn> out(traj.begin(), traj.end());
    if (n < 2) return out;
    const auto swaps = static_cast<std::size_t>(std::floor(reorder_ratio * double(n) / 2.0));
    // Pair i is (i, i+1); disjoint pairs are non-adjacent among the n-1 pair starts.
    for (auto i : sample_non_adjacent(n - 1, swaps, rng)) std::swap(out[i], out[i + 1]);
    return out;
}

std::vector<CheckIn> augment(std::span<const CheckIn> traj, const AugmentationConfig& cfg, Rng& rng) {
    if (cfg.enabled_methods.empty() || rng.uniform() >= cfg.apply_prob) return {traj.begin(), traj.end()};
    switch (cfg.enabled_methods[rng.index(cfg.enabled_methods.size())]) {
        case AugmentMethod::crop: return random_crop(traj, cfg.crop_keep_ratio, rng);
        case AugmentMethod::mask: return random_mask(traj, cfg.mask_ratio, rng);
        case AugmentMethod::reorder: return random_reorder(traj, cfg.reorder_ratio, rng);
    }
    return {traj.begin(), traj.end()};
}

PreferenceEncoderParams make_preference_encoder(ParamStore& store, const std::string& prefix,
                                                EncoderStack encoder, std::size_t d, Rng& rng) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
    PreferenceEncoderParams p;
    p.encoder = std::move(encoder);
    p.head_w1 = store.add(prefix + ".head_w1", init_normal({d, d}, std::sqrt(2.0) * stddev, rng));
    p.head_w2 = store.add(prefix + ".head_w2", init_normal({d, d}, stddev, rng));
    return p;
}

Tensor encode_preference(const Tensor& e_rho, std::span<const std::size_t> lengths,
                         const PreferenceEncoderParams& params, const ForwardContext& ctx) {
    Tensor pooled = segment_mean(encode_history(e_rho, lengths, params.encoder, ctx), lengths);
    Tensor projected = matmul(relu(matmul(pooled, params.head_w1)), params.head_w2);
    return l2_normalize_rows(projected);
}

namespace {

void require_finite(const Tensor& t, const char* what) {
    for (double v : t.data())
        if (!std::isfinite(v)) throw NumericError(fmt::format("{}: non-finite input", what));
}

// -mean_i log softmax(logits[i])[i]
Tensor diagonal_cross_entropy(const Tensor& logits) {
    std::vector<std::size_t> diag(logits.rows());
    for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = i;
    return scale(mean(take_along_rows(log_softmax(logits, 1), diag)), -1.0);
}

}  // namespace

Tensor info_nce(const Tensor& q, const Tensor& q_aug, const Tensor& tau) {
    if (q.rank() != 2 || q.shape() != q_aug.shape() || q.rows() == 0) {
        throw DimensionError(fmt::format("info_nce: view shapes {} and {} differ",
                                         shape_str(q.shape()), shape_str(q_aug.shape())));
    }
    require_finite(q, "info_nce");
    require_finite(q_aug, "info_nce");
    if (!(tau.item() > 0.0)) throw std::invalid_argument("info_nce: tau must be positive");
    Tensor logits = div(matmul(q, transpose(q_aug)), tau);
    return scale(add(diagonal_cross_entropy(logits), diagonal_cross_entropy(transpose(logits))), 0.5);
}

}  // namespace poiformer
