#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "poiformer/data.hpp"

namespace poiformer {

/// How per-user category affinities are drawn when none are given.
enum class ProfileMode {
    random,           // peaked random distribution over all categories
    paired_disjoint,  // users 2k and 2k+1 favour disjoint halves of the categories
};

struct SyntheticSpec {
    std::size_t num_users = 50;
    std::size_t num_pois = 30;
    std::size_t num_categories = 5;
    // num_users x num_categories; generated from `profile_mode` when empty.
    std::vector<std::vector<double>> preference_profiles;
    ProfileMode profile_mode = ProfileMode::random;
    double transition_noise = 0.2;
    std::size_t seq_len = 40;
    // Successors per POI in the shared mobility kernel, equally weighted.
    std::size_t kernel_branching = 1;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SyntheticData {
    Dataset dataset;
    // successors[i]: kernel successors of vocabulary index i.
    std::vector<std::vector<std::size_t>> successors;
    std::vector<std::vector<double>> affinity;  // resolved per-user profiles
};

/// Every step follows the shared kernel from the current POI, except that
/// with probability transition_noise it instead draws a category from the
/// user's affinity and a POI of that category uniformly. Timestamps advance
/// by a uniform 1 to 8 hours. Deterministic in (spec, seed).
SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace poiformer
