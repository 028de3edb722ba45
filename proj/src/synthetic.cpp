#include "poiformer/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "poiformer/rng.hpp"

namespace poiformer {

void SyntheticSpec::validate() const {
    if (num_users == 0 || num_pois == 0 || num_categories == 0 || seq_len == 0)
        throw std::invalid_argument("synthetic spec: counts must be positive");
    if (num_pois < num_categories)
        throw std::invalid_argument(fmt::format("synthetic spec: {} POIs cannot cover {} categories",
                                                num_pois, num_categories));
    if (!(transition_noise >= 0.0 && transition_noise <= 1.0))
        throw std::invalid_argument("synthetic spec: transition_noise outside [0, 1]");
    if (kernel_branching == 0 || kernel_branching >= num_pois)
        throw std::invalid_argument("synthetic spec: kernel_branching must be in [1, num_pois)");
    if (profile_mode == ProfileMode::paired_disjoint && num_categories < 2)
        throw std::invalid_argument("synthetic spec: paired_disjoint needs at least 2 categories");
    if (!preference_profiles.empty()) {
        if (preference_profiles.size() != num_users)
            throw std::invalid_argument("synthetic spec: one preference profile per user required");
        for (const auto& row : preference_profiles) {
            if (row.size() != num_categories)
                throw std::invalid_argument("synthetic spec: profile width must equal num_categories");
            double total = 0.0;
            for (double p : row) {
                if (!(p >= 0.0 && p <= 1.0))
                    throw std::invalid_argument("synthetic spec: affinity outside [0, 1]");
                total += p;
            }
            if (std::abs(total - 1.0) > 1e-9)
                throw std::invalid_argument("synthetic spec: affinity rows must sum to 1");
        }
    }
}

namespace {

// 2021-01-04T00:00:00Z, a Monday.
constexpr std::int64_t kEpochBase = 1609718400;

std::vector<double> peaked(std::size_t width, std::span<const std::size_t> support, Rng& rng) {
    std::vector<double> row(width, 0.0);
    double total = 0.0;
    for (auto c : support) {
        const double u = 0.05 + rng.uniform();
        row[c] = u * u * u;
        total += row[c];
    }
    for (auto& v : row) v /= total;
    return row;
}

std::size_t draw(std::span<const double> weights, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (u < acc) return i;
    }
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0.0) return i;
    return 0;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SyntheticData out;
    PoiTable& table = out.dataset.pois;

    std::vector<std::size_t> category_ids;
    for (std::size_t c = 0; c < spec.num_categories; ++c)
        category_ids.push_back(table.intern_category(fmt::format("cat{}", c)));
    std::vector<std::vector<std::size_t>> pois_by_category(spec.num_categories);
    for (std::size_t i = 0; i < spec.num_pois; ++i) {
        const std::size_t c = i % spec.num_categories;
        // Jittered ring: every POI is a vertex of the convex hull, so each one
        // is the unique maximizer of some linear score over coordinates.
        const double angle = 2.0 * M_PI * (static_cast<double>(i) + 0.5 * rng.uniform()) /
                             static_cast<double>(spec.num_pois);
        const double lon = -73.90 + 0.15 * std::cos(angle);
        const double lat = 40.75 + 0.15 * std::sin(angle);
        table.insert(Poi{static_cast<std::int64_t>(i + 1), lon, lat, category_ids[c]});
        pois_by_category[c].push_back(i);
    }
    table.finalize();

    out.successors.resize(spec.num_pois);
    for (std::size_t i = 0; i < spec.num_pois; ++i) {
        auto& succ = out.successors[i];
        while (succ.size() < spec.kernel_branching) {
            const std::size_t j = rng.index(spec.num_pois);
            if (j != i && std::find(succ.begin(), succ.end(), j) == succ.end()) succ.push_back(j);
        }
    }

    if (!spec.preference_profiles.empty()) {
        out.affinity = spec.preference_profiles;
    } else {
        std::vector<std::size_t> all(spec.num_categories);
        std::iota(all.begin(), all.end(), 0);
        const std::size_t half = (spec.num_categories + 1) / 2;
        for (std::size_t u = 0; u < spec.num_users; ++u) {
            if (spec.profile_mode == ProfileMode::random) {
                out.affinity.push_back(peaked(spec.num_categories, all, rng));
            } else {
                std::span<const std::size_t> side = u % 2 == 0
                    ? std::span<const std::size_t>(all).first(half)
                    : std::span<const std::size_t>(all).subspan(half);
                out.affinity.push_back(peaked(spec.num_categories, side, rng));
            }
        }
    }

    auto preferred_poi = [&](std::size_t user) {
        const auto& members = pois_by_category[draw(out.affinity[user], rng)];
        return members[rng.index(members.size())];
    };

    for (std::size_t u = 0; u < spec.num_users; ++u) {
        Trajectory t{static_cast<std::int64_t>(u + 1), {}};
        std::int64_t clock = kEpochBase + static_cast<std::int64_t>(rng.index(7 * 86400));
        std::size_t current = preferred_poi(u);
        for (std::size_t step = 0; step < spec.seq_len; ++step) {
            if (step > 0) {
                if (rng.uniform() < spec.transition_noise) {
                    current = preferred_poi(u);
                } else {
                    const auto& succ = out.successors[current];
                    current = succ[rng.index(succ.size())];
                }
                clock += 3600 + static_cast<std::int64_t>(rng.index(7 * 3600 + 1));
            }
            t.checkins.push_back(CheckIn{t.user_id, clock, table.at(current).poi_id});
        }
        out.dataset.trajectories.push_back(std::move(t));
    }
    return out;
}

}  // namespace poiformer
