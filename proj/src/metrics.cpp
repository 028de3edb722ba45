#include "poiformer/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace poiformer {

RankedPrediction rank_scores(std::size_t query_id, std::span<const double> scores,
                             std::span<const std::int64_t> poi_ids, std::int64_t truth,
                             std::size_t keep) {
    if (scores.size() != poi_ids.size()) throw std::invalid_argument("rank_scores: size mismatch");
    auto before = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return poi_ids[a] < poi_ids[b];
    };
    std::size_t truth_index = scores.size();
    for (std::size_t i = 0; i < poi_ids.size(); ++i)
        if (poi_ids[i] == truth) truth_index = i;
    if (truth_index == scores.size()) {
        throw std::invalid_argument(fmt::format("rank_scores: truth {} not among candidates", truth));
    }
    RankedPrediction p;
    p.query_id = query_id;
    p.truth_poi_id = truth;
    p.truth_rank = 1;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (i != truth_index && before(i, truth_index)) ++p.truth_rank;

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    keep = std::min(keep, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), before);
    p.ranked_poi_ids.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) p.ranked_poi_ids.push_back(poi_ids[order[i]]);
    return p;
}

double recall_at_k(std::span<const RankedPrediction> preds, std::size_t k) {
    if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
    if (preds.empty()) throw std::invalid_argument("recall_at_k: no predictions");
    double hits = 0.0;
    for (const auto& p : preds)
        if (p.truth_rank <= k) hits += 1.0;
    return hits / static_cast<double>(preds.size());
}

double ndcg_at_k(std::span<const RankedPrediction> preds, std::size_t k) {
    if (k < 1) throw std::invalid_argument("ndcg_at_k: k must be >= 1");
    if (preds.empty()) throw std::invalid_argument("ndcg_at_k: no predictions");
    double total = 0.0;
    for (const auto& p : preds)
        if (p.truth_rank <= k) total += 1.0 / std::log2(static_cast<double>(p.truth_rank) + 1.0);
    return total / static_cast<double>(preds.size());
}

Metrics summarize(std::span<const RankedPrediction> preds) {
    Metrics m;
    m.num_queries = preds.size();
    if (preds.empty()) return m;
    m.recall_1 = recall_at_k(preds, 1);
    m.recall_5 = recall_at_k(preds, 5);
    m.recall_10 = recall_at_k(preds, 10);
    m.ndcg_5 = ndcg_at_k(preds, 5);
    m.ndcg_10 = ndcg_at_k(preds, 10);
    return m;
}

}  // namespace poiformer
