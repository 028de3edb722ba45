#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace poiformer {

struct RankedPrediction {
    std::size_t query_id = 0;
    // Descending score, ties by ascending poi_id; may be truncated.
    std::vector<std::int64_t> ranked_poi_ids;
    std::int64_t truth_poi_id = 0;
    // 1-based position of the truth in the full (untruncated) ranking.
    std::size_t truth_rank = 0;
};

/// Ranks `scores[i]` (belonging to `poi_ids[i]`) and locates `truth`.
/// Keeps the first `keep` ids of the ranking.
RankedPrediction rank_scores(std::size_t query_id, std::span<const double> scores,
                             std::span<const std::int64_t> poi_ids, std::int64_t truth,
                             std::size_t keep);

double recall_at_k(std::span<const RankedPrediction> preds, std::size_t k);
double ndcg_at_k(std::span<const RankedPrediction> preds, std::size_t k);

struct Metrics {
    double recall_1 = 0.0;
    double recall_5 = 0.0;
    double recall_10 = 0.0;
    double ndcg_5 = 0.0;
    double ndcg_10 = 0.0;
    std::size_t num_queries = 0;
};

Metrics summarize(std::span<const RankedPrediction> preds);

}  // namespace poiformer
