#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "poiformer/data.hpp"
#include "poiformer/params.hpp"
#include "poiformer/tensor.hpp"

namespace poiformer {

inline constexpr std::size_t kHoursPerWeek = 168;

/// Hour of the week in UTC with Monday 00:00 as index 0.
std::size_t discretize_time(std::int64_t timestamp);

struct CoordBounds {
    double lon_min = -180.0;
    double lon_max = 180.0;
    double lat_min = -90.0;
    double lat_max = 90.0;
};

/// Min-max scales (lon, lat) into [0, 1]^2, clamping values outside bounds.
std::array<double, 2> normalize_coords(double lon, double lat, const CoordBounds& bounds);

/// Bounds over the POIs visited in `sequences`. Degenerate axes are widened
/// by half a degree on each side.
CoordBounds compute_bounds(const PoiTable& pois, std::span<const Trajectory> sequences);

/// A check-in reduced to what the embedding consumes.
struct EncodedCheckIn {
    std::size_t poi = 0;   // dense vocabulary index
    std::size_t hour = 0;  // hour of week
};

EncodedCheckIn encode_checkin(const CheckIn& c, const PoiTable& pois);

/// Per-POI inputs of the location and category embeddings.
struct PoiFeatures {
    std::vector<double> coords;  // N x 2, normalized
    std::vector<std::size_t> category;
    std::size_t size() const { return category.size(); }
};

PoiFeatures make_poi_features(const PoiTable& pois, const CoordBounds& bounds);

struct EmbeddingTables {
    Tensor time_proj;  // 168 x d
    Tensor loc_proj;   // 2 x d
    Tensor cat_table;  // categories x d_c
    Tensor cat_proj;   // d_c x d
    Tensor pos_table;  // max_len x d
    std::size_t d = 0;
};

EmbeddingTables make_embedding_tables(ParamStore& store, std::size_t d, std::size_t num_category_ids,
                                      std::size_t cat_dim, std::size_t max_len, Rng& rng);

struct CheckInEmbedding {
    Tensor e_rho;  // rows x d: location + category + time + position
    Tensor e_p;    // rows x d: location + category
};

enum class PositionOrder {
    from_start,  // first check-in of each sequence is position 0
    from_end,    // most recent check-in is position 0
};

/// Embeds packed sequences; positions restart for every sequence.
CheckInEmbedding embed_sequences(const EmbeddingTables& tables, const PoiFeatures& features,
                                 std::span<const EncodedCheckIn> rows,
                                 std::span<const std::size_t> lengths,
                                 PositionOrder order = PositionOrder::from_start);

/// POI-only embeddings e^p = e^l + e^c for the given vocabulary indices.
Tensor embed_pois(const EmbeddingTables& tables, const PoiFeatures& features,
                  std::span<const std::size_t> poi_indices);

/// Loads `label v1 ... vK` lines into matching rows of the category table.
/// Returns the number of rows replaced; unknown labels are ignored.
std::size_t load_category_vectors(const std::filesystem::path& path, const PoiTable& pois,
                                  Tensor& cat_table);

}  // namespace poiformer
