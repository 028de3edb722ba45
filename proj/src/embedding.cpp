#include "poiformer/embedding.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "poiformer/ops.hpp"

namespace poiformer {

std::size_t discretize_time(std::int64_t timestamp) {
    constexpr std::int64_t kDay = 86400;
    const std::int64_t days = timestamp / kDay;
    // 1970-01-01 was a Thursday, three days after Monday.
    const std::int64_t day_of_week = (days + 3) % 7;
    const std::int64_t hour = (timestamp % kDay) / 3600;
    return static_cast<std::size_t>(day_of_week * 24 + hour);
}

std::array<double, 2> normalize_coords(double lon, double lat, const CoordBounds& b) {
    if (!(b.lon_max > b.lon_min) || !(b.lat_max > b.lat_min)) {
        throw std::invalid_argument("normalize_coords: degenerate bounds");
    }
    const double x = (lon - b.lon_min) / (b.lon_max - b.lon_min);
    const double y = (lat - b.lat_min) / (b.lat_max - b.lat_min);
    return {std::clamp(x, 0.0, 1.0), std::clamp(y, 0.0, 1.0)};
}

CoordBounds compute_bounds(const PoiTable& pois, std::span<const Trajectory> sequences) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    CoordBounds b{inf, -inf, inf, -inf};
    for (const auto& t : sequences) {
        for (const auto& c : t.checkins) {
            const Poi& p = pois.at(pois.require_index(c.poi_id));
            b.lon_min = std::min(b.lon_min, p.lon);
            b.lon_max = std::max(b.lon_max, p.lon);
            b.lat_min = std::min(b.lat_min, p.lat);
            b.lat_max = std::max(b.lat_max, p.lat);
        }
    }
    if (b.lon_min > b.lon_max) return CoordBounds{};
    if (!(b.lon_max > b.lon_min)) {
        b.lon_min -= 0.5;
        b.lon_max += 0.5;
    }
    if (!(b.lat_max > b.lat_min)) {
        b.lat_min -= 0.5;
        b.lat_max += 0.5;
    }
    return b;
}

EncodedCheckIn encode_checkin(const CheckIn& c, const PoiTable& pois) {
    return EncodedCheckIn{pois.require_index(c.poi_id), discretize_time(c.timestamp)};
}

PoiFeatures make_poi_features(const PoiTable& pois, const CoordBounds& bounds) {
    PoiFeatures f;
    f.coords.reserve(pois.size() * 2);
    for (const auto& p : pois.pois()) {
        const auto xy = normalize_coords(p.lon, p.lat, bounds);
        f.coords.push_back(xy[0]);
        f.coords.push_back(xy[1]);
        f.category.push_back(p.category_id);
    }
    return f;
}

EmbeddingTables make_embedding_tables(ParamStore& store, std::size_t d, std::size_t num_category_ids,
                                      std::size_t cat_dim, std::size_t max_len, Rng& rng) {
    EmbeddingTables t;
    t.d = d;
    t.time_proj = store.add("emb.time_proj", init_normal({kHoursPerWeek, d}, 0.1, rng));
    t.loc_proj = store.add("emb.loc_proj", init_normal({2, d}, 1.0, rng));
    t.cat_table = store.add("emb.cat_table", init_normal({std::max<std::size_t>(1, num_category_ids), cat_dim}, 1.0, rng));
    t.cat_proj = store.add("emb.cat_proj", init_normal({cat_dim, d}, 1.0 / std::sqrt(double(cat_dim)), rng));
    t.pos_table = store.add("emb.pos_table", init_normal({max_len, d}, 0.1, rng));
    return t;
}

namespace {

Tensor poi_part(const EmbeddingTables& tables, const PoiFeatures& features,
                std::span<const std::size_t> poi_indices) {
    std::vector<double> coords;
    std::vector<std::size_t> cats;
    coords.reserve(poi_indices.size() * 2);
    cats.reserve(poi_indices.size());
    const std::size_t num_cats = tables.cat_table.rows();
    for (auto idx : poi_indices) {
        if (idx >= features.size()) throw std::out_of_range(fmt::format("poi index {} outside vocabulary", idx));
        coords.push_back(features.coords[2 * idx]);
        coords.push_back(features.coords[2 * idx + 1]);
        const std::size_t cat = features.category[idx];
        cats.push_back(cat < num_cats ? cat : 0);
    }
    Tensor xy = Tensor::from({poi_indices.size(), 2}, std::move(coords));
    Tensor location = matmul(xy, tables.loc_proj);
    Tensor category = matmul(gather_rows(tables.cat_table, cats), tables.cat_proj);
    return add(location, category);
}

}  // namespace

CheckInEmbedding embed_sequences(const EmbeddingTables& tables, const PoiFeatures& features,
                                 std::span<const EncodedCheckIn> rows,
                                 std::span<const std::size_t> lengths, PositionOrder order) {
    std::vector<std::size_t> pois, hours, positions;
    pois.reserve(rows.size());
    hours.reserve(rows.size());
    positions.reserve(rows.size());
    for (const auto& r : rows) {
        pois.push_back(r.poi);
        hours.push_back(r.hour);
    }
    std::size_t total = 0;
    for (auto n : lengths) {
        if (n > tables.pos_table.rows()) {
            throw DimensionError(fmt::format("sequence of length {} exceeds max_len {}", n,
                                             tables.pos_table.rows()));
        }
        for (std::size_t i = 0; i < n; ++i)
            positions.push_back(order == PositionOrder::from_start ? i : n - 1 - i);
        total += n;
    }
    if (total != rows.size()) throw DimensionError("embed_sequences: lengths do not cover rows");
    Tensor e_p = poi_part(tables, features, pois);
    Tensor e_rho = add(add(e_p, gather_rows(tables.time_proj, hours)),
                       gather_rows(tables.pos_table, positions));
    return {e_rho, e_p};
}

Tensor embed_pois(const EmbeddingTables& tables, const PoiFeatures& features,
                  std::span<const std::size_t> poi_indices) {
    return poi_part(tables, features, poi_indices);
}

std::size_t load_category_vectors(const std::filesystem::path& path, const PoiTable& pois,
                                  Tensor& cat_table) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
    const auto& labels = pois.category_labels();
    const std::size_t width = cat_table.cols();
    std::size_t loaded = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string label;
        if (!(fields >> label)) continue;
        std::vector<double> values;
        double v;
        while (fields >> v) values.push_back(v);
        if (values.size() != width) {
            throw std::runtime_error(fmt::format("{}:{}: expected {} values, got {}", path.string(),
                                                 line_no, width, values.size()));
        }
        auto it = std::find(labels.begin() + 1, labels.end(), label);
        if (it == labels.end()) continue;
        const auto row = static_cast<std::size_t>(it - labels.begin());
        if (row >= cat_table.rows()) continue;
        std::copy(values.begin(), values.end(), cat_table.data().begin() + static_cast<std::ptrdiff_t>(row * width));
        ++loaded;
    }
    return loaded;
}

}  // namespace poiformer
