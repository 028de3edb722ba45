#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace poiformer {

struct Poi {
    std::int64_t poi_id = 0;
    double lon = 0.0;
    double lat = 0.0;
    std::size_t category_id = 0;  // 0 is the reserved "unknown" category
};

struct CheckIn {
    std::int64_t user_id = 0;
    std::int64_t timestamp = 0;  // seconds since the Unix epoch, UTC
    std::int64_t poi_id = 0;

    friend bool operator==(const CheckIn&, const CheckIn&) = default;
};

struct Trajectory {
    std::int64_t user_id = 0;
    std::vector<CheckIn> checkins;
};

/// POIs sorted by ascending id, so dense index order equals id order.
class PoiTable {
public:
    PoiTable();

    /// Interns a category label; the empty label maps to id 0.
    std::size_t intern_category(std::string_view label);
    /// Adds the POI unless its id is already present. Returns false on duplicates.
    bool insert(Poi poi);
    /// Restores id order after inserts.
    void finalize();
    /// Keeps only POIs whose ids satisfy `keep`; category labels are untouched.
    template <typename Pred>
    void retain(Pred keep) {
        std::vector<Poi> kept;
        for (const auto& p : pois_)
            if (keep(p.poi_id)) kept.push_back(p);
        pois_ = std::move(kept);
        finalize();
    }

    std::size_t size() const { return pois_.size(); }
    bool empty() const { return pois_.empty(); }
    const std::vector<Poi>& pois() const { return pois_; }
    const Poi& at(std::size_t index) const { return pois_.at(index); }
    std::optional<std::size_t> index_of(std::int64_t poi_id) const;
    std::size_t require_index(std::int64_t poi_id) const;

    /// Number of category ids including the reserved 0.
    std::size_t num_category_ids() const { return category_labels_.size(); }
    const std::vector<std::string>& category_labels() const { return category_labels_; }

private:
    std::vector<Poi> pois_;
    std::unordered_map<std::int64_t, std::size_t> index_;
    std::vector<std::string> category_labels_;
    std::unordered_map<std::string, std::size_t> category_ids_;
};

struct Dataset {
    std::vector<Trajectory> trajectories;  // ordered by user_id
    PoiTable pois;
};

/// One (prefix, next POI) pair. The prefix is the first `prefix_len`
/// check-ins of `sequences[sequence]`.
struct Sample {
    std::size_t sequence = 0;
    std::size_t prefix_len = 0;
    std::int64_t label = 0;
};

struct DatasetSplit {
    std::vector<Trajectory> sequences;
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
    PoiTable vocab;
    std::size_t user_count = 0;
    std::size_t excluded = 0;  // windows shorter than 4

    std::span<const CheckIn> prefix(const Sample& s) const {
        return std::span<const CheckIn>(sequences[s.sequence].checkins).first(s.prefix_len);
    }
};

enum class CheckinFormat { gowalla_tsv, foursquare_tsv };

CheckinFormat parse_format(std::string_view name);

/// Raised for unreadable or malformed check-in input; carries the 1-based line.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Epoch seconds or `YYYY-MM-DDTHH:MM:SSZ`.
std::int64_t parse_timestamp(std::string_view text);
std::string format_iso8601(std::int64_t timestamp);

Dataset parse_checkins(std::istream& in, CheckinFormat format);
Dataset parse_checkin_file(const std::filesystem::path& path, CheckinFormat format);

/// Repeatedly drops users with fewer than `min_user_checkins` check-ins and
/// POIs with fewer than `min_poi_visits` visits until neither rule removes
/// anything.
Dataset filter_low_frequency(Dataset data, std::size_t min_user_checkins,
                             std::size_t min_poi_visits);

/// Consecutive non-overlapping windows of at most `max_len` check-ins.
std::vector<Trajectory> window_slice(const Trajectory& traj, std::size_t max_len = 100);

/// Pairs (first k check-ins, POI of check-in k+1) for k = 1..n-3.
std::vector<std::pair<std::size_t, std::int64_t>> expand_training_subsequences(
    const Trajectory& traj);

/// Test label is the last check-in, validation label the one before it, and
/// training pairs come from expand_training_subsequences. Windows shorter
/// than 4 are excluded and counted.
DatasetSplit leave_last_out_split(std::vector<Trajectory> windows, PoiTable vocab);

/// Writes check-ins in the tab-separated interchange format. Sequences are
/// separated by a blank line.
void write_checkins(std::ostream& out, std::span<const Trajectory> sequences,
                    const PoiTable& pois);
void write_vocab(std::ostream& out, const PoiTable& pois);
PoiTable read_vocab(std::istream& in);
/// Reads blank-line separated sequences as written by write_checkins.
std::vector<Trajectory> read_sequences(std::istream& in, const PoiTable& pois);

struct PrepareCounts {
    std::size_t users = 0;
    std::size_t windows = 0;
    std::size_t excluded = 0;
    std::size_t train_pairs = 0;
    std::size_t val_pairs = 0;
    std::size_t test_pairs = 0;
};

/// Prepared data directory: vocab.tsv plus train.tsv / val.tsv / test.tsv.
/// train.tsv holds each window truncated to n-2 check-ins (its prefixes are
/// the n-3 training pairs), val.tsv truncated to n-1, test.tsv the full window.
PrepareCounts write_prepared(const std::filesystem::path& dir, const DatasetSplit& split);
DatasetSplit read_prepared(const std::filesystem::path& dir);

}  // namespace poiformer
