#include "poiformer/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include "poiformer/log.hpp"

namespace poiformer {

PoiTable::PoiTable() {
    category_labels_.push_back("");
    category_ids_.emplace("", 0);
}

std::size_t PoiTable::intern_category(std::string_view label) {
    auto it = category_ids_.find(std::string(label));
    if (it != category_ids_.end()) return it->second;
    const std::size_t id = category_labels_.size();
    category_labels_.emplace_back(label);
    category_ids_.emplace(std::string(label), id);
    return id;
}

bool PoiTable::insert(Poi poi) {
    if (index_.contains(poi.poi_id)) return false;
    index_.emplace(poi.poi_id, pois_.size());
    pois_.push_back(poi);
    return true;
}

void PoiTable::finalize() {
    std::sort(pois_.begin(), pois_.end(),
              [](const Poi& a, const Poi& b) { return a.poi_id < b.poi_id; });
    index_.clear();
    for (std::size_t i = 0; i < pois_.size(); ++i) index_.emplace(pois_[i].poi_id, i);
}

std::optional<std::size_t> PoiTable::index_of(std::int64_t poi_id) const {
    auto it = index_.find(poi_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::size_t PoiTable::require_index(std::int64_t poi_id) const {
    auto idx = index_of(poi_id);
    if (!idx) throw std::out_of_range(fmt::format("unknown poi id {}", poi_id));
    return *idx;
}

CheckinFormat parse_format(std::string_view name) {
    if (name == "gowalla_tsv") return CheckinFormat::gowalla_tsv;
    if (name == "foursquare_tsv") return CheckinFormat::foursquare_tsv;
    throw std::invalid_argument(fmt::format("unknown check-in format '{}'", name));
}

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("line {}: {}", line, what)), line_(line) {}

namespace {

template <typename T>
bool parse_number(std::string_view text, T& out) {
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

std::string_view trim_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

struct ParsedLine {
    CheckIn checkin;
    double lat = 0.0;
    double lon = 0.0;
    std::string_view category;
};

ParsedLine parse_line(std::string_view line, std::size_t line_no, CheckinFormat format) {
    const auto fields = split_tabs(line);
    const std::size_t min_fields = format == CheckinFormat::foursquare_tsv ? 6 : 5;
    if (fields.size() < min_fields || fields.size() > 6) {
        throw ParseError(line_no, fmt::format("expected {} or 6 tab-separated fields, got {}",
                                              min_fields, fields.size()));
    }
    ParsedLine p;
    if (!parse_number(fields[0], p.checkin.user_id)) throw ParseError(line_no, "bad user_id");
    try {
        p.checkin.timestamp = parse_timestamp(fields[1]);
    } catch (const std::exception& e) {
        throw ParseError(line_no, e.what());
    }
    if (!parse_number(fields[2], p.lat) || p.lat < -90.0 || p.lat > 90.0)
        throw ParseError(line_no, "bad latitude");
    if (!parse_number(fields[3], p.lon) || p.lon < -180.0 || p.lon > 180.0)
        throw ParseError(line_no, "bad longitude");
    if (!parse_number(fields[4], p.checkin.poi_id)) throw ParseError(line_no, "bad poi_id");
    if (fields.size() == 6) p.category = fields[5];
    return p;
}

}  // namespace

std::int64_t parse_timestamp(std::string_view text) {
    std::int64_t epoch = 0;
    if (parse_number(text, epoch)) {
        if (epoch < 0) throw std::invalid_argument("negative timestamp");
        return epoch;
    }
    // YYYY-MM-DDTHH:MM:SSZ
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
    if (text.size() != 20 || text[4] != '-' || text[7] != '-' || text[10] != 'T' ||
        text[13] != ':' || text[16] != ':' || text[19] != 'Z' ||
        !parse_number(text.substr(0, 4), y) || !parse_number(text.substr(5, 2), mo) ||
        !parse_number(text.substr(8, 2), d) || !parse_number(text.substr(11, 2), h) ||
        !parse_number(text.substr(14, 2), mi) || !parse_number(text.substr(17, 2), s)) {
        throw std::invalid_argument(fmt::format("bad timestamp '{}'", text));
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{mo}, day{d}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
        throw std::invalid_argument(fmt::format("bad timestamp '{}'", text));
    }
    const auto days = sys_days(ymd).time_since_epoch().count();
    const std::int64_t value = static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
    if (value < 0) throw std::invalid_argument("timestamp before 1970");
    return value;
}

std::string format_iso8601(std::int64_t timestamp) {
    using namespace std::chrono;
    const sys_days day{days{timestamp / 86400}};
    const year_month_day ymd{day};
    const std::int64_t rem = timestamp % 86400;
    return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}Z", static_cast<int>(ymd.year()),
                       static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                       rem / 3600, (rem % 3600) / 60, rem % 60);
}

Dataset parse_checkins(std::istream& in, CheckinFormat format) {
    Dataset data;
    std::map<std::int64_t, std::vector<CheckIn>> by_user;
    std::set<std::tuple<std::int64_t, std::int64_t, std::int64_t>> seen;
    std::string raw;
    std::size_t line_no = 0;
    std::size_t duplicates = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string_view line = trim_cr(raw);
        if (line.empty()) continue;
        ParsedLine p = parse_line(line, line_no, format);
        const auto key = std::make_tuple(p.checkin.user_id, p.checkin.timestamp, p.checkin.poi_id);
        if (!seen.insert(key).second) {
            ++duplicates;
            continue;
        }
        if (!data.pois.index_of(p.checkin.poi_id)) {
            const std::size_t cat = data.pois.intern_category(p.category);
            data.pois.insert(Poi{p.checkin.poi_id, p.lon, p.lat, cat});
        }
        by_user[p.checkin.user_id].push_back(p.checkin);
    }
    if (duplicates) log::info("dropped {} exact duplicate check-ins", duplicates);
    data.pois.finalize();
    for (auto& [user, checkins] : by_user) {
        std::stable_sort(checkins.begin(), checkins.end(),
                         [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
        data.trajectories.push_back(Trajectory{user, std::move(checkins)});
    }
    return data;
}

Dataset parse_checkin_file(const std::filesystem::path& path, CheckinFormat format) {
    std::ifstream in(path);
    if (!in) throw ParseError(0, fmt::format("cannot open '{}'", path.string()));
    return parse_checkins(in, format);
}

Dataset filter_low_frequency(Dataset data, std::size_t min_user_checkins,
                             std::size_t min_poi_visits) {
    if (min_user_checkins < 1 || min_poi_visits < 1) {
        throw std::invalid_argument("filter thresholds must be >= 1");
    }
    while (true) {
        bool changed = false;
        std::unordered_map<std::int64_t, std::size_t> visits;
        for (const auto& t : data.trajectories)
            for (const auto& c : t.checkins) ++visits[c.poi_id];
        for (auto& t : data.trajectories) {
            const auto before = t.checkins.size();
            std::erase_if(t.checkins,
                          [&](const CheckIn& c) { return visits[c.poi_id] < min_poi_visits; });
            changed |= t.checkins.size() != before;
        }
        const auto users_before = data.trajectories.size();
        std::erase_if(data.trajectories,
                      [&](const Trajectory& t) { return t.checkins.size() < min_user_checkins; });
        changed |= data.trajectories.size() != users_before;
        if (!changed) break;
    }
    std::unordered_map<std::int64_t, std::size_t> visits;
    for (const auto& t : data.trajectories)
        for (const auto& c : t.checkins) ++visits[c.poi_id];
    data.pois.retain([&](std::int64_t id) {
        auto it = visits.find(id);
        return it != visits.end() && it->second >= min_poi_visits;
    });
    return data;
}

std::vector<Trajectory> window_slice(const Trajectory& traj, std::size_t max_len) {
    if (max_len < 4) throw std::invalid_argument("window length must be >= 4");
    std::vector<Trajectory> windows;
    for (std::size_t start = 0; start < traj.checkins.size(); start += max_len) {
        const std::size_t end = std::min(traj.checkins.size(), start + max_len);
        Trajectory w{traj.user_id, {}};
        w.checkins.assign(traj.checkins.begin() + static_cast<std::ptrdiff_t>(start),
                          traj.checkins.begin() + static_cast<std::ptrdiff_t>(end));
        windows.push_back(std::move(w));
    }
    return windows;
}

std::vector<std::pair<std::size_t, std::int64_t>> expand_training_subsequences(
    const Trajectory& traj) {
    std::vector<std::pair<std::size_t, std::int64_t>> pairs;
    const std::size_t n = traj.checkins.size();
    if (n < 4) return pairs;
    for (std::size_t k = 1; k <= n - 3; ++k) pairs.emplace_back(k, traj.checkins[k].poi_id);
    return pairs;
}

DatasetSplit leave_last_out_split(std::vector<Trajectory> windows, PoiTable vocab) {
    DatasetSplit split;
    split.vocab = std::move(vocab);
    std::set<std::int64_t> users;
    for (auto& w : windows) {
        const std::size_t n = w.checkins.size();
        if (n < 4) {
            ++split.excluded;
            continue;
        }
        const std::size_t seq = split.sequences.size();
        for (auto [k, label] : expand_training_subsequences(w)) split.train.push_back({seq, k, label});
        split.val.push_back({seq, n - 2, w.checkins[n - 2].poi_id});
        split.test.push_back({seq, n - 1, w.checkins[n - 1].poi_id});
        users.insert(w.user_id);
        split.sequences.push_back(std::move(w));
    }
    split.user_count = users.size();
    if (split.excluded) log::info("excluded {} windows shorter than 4 check-ins", split.excluded);
    return split;
}

void write_checkins(std::ostream& out, std::span<const Trajectory> sequences, const PoiTable& pois) {
    bool first = true;
    for (const auto& t : sequences) {
        if (!first) out << '\n';
        first = false;
        for (const auto& c : t.checkins) {
            const Poi& p = pois.at(pois.require_index(c.poi_id));
            out << fmt::format("{}\t{}\t{}\t{}\t{}\t{}\n", c.user_id, c.timestamp, p.lat, p.lon,
                               c.poi_id, pois.category_labels()[p.category_id]);
        }
    }
}

void write_vocab(std::ostream& out, const PoiTable& pois) {
    const auto& labels = pois.category_labels();
    for (std::size_t i = 1; i < labels.size(); ++i) out << fmt::format("category\t{}\t{}\n", i, labels[i]);
    for (const auto& p : pois.pois())
        out << fmt::format("poi\t{}\t{}\t{}\t{}\n", p.poi_id, p.lat, p.lon, p.category_id);
}

PoiTable read_vocab(std::istream& in) {
    PoiTable table;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string_view line = trim_cr(raw);
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        if (f[0] == "category" && f.size() == 3) {
            std::size_t id = 0;
            if (!parse_number(f[1], id)) throw ParseError(line_no, "bad category id");
            if (table.intern_category(f[2]) != id) throw ParseError(line_no, "category ids out of order");
        } else if (f[0] == "poi" && f.size() == 5) {
            Poi p;
            if (!parse_number(f[1], p.poi_id) || !parse_number(f[2], p.lat) ||
                !parse_number(f[3], p.lon) || !parse_number(f[4], p.category_id) ||
                p.category_id >= table.num_category_ids()) {
                throw ParseError(line_no, "bad poi record");
            }
            if (!table.insert(p)) throw ParseError(line_no, "duplicate poi id");
        } else {
            throw ParseError(line_no, "unrecognized vocabulary record");
        }
    }
    table.finalize();
    return table;
}

std::vector<Trajectory> read_sequences(std::istream& in, const PoiTable& pois) {
    std::vector<Trajectory> sequences;
    Trajectory current;
    std::string raw;
    std::size_t line_no = 0;
    auto flush = [&] {
        if (!current.checkins.empty()) sequences.push_back(std::move(current));
        current = Trajectory{};
    };
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string_view line = trim_cr(raw);
        if (line.empty()) {
            flush();
            continue;
        }
        ParsedLine p = parse_line(line, line_no, CheckinFormat::gowalla_tsv);
        if (!pois.index_of(p.checkin.poi_id)) {
            throw ParseError(line_no, fmt::format("poi {} missing from vocabulary", p.checkin.poi_id));
        }
        if (!current.checkins.empty() && current.user_id != p.checkin.user_id) {
            throw ParseError(line_no, "user changes inside a sequence");
        }
        current.user_id = p.checkin.user_id;
        current.checkins.push_back(p.checkin);
    }
    flush();
    return sequences;
}

namespace {

std::vector<Trajectory> truncated(const DatasetSplit& split, std::size_t drop) {
    std::vector<Trajectory> out;
    for (const auto& s : split.sequences) {
        Trajectory t{s.user_id, {}};
        t.checkins.assign(s.checkins.begin(), s.checkins.end() - static_cast<std::ptrdiff_t>(drop));
        out.push_back(std::move(t));
    }
    return out;
}

void write_file(const std::filesystem::path& path, auto&& writer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    writer(out);
}

std::vector<Trajectory> read_file(const std::filesystem::path& path, const PoiTable& pois) {
    std::ifstream in(path);
    if (!in) throw ParseError(0, fmt::format("cannot open '{}'", path.string()));
    try {
        return read_sequences(in, pois);
    } catch (const ParseError& e) {
        throw ParseError(e.line(), fmt::format("{}: {}", path.filename().string(), e.what()));
    }
}

}  // namespace

PrepareCounts write_prepared(const std::filesystem::path& dir, const DatasetSplit& split) {
    std::filesystem::create_directories(dir);
    write_file(dir / "vocab.tsv", [&](std::ostream& o) { write_vocab(o, split.vocab); });
    const auto train = truncated(split, 2);
    const auto val = truncated(split, 1);
    write_file(dir / "train.tsv", [&](std::ostream& o) { write_checkins(o, train, split.vocab); });
    write_file(dir / "val.tsv", [&](std::ostream& o) { write_checkins(o, val, split.vocab); });
    write_file(dir / "test.tsv",
               [&](std::ostream& o) { write_checkins(o, split.sequences, split.vocab); });
    return PrepareCounts{split.user_count, split.sequences.size(), split.excluded,
                         split.train.size(), split.val.size(), split.test.size()};
}

DatasetSplit read_prepared(const std::filesystem::path& dir) {
    DatasetSplit split;
    {
        std::ifstream in(dir / "vocab.tsv");
        if (!in) throw ParseError(0, fmt::format("cannot open '{}'", (dir / "vocab.tsv").string()));
        split.vocab = read_vocab(in);
    }
    // test.tsv holds the full windows; the other two files must be their prefixes.
    split.sequences = read_file(dir / "test.tsv", split.vocab);
    const auto train = read_file(dir / "train.tsv", split.vocab);
    const auto val = read_file(dir / "val.tsv", split.vocab);
    if (train.size() != split.sequences.size() || val.size() != split.sequences.size())
        throw ParseError(0, fmt::format("'{}': train/val/test hold different numbers of windows", dir.string()));
    std::set<std::int64_t> users;
    for (std::size_t i = 0; i < split.sequences.size(); ++i) {
        const auto& full = split.sequences[i].checkins;
        const std::size_t n = full.size();
        const auto is_prefix = [&](const Trajectory& t, std::size_t len) {
            return n >= 4 && t.checkins.size() == len && std::equal(t.checkins.begin(), t.checkins.end(), full.begin());
        };
        if (!is_prefix(train[i], n - 2) || !is_prefix(val[i], n - 1))
            throw ParseError(0, fmt::format("'{}': window {} is not consistent across train/val/test", dir.string(), i));
        users.insert(split.sequences[i].user_id);
        for (std::size_t k = 1; k + 3 <= n; ++k) split.train.push_back({i, k, full[k].poi_id});
        split.val.push_back({i, n - 2, full[n - 2].poi_id});
        split.test.push_back({i, n - 1, full[n - 1].poi_id});
    }
    split.user_count = users.size();
    return split;
}

}  // namespace poiformer
