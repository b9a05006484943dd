#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "trajrec/core.hpp"
#include "trajrec/rng.hpp"

namespace trajrec {

struct RawPoint {
    std::string user;
    std::int64_t timestamp = 0; // epoch seconds
    double lat = 0.0;
    double lon = 0.0;
};

enum class PointFormat { csv, plt };

struct ParseResult {
    std::vector<RawPoint> points;
    std::size_t malformed = 0;
};

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
    // strtod via a bounded copy; from_chars<double> is missing in some libstdc++
    if (s.empty() || s.size() > 63) return false;
    char buf[64];
    std::copy(s.begin(), s.end(), buf);
    buf[s.size()] = '\0';
    char* end = nullptr;
    out = std::strtod(buf, &end);
    return end == buf + s.size();
}

inline bool parse_i64(std::string_view s, std::int64_t& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

inline std::vector<std::string_view> split_view(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// days since 1970-01-01 for a proleptic Gregorian date
inline std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const int yoe = y - era * 400;
    const int doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const int doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return std::int64_t(era) * 146097 + doe - 719468;
}

// "2008-10-23" + "02:53:04" -> epoch seconds (no timezone shift; points are
// expected to be normalized upstream)
inline bool parse_datetime(std::string_view date, std::string_view time, std::int64_t& out) {
    auto dp = split_view(date, '-');
    auto tp = split_view(time, ':');
    if (dp.size() != 3 || tp.size() != 3) return false;
    std::int64_t y, mo, d, h, mi, s;
    if (!parse_i64(dp[0], y) || !parse_i64(dp[1], mo) || !parse_i64(dp[2], d)) return false;
    if (!parse_i64(tp[0], h) || !parse_i64(tp[1], mi) || !parse_i64(tp[2], s)) return false;
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60)
        return false;
    out = days_from_civil(int(y), int(mo), int(d)) * 86400 + h * 3600 + mi * 60 + s;
    return true;
}

} // namespace detail

/// Parses a raw point stream. csv lines are `user,epoch_seconds,lat,lon`.
/// plt is the Geolife trajectory layout: 6 header lines, then
/// `lat,lon,flag,alt,days,date,time`; the user id comes from the caller
/// since plt files carry none.
inline ParseResult parse_points(std::istream& in, PointFormat format,
                                const std::string& plt_user = "") {
    if (!in.good()) throw io_error("parse_points: unreadable stream");
    ParseResult res;
    std::string line;
    std::size_t lineno = 0;
    std::size_t considered = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (format == PointFormat::plt && lineno <= 6) continue;
        std::string_view sv = detail::trim(line);
        if (sv.empty()) continue;
        ++considered;
        auto fields = detail::split_view(sv, ',');
        RawPoint p;
        bool ok = false;
        if (format == PointFormat::csv && fields.size() == 4) {
            p.user = std::string(detail::trim(fields[0]));
            ok = !p.user.empty() &&
                 detail::parse_i64(detail::trim(fields[1]), p.timestamp) &&
                 detail::parse_double(detail::trim(fields[2]), p.lat) &&
                 detail::parse_double(detail::trim(fields[3]), p.lon);
        } else if (format == PointFormat::plt && fields.size() == 7) {
            p.user = plt_user;
            ok = detail::parse_double(detail::trim(fields[0]), p.lat) &&
                 detail::parse_double(detail::trim(fields[1]), p.lon) &&
                 detail::parse_datetime(detail::trim(fields[5]), detail::trim(fields[6]),
                                        p.timestamp);
        }
        if (ok)
            res.points.push_back(std::move(p));
        else
            ++res.malformed;
    }
    if (in.bad()) throw io_error("parse_points: read failure");
    if (considered > 0 && res.malformed * 2 > considered)
        throw format_error("parse_points: more than half the lines are malformed");
    return res;
}

struct DiscretizeResult {
    Dataset dataset;
    std::size_t dropped_outside_grid = 0;
};

/// Buckets points into user-day slot sequences. Each slot takes the modal
/// cell among its points; count ties go to the cell holding the latest
/// point in the slot.
inline DiscretizeResult discretize(const std::vector<RawPoint>& points, const Grid& grid,
                                   int slot_minutes) {
    const int n = slots_per_day(slot_minutes);
    DiscretizeResult res;
    res.dataset.grid = grid;
    res.dataset.slot_minutes = slot_minutes;

    struct CellStat {
        int count = 0;
        std::int64_t last_ts = std::numeric_limits<std::int64_t>::min();
    };
    // (user, day) -> per-slot candidate stats
    std::map<std::pair<std::string, std::int64_t>, std::vector<std::map<LocationId, CellStat>>>
        buckets;

    for (const auto& p : points) {
        LocationId cell;
        try {
            cell = cell_of(p.lat, p.lon, grid);
        } catch (const input_error&) {
            ++res.dropped_outside_grid;
            continue;
        }
        // negative epochs floor toward earlier days
        std::int64_t day = p.timestamp / 86400;
        std::int64_t sod = p.timestamp % 86400;
        if (sod < 0) {
            sod += 86400;
            day -= 1;
        }
        const int slot = slot_index(int(sod), slot_minutes);
        auto& slots = buckets[{p.user, day}];
        if (slots.empty()) slots.resize(n);
        auto& st = slots[slot][cell];
        st.count += 1;
        st.last_ts = std::max(st.last_ts, p.timestamp);
    }

    for (auto& [key, slots] : buckets) {
        Trajectory t;
        t.user = key.first;
        t.day = key.second;
        t.slots.assign(n, std::nullopt);
        for (int s = 0; s < n; ++s) {
            const auto& cands = slots[s];
            if (cands.empty()) continue;
            LocationId best = -1;
            CellStat best_stat;
            for (const auto& [cell, stat] : cands) {
                const bool better =
                    best < 0 || stat.count > best_stat.count ||
                    (stat.count == best_stat.count && stat.last_ts > best_stat.last_ts) ||
                    (stat.count == best_stat.count && stat.last_ts == best_stat.last_ts &&
                     cell > best);
                if (better) {
                    best = cell;
                    best_stat = stat;
                }
            }
            t.slots[s] = best;
        }
        res.dataset.users[t.user].push_back(DatasetEntry{std::move(t), Split::train, std::nullopt});
    }
    for (auto& [u, entries] : res.dataset.users)
        std::sort(entries.begin(), entries.end(),
                  [](const DatasetEntry& a, const DatasetEntry& b) { return a.traj.day < b.traj.day; });
    return res;
}

/// Drops trajectories with fewer than min_slots observed slots, then users
/// left with fewer than min_days trajectories. Idempotent.
inline Dataset filter_dataset(const Dataset& ds, int min_slots, int min_days) {
    if (min_slots > ds.n_slots()) throw input_error("filter_dataset: min_slots exceeds slots per day");
    Dataset out;
    out.grid = ds.grid;
    out.slot_minutes = ds.slot_minutes;
    for (const auto& [user, entries] : ds.users) {
        std::vector<DatasetEntry> kept;
        for (const auto& e : entries)
            if (e.traj.observed_count() >= min_slots) kept.push_back(e);
        if (int(kept.size()) >= min_days) out.users[user] = std::move(kept);
    }
    return out;
}

struct SplitFractions {
    double train = 0.7;
    double valid = 0.1;
    double test = 0.2;
};

/// Chronological split per user: first ceil(train*k) days to train, next
/// ceil(valid*k) to valid, rest to test. Users whose valid or test part
/// would be empty are placed train-only with a warning.
inline Dataset split_chronological(Dataset ds, const SplitFractions& f = {},
                                   std::vector<std::string>* warnings = nullptr) {
    if (std::abs(f.train + f.valid + f.test - 1.0) > 1e-9)
        throw input_error("split_chronological: fractions must sum to 1");
    for (auto& [user, entries] : ds.users) {
        std::sort(entries.begin(), entries.end(),
                  [](const DatasetEntry& a, const DatasetEntry& b) { return a.traj.day < b.traj.day; });
        const int k = int(entries.size());
        const int n_train = int(std::ceil(f.train * k));
        const int n_valid = int(std::ceil(f.valid * k));
        const int n_test = k - n_train - n_valid;
        if (n_train <= 0 || n_valid <= 0 || n_test <= 0) {
            for (auto& e : entries) e.split = Split::train;
            if (warnings)
                warnings->push_back("user " + user + " has too few days (" + std::to_string(k) +
                                    ") for a 3-way split; placed train-only");
            continue;
        }
        for (int i = 0; i < k; ++i) {
            if (i < n_train)
                entries[i].split = Split::train;
            else if (i < n_train + n_valid)
                entries[i].split = Split::valid;
            else
                entries[i].split = Split::test;
        }
    }
    return ds;
}

inline std::uint64_t mask_seed(std::uint64_t seed, const std::string& user, std::int64_t day) {
    return mix64(hash_bytes(user, seed) + mix64(std::uint64_t(day) + 0x6d61736bULL));
}

/// Marks ceil(ratio * observed) observed slots as recovery targets, sampled
/// uniformly without replacement. Implemented as a seeded permutation
/// prefix, so masks at increasing ratios nest for a fixed seed.
inline MaskSet mask_targets(const Trajectory& traj, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw input_error("mask_targets: ratio must be in (0, 1)");
    std::vector<int> observed;
    for (int i = 0; i < traj.n_slots(); ++i)
        if (traj.slots[i]) observed.push_back(i);
    if (observed.empty()) throw input_error("mask_targets: trajectory has no observed slots");

    Rng rng(mix64(seed));
    for (std::size_t i = observed.size(); i > 1; --i) {
        const std::size_t j = std::size_t(rng.below(i));
        std::swap(observed[i - 1], observed[j]);
    }
    const std::size_t n_targets = std::size_t(std::ceil(ratio * double(observed.size())));

    MaskSet mask;
    mask.labels.assign(traj.n_slots(), SlotLabel::missing);
    for (int i = 0; i < traj.n_slots(); ++i)
        if (traj.slots[i]) mask.labels[i] = SlotLabel::observed;
    for (std::size_t i = 0; i < n_targets; ++i) mask.labels[observed[i]] = SlotLabel::target;
    return mask;
}

/// Re-masks every trajectory in place at the given ratio; per-trajectory
/// seeds derive from (seed, user, day), so the draw is independent of
/// iteration order.
inline void apply_masks(Dataset& ds, double ratio, std::uint64_t seed) {
    for (auto& [user, entries] : ds.users)
        for (auto& e : entries)
            e.mask = mask_targets(e.traj, ratio, mask_seed(seed, user, e.traj.day));
}

struct SynthConfig {
    int n_users = 20;
    int n_days = 10;
    int grid_rows = 4;
    int grid_cols = 4;
    double cell_side_m = 515.0;
    int slot_minutes = 30;
    int anchors_per_user = 2; // home plus work anchors
    double noise_prob = 0.0;  // per-slot flip to a random neighbour cell
    double drop_prob = 0.0;   // per-slot chance of the observation going missing
    std::uint64_t seed = 0;
};

namespace detail {

inline LocationId random_neighbor(LocationId cell, const Grid& grid, Rng& rng) {
    auto [r, c] = grid.row_col(cell);
    std::vector<LocationId> opts;
    if (r > 0) opts.push_back(grid.id_of(r - 1, c));
    if (r + 1 < grid.rows) opts.push_back(grid.id_of(r + 1, c));
    if (c > 0) opts.push_back(grid.id_of(r, c - 1));
    if (c + 1 < grid.cols) opts.push_back(grid.id_of(r, c + 1));
    if (opts.empty()) return cell;
    return opts[rng.below(opts.size())];
}

} // namespace detail

/// Seed-deterministic synthetic mobility: each user gets fixed anchors
/// (home covers night and evening, work anchors share the 09:00-18:00
/// band), per-slot noise flips to a neighbour cell, then observation
/// drops are applied.
inline Dataset generate_synthetic(const SynthConfig& cfg) {
    if (cfg.n_users <= 0 || cfg.n_days <= 0 || cfg.grid_rows <= 0 || cfg.grid_cols <= 0)
        throw input_error("generate_synthetic: sizes must be positive");
    if (cfg.noise_prob < 0.0 || cfg.noise_prob > 1.0 || cfg.drop_prob < 0.0 || cfg.drop_prob > 1.0)
        throw input_error("generate_synthetic: probabilities must be in [0, 1]");
    if (cfg.anchors_per_user < 1 || cfg.anchors_per_user > cfg.grid_rows * cfg.grid_cols)
        throw input_error("generate_synthetic: bad anchor count");

    Dataset ds;
    ds.grid = Grid{cfg.grid_rows, cfg.grid_cols, 0.0, 0.0, cfg.cell_side_m};
    ds.slot_minutes = cfg.slot_minutes;
    const int n = ds.n_slots();
    const int work_begin = (n * 3) / 8; // 09:00 at 30-minute slots
    const int work_end = (n * 6) / 8;   // 18:00

    int width = 1;
    for (int v = cfg.n_users - 1; v >= 10; v /= 10) ++width;

    for (int u = 0; u < cfg.n_users; ++u) {
        Rng rng_user(mix64(cfg.seed + mix64(std::uint64_t(u) + 0x75736572ULL)));
        std::vector<LocationId> anchors;
        while (int(anchors.size()) < cfg.anchors_per_user) {
            const LocationId cand = LocationId(rng_user.below(ds.grid.n_cells()));
            if (std::find(anchors.begin(), anchors.end(), cand) == anchors.end())
                anchors.push_back(cand);
        }

        std::string name = std::to_string(u);
        name.insert(0, std::size_t(width) - name.size(), '0');
        name.insert(0, "u");

        auto anchor_at = [&](int slot) -> LocationId {
            if (cfg.anchors_per_user == 1 || slot < work_begin || slot >= work_end)
                return anchors[0];
            const int n_work = cfg.anchors_per_user - 1;
            const int band = (slot - work_begin) * n_work / (work_end - work_begin);
            return anchors[1 + band];
        };

        for (int day = 0; day < cfg.n_days; ++day) {
            Rng rng(mix64(cfg.seed + mix64(std::uint64_t(u) * 100003 + std::uint64_t(day) + 1)));
            Trajectory t;
            t.user = name;
            t.day = day;
            t.slots.assign(n, std::nullopt);
            for (int s = 0; s < n; ++s) {
                LocationId cell = anchor_at(s);
                if (cfg.noise_prob > 0.0 && rng.uniform() < cfg.noise_prob)
                    cell = detail::random_neighbor(cell, ds.grid, rng);
                if (cfg.drop_prob > 0.0 && rng.uniform() < cfg.drop_prob) continue;
                t.slots[s] = cell;
            }
            ds.users[name].push_back(DatasetEntry{std::move(t), Split::train, std::nullopt});
        }
    }
    return ds;
}

} // namespace trajrec
