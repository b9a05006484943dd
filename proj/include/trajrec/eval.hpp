#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "trajrec/core.hpp"
#include "trajrec/dataset_io.hpp"

namespace trajrec {

// ---------------------------------------------------------------------------
// metrics

struct Report {
    double recall = 0.0;
    double map = 0.0;
    double distance_m = 0.0;
    std::size_t n_targets = 0;

    struct Row {
        double ratio = 0.0;
        double recall = 0.0;
        double map = 0.0;
        double distance_m = 0.0;
        std::size_t n_targets = 0;
    };
    std::vector<Row> per_ratio;
};

using SlotKey = std::tuple<std::string, std::int64_t, int>; // user, day, slot

/// Ground truth of every TARGET slot, optionally restricted to one split.
inline std::map<SlotKey, LocationId> target_truth(const Dataset& ds,
                                                  std::optional<Split> split = std::nullopt) {
    std::map<SlotKey, LocationId> truth;
    for (const auto& [user, entries] : ds.users) {
        for (const auto& e : entries) {
            if (split && e.split != *split) continue;
            if (!e.mask) continue;
            for (int s = 0; s < e.traj.n_slots(); ++s) {
                if (e.mask->labels[std::size_t(s)] != SlotLabel::target) continue;
                if (!e.traj.slots[std::size_t(s)])
                    throw input_error("target_truth: TARGET slot without ground truth");
                truth[{user, e.traj.day, s}] = *e.traj.slots[std::size_t(s)];
            }
        }
    }
    return truth;
}

inline double recall(const std::vector<SlotPrediction>& preds,
                     const std::map<SlotKey, LocationId>& truth) {
    if (truth.empty()) throw input_error("recall: no TARGET slots to score");
    std::map<SlotKey, const SlotPrediction*> by_key;
    for (const auto& p : preds) by_key[{p.user, p.day, p.slot}] = &p;
    std::size_t hits = 0;
    for (const auto& [key, loc] : truth) {
        auto it = by_key.find(key);
        if (it == by_key.end() || it->second->ranking.empty())
            throw input_error("recall: missing prediction for a TARGET slot");
        if (it->second->ranking.front() == loc) ++hits;
    }
    return double(hits) / double(truth.size());
}

inline double map_metric(const std::vector<SlotPrediction>& preds,
                         const std::map<SlotKey, LocationId>& truth) {
    if (truth.empty()) throw input_error("map_metric: no TARGET slots to score");
    std::map<SlotKey, const SlotPrediction*> by_key;
    for (const auto& p : preds) by_key[{p.user, p.day, p.slot}] = &p;
    double sum = 0.0;
    for (const auto& [key, loc] : truth) {
        auto it = by_key.find(key);
        if (it == by_key.end() || it->second->ranking.empty())
            throw input_error("map_metric: missing prediction for a TARGET slot");
        const auto& ranking = it->second->ranking;
        for (std::size_t r = 0; r < ranking.size(); ++r) {
            if (ranking[r] == loc) {
                sum += 1.0 / double(r + 1);
                break;
            }
        }
    }
    return sum / double(truth.size());
}

inline double distance_metric(const std::vector<SlotPrediction>& preds,
                              const std::map<SlotKey, LocationId>& truth, const Grid& grid) {
    if (truth.empty()) throw input_error("distance_metric: no TARGET slots to score");
    std::map<SlotKey, const SlotPrediction*> by_key;
    for (const auto& p : preds) by_key[{p.user, p.day, p.slot}] = &p;
    double sum = 0.0;
    for (const auto& [key, loc] : truth) {
        auto it = by_key.find(key);
        if (it == by_key.end() || it->second->ranking.empty())
            throw input_error("distance_metric: missing prediction for a TARGET slot");
        sum += distance_meters(it->second->ranking.front(), loc, grid);
    }
    return sum / double(truth.size());
}

inline Report evaluate(const Dataset& ds, const std::vector<SlotPrediction>& preds,
                       std::optional<Split> split = std::nullopt) {
    const auto truth = target_truth(ds, split);
    Report r;
    r.n_targets = truth.size();
    r.recall = recall(preds, truth);
    r.map = map_metric(preds, truth);
    r.distance_m = distance_metric(preds, truth, ds.grid);
    return r;
}

inline void write_report(std::ostream& out, const Report& r, const HeaderMap& header = {}) {
    write_header(out, header);
    out.precision(6);
    out << std::fixed;
    out << "recall = " << r.recall << "\n";
    out << "map = " << r.map << "\n";
    out << "distance_m = " << r.distance_m << "\n";
    out << "n_targets = " << r.n_targets << "\n";
    if (!r.per_ratio.empty()) {
        out << "ratio\trecall\tmap\tdistance_m\tn_targets\n";
        for (const auto& row : r.per_ratio)
            out << row.ratio << '\t' << row.recall << '\t' << row.map << '\t' << row.distance_m
                << '\t' << row.n_targets << "\n";
    }
    if (!out) throw io_error("write_report: write failure");
}

// ---------------------------------------------------------------------------
// rule-based baselines. Each returns full rankings so MAP is well defined.

namespace detail {

inline std::vector<LocationId> cells_by_distance(LocationId center, const Grid& grid) {
    std::vector<LocationId> cells;
    cells.reserve(std::size_t(grid.n_cells()));
    for (LocationId l = 0; l < grid.n_cells(); ++l) cells.push_back(l);
    std::stable_sort(cells.begin(), cells.end(), [&](LocationId a, LocationId b) {
        const double da = distance_meters(center, a, grid);
        const double db = distance_meters(center, b, grid);
        if (da != db) return da < db;
        return a < b;
    });
    return cells;
}

} // namespace detail

/// Linear interpolation between the nearest observed slots before and after
/// each target; clamped to the nearest observation at the edges. Ranking is
/// the predicted cell followed by the rest in ascending centroid distance.
inline std::vector<SlotPrediction> baseline_linear(const DatasetEntry& entry, const Grid& grid) {
    if (!entry.mask) throw input_error("baseline_linear: entry has no mask");
    const auto& mask = entry.mask->labels;
    const auto& slots = entry.traj.slots;
    std::vector<int> observed;
    for (int i = 0; i < entry.traj.n_slots(); ++i)
        if (mask[std::size_t(i)] == SlotLabel::observed) observed.push_back(i);
    if (observed.empty()) throw input_error("baseline_linear: no observed slots");

    std::vector<SlotPrediction> out;
    for (int i = 0; i < entry.traj.n_slots(); ++i) {
        if (mask[std::size_t(i)] != SlotLabel::target) continue;
        const auto next = std::lower_bound(observed.begin(), observed.end(), i);
        LocationId predicted;
        if (next == observed.begin()) {
            predicted = *slots[std::size_t(observed.front())];
        } else if (next == observed.end()) {
            predicted = *slots[std::size_t(observed.back())];
        } else {
            const int nb = *(next - 1);
            const int na = *next;
            const auto [rb, cb] = grid.row_col(*slots[std::size_t(nb)]);
            const auto [ra, ca] = grid.row_col(*slots[std::size_t(na)]);
            const double f = double(i - nb) / double(na - nb);
            const int rr = int(std::llround(rb + (ra - rb) * f));
            const int cc = int(std::llround(cb + (ca - cb) * f));
            predicted = grid.id_of(rr, cc);
        }
        SlotPrediction p{entry.traj.user, entry.traj.day, i,
                         detail::cells_by_distance(predicted, grid)};
        out.push_back(std::move(p));
    }
    return out;
}

/// Modal historical location per slot with a recency tie-break; slots with
/// empty history fall back to the user's global modal location. Rankings
/// follow descending frequency.
inline std::vector<SlotPrediction> baseline_history(const std::vector<Trajectory>& history,
                                                    const DatasetEntry& entry) {
    if (!entry.mask) throw input_error("baseline_history: entry has no mask");
    if (history.empty()) throw input_error("baseline_history: user has no historical days");
    const int n = entry.traj.n_slots();

    struct Stat {
        std::int64_t count = 0;
        std::int64_t last_day = std::numeric_limits<std::int64_t>::min();
    };
    auto rank_of = [](const std::map<LocationId, Stat>& stats) {
        std::vector<std::pair<LocationId, Stat>> items(stats.begin(), stats.end());
        std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
            if (a.second.count != b.second.count) return a.second.count > b.second.count;
            if (a.second.last_day != b.second.last_day) return a.second.last_day > b.second.last_day;
            return a.first < b.first;
        });
        std::vector<LocationId> out;
        out.reserve(items.size());
        for (const auto& [l, st] : items) out.push_back(l);
        return out;
    };

    std::map<LocationId, Stat> global;
    std::vector<std::map<LocationId, Stat>> per_slot{std::size_t(n)};
    for (const auto& h : history) {
        if (h.n_slots() != n) throw input_error("baseline_history: slot count mismatch");
        for (int s = 0; s < n; ++s) {
            if (!h.slots[std::size_t(s)]) continue;
            auto& st = per_slot[std::size_t(s)][*h.slots[std::size_t(s)]];
            st.count += 1;
            st.last_day = std::max(st.last_day, h.day);
            auto& g = global[*h.slots[std::size_t(s)]];
            g.count += 1;
            g.last_day = std::max(g.last_day, h.day);
        }
    }
    const auto global_rank = rank_of(global);

    std::vector<SlotPrediction> out;
    for (int s = 0; s < n; ++s) {
        if (entry.mask->labels[std::size_t(s)] != SlotLabel::target) continue;
        auto ranking = per_slot[std::size_t(s)].empty() ? global_rank : rank_of(per_slot[std::size_t(s)]);
        if (ranking.empty())
            throw input_error("baseline_history: history has no observations at all");
        out.push_back(SlotPrediction{entry.traj.user, entry.traj.day, s, std::move(ranking)});
    }
    return out;
}

/// Per-user visit frequencies over the training split, with a global table
/// for users that never appear in training.
struct TopTables {
    std::map<std::string, std::vector<std::int64_t>> per_user;
    std::vector<std::int64_t> global;
    int n_cells = 0;

    std::vector<LocationId> ranking_for(const std::string& user) const {
        const std::vector<std::int64_t>* counts = nullptr;
        auto it = per_user.find(user);
        if (it != per_user.end()) counts = &it->second;
        if (!counts) counts = &global;
        std::vector<LocationId> cells;
        for (LocationId l = 0; l < n_cells; ++l)
            if ((*counts)[std::size_t(l)] > 0) cells.push_back(l);
        std::stable_sort(cells.begin(), cells.end(), [&](LocationId a, LocationId b) {
            if ((*counts)[std::size_t(a)] != (*counts)[std::size_t(b)])
                return (*counts)[std::size_t(a)] > (*counts)[std::size_t(b)];
            return a < b; // frequency tie: smaller id
        });
        return cells;
    }
};

inline TopTables build_top_tables(const Dataset& ds) {
    TopTables t;
    t.n_cells = ds.grid.n_cells();
    t.global.assign(std::size_t(t.n_cells), 0);
    for (const auto& [user, entries] : ds.users) {
        for (const auto& e : entries) {
            if (e.split != Split::train) continue;
            const Trajectory vis = visible_trajectory(e);
            auto& counts = t.per_user[user];
            if (counts.empty()) counts.assign(std::size_t(t.n_cells), 0);
            for (const auto& s : vis.slots) {
                if (!s) continue;
                counts[std::size_t(*s)] += 1;
                t.global[std::size_t(*s)] += 1;
            }
        }
    }
    // users with train entries but zero observations fall back to global
    for (auto it = t.per_user.begin(); it != t.per_user.end();) {
        bool any = false;
        for (auto c : it->second) any = any || c > 0;
        it = any ? std::next(it) : t.per_user.erase(it);
    }
    if (t.per_user.empty()) throw input_error("baseline_top: empty training set");
    return t;
}

/// Every target slot gets the user's single most frequent training-set
/// location; the ranking is the user's frequency order.
inline std::vector<SlotPrediction> baseline_top(const TopTables& tables,
                                                const DatasetEntry& entry) {
    if (!entry.mask) throw input_error("baseline_top: entry has no mask");
    const auto ranking = tables.ranking_for(entry.traj.user);
    if (ranking.empty()) throw input_error("baseline_top: no observations in the training set");
    std::vector<SlotPrediction> out;
    for (int s = 0; s < entry.traj.n_slots(); ++s) {
        if (entry.mask->labels[std::size_t(s)] != SlotLabel::target) continue;
        out.push_back(SlotPrediction{entry.traj.user, entry.traj.day, s, ranking});
    }
    return out;
}

} // namespace trajrec
