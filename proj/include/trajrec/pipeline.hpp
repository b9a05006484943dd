#pragma once

#include <string>
#include <vector>

#include "trajrec/eval.hpp"
#include "trajrec/train.hpp"

namespace trajrec {

/// Visible prior days of one user, in day order.
inline std::vector<Trajectory> history_before(const std::vector<DatasetEntry>& entries,
                                              std::int64_t day) {
    std::vector<Trajectory> h;
    for (const auto& e : entries)
        if (e.traj.day < day) h.push_back(visible_trajectory(e));
    return h;
}

inline std::uint64_t recover_seed(std::uint64_t seed, const std::string& user, std::int64_t day) {
    return mix64(hash_bytes(user, seed) + mix64(std::uint64_t(day) + 0x7265636fULL));
}

/// Runs the diffusion recovery over every masked trajectory of a split and
/// decodes each non-observed slot into a ranked location list. Seeding is
/// per trajectory, so output is independent of processing order.
inline std::vector<SlotPrediction> recover_dataset(const Dataset& ds, Model& model, Split split,
                                                   std::uint64_t seed) {
    std::vector<SlotPrediction> out;
    for (const auto& [user, entries] : ds.users) {
        for (const auto& e : entries) {
            if (e.split != split || !e.mask) continue;
            const Trajectory vis = visible_trajectory(e);
            const auto history = history_before(entries, e.traj.day);
            const Mat cond = encode(history, vis, model.encoder, model.table);
            Rng rng(recover_seed(seed, user, e.traj.day));
            const Mat x0 = sample(cond, *e.mask, model.sched, model.denoiser, rng);
            for (int s = 0; s < e.traj.n_slots(); ++s) {
                if (e.mask->labels[std::size_t(s)] == SlotLabel::observed) continue;
                auto decoded = decode_location(x0.row(s), model.table);
                SlotPrediction p;
                p.user = user;
                p.day = e.traj.day;
                p.slot = s;
                p.ranking.reserve(decoded.ranking.size());
                for (const auto& [loc, score] : decoded.ranking) p.ranking.push_back(loc);
                out.push_back(std::move(p));
            }
        }
    }
    return out;
}

enum class BaselineMethod { linear, history, top };

inline BaselineMethod baseline_from_name(const std::string& name) {
    if (name == "linear") return BaselineMethod::linear;
    if (name == "history") return BaselineMethod::history;
    if (name == "top") return BaselineMethod::top;
    throw input_error("unknown baseline '" + name + "' (expected linear|history|top)");
}

/// Rule-based recovery over the target slots of a split. History for a day
/// is the user's visible prior days, exactly as the model sees them.
inline std::vector<SlotPrediction> run_baseline(const Dataset& ds, BaselineMethod method,
                                                Split split) {
    std::vector<SlotPrediction> out;
    TopTables tables;
    if (method == BaselineMethod::top) tables = build_top_tables(ds);
    for (const auto& [user, entries] : ds.users) {
        for (const auto& e : entries) {
            if (e.split != split || !e.mask) continue;
            if (e.mask->count(SlotLabel::target) == 0) continue;
            std::vector<SlotPrediction> preds;
            switch (method) {
            case BaselineMethod::linear:
                preds = baseline_linear(e, ds.grid);
                break;
            case BaselineMethod::history:
                preds = baseline_history(history_before(entries, e.traj.day), e);
                break;
            case BaselineMethod::top:
                preds = baseline_top(tables, e);
                break;
            }
            for (auto& p : preds) out.push_back(std::move(p));
        }
    }
    return out;
}

/// Mean metric distance between consecutive slots of the recovered
/// sequences: observed slots keep their value, every other slot takes the
/// prediction's top-1. Pairs with an undecided side are skipped.
inline double mean_consecutive_displacement(const Dataset& ds,
                                            const std::vector<SlotPrediction>& preds,
                                            Split split) {
    std::map<SlotKey, LocationId> top1;
    for (const auto& p : preds)
        if (!p.ranking.empty()) top1[{p.user, p.day, p.slot}] = p.ranking.front();

    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& [user, entries] : ds.users) {
        for (const auto& e : entries) {
            if (e.split != split || !e.mask) continue;
            std::vector<std::optional<LocationId>> seq(e.traj.slots.size());
            for (int s = 0; s < e.traj.n_slots(); ++s) {
                if (e.mask->labels[std::size_t(s)] == SlotLabel::observed) {
                    seq[std::size_t(s)] = e.traj.slots[std::size_t(s)];
                } else {
                    auto it = top1.find({user, e.traj.day, s});
                    if (it != top1.end()) seq[std::size_t(s)] = it->second;
                }
            }
            for (std::size_t s = 0; s + 1 < seq.size(); ++s) {
                if (!seq[s] || !seq[s + 1]) continue;
                sum += distance_meters(*seq[s], *seq[s + 1], ds.grid);
                ++count;
            }
        }
    }
    return count == 0 ? 0.0 : sum / double(count);
}

/// The Table-4 style robustness sweep: re-mask the whole dataset at each
/// missing ratio (nested target sets per trajectory via the shared seed),
/// recover the test split and evaluate it.
struct SweepRow {
    double ratio = 0.0;
    Report report;
};

inline std::vector<SweepRow> missing_ratio_sweep(const Dataset& base, Model& model,
                                                 const std::vector<double>& ratios,
                                                 std::uint64_t seed) {
    std::vector<SweepRow> rows;
    for (double ratio : ratios) {
        Dataset ds = base;
        apply_masks(ds, ratio, seed);
        auto preds = recover_dataset(ds, model, Split::test, seed);
        SweepRow row;
        row.ratio = ratio;
        row.report = evaluate(ds, preds, Split::test);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace trajrec
