#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "trajrec/common.hpp"

namespace trajrec {

using LocationId = std::int32_t;

constexpr double kMetersPerDegLat = 111320.0;

/// Uniform rectangular grid over a local bounding box. Cell ids are
/// row-major: id = row * cols + col. The reserved id rows*cols stands for
/// "missing" and is never a valid cell.
struct Grid {
    int rows = 0;
    int cols = 0;
    double origin_lat = 0.0;
    double origin_lon = 0.0;
    double cell_side_m = 515.0;

    int n_cells() const { return rows * cols; }
    LocationId null_loc() const { return LocationId(rows * cols); }

    bool valid_cell(LocationId id) const { return id >= 0 && id < null_loc(); }

    std::pair<int, int> row_col(LocationId id) const {
        if (!valid_cell(id)) throw input_error("Grid: invalid location id");
        return {int(id) / cols, int(id) % cols};
    }

    LocationId id_of(int row, int col) const {
        if (row < 0 || row >= rows || col < 0 || col >= cols)
            throw input_error("Grid: row/col out of range");
        return LocationId(row * cols + col);
    }

    // centroid in the local metric frame, x east / y north, meters
    std::pair<double, double> centroid_m(LocationId id) const {
        auto [r, c] = row_col(id);
        return {(c + 0.5) * cell_side_m, (r + 0.5) * cell_side_m};
    }

    // local metric offsets of a lat/lon point relative to the grid origin
    std::pair<double, double> local_m(double lat, double lon) const {
        const double y = (lat - origin_lat) * kMetersPerDegLat;
        const double x = (lon - origin_lon) * kMetersPerDegLat *
                         std::cos(origin_lat * M_PI / 180.0);
        return {x, y};
    }
};

inline int slots_per_day(int slot_minutes) {
    if (slot_minutes <= 0 || 1440 % slot_minutes != 0)
        throw input_error("slot_minutes must divide 1440");
    return 1440 / slot_minutes;
}

/// Maps a second-of-day to its slot index, floor(ts / (60 * slot_minutes)).
inline int slot_index(int timestamp_s, int slot_minutes) {
    const int n = slots_per_day(slot_minutes);
    if (timestamp_s < 0 || timestamp_s >= 86400)
        throw input_error("slot_index: timestamp outside [0, 86400)");
    const int idx = timestamp_s / (60 * slot_minutes);
    return idx < n ? idx : n - 1;
}

/// Spatial discretisation: floor division of local metric offsets by the
/// cell side. Points outside the grid bounding box are rejected.
inline LocationId cell_of(double lat, double lon, const Grid& grid) {
    auto [x, y] = grid.local_m(lat, lon);
    const int col = int(std::floor(x / grid.cell_side_m));
    const int row = int(std::floor(y / grid.cell_side_m));
    if (col < 0 || col >= grid.cols || row < 0 || row >= grid.rows)
        throw input_error("cell_of: point outside grid bounding box");
    return grid.id_of(row, col);
}

/// Euclidean distance between cell centroids in meters.
inline double distance_meters(LocationId a, LocationId b, const Grid& grid) {
    if (!grid.valid_cell(a) || !grid.valid_cell(b))
        throw input_error("distance_meters: null or invalid location");
    auto [ax, ay] = grid.centroid_m(a);
    auto [bx, by] = grid.centroid_m(b);
    return std::hypot(ax - bx, ay - by);
}

/// One user-day sequence of optional locations over N fixed slots.
struct Trajectory {
    std::string user;
    std::int64_t day = 0;
    std::vector<std::optional<LocationId>> slots;

    int n_slots() const { return int(slots.size()); }

    int observed_count() const {
        int n = 0;
        for (const auto& s : slots)
            if (s) ++n;
        return n;
    }
};

enum class SlotLabel : char {
    observed = 'O',
    target = 'T',
    missing = 'M',
};

/// Per-slot labels partitioning a trajectory. TARGET slots keep their
/// ground truth in the trajectory for scoring but are hidden from models.
struct MaskSet {
    std::vector<SlotLabel> labels;

    int count(SlotLabel l) const {
        int n = 0;
        for (auto x : labels)
            if (x == l) ++n;
        return n;
    }
};

enum class Split : char { train = 'r', valid = 'v', test = 't' };

struct DatasetEntry {
    Trajectory traj;
    Split split = Split::train;
    std::optional<MaskSet> mask;
};

/// Grid + slotting config + per-user day-ordered trajectory lists.
struct Dataset {
    Grid grid;
    int slot_minutes = 30;
    std::map<std::string, std::vector<DatasetEntry>> users;

    int n_slots() const { return slots_per_day(slot_minutes); }

    std::size_t n_trajectories() const {
        std::size_t n = 0;
        for (const auto& [u, entries] : users) n += entries.size();
        return n;
    }
};

/// The trajectory as models may see it: TARGET slots nulled out.
inline Trajectory visible_trajectory(const DatasetEntry& e) {
    Trajectory t = e.traj;
    if (e.mask) {
        for (std::size_t i = 0; i < t.slots.size(); ++i)
            if (e.mask->labels[i] == SlotLabel::target) t.slots[i].reset();
    }
    return t;
}

} // namespace trajrec
