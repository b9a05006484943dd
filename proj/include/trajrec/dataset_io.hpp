#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "trajrec/core.hpp"
#include "trajrec/ingest.hpp"

namespace trajrec {

using HeaderMap = std::map<std::string, std::string>;

// `# key = value` provenance lines accepted at the top of any text artifact
inline void write_header(std::ostream& out, const HeaderMap& header) {
    for (const auto& [k, v] : header) out << "# " << k << " = " << v << "\n";
}

inline bool parse_header_line(const std::string& line, HeaderMap& header) {
    if (line.empty() || line[0] != '#') return false;
    std::string_view sv(line);
    sv.remove_prefix(1);
    const auto eq = sv.find('=');
    if (eq != std::string_view::npos) {
        const std::string k(detail::trim(sv.substr(0, eq)));
        const std::string v(detail::trim(sv.substr(eq + 1)));
        if (!k.empty()) header[k] = v;
    }
    return true;
}

/// Canonical dataset record: `user<TAB>day<TAB>s0,s1,...,sN-1` with `-` for
/// null slots; masked datasets append a parallel {O,T,M} string.
inline void write_dataset(std::ostream& out, const Dataset& ds, const HeaderMap& header = {}) {
    write_header(out, header);
    for (const auto& [user, entries] : ds.users) {
        for (const auto& e : entries) {
            out << user << '\t' << e.traj.day << '\t';
            for (int i = 0; i < e.traj.n_slots(); ++i) {
                if (i) out << ',';
                if (e.traj.slots[i])
                    out << *e.traj.slots[i];
                else
                    out << '-';
            }
            if (e.mask) {
                out << '\t';
                for (auto l : e.mask->labels) out << char(l);
            }
            out << '\n';
        }
    }
    if (!out) throw io_error("write_dataset: write failure");
}

/// Reads the canonical format. Grid and slotting parameters are taken from
/// `# key = value` header lines when present; callers may override them
/// afterwards. Entries come back sorted by day and untagged (train).
inline Dataset read_dataset(std::istream& in, HeaderMap* header_out = nullptr) {
    if (!in.good()) throw io_error("read_dataset: unreadable stream");
    Dataset ds;
    HeaderMap header;
    std::string line;
    std::size_t lineno = 0;
    int n_slots = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (parse_header_line(line, header)) continue;
        std::string_view sv = detail::trim(line);
        if (sv.empty()) continue;
        auto fields = detail::split_view(sv, '\t');
        if (fields.size() != 3 && fields.size() != 4)
            throw format_error("read_dataset: line " + std::to_string(lineno) +
                               ": expected 3 or 4 tab-separated fields");
        Trajectory t;
        t.user = std::string(fields[0]);
        if (t.user.empty() || !detail::parse_i64(fields[1], t.day))
            throw format_error("read_dataset: line " + std::to_string(lineno) + ": bad user/day");
        auto cells = detail::split_view(fields[2], ',');
        if (n_slots < 0) n_slots = int(cells.size());
        if (int(cells.size()) != n_slots)
            throw format_error("read_dataset: line " + std::to_string(lineno) +
                               ": inconsistent slot count");
        t.slots.reserve(cells.size());
        for (auto c : cells) {
            if (c == "-") {
                t.slots.push_back(std::nullopt);
            } else {
                std::int64_t v;
                if (!detail::parse_i64(c, v) || v < 0)
                    throw format_error("read_dataset: line " + std::to_string(lineno) +
                                       ": bad location id");
                t.slots.push_back(LocationId(v));
            }
        }
        DatasetEntry entry{std::move(t), Split::train, std::nullopt};
        if (fields.size() == 4) {
            if (int(fields[3].size()) != n_slots)
                throw format_error("read_dataset: line " + std::to_string(lineno) +
                                   ": mask length mismatch");
            MaskSet mask;
            mask.labels.reserve(fields[3].size());
            for (std::size_t i = 0; i < fields[3].size(); ++i) {
                const char c = fields[3][i];
                if (c != 'O' && c != 'T' && c != 'M')
                    throw format_error("read_dataset: line " + std::to_string(lineno) +
                                       ": bad mask character");
                const auto l = SlotLabel(c);
                const bool has_value = entry.traj.slots[i].has_value();
                if ((l == SlotLabel::missing) == has_value)
                    throw format_error("read_dataset: line " + std::to_string(lineno) +
                                       ": mask label inconsistent with slot value");
                mask.labels.push_back(l);
            }
            entry.mask = std::move(mask);
        }
        ds.users[entry.traj.user].push_back(std::move(entry));
    }
    if (in.bad()) throw io_error("read_dataset: read failure");

    for (auto& [user, entries] : ds.users) {
        std::sort(entries.begin(), entries.end(), [](const DatasetEntry& a, const DatasetEntry& b) {
            return a.traj.day < b.traj.day;
        });
        for (std::size_t i = 1; i < entries.size(); ++i)
            if (entries[i].traj.day == entries[i - 1].traj.day)
                throw format_error("read_dataset: duplicate user-day record for " + user);
    }

    auto geti = [&](const char* k, int& dst) {
        auto it = header.find(k);
        if (it != header.end()) dst = std::stoi(it->second);
    };
    auto getd = [&](const char* k, double& dst) {
        auto it = header.find(k);
        if (it != header.end()) dst = std::stod(it->second);
    };
    geti("grid-rows", ds.grid.rows);
    geti("grid-cols", ds.grid.cols);
    getd("cell-side-m", ds.grid.cell_side_m);
    getd("origin-lat", ds.grid.origin_lat);
    getd("origin-lon", ds.grid.origin_lon);
    geti("slot-minutes", ds.slot_minutes);
    if (header_out) *header_out = std::move(header);
    return ds;
}

/// One ranked prediction per recovered slot.
struct SlotPrediction {
    std::string user;
    std::int64_t day = 0;
    int slot = 0;
    std::vector<LocationId> ranking; // best first
};

inline void write_predictions(std::ostream& out, const std::vector<SlotPrediction>& preds,
                              const HeaderMap& header = {}) {
    write_header(out, header);
    for (const auto& p : preds) {
        out << p.user << '\t' << p.day << '\t' << p.slot << '\t';
        for (std::size_t i = 0; i < p.ranking.size(); ++i) {
            if (i) out << ',';
            out << p.ranking[i];
        }
        out << '\n';
    }
    if (!out) throw io_error("write_predictions: write failure");
}

inline std::vector<SlotPrediction> read_predictions(std::istream& in,
                                                    HeaderMap* header_out = nullptr) {
    if (!in.good()) throw io_error("read_predictions: unreadable stream");
    std::vector<SlotPrediction> preds;
    HeaderMap header;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (parse_header_line(line, header)) continue;
        std::string_view sv = detail::trim(line);
        if (sv.empty()) continue;
        auto fields = detail::split_view(sv, '\t');
        if (fields.size() != 4)
            throw format_error("read_predictions: line " + std::to_string(lineno) +
                               ": expected 4 fields");
        SlotPrediction p;
        p.user = std::string(fields[0]);
        std::int64_t slot;
        if (p.user.empty() || !detail::parse_i64(fields[1], p.day) ||
            !detail::parse_i64(fields[2], slot) || slot < 0)
            throw format_error("read_predictions: line " + std::to_string(lineno) +
                               ": bad record");
        p.slot = int(slot);
        for (auto c : detail::split_view(fields[3], ',')) {
            std::int64_t v;
            if (!detail::parse_i64(c, v) || v < 0)
                throw format_error("read_predictions: line " + std::to_string(lineno) +
                                   ": bad ranking entry");
            p.ranking.push_back(LocationId(v));
        }
        preds.push_back(std::move(p));
    }
    if (in.bad()) throw io_error("read_predictions: read failure");
    if (header_out) *header_out = std::move(header);
    return preds;
}

} // namespace trajrec
