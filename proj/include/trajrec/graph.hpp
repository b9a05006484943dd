#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "trajrec/core.hpp"
#include "trajrec/rng.hpp"

namespace trajrec {

/// Undirected location-transition graph. Edge weights count adjacent-slot
/// transitions between distinct locations across all training trajectories.
class GroupTendencyGraph {
public:
    void add_transition(LocationId a, LocationId b, std::int64_t w = 1) {
        if (a == b) throw input_error("GroupTendencyGraph: self-loops are not allowed");
        if (w <= 0) throw input_error("GroupTendencyGraph: weights must be positive");
        edges_[ordered(a, b)] += w;
        degree_[a] += w;
        degree_[b] += w;
    }

    // stored weight, 0 when absent; both endpoints must be known vertices
    std::int64_t weight(LocationId a, LocationId b) const {
        if (!has_vertex(a) || !has_vertex(b))
            throw input_error("GroupTendencyGraph: unknown vertex");
        if (a == b) return 0;
        auto it = edges_.find(ordered(a, b));
        return it == edges_.end() ? 0 : it->second;
    }

    bool has_vertex(LocationId v) const { return degree_.count(v) != 0; }

    std::vector<LocationId> vertices() const {
        std::vector<LocationId> vs;
        vs.reserve(degree_.size());
        for (const auto& [v, d] : degree_) vs.push_back(v);
        return vs;
    }

    // weighted degree, used by the negative-sampling distribution
    std::int64_t degree(LocationId v) const {
        auto it = degree_.find(v);
        return it == degree_.end() ? 0 : it->second;
    }

    const std::map<std::pair<LocationId, LocationId>, std::int64_t>& edges() const {
        return edges_;
    }

    std::size_t n_edges() const { return edges_.size(); }
    std::size_t n_vertices() const { return degree_.size(); }

    std::int64_t total_weight() const {
        std::int64_t t = 0;
        for (const auto& [e, w] : edges_) t += w;
        return t;
    }

    bool empty() const { return edges_.empty(); }

private:
    static std::pair<LocationId, LocationId> ordered(LocationId a, LocationId b) {
        return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
    }

    std::map<std::pair<LocationId, LocationId>, std::int64_t> edges_;
    std::map<LocationId, std::int64_t> degree_;
};

/// Counts every adjacent pair of observed slots with distinct locations.
/// A null between two observations breaks adjacency; equal-location pairs
/// contribute nothing.
inline GroupTendencyGraph build_group_graph(const std::vector<Trajectory>& trajectories) {
    GroupTendencyGraph g;
    bool any_pair = false;
    for (const auto& t : trajectories) {
        for (int i = 0; i + 1 < t.n_slots(); ++i) {
            const auto& a = t.slots[i];
            const auto& b = t.slots[i + 1];
            if (!a || !b) continue;
            any_pair = true;
            if (*a != *b) g.add_transition(*a, *b);
        }
    }
    if (trajectories.empty() || !any_pair)
        throw input_error("build_group_graph: need at least one trajectory with two adjacent observations");
    return g;
}

inline std::int64_t first_order_proximity(const GroupTendencyGraph& g, LocationId u, LocationId v) {
    return g.weight(u, v);
}

/// TSV serialisation, `u<TAB>v<TAB>w` with u < v, sorted.
inline void write_graph(std::ostream& out, const GroupTendencyGraph& g) {
    for (const auto& [e, w] : g.edges()) out << e.first << '\t' << e.second << '\t' << w << '\n';
    if (!out) throw io_error("write_graph: write failure");
}

inline GroupTendencyGraph read_graph(std::istream& in) {
    if (!in.good()) throw io_error("read_graph: unreadable stream");
    GroupTendencyGraph g;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::int64_t u, v, w;
        std::istringstream ss(line);
        if (!(ss >> u >> v >> w) || u < 0 || v < 0 || u == v || w <= 0)
            throw format_error("read_graph: line " + std::to_string(lineno) + ": bad edge");
        g.add_transition(LocationId(u), LocationId(v), w);
    }
    if (in.bad()) throw io_error("read_graph: read failure");
    return g;
}

/// O(1) weighted edge sampling over the graph via an alias table.
class EdgeSampler {
public:
    explicit EdgeSampler(const GroupTendencyGraph& g) : table_(weights(g)) {
        edges_.reserve(g.n_edges());
        for (const auto& [e, w] : g.edges()) edges_.push_back(e);
    }

    std::pair<LocationId, LocationId> sample(Rng& rng) const {
        return edges_[table_.sample(rng)];
    }

private:
    static std::vector<double> weights(const GroupTendencyGraph& g) {
        if (g.empty()) throw input_error("EdgeSampler: empty graph");
        std::vector<double> w;
        w.reserve(g.n_edges());
        for (const auto& [e, wt] : g.edges()) w.push_back(double(wt));
        return w;
    }

    std::vector<std::pair<LocationId, LocationId>> edges_;
    AliasTable table_;
};

inline std::pair<LocationId, LocationId> sample_edge(const EdgeSampler& sampler, Rng& rng) {
    return sampler.sample(rng);
}

} // namespace trajrec
