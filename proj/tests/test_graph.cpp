#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <sstream>

#include "trajrec/graph.hpp"
#include "trajrec/ingest.hpp"

using namespace trajrec;

namespace {

Trajectory traj(std::initializer_list<int> cells, const std::string& user = "u", int day = 0) {
    Trajectory t;
    t.user = user;
    t.day = day;
    for (int c : cells)
        t.slots.push_back(c < 0 ? std::optional<LocationId>{} : std::optional<LocationId>{c});
    return t;
}

// brute-force pair counting over adjacent observed slots
std::map<std::pair<LocationId, LocationId>, std::int64_t>
oracle_edges(const std::vector<Trajectory>& ts) {
    std::map<std::pair<LocationId, LocationId>, std::int64_t> edges;
    for (const auto& t : ts)
        for (std::size_t i = 0; i + 1 < t.slots.size(); ++i) {
            if (!t.slots[i] || !t.slots[i + 1]) continue;
            const LocationId a = *t.slots[i];
            const LocationId b = *t.slots[i + 1];
            if (a == b) continue;
            edges[{std::min(a, b), std::max(a, b)}] += 1;
        }
    return edges;
}

} // namespace

TEST_CASE("build_group_graph counts adjacent distinct transitions") {
    SECTION("nulls break adjacency") {
        const auto g = build_group_graph({traj({0, 1, 0, -1, 2})});
        CHECK(g.weight(0, 1) == 2);
        CHECK(g.n_edges() == 1);
        CHECK_FALSE(g.has_vertex(2)); // 2 is preceded by a null
    }
    SECTION("same-location runs create no edges") {
        const auto g = build_group_graph({traj({3, 3, 3})});
        CHECK(g.empty());
    }
    SECTION("weights add across trajectories") {
        const auto g = build_group_graph({traj({0, 1}), traj({1, 0}, "v")});
        CHECK(g.weight(0, 1) == 2);
    }
    SECTION("empty input is an error") {
        CHECK_THROWS_AS(build_group_graph({}), input_error);
        CHECK_THROWS_AS(build_group_graph({traj({0, -1, 1})}), input_error);
    }
}

TEST_CASE("first_order_proximity") {
    GroupTendencyGraph g;
    g.add_transition(1, 2, 5);
    g.add_transition(2, 3, 1);
    CHECK(first_order_proximity(g, 1, 2) == 5);
    CHECK(first_order_proximity(g, 2, 1) == 5);
    CHECK(first_order_proximity(g, 1, 3) == 0);
    CHECK(first_order_proximity(g, 2, 2) == 0);
    CHECK_THROWS_AS(first_order_proximity(g, 1, 9), input_error);
}

TEST_CASE("graph symmetry and total weight match a brute-force oracle") {
    Rng rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Trajectory> ts;
        const int n_users = 1 + int(rng.below(5));
        for (int u = 0; u < n_users; ++u) {
            const int n_days = 1 + int(rng.below(3));
            for (int day = 0; day < n_days; ++day) {
                Trajectory t;
                t.user = "u" + std::to_string(u);
                t.day = day;
                for (int s = 0; s < 12; ++s) {
                    if (rng.uniform() < 0.3)
                        t.slots.push_back(std::nullopt);
                    else
                        t.slots.push_back(LocationId(rng.below(6)));
                }
                ts.push_back(std::move(t));
            }
        }
        const auto expected = oracle_edges(ts);
        if (expected.empty()) continue;
        const auto g = build_group_graph(ts);
        REQUIRE(g.n_edges() == expected.size());
        std::int64_t total = 0;
        for (const auto& [e, w] : expected) {
            CHECK(g.weight(e.first, e.second) == w);
            CHECK(g.weight(e.second, e.first) == w);
            total += w;
        }
        CHECK(g.total_weight() == total);
    }
}

TEST_CASE("graph TSV round-trips") {
    GroupTendencyGraph g;
    g.add_transition(3, 1, 4);
    g.add_transition(1, 2);
    std::ostringstream out;
    write_graph(out, g);
    CHECK(out.str() == "1\t2\t1\n1\t3\t4\n");

    std::istringstream in(out.str());
    const auto back = read_graph(in);
    CHECK(back.weight(1, 3) == 4);
    CHECK(back.weight(1, 2) == 1);

    SECTION("bad lines rejected") {
        std::istringstream bad("1\t1\t4\n");
        CHECK_THROWS_AS(read_graph(bad), format_error);
        std::istringstream bad2("1\t2\t0\n");
        CHECK_THROWS_AS(read_graph(bad2), format_error);
        std::istringstream bad3("1\t2\n");
        CHECK_THROWS_AS(read_graph(bad3), format_error);
    }
}

TEST_CASE("sample_edge draws proportionally to weight") {
    SECTION("single edge always comes back") {
        GroupTendencyGraph g;
        g.add_transition(0, 1, 7);
        EdgeSampler sampler(g);
        Rng rng(3);
        for (int i = 0; i < 100; ++i) {
            auto [a, b] = sample_edge(sampler, rng);
            CHECK(std::min(a, b) == 0);
            CHECK(std::max(a, b) == 1);
        }
    }
    SECTION("weight 1 vs 3 hits 0.75 within 0.02") {
        GroupTendencyGraph g;
        g.add_transition(0, 1, 1);
        g.add_transition(2, 3, 3);
        EdgeSampler sampler(g);
        Rng rng(5);
        int heavy = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            auto [a, b] = sample_edge(sampler, rng);
            if (a == 2 || b == 2) ++heavy;
        }
        CHECK(std::abs(double(heavy) / n - 0.75) < 0.02);
    }
    SECTION("fixed seed reproduces the draw sequence") {
        GroupTendencyGraph g;
        g.add_transition(0, 1, 1);
        g.add_transition(1, 2, 2);
        g.add_transition(0, 2, 3);
        EdgeSampler sampler(g);
        Rng a(11), b(11);
        for (int i = 0; i < 50; ++i) CHECK(sample_edge(sampler, a) == sample_edge(sampler, b));
    }
}
