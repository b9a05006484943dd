#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "trajrec/dataset_io.hpp"
#include "trajrec/ingest.hpp"

using namespace trajrec;

namespace {

std::pair<double, double> latlon_for_cell(const Grid& g, LocationId id) {
    auto [x, y] = g.centroid_m(id);
    const double lat = g.origin_lat + y / kMetersPerDegLat;
    const double lon =
        g.origin_lon + x / (kMetersPerDegLat * std::cos(g.origin_lat * M_PI / 180.0));
    return {lat, lon};
}

std::string csv_point(const std::string& user, std::int64_t ts, const Grid& g, LocationId cell) {
    auto [lat, lon] = latlon_for_cell(g, cell);
    std::ostringstream ss;
    ss.precision(12);
    ss << user << ',' << ts << ',' << lat << ',' << lon << '\n';
    return ss.str();
}

} // namespace

TEST_CASE("parse_points handles csv") {
    SECTION("empty stream") {
        std::istringstream in("");
        const auto res = parse_points(in, PointFormat::csv);
        CHECK(res.points.empty());
        CHECK(res.malformed == 0);
    }
    SECTION("one valid line") {
        std::istringstream in("u1,1528857000,39.984,116.318\n");
        const auto res = parse_points(in, PointFormat::csv);
        REQUIRE(res.points.size() == 1);
        CHECK(res.points[0].user == "u1");
        CHECK(res.points[0].timestamp == 1528857000);
        CHECK(res.points[0].lat == Catch::Approx(39.984));
        CHECK(res.points[0].lon == Catch::Approx(116.318));
    }
    SECTION("valid plus garbage") {
        std::istringstream in("u1,1528857000,39.984,116.318\nnot a point\n");
        const auto res = parse_points(in, PointFormat::csv);
        CHECK(res.points.size() == 1);
        CHECK(res.malformed == 1);
    }
    SECTION("mostly garbage is a format error") {
        std::istringstream in("x\ny\nz\nu1,1,1.0,1.0\n");
        CHECK_THROWS_AS(parse_points(in, PointFormat::csv), format_error);
    }
}

TEST_CASE("parse_points handles Geolife plt") {
    std::string data;
    for (int i = 0; i < 6; ++i) data += "header line " + std::to_string(i) + "\n";
    data += "39.984702,116.318417,0,492,39744.1201851852,2008-10-23,02:53:04\n";
    data += "39.984683,116.31845,0,492,39744.1202546296,2008-10-23,02:53:10\n";
    std::istringstream in(data);
    const auto res = parse_points(in, PointFormat::plt, "user007");
    REQUIRE(res.points.size() == 2);
    CHECK(res.malformed == 0);
    CHECK(res.points[0].user == "user007");
    // 2008-10-23 02:53:04 UTC
    CHECK(res.points[0].timestamp == 1224730384);
    CHECK(res.points[1].timestamp - res.points[0].timestamp == 6);
}

TEST_CASE("discretize buckets points into slots") {
    const Grid g{4, 4, 0.0, 0.0, 515.0};

    SECTION("single point lands in its slot") {
        std::istringstream in(csv_point("u1", 33000, g, 7)); // 09:10
        auto pts = parse_points(in, PointFormat::csv).points;
        const auto res = discretize(pts, g, 30);
        REQUIRE(res.dataset.users.count("u1") == 1);
        const auto& t = res.dataset.users.at("u1")[0].traj;
        CHECK(t.day == 0);
        CHECK(t.slots[18] == LocationId(7));
        CHECK(t.observed_count() == 1);
    }
    SECTION("unanimous slot keeps the cell") {
        std::string data = csv_point("u1", 100, g, 3) + csv_point("u1", 200, g, 3);
        std::istringstream in(data);
        const auto res = discretize(parse_points(in, PointFormat::csv).points, g, 30);
        CHECK(res.dataset.users.at("u1")[0].traj.slots[0] == LocationId(3));
    }
    SECTION("count tie broken by the latest point") {
        std::string data = csv_point("u1", 100, g, 3) + csv_point("u1", 200, g, 5);
        std::istringstream in(data);
        const auto res = discretize(parse_points(in, PointFormat::csv).points, g, 30);
        CHECK(res.dataset.users.at("u1")[0].traj.slots[0] == LocationId(5));
    }
    SECTION("majority wins over recency") {
        std::string data =
            csv_point("u1", 100, g, 3) + csv_point("u1", 150, g, 3) + csv_point("u1", 200, g, 5);
        std::istringstream in(data);
        const auto res = discretize(parse_points(in, PointFormat::csv).points, g, 30);
        CHECK(res.dataset.users.at("u1")[0].traj.slots[0] == LocationId(3));
    }
    SECTION("points outside the grid are dropped and counted") {
        std::string data = csv_point("u1", 100, g, 3) + "u1,200,-45.0,0.0\n";
        std::istringstream in(data);
        const auto res = discretize(parse_points(in, PointFormat::csv).points, g, 30);
        CHECK(res.dropped_outside_grid == 1);
        CHECK(res.dataset.users.at("u1")[0].traj.observed_count() == 1);
    }
    SECTION("discretize never invents a location") {
        Rng rng(11);
        std::string data;
        std::vector<bool> used(std::size_t(g.n_cells()), false);
        for (int i = 0; i < 40; ++i) {
            const auto cell = LocationId(rng.below(4)); // only cells 0..3
            used[std::size_t(cell)] = true;
            data += csv_point("u1", std::int64_t(rng.below(86400)), g, cell);
        }
        std::istringstream in(data);
        const auto res = discretize(parse_points(in, PointFormat::csv).points, g, 30);
        for (const auto& s : res.dataset.users.at("u1")[0].traj.slots)
            if (s) CHECK(used[std::size_t(*s)]);
    }
}

TEST_CASE("filter_dataset drops short trajectories then sparse users") {
    const Grid g{4, 4, 0.0, 0.0, 515.0};
    Dataset ds;
    ds.grid = g;
    ds.slot_minutes = 30;
    auto mk = [&](const std::string& u, int day, int observed) {
        Trajectory t;
        t.user = u;
        t.day = day;
        t.slots.assign(48, std::nullopt);
        for (int i = 0; i < observed; ++i) t.slots[std::size_t(i)] = LocationId(0);
        ds.users[u].push_back(DatasetEntry{t, Split::train, std::nullopt});
    };
    mk("a", 0, 33); // dropped at min_slots 34
    mk("a", 1, 34);
    mk("b", 0, 40);
    mk("b", 1, 40);
    mk("b", 2, 40);

    const Dataset f = filter_dataset(ds, 34, 2);
    CHECK(f.users.count("a") == 0); // only one surviving day
    CHECK(f.users.at("b").size() == 3);

    SECTION("a 33-observation trajectory is dropped at threshold 34") {
        const Dataset f1 = filter_dataset(ds, 34, 1);
        CHECK(f1.users.at("a").size() == 1);
    }
    SECTION("12 observations survive threshold 12") {
        Dataset d2;
        d2.grid = g;
        d2.slot_minutes = 30;
        Trajectory t;
        t.user = "c";
        t.day = 0;
        t.slots.assign(48, std::nullopt);
        for (int i = 0; i < 12; ++i) t.slots[std::size_t(i)] = LocationId(0);
        d2.users["c"].push_back(DatasetEntry{t, Split::train, std::nullopt});
        CHECK(filter_dataset(d2, 12, 1).users.count("c") == 1);
    }
    SECTION("user with 4 days is dropped at min_days 5") {
        Dataset d3;
        d3.grid = g;
        d3.slot_minutes = 30;
        for (int day = 0; day < 4; ++day) {
            Trajectory t;
            t.user = "d";
            t.day = day;
            t.slots.assign(48, LocationId(0));
            d3.users["d"].push_back(DatasetEntry{t, Split::train, std::nullopt});
        }
        CHECK(filter_dataset(d3, 1, 5).users.count("d") == 0);
    }
    SECTION("idempotent") {
        const Dataset once = filter_dataset(ds, 34, 2);
        const Dataset twice = filter_dataset(once, 34, 2);
        CHECK(once.users.size() == twice.users.size());
        for (const auto& [u, es] : once.users) CHECK(twice.users.at(u).size() == es.size());
    }
}

namespace {

Dataset days_dataset(int n_days) {
    Dataset ds;
    ds.grid = Grid{2, 2, 0.0, 0.0, 515.0};
    ds.slot_minutes = 30;
    for (int day = 0; day < n_days; ++day) {
        Trajectory t;
        t.user = "u";
        t.day = day;
        t.slots.assign(48, LocationId(0));
        ds.users["u"].push_back(DatasetEntry{t, Split::train, std::nullopt});
    }
    return ds;
}

std::tuple<int, int, int> split_counts(const Dataset& ds, const std::string& user) {
    int tr = 0, va = 0, te = 0;
    for (const auto& e : ds.users.at(user)) {
        if (e.split == Split::train) ++tr;
        if (e.split == Split::valid) ++va;
        if (e.split == Split::test) ++te;
    }
    return {tr, va, te};
}

} // namespace

TEST_CASE("split_chronological uses the ceiling rule") {
    CHECK(split_counts(split_chronological(days_dataset(10)), "u") == std::tuple{7, 1, 2});
    CHECK(split_counts(split_chronological(days_dataset(20)), "u") == std::tuple{14, 2, 4});

    std::vector<std::string> warnings;
    const Dataset five = split_chronological(days_dataset(5), {}, &warnings);
    CHECK(split_counts(five, "u") == std::tuple{5, 0, 0}); // train-only fallback
    CHECK(warnings.size() == 1);

    SECTION("splits are chronologically consistent") {
        const Dataset ds = split_chronological(days_dataset(13));
        std::int64_t max_train = -1, min_valid = 1000, min_test = 1000;
        for (const auto& e : ds.users.at("u")) {
            if (e.split == Split::train) max_train = std::max(max_train, e.traj.day);
            if (e.split == Split::valid) min_valid = std::min(min_valid, e.traj.day);
            if (e.split == Split::test) min_test = std::min(min_test, e.traj.day);
        }
        CHECK(max_train < min_valid);
        CHECK(min_valid < min_test);
    }
    SECTION("bad fractions rejected") {
        CHECK_THROWS_AS(split_chronological(days_dataset(10), SplitFractions{0.5, 0.1, 0.1}),
                        input_error);
    }
}

TEST_CASE("mask_targets marks exactly ceil(ratio * observed) slots") {
    Trajectory t;
    t.user = "u";
    t.slots.assign(48, std::nullopt);
    for (int i = 0; i < 40; ++i) t.slots[std::size_t(i)] = LocationId(1);

    const MaskSet m20 = mask_targets(t, 0.2, 99);
    CHECK(m20.count(SlotLabel::target) == 8);
    CHECK(m20.count(SlotLabel::observed) == 32);
    CHECK(m20.count(SlotLabel::missing) == 8);

    const MaskSet m80 = mask_targets(t, 0.8, 99);
    CHECK(m80.count(SlotLabel::target) == 32);

    SECTION("deterministic given the seed") {
        const MaskSet again = mask_targets(t, 0.2, 99);
        CHECK(again.labels == m20.labels);
        const MaskSet other = mask_targets(t, 0.2, 100);
        CHECK(other.labels != m20.labels);
    }
    SECTION("masks nest across ratios for a fixed seed") {
        for (int i = 0; i < 48; ++i)
            if (m20.labels[std::size_t(i)] == SlotLabel::target)
                CHECK(m80.labels[std::size_t(i)] == SlotLabel::target);
    }
    SECTION("ceil rule on odd counts") {
        Trajectory t7 = t;
        t7.slots.assign(48, std::nullopt);
        for (int i = 0; i < 7; ++i) t7.slots[std::size_t(i)] = LocationId(1);
        CHECK(mask_targets(t7, 0.2, 1).count(SlotLabel::target) == 2); // ceil(1.4)
    }
    SECTION("errors") {
        Trajectory empty;
        empty.slots.assign(48, std::nullopt);
        CHECK_THROWS_AS(mask_targets(empty, 0.2, 1), input_error);
        CHECK_THROWS_AS(mask_targets(t, 0.0, 1), input_error);
        CHECK_THROWS_AS(mask_targets(t, 1.0, 1), input_error);
    }
}

TEST_CASE("generate_synthetic is deterministic and respects its knobs") {
    SynthConfig cfg;
    cfg.n_users = 20;
    cfg.n_days = 10;
    cfg.grid_rows = 4;
    cfg.grid_cols = 4;
    cfg.seed = 7;

    SECTION("no noise, no drops: user-days repeat the anchor schedule") {
        const Dataset ds = generate_synthetic(cfg);
        for (const auto& [u, entries] : ds.users) {
            REQUIRE(entries.size() == 10);
            for (const auto& e : entries) {
                CHECK(e.traj.observed_count() == 48);
                CHECK(e.traj.slots == entries[0].traj.slots);
            }
            // two bands: anchors match outside work hours
            const auto& slots = entries[0].traj.slots;
            CHECK(slots[0] == slots[47]);
            CHECK(slots[0] != slots[24]); // distinct anchors by construction
        }
    }
    SECTION("same seed twice gives byte-identical datasets") {
        std::ostringstream a, b;
        write_dataset(a, generate_synthetic(cfg));
        write_dataset(b, generate_synthetic(cfg));
        CHECK(a.str() == b.str());
    }
    SECTION("drop probability controls observation counts binomially") {
        cfg.drop_prob = 0.5;
        const Dataset ds = generate_synthetic(cfg);
        std::int64_t observed = 0;
        for (const auto& [u, entries] : ds.users)
            for (const auto& e : entries) observed += e.traj.observed_count();
        const double n = 20.0 * 10.0 * 48.0;
        const double sigma = std::sqrt(n * 0.25);
        CHECK(std::abs(double(observed) - n * 0.5) < 3.0 * sigma);
    }
    SECTION("noise flips go to grid neighbours") {
        const Dataset base = generate_synthetic(SynthConfig{4, 10, 4, 4, 515.0, 30, 2, 0.0, 0.0, 7});
        const Dataset noisy = generate_synthetic(SynthConfig{4, 10, 4, 4, 515.0, 30, 2, 0.3, 0.0, 7});
        int flips = 0;
        for (const auto& [u, entries] : noisy.users) {
            const auto& clean_entries = base.users.at(u);
            for (std::size_t i = 0; i < entries.size(); ++i) {
                for (int s = 0; s < 48; ++s) {
                    const auto a = clean_entries[i].traj.slots[std::size_t(s)];
                    const auto b = entries[i].traj.slots[std::size_t(s)];
                    if (*a == *b) continue;
                    ++flips;
                    CHECK(distance_meters(*a, *b, noisy.grid) == Catch::Approx(515.0));
                }
            }
        }
        CHECK(flips > 100); // roughly 0.3 * 4 * 10 * 48 slots flip
    }
}

TEST_CASE("canonical dataset text round-trips") {
    SynthConfig cfg;
    cfg.n_users = 3;
    cfg.n_days = 6;
    cfg.grid_rows = 3;
    cfg.grid_cols = 3;
    cfg.drop_prob = 0.4;
    cfg.seed = 5;
    Dataset ds = generate_synthetic(cfg);
    apply_masks(ds, 0.25, 17);

    std::ostringstream out;
    write_dataset(out, ds, {{"grid-rows", "3"}, {"grid-cols", "3"}, {"slot-minutes", "30"}});

    std::istringstream in(out.str());
    HeaderMap header;
    const Dataset back = read_dataset(in, &header);
    CHECK(header.at("grid-rows") == "3");
    CHECK(back.grid.rows == 3);
    CHECK(back.users.size() == ds.users.size());
    for (const auto& [u, entries] : ds.users) {
        const auto& be = back.users.at(u);
        REQUIRE(be.size() == entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i) {
            CHECK(be[i].traj.slots == entries[i].traj.slots);
            REQUIRE(be[i].mask.has_value());
            CHECK(be[i].mask->labels == entries[i].mask->labels);
        }
    }

    SECTION("bad mask characters rejected") {
        std::istringstream bad("u\t0\t1,2\tOX\n");
        CHECK_THROWS_AS(read_dataset(bad), format_error);
    }
    SECTION("mask label inconsistent with value rejected") {
        std::istringstream bad("u\t0\t1,-\tOT\n");
        CHECK_THROWS_AS(read_dataset(bad), format_error);
    }
    SECTION("duplicate user-day rejected") {
        std::istringstream bad("u\t0\t1,2\nu\t0\t2,1\n");
        CHECK_THROWS_AS(read_dataset(bad), format_error);
    }
}
