#include <catch2/catch_amalgamated.hpp>

#include "trajrec/diffusion.hpp"

using namespace trajrec;

namespace {

MaskSet mask_of(const std::string& labels) {
    MaskSet m;
    for (char c : labels) m.labels.push_back(SlotLabel(c));
    return m;
}

// orthogonal table: one-hot rows scaled, plus zero null row
LocationEmbeddingTable one_hot_table(int n_loc, double scale = 1.0) {
    LocationEmbeddingTable t;
    t.m = Mat(n_loc + 1, n_loc);
    for (int l = 0; l < n_loc; ++l) t.m(l, l) = scale;
    return t;
}

} // namespace

TEST_CASE("make_schedule computes the derived constants") {
    SECTION("two-step worked example") {
        const auto s = make_schedule(2, 0.1, 0.2);
        CHECK(s.alpha[0] == Catch::Approx(0.9));
        CHECK(s.alpha[1] == Catch::Approx(0.8));
        CHECK(s.alpha_bar[0] == Catch::Approx(0.9));
        CHECK(s.alpha_bar[1] == Catch::Approx(0.72));
        CHECK(s.beta_tilde[0] == Catch::Approx(0.1));
        CHECK(s.beta_tilde[1] == Catch::Approx(0.1 / 0.28 * 0.2));
    }
    SECTION("single step") {
        const auto s = make_schedule(1, 0.5, 0.5);
        CHECK(s.alpha_bar[0] == Catch::Approx(0.5));
        CHECK(s.beta_tilde[0] == Catch::Approx(0.5));
    }
    SECTION("default preset keeps signal; long preset destroys most of it") {
        const auto d = schedule_preset("default");
        CHECK(d.steps == 50);
        CHECK(d.alpha_bar.back() == Catch::Approx(0.60).margin(0.05));
        const auto l = schedule_preset("long");
        CHECK(l.steps == 200);
        CHECK(l.alpha_bar.back() < 0.15);
        CHECK_THROWS_AS(schedule_preset("bogus"), input_error);
    }
    SECTION("monotonicity invariants") {
        const auto s = make_schedule(17, 3e-4, 0.05);
        for (int i = 0; i < 17; ++i) {
            CHECK(s.beta[std::size_t(i)] > 0.0);
            if (i > 0) {
                CHECK(s.beta[std::size_t(i)] >= s.beta[std::size_t(i) - 1]);
                CHECK(s.alpha_bar[std::size_t(i)] < s.alpha_bar[std::size_t(i) - 1]);
            }
        }
    }
    SECTION("posterior variance identity on random configurations") {
        Rng rng(31);
        for (int trial = 0; trial < 5; ++trial) {
            const int steps = 1 + int(rng.below(300));
            const double b1 = rng.uniform(1e-5, 1e-2);
            const double bt = rng.uniform(b1, 0.3);
            const auto s = make_schedule(steps, b1, bt);
            // independent recomputation straight from the definition
            double prod = 1.0;
            for (int t = 1; t <= steps; ++t) {
                const double prev = prod;
                prod *= s.alpha[std::size_t(t) - 1];
                const double expect =
                    t == 1 ? s.beta[0] : (1.0 - prev) / (1.0 - prod) * s.beta[std::size_t(t) - 1];
                CHECK(std::abs(s.beta_tilde[std::size_t(t) - 1] - expect) <= 1e-12);
            }
        }
    }
    SECTION("invalid ranges rejected") {
        CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), input_error);
        CHECK_THROWS_AS(make_schedule(5, 0.0, 0.2), input_error);
        CHECK_THROWS_AS(make_schedule(5, 0.3, 0.2), input_error);
        CHECK_THROWS_AS(make_schedule(5, 0.1, 1.0), input_error);
    }
}

TEST_CASE("forward_sample implements the closed form") {
    SECTION("zero noise at alpha_bar one half") {
        const auto s = make_schedule(1, 0.5, 0.5);
        Mat x0(1, 1), eps(1, 1);
        x0(0, 0) = 1.0;
        const Mat xt = forward_sample(x0, 1, eps, s);
        CHECK(xt(0, 0) == Catch::Approx(0.70711).margin(1e-5));
    }
    SECTION("observed slots pass through when masked") {
        const auto s = make_schedule(3, 0.2, 0.4);
        Mat x0(3, 2), eps(3, 2);
        for (std::size_t i = 0; i < x0.a.size(); ++i) {
            x0.a[i] = double(i);
            eps.a[i] = 5.0;
        }
        const MaskSet m = mask_of("OTM");
        const Mat xt = forward_sample(x0, 2, eps, s, &m);
        CHECK(xt(0, 0) == x0(0, 0));
        CHECK(xt(0, 1) == x0(0, 1));
        CHECK(xt(1, 0) != x0(1, 0));
        CHECK(xt(2, 0) != x0(2, 0));
    }
    SECTION("closed-form moments match the iterated one-step kernel") {
        const auto s = schedule_preset("default");
        Rng rng(71);
        const double x0 = 1.0;
        for (int t : {1, 25, 50}) {
            const double ab = s.alpha_bar_at(t);
            double sum = 0.0, sq = 0.0;
            const int n = 10000;
            for (int i = 0; i < n; ++i) {
                double x = x0;
                for (int step = 1; step <= t; ++step)
                    x = std::sqrt(1.0 - s.beta[std::size_t(step) - 1]) * x +
                        std::sqrt(s.beta[std::size_t(step) - 1]) * rng.normal();
                sum += x;
                sq += x * x;
            }
            const double mean = sum / n;
            const double var = sq / n - mean * mean;
            CHECK(std::abs(mean - std::sqrt(ab) * x0) < 0.05 * std::max(std::sqrt(1.0 - ab), 0.02));
            if (t > 1) CHECK(std::abs(var - (1.0 - ab)) < 0.05 * (1.0 - ab));
        }
    }
}

TEST_CASE("denoise_predict basics") {
    const int d = 3, n = 2;
    DenoiserParams p = DenoiserParams::make(d, 4, 2);

    DiffusionState st;
    st.x_t = Mat(n, d);
    st.conditioner = Mat(n, d);
    st.mask = mask_of("TO");
    st.t = 1;
    Rng rng(5);
    for (double& v : st.x_t.a) v = rng.uniform(-1, 1);
    for (double& v : st.conditioner.a) v = rng.uniform(-1, 1);

    SECTION("all-zero parameters produce zero output") {
        const Mat out = denoise_predict(st, p);
        for (double v : out.a) CHECK(v == 0.0);
    }
    SECTION("pure function of its inputs") {
        p.init(rng);
        const Mat a = denoise_predict(st, p);
        const Mat b = denoise_predict(st, p);
        CHECK(a.a == b.a);
    }
    SECTION("temporal attention mixes slots") {
        DenoiserParams wide = DenoiserParams::make(d, 16, 2);
        wide.init(rng);
        const Mat base = denoise_predict(st, wide);
        DiffusionState st2 = st;
        st2.conditioner(1, 0) += 1.0; // perturb slot 1 only
        const Mat moved = denoise_predict(st2, wide);
        double delta0 = 0.0;
        for (int c = 0; c < d; ++c) delta0 += std::abs(moved(0, c) - base(0, c));
        CHECK(delta0 > 0.0);
    }
    SECTION("shape mismatch rejected") {
        DiffusionState bad = st;
        bad.x_t = Mat(n, d + 1);
        CHECK_THROWS_AS(denoise_predict(bad, p), input_error);
    }
}

TEST_CASE("posterior_step") {
    SECTION("terminal step is deterministic and collapses to x0_hat") {
        const auto s = make_schedule(1, 0.5, 0.5);
        Mat xt(1, 2), x0(1, 2);
        xt(0, 0) = 3.0;
        xt(0, 1) = -2.0;
        x0(0, 0) = 0.7;
        x0(0, 1) = 0.9;
        Rng rng(1);
        const Mat prev = posterior_step(xt, x0, 1, s, rng);
        CHECK(prev(0, 0) == Catch::Approx(0.7).margin(1e-12));
        CHECK(prev(0, 1) == Catch::Approx(0.9).margin(1e-12));
    }
    SECTION("posterior mean coefficients sum to one in the small-beta limit") {
        const double ab_prev = 0.7;
        const double beta = 1e-12;
        const double alpha = 1.0 - beta;
        const double ab_t = ab_prev * alpha;
        const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
        const double ct = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t);
        CHECK(std::abs(c0 + ct - 1.0) <= 1e-10);
    }
    SECTION("noise variance follows beta_tilde") {
        const auto s = make_schedule(10, 0.05, 0.2);
        Mat xt(1, 1), x0(1, 1);
        xt(0, 0) = 1.0;
        x0(0, 0) = 0.5;
        Rng rng(3);
        const int t = 6;
        double sum = 0.0, sq = 0.0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            const double v = posterior_step(xt, x0, t, s, rng)(0, 0);
            sum += v;
            sq += v * v;
        }
        const double mean = sum / n;
        const double var = sq / n - mean * mean;
        CHECK(std::abs(var - s.beta_tilde[t - 1]) < 0.05 * s.beta_tilde[t - 1]);
    }
}

TEST_CASE("reverse sampling") {
    const auto s = make_schedule(5, 0.1, 0.3);
    Mat cond(3, 2);
    cond(0, 0) = 9.0; // observed row, must stay clamped
    const MaskSet m = mask_of("OTM");

    SECTION("fixed-point oracle denoiser converges exactly") {
        Mat target(3, 2);
        target(1, 0) = 0.4;
        target(1, 1) = -0.2;
        target(2, 0) = 1.5;
        Rng rng(17);
        const Mat x0 = sample_reverse(cond, m, s,
                                      [&](const Mat&, int) { return target; }, rng);
        CHECK(x0(0, 0) == 9.0); // clamped to the conditioner
        CHECK(x0(1, 0) == Catch::Approx(0.4).margin(1e-12));
        CHECK(x0(1, 1) == Catch::Approx(-0.2).margin(1e-12));
        CHECK(x0(2, 0) == Catch::Approx(1.5).margin(1e-12));
    }
    SECTION("single-step schedule returns the denoiser output directly") {
        const auto s1 = make_schedule(1, 0.4, 0.4);
        DenoiserParams p = DenoiserParams::make(2, 4, 1);
        Rng prng(23);
        p.init(prng);
        Rng rng(29);
        Mat captured;
        const Mat x0 = sample_reverse(
            cond, m, s1,
            [&](const Mat& x, int t) {
                DiffusionState st{x, cond, m, t};
                captured = denoise_predict(st, p);
                return captured;
            },
            rng);
        for (int i = 1; i < 3; ++i)
            for (int c = 0; c < 2; ++c)
                CHECK(x0(i, c) == Catch::Approx(captured(i, c)).margin(1e-12));
    }
    SECTION("same seed, same sample") {
        DenoiserParams p = DenoiserParams::make(2, 4, 2);
        Rng prng(31);
        p.init(prng);
        Rng r1(99), r2(99);
        const Mat a = sample(cond, m, s, p, r1);
        const Mat b = sample(cond, m, s, p, r2);
        CHECK(a.a == b.a);
    }
}

TEST_CASE("decode_location ranks by cosine") {
    const auto table = one_hot_table(3);

    SECTION("exact row match ranks first") {
        const double* q = table.row(1);
        const auto res = decode_location(q, table);
        CHECK_FALSE(res.degenerate);
        CHECK(res.ranking.front().first == 1);
        CHECK(res.ranking.front().second == Catch::Approx(1.0));
    }
    SECTION("zero query degenerates to id order") {
        std::vector<double> q(3, 0.0);
        const auto res = decode_location(q.data(), table);
        CHECK(res.degenerate);
        for (int l = 0; l < 3; ++l) {
            CHECK(res.ranking[std::size_t(l)].first == l);
            CHECK(res.ranking[std::size_t(l)].second == 0.0);
        }
    }
    SECTION("angles order the ranking") {
        LocationEmbeddingTable t;
        t.m = Mat(4, 2);
        auto set_angle = [&](int row, double deg) {
            t.m(row, 0) = std::cos(deg * M_PI / 180.0);
            t.m(row, 1) = std::sin(deg * M_PI / 180.0);
        };
        set_angle(0, 90.0);
        set_angle(1, 0.0);
        set_angle(2, 60.0);
        const double q[2] = {1.0, 0.0};
        const auto res = decode_location(q, t);
        CHECK(res.ranking[0].first == 1); // 0 degrees
        CHECK(res.ranking[1].first == 2); // 60 degrees
        CHECK(res.ranking[2].first == 0); // 90 degrees
    }
    SECTION("ranking is invariant under positive scaling") {
        Rng rng(41);
        LocationEmbeddingTable t;
        t.m = Mat(7, 4);
        for (int l = 0; l < 6; ++l)
            for (int c = 0; c < 4; ++c) t.m(l, c) = rng.uniform(-1, 1);
        std::vector<double> q(4);
        for (double& v : q) v = rng.uniform(-1, 1);
        std::vector<double> q3(4);
        for (int c = 0; c < 4; ++c) q3[std::size_t(c)] = 3.75 * q[std::size_t(c)];
        const auto a = decode_location(q.data(), t);
        const auto b = decode_location(q3.data(), t);
        REQUIRE(a.ranking.size() == b.ranking.size());
        CHECK(a.ranking.front().first == b.ranking.front().first);
        for (std::size_t i = 0; i < a.ranking.size(); ++i)
            CHECK(a.ranking[i].first == b.ranking[i].first);
    }
}

TEST_CASE("loss_simple averages over target slots and dimensions") {
    const int d = 3;
    Mat x0(4, d), x0_hat(4, d);
    Rng rng(51);
    for (double& v : x0.a) v = rng.uniform(-1, 1);
    const MaskSet m = mask_of("TOMT");

    SECTION("perfect denoiser gives zero") {
        x0_hat = x0;
        CHECK(loss_simple(x0, x0_hat, m) == 0.0);
    }
    SECTION("zero denoiser gives the mean of x0 squared over target entries") {
        double expect = 0.0;
        for (int c = 0; c < d; ++c) expect += x0(0, c) * x0(0, c) + x0(3, c) * x0(3, c);
        expect /= 2.0 * d;
        CHECK(loss_simple(x0, x0_hat, m) == Catch::Approx(expect));
    }
    SECTION("invariant to observed and missing content") {
        const double base = loss_simple(x0, x0_hat, m);
        Mat mutated = x0;
        mutated(1, 0) += 100.0; // observed slot
        mutated(2, 2) -= 50.0;  // missing slot
        CHECK(loss_simple(mutated, x0_hat, m) == base);
    }
    SECTION("no targets is an error") {
        const MaskSet none = mask_of("OOMO");
        CHECK_THROWS_AS(loss_simple(x0, x0_hat, none), input_error);
    }
}

TEST_CASE("loss_distance penalises soft displacement") {
    const Grid grid{2, 2, 0.0, 0.0, 515.0};
    const auto table = one_hot_table(4, 2.0);

    SECTION("constant hard decoding gives zero") {
        Mat x0_hat(3, 4);
        for (int i = 0; i < 3; ++i) x0_hat(i, 2) = 2.0; // always cell 2
        const double l = loss_distance(x0_hat, table, grid, 1e-3);
        CHECK(l == Catch::Approx(0.0).margin(1e-9));
    }
    SECTION("adjacent cells at hard decoding cost one squared side") {
        Mat x0_hat(2, 4);
        x0_hat(0, 0) = 1.0; // cell 0 = (row 0, col 0)
        x0_hat(1, 1) = 1.0; // cell 1 = (row 0, col 1)
        const double l = loss_distance(x0_hat, table, grid, 1e-3);
        CHECK(l == Catch::Approx(1.0).margin(1e-3));
    }
    SECTION("uniform softmax collapses to the global centroid") {
        Mat x0_hat(3, 4);
        Rng rng(61);
        for (double& v : x0_hat.a) v = rng.uniform(-1, 1);
        const double l = loss_distance(x0_hat, table, grid, 1e9);
        CHECK(l == Catch::Approx(0.0).margin(1e-9));
    }
    SECTION("tau must be positive") {
        Mat x(2, 4);
        CHECK_THROWS_AS(loss_distance(x, table, grid, 0.0), input_error);
    }
}

TEST_CASE("total_loss weighting") {
    CHECK(total_loss(0.5, 10.0, LossWeights{0.0, 1.0}) == 0.5);
    CHECK(total_loss(0.5, 1.0, LossWeights{1.2, 1.0}) == Catch::Approx(1.7));
    CHECK(total_loss(0.0, 0.0, LossWeights{1.2, 1.0}) == 0.0);
    CHECK_THROWS_AS(total_loss(1.0, 1.0, LossWeights{-0.1, 1.0}), input_error);
}
