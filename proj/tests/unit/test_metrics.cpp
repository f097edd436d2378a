#include <doctest.h>

#include <random>

#include "driftguard/errors.hpp"
#include "driftguard/metrics.hpp"

using namespace driftguard;
using namespace driftguard::metrics;

namespace {

// Brute force over all pairs, ties counting half.
double pairwise_win_rate(const std::vector<double>& a, const std::vector<double>& b) {
    double wins = 0.0;
    for (double x : a)
        for (double y : b) wins += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
    return wins / static_cast<double>(a.size() * b.size());
}

ArchiveCycle archive_cycle(int cycle, std::mt19937_64& rng, const std::vector<sim::ClusterSpec>& clusters,
                           const std::vector<int>& active) {
    ArchiveCycle c;
    c.cycle = cycle;
    std::normal_distribution<double> z;
    for (int o = 0; o < 1296; ++o) {
        const int lbl = active[static_cast<std::size_t>(o) % active.size()];
        const auto& cl = clusters[static_cast<std::size_t>(lbl)];
        c.quality.push_back({cl.center[0] + cl.sd[0] * z(rng), cl.center[1] + cl.sd[1] * z(rng)});
        c.label.push_back(lbl);
    }
    return c;
}

}  // namespace

TEST_CASE("utility values") {
    CHECK(utility({0, 14.0}) == doctest::Approx(1.0));
    CHECK(utility({100, 15.5}) == doctest::Approx(0.0));
    CHECK(utility({25, 14.75}) == doctest::Approx(0.70));
    CHECK(utility({25, 14.5}) == doctest::Approx(0.70));
    CHECK(utility({25, 15.0}) == doctest::Approx(0.70));
    CHECK(utility({25, 15.0001}) == doctest::Approx(0.60));
}

TEST_CASE("utility is bounded and non-increasing in both attributes") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> pl(0, 100), ec(12, 16), step(0, 5), estep(0, 0.5);
    for (int i = 0; i < 2000; ++i) {
        const sim::QualityPoint q{pl(rng), ec(rng)};
        const double u = utility(q);
        CHECK(u >= 0.0);
        CHECK(u <= 1.0);
        CHECK(utility({std::min(100.0, q.packet_loss + step(rng)), q.energy}) <= u);
        CHECK(utility({q.packet_loss, q.energy + estep(rng)}) <= u);
    }
}

TEST_CASE("rsm values") {
    CHECK(rsm({{1, 2, 3}, {1, 2, 3}, 3}) == 0.0);
    CHECK(rsm({{3, 2}, {1, 1}, 3}) == 0.75);
    CHECK(rsm({{5, 5, 5}, {1, 1, 1}, 5}) == 1.0);
    CHECK_THROWS_AS(rsm({{1}, {1}, 1}), InvalidInput);
    CHECK_THROWS_AS(rsm({{1, 2}, {1}, 3}), InvalidInput);
    CHECK_THROWS_AS(rsm({{4}, {1}, 3}), InvalidInput);
}

TEST_CASE("rsm stays in [0,1] and detects a one-rank shift") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 500; ++trial) {
        const int m = 2 + static_cast<int>(rng() % 7);
        const int n = 1 + static_cast<int>(rng() % 12);
        RsmInput in;
        in.m = m;
        for (int i = 0; i < n; ++i) {
            const int rs = 1 + static_cast<int>(rng() % static_cast<unsigned>(m - 1));
            in.r_star.push_back(rs);
            in.r.push_back(rs + static_cast<int>(rng() % static_cast<unsigned>(m - rs)));
        }
        const double v = rsm(in);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        for (auto& r : in.r) r += 1;
        // Ranks may now reach m + 1, so shift m too and compare raw sums.
        double gap = 0.0;
        for (int i = 0; i < n; ++i) gap += in.r[static_cast<std::size_t>(i)] - in.r_star[static_cast<std::size_t>(i)];
        CHECK(gap / (n * (m - 1.0)) - v == doctest::Approx(1.0 / (m - 1.0)));
        if (*std::max_element(in.r.begin(), in.r.end()) <= m)
            CHECK(rsm(in) - v == doctest::Approx(1.0 / (m - 1.0)));
    }
}

TEST_CASE("mann-whitney common-language probability") {
    CHECK(mann_whitney_u({1, 2, 3}, {1, 2, 3}) == 0.5);
    CHECK(mann_whitney_u({5, 6, 7}, {1, 2, 3}) == 1.0);
    // Pairs (1,2) (1,3) (2,2) (2,3): no win, one tie at half credit.
    CHECK(mann_whitney_u({1, 2}, {2, 3}) == pairwise_win_rate({1, 2}, {2, 3}));
    CHECK(mann_whitney_u({1, 2}, {2, 3}) == 0.125);
    CHECK(mann_whitney_u({2, 3}, {1, 2}) == 0.875);
    CHECK_THROWS_AS(mann_whitney_u({}, {1}), InvalidInput);

    std::mt19937_64 rng(6);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a, b;
        const int na = 1 + static_cast<int>(rng() % 30), nb = 1 + static_cast<int>(rng() % 30);
        // Rounded values so ties actually happen.
        for (int i = 0; i < na; ++i) a.push_back(std::round(z(rng) * 3) + 1);
        for (int i = 0; i < nb; ++i) b.push_back(std::round(z(rng) * 3));
        CHECK(mann_whitney_u(a, b) == doctest::Approx(pairwise_win_rate(a, b)).epsilon(1e-12));
        CHECK(mann_whitney_u(a, b) + mann_whitney_u(b, a) == doctest::Approx(1.0));
    }
}

TEST_CASE("mann-whitney normal approximation") {
    // n1 = n2 = 5, no ties: A wins 6>4, 6>5, 8>4, 8>5, 8>7, so U = 5.
    const auto r = mann_whitney({1, 2, 3, 6, 8}, {4, 5, 7, 9, 10});
    CHECK(r.u == 5.0);
    CHECK(r.z == doctest::Approx((5.0 - 12.5) / std::sqrt(5.0 * 5.0 * 11.0 / 12.0)));
    CHECK(r.p_two_sided == doctest::Approx(std::erfc(std::abs(r.z) / std::sqrt(2.0))));
}

TEST_CASE("ideal baseline") {
    const auto clusters = sim::SimConfig::defaults().clusters;
    std::mt19937_64 rng(9);
    Archive drift_free;
    for (int c = 1; c <= 5; ++c) drift_free.cycles.push_back(archive_cycle(c, rng, clusters, {0, 1, 2}));
    const auto b = build_ideal_baseline(drift_free, lifelong::PreferenceOrder::pl_then_ec);
    CHECK(b.model.size() == 3);
    CHECK(b.ranking == std::vector<gmm::ClassId>{0, 1, 2});
    for (int r : b.r_star) CHECK(r == 1);

    Archive drifting = drift_free;
    drifting.cycles.push_back(archive_cycle(6, rng, clusters, {0, 1, 2, 5, 6, 7}));
    const auto d = build_ideal_baseline(drifting, lifelong::PreferenceOrder::pl_then_ec);
    CHECK(d.model.size() == 6);
    // G1 (pl 5) leads, B1 (pl 35) drops to fourth.
    CHECK(d.ranking.front() == 5);
    CHECK(d.rank_of_label(0) == 4);
    CHECK(d.r_star == std::vector<int>{4, 4, 4, 4, 4, 1});
    const auto e = build_ideal_baseline(drifting, lifelong::PreferenceOrder::ec_then_pl);
    // Energies 13.1..13.3 chain within 0.5 mC, so packet loss orders the B classes.
    CHECK(e.ranking == std::vector<gmm::ClassId>{0, 1, 2, 5, 6, 7});

    // Ideal ranks are a lower bound on any selection.
    for (std::size_t i = 0; i < drifting.cycles.size(); ++i)
        for (int lbl : drifting.cycles[i].label) CHECK(d.rank_of_label(lbl) >= d.r_star[i]);

    // Identity against itself.
    CHECK(rsm({d.r_star, d.r_star, d.ranked_classes}) == 0.0);

    Archive partial = drift_free;
    partial.cycles[2].quality.pop_back();
    CHECK_THROWS_AS(build_ideal_baseline(partial, lifelong::PreferenceOrder::pl_then_ec), InvalidInput);
}

TEST_CASE("series csv layout") {
    const auto csv = series_csv({{3, "lsa_feedback", {12.5, 14.25}, 0.75, 2, 1, 1, 0.125}});
    CHECK(csv ==
          "cycle,approach,pl,ec,utility,selected_rank,ideal_rank,rsm_window_id,rsm\n"
          "3,lsa_feedback,12.500000,14.250000,0.750000,2,1,1,0.125000\n");
}
