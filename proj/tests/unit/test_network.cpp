#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "driftguard/errors.hpp"
#include "driftguard/network.hpp"

using namespace driftguard;
using namespace driftguard::sim;

namespace {

UncertaintySample flat_sample(const SimConfig& cfg, double snr, double load) {
    UncertaintySample u;
    u.snr_db.assign(cfg.topology.links.size(), snr);
    u.load.assign(cfg.topology.nodes.size(), load);
    u.load[static_cast<std::size_t>(cfg.topology.node_index(cfg.topology.gateway))] = 0.0;
    return u;
}

Regime identity_regime() {
    Regime r;
    r.identity = true;
    return r;
}

UncertaintySample random_sample(const SimConfig& cfg, std::mt19937_64& rng) {
    Regime r;
    r.interference_mean = 2.0;
    r.interference_sd = 4.0;
    return sample_uncertainties(cfg, r, rng);
}

}  // namespace

TEST_CASE("adaptation space has 1296 distinct options over motes 7, 10, 11, 12") {
    const auto topo = Topology::delta_iot();
    CHECK(topo.two_parent_motes() == std::vector<int>{7, 10, 11, 12});
    const auto opts = enumerate_options(topo);
    REQUIRE(opts.size() == 1296);
    std::set<std::array<int, 4>> splits;
    for (std::size_t i = 0; i < opts.size(); ++i) {
        CHECK(opts[i].id == static_cast<int>(i));
        for (int s : opts[i].split) CHECK((s >= 0 && s <= 5));
        splits.insert(opts[i].split);
    }
    CHECK(splits.size() == 1296);
    CHECK(option_from_id(0).split == std::array<int, 4>{0, 0, 0, 0});
    CHECK(option_from_id(1).split == std::array<int, 4>{0, 0, 0, 1});
    CHECK(option_from_id(1295).split == std::array<int, 4>{5, 5, 5, 5});
    CHECK_THROWS_AS(option_from_id(1296), InvalidInput);
}

TEST_CASE("topology validation") {
    CHECK_NOTHROW(Topology::delta_iot().validate());
    auto t = Topology::delta_iot();
    t.links.erase(std::find_if(t.links.begin(), t.links.end(), [](const Link& l) { return l.from == 12; }));
    CHECK_THROWS_AS(enumerate_options(t), InvalidTopology);
    CHECK_THROWS_AS(t.validate(), InvalidTopology);

    auto cyc = Topology::delta_iot();
    cyc.links.push_back({4, 7, 1.0});  // 4 -> 7 -> 2 -> 4
    CHECK_THROWS_AS(cyc.validate(), InvalidTopology);

    const auto order = Topology::delta_iot().leaf_to_root_order();
    CHECK(order.size() == 15);
    auto pos = [&](int id) { return std::find(order.begin(), order.end(), id) - order.begin(); };
    for (const auto& l : Topology::delta_iot().links)
        if (l.to != 1) CHECK(pos(l.from) < pos(l.to));
}

TEST_CASE("power assignment") {
    const auto cfg = SimConfig::defaults();
    auto check_all = [&](double snr, int expected) {
        const auto p = assign_power(cfg, flat_sample(cfg, snr, 10.0));
        for (std::size_t n = 0; n < p.size(); ++n) {
            if (cfg.topology.nodes[n] == cfg.topology.gateway) CHECK(p[n] == 0);
            else CHECK(p[n] == expected);
        }
    };
    check_all(0.0, 0);
    check_all(3.0, 0);
    check_all(-6.0, 10);
    check_all(-20.0, 15);

    // The weakest outgoing link decides for two-parent motes.
    auto u = flat_sample(cfg, 4.0, 10.0);
    u.snr_db[static_cast<std::size_t>(cfg.topology.outgoing(7)[1])] = -3.0;
    const auto p = assign_power(cfg, u);
    CHECK(p[static_cast<std::size_t>(cfg.topology.node_index(7))] == 5);
}

TEST_CASE("delivery saturates at both ends") {
    const NetworkModel net(SimConfig::defaults(), 1);
    const auto& cfg = net.config();
    const auto view = net.view(identity_regime());
    for (int id : {0, 77, 1295}) {
        const auto opt = option_from_id(id);
        auto good = flat_sample(cfg, 10.0, 10.0);
        CHECK(net.verify(good, assign_power(cfg, good), opt, view).packet_loss == 0.0);
        auto bad = flat_sample(cfg, -30.0, 10.0);
        CHECK(net.verify(bad, assign_power(cfg, bad), opt, view).packet_loss == doctest::Approx(100.0));
    }
    CHECK(net.delivery_probability(-5.0) == 0.0);
    CHECK(net.delivery_probability(0.0) == doctest::Approx(0.5));
    CHECK(net.delivery_probability(5.0) == 1.0);
}

TEST_CASE("regime transform is affine on the verifier output") {
    auto cfg = SimConfig::defaults();
    cfg.coupling = gmm::Point(1.0, 1.0);
    for (auto& c : cfg.clusters) {
        c.center = cfg.reference + gmm::Point(0.0, 0.8);
        c.sd = gmm::Point(0.0, 0.0);
    }
    const NetworkModel net(cfg, 3);
    Regime r;
    r.group_weight = {1.0, 0.0, 0.0};
    const auto drifted = net.view(r);
    const auto ident = net.view(identity_regime());
    std::mt19937_64 rng(5);
    for (int k = 0; k < 50; ++k) {
        const auto u = random_sample(cfg, rng);
        const auto p = assign_power(cfg, u);
        const auto& opt = net.options()[static_cast<std::size_t>(k * 25)];
        const auto a = net.verify(u, p, opt, ident);
        const auto b = net.verify(u, p, opt, drifted);
        CHECK(b.energy - a.energy == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(b.packet_loss == doctest::Approx(a.packet_loss).epsilon(1e-12));
    }
}

TEST_CASE("flow conserves packets and quality stays in bounds") {
    const NetworkModel net(SimConfig::defaults(), 11);
    const auto& cfg = net.config();
    std::mt19937_64 rng(99);
    const auto schedule = build_schedule(cfg, AppearanceOrder::parse("(B),R,G"), 350);
    for (int k = 0; k < 200; ++k) {
        const auto u = random_sample(cfg, rng);
        const auto p = assign_power(cfg, u);
        const auto& opt = net.options()[rng() % 1296];
        const auto f = net.flow(u, p, opt);
        CHECK(std::abs(f.delivered + f.lost - f.generated) < 1e-9);
        const auto view = net.view(active_regime(schedule, 1 + static_cast<int>(rng() % 350)));
        const auto q = net.verify(u, p, opt, view);
        CHECK(q.packet_loss >= 0.0);
        CHECK(q.packet_loss <= 100.0);
        CHECK(q.energy > 0.0);
    }
}

TEST_CASE("raising every link SNR never increases packet loss") {
    const NetworkModel net(SimConfig::defaults(), 2);
    const auto& cfg = net.config();
    const auto view = net.view(identity_regime());
    std::mt19937_64 rng(17);
    for (int k = 0; k < 200; ++k) {
        const auto u = random_sample(cfg, rng);
        const auto p = assign_power(cfg, u);
        auto better = u;
        std::uniform_real_distribution<double> lift(0.0, 3.0);
        for (auto& s : better.snr_db) s += lift(rng);
        const auto& opt = net.options()[rng() % 1296];
        CHECK(net.verify(better, p, opt, view).packet_loss <= net.verify(u, p, opt, view).packet_loss + 1e-12);
    }
}

TEST_CASE("shifting a mote's traffic to the better route never increases packet loss") {
    const NetworkModel net(SimConfig::defaults(), 4);
    const auto& cfg = net.config();
    const auto& topo = cfg.topology;
    const auto view = net.view(identity_regime());
    std::mt19937_64 rng(23);

    for (int k = 0; k < 40; ++k) {
        const auto u = random_sample(cfg, rng);
        const auto p = assign_power(cfg, u);
        const auto base = option_from_id(static_cast<int>(rng() % 1296));

        // End-to-end delivery of a node, given the option, from the textbook recursion.
        std::function<double(int, const AdaptationOption&)> e2e = [&](int id, const AdaptationOption& o) {
            if (id == topo.gateway) return 1.0;
            double s = 0.0;
            for (int l : topo.outgoing(id)) {
                const auto li = static_cast<std::size_t>(l);
                const double snr = u.snr_db[li] + 0.6 * p[static_cast<std::size_t>(topo.node_index(id))];
                const double d = std::clamp((snr + 5.0) / 10.0, 0.0, 1.0);
                s += net.link_share(o, l) * d * e2e(topo.links[li].to, o);
            }
            return s;
        };

        const auto motes = topo.two_parent_motes();
        for (std::size_t slot = 0; slot < motes.size(); ++slot) {
            const auto out = topo.outgoing(motes[slot]);
            const double first = e2e(topo.links[static_cast<std::size_t>(out[0])].to, base);
            const double d0 = std::clamp((u.snr_db[static_cast<std::size_t>(out[0])] + 0.6 * p[static_cast<std::size_t>(topo.node_index(motes[slot]))] + 5.0) / 10.0, 0.0, 1.0);
            const double d1 = std::clamp((u.snr_db[static_cast<std::size_t>(out[1])] + 0.6 * p[static_cast<std::size_t>(topo.node_index(motes[slot]))] + 5.0) / 10.0, 0.0, 1.0);
            const double second = e2e(topo.links[static_cast<std::size_t>(out[1])].to, base);
            const bool first_better = d0 * first > d1 * second;

            std::vector<double> pls;
            for (int s = 0; s < kSplitLevels; ++s) {
                auto o = base;
                o.split[slot] = s;
                pls.push_back(net.verify(u, p, o, view).packet_loss);
            }
            // More share on the first link as s grows.
            for (int s = 1; s < kSplitLevels; ++s) {
                if (first_better) CHECK(pls[static_cast<std::size_t>(s)] <= pls[static_cast<std::size_t>(s - 1)] + 1e-9);
                else CHECK(pls[static_cast<std::size_t>(s)] >= pls[static_cast<std::size_t>(s - 1)] - 1e-9);
            }
        }
    }
}

TEST_CASE("base schedule") {
    const auto cfg = SimConfig::defaults();
    const auto s = build_schedule(cfg, AppearanceOrder::parse("(B),R,G"), 350);
    CHECK(s.cycles() == 350);
    CHECK(s.first_stable_length() == 140);

    const auto r100 = active_regime(s, 100);
    CHECK(r100.active(Group::B));
    CHECK_FALSE(r100.active(Group::R));
    CHECK_FALSE(r100.active(Group::G));

    const auto r300 = active_regime(s, 300);
    CHECK(r300.active(Group::B));
    CHECK(r300.active(Group::R));
    CHECK(r300.active(Group::G));

    CHECK(active_regime(s, 200).active(Group::R));
    CHECK_FALSE(active_regime(s, 200).active(Group::G));

    // Ramp 241..260 runs from 2.0 to 2.5; cycle 250 is its midpoint.
    CHECK(active_regime(s, 250).interference_mean == doctest::Approx(2.25));
    CHECK(active_regime(s, 250).group_weight[2] == doctest::Approx(0.5));
    CHECK(active_regime(s, 260).group_weight[2] == doctest::Approx(1.0));

    CHECK_THROWS_AS(active_regime(s, 0), RangeError);
    CHECK_THROWS_AS(active_regime(s, 351), RangeError);

    // A single newcomer arrives in the final drift.
    const auto one = build_schedule(cfg, AppearanceOrder::parse("(B,R),G"), 350);
    CHECK_FALSE(active_regime(one, 240).active(Group::G));
    CHECK(active_regime(one, 260).active(Group::G));
    CHECK(active_regime(one, 1).active(Group::R));
}

TEST_CASE("appearance order labels round trip") {
    for (const char* s : {"(B),R,G", "(B),G,R", "(B,R),G", "(B,G),R", "(R,G),B", "(B,R,G)"})
        CHECK(AppearanceOrder::parse(s).label() == s);
    CHECK_THROWS_AS(AppearanceOrder::parse("B,R"), InvalidInput);
    CHECK_THROWS_AS(AppearanceOrder::parse("(B),B"), InvalidInput);
    CHECK_THROWS_AS(AppearanceOrder::parse("(X)"), InvalidInput);
}

TEST_CASE("uncertainty sampling") {
    auto cfg = SimConfig::defaults();
    Regime calm;
    std::mt19937_64 rng(1);
    const auto u = sample_uncertainties(cfg, calm, rng);
    for (std::size_t l = 0; l < cfg.topology.links.size(); ++l) CHECK(u.snr_db[l] == cfg.topology.links[l].base_snr_db);
    for (double v : u.load) CHECK(v >= 0.0);

    Regime noisy;
    noisy.interference_mean = 2.0;
    noisy.interference_sd = 1.5;
    std::mt19937_64 a(derive_seed(7, 12, kUncertainty)), b(derive_seed(7, 12, kUncertainty));
    CHECK(sample_uncertainties(cfg, noisy, a) == sample_uncertainties(cfg, noisy, b));
    CHECK(derive_seed(7, 12, kUncertainty) != derive_seed(7, 13, kUncertainty));
    CHECK(derive_seed(7, 12, kUncertainty) != derive_seed(7, 12, kAnalysis));
}

TEST_CASE("drifted views place options in the active groups only") {
    const NetworkModel net(SimConfig::defaults(), 8);
    const auto& clusters = net.config().clusters;
    const auto s = build_schedule(net.config(), AppearanceOrder::parse("(B),R,G"), 350);
    const auto v100 = net.view(active_regime(s, 100));
    for (int lbl : v100.label) CHECK(clusters[static_cast<std::size_t>(lbl)].group == Group::B);

    const auto v300 = net.view(active_regime(s, 300));
    std::array<int, 3> counts{};
    for (int lbl : v300.label) ++counts[static_cast<std::size_t>(clusters[static_cast<std::size_t>(lbl)].group)];
    for (int c : counts) CHECK(c > 350);  // about a third each

    // Same seed, same layout.
    const NetworkModel again(SimConfig::defaults(), 8);
    CHECK(again.view(active_regime(s, 300)).label == v300.label);
}

TEST_CASE("config JSON round trip and validation") {
    const auto cfg = SimConfig::defaults();
    const auto back = config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));

    auto j = to_json(cfg);
    j["clusters"][0]["proportion"] = 0.9;
    CHECK_THROWS_AS(config_from_json(j), InvalidInput);
    auto k = to_json(cfg);
    k["timeline"][0]["last_cycle"] = "soon";
    CHECK_THROWS_AS(config_from_json(k), InvalidInput);
    CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), IoError);
}
