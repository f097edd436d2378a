#include "driftguard/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "driftguard/errors.hpp"

namespace driftguard::metrics {

double utility(const sim::QualityPoint& q, const UtilityModel& model) {
    const double p_pl = 1.0 - std::clamp(q.packet_loss, 0.0, 100.0) / 100.0;
    double p_ec = 0.0;
    if (q.energy < model.ec_low) p_ec = 1.0;
    else if (q.energy <= model.ec_high) p_ec = model.ec_medium;
    return model.w_pl * p_pl + model.w_ec * p_ec;
}

double rsm(const RsmInput& in) {
    if (in.m < 2) throw InvalidInput("rsm: needs at least two ranked classes");
    if (in.r.empty() || in.r.size() != in.r_star.size()) throw InvalidInput("rsm: rank lists must be nonempty and equal length");
    double sum = 0.0;
    for (std::size_t i = 0; i < in.r.size(); ++i) {
        if (in.r[i] < 1 || in.r[i] > in.m || in.r_star[i] < 1 || in.r_star[i] > in.m)
            throw InvalidInput("rsm: ranks must lie in 1..m");
        sum += in.r[i] - in.r_star[i];
    }
    return sum / (static_cast<double>(in.r.size()) * (in.m - 1));
}

int IdealBaseline::rank_of_label(int label) const {
    const auto it = std::find(ranking.begin(), ranking.end(), static_cast<gmm::ClassId>(label));
    return it == ranking.end() ? 0 : static_cast<int>(it - ranking.begin()) + 1;
}

IdealBaseline build_ideal_baseline(const Archive& archive, lifelong::PreferenceOrder order,
                                   std::size_t option_count) {
    if (archive.cycles.empty()) throw InvalidInput("ideal baseline: empty archive");
    std::vector<gmm::Point> pts;
    std::vector<gmm::ClassId> labels;
    for (const auto& c : archive.cycles) {
        if (c.quality.size() != option_count || c.label.size() != option_count)
            throw InvalidInput("ideal baseline: archive cycle " + std::to_string(c.cycle) + " is not exhaustive");
        for (std::size_t o = 0; o < option_count; ++o) {
            if (c.label[o] < 0) continue;
            pts.push_back(c.quality[o].as_point());
            labels.push_back(c.label[o]);
        }
    }
    if (pts.empty()) throw InvalidInput("ideal baseline: archive has no labeled points");

    IdealBaseline b;
    b.model = gmm::fit_labeled(pts, labels);
    b.ranking = lifelong::rank_classes(b.model, order);
    b.ranked_classes = static_cast<int>(b.ranking.size());
    for (const auto& c : archive.cycles) {
        int best = 0;
        for (int lbl : c.label) {
            const int rk = b.rank_of_label(lbl);
            if (rk != 0 && (best == 0 || rk < best)) best = rk;
        }
        b.r_star.push_back(best);
    }
    return b;
}

MannWhitney mann_whitney(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw InvalidInput("mann_whitney: samples must be nonempty");
    struct Item {
        double v;
        bool from_a;
    };
    std::vector<Item> all;
    for (double v : a) all.push_back({v, true});
    for (double v : b) all.push_back({v, false});
    std::sort(all.begin(), all.end(), [](const Item& x, const Item& y) { return x.v < y.v; });

    const double n = static_cast<double>(all.size());
    double rank_sum_a = 0.0, tie_term = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].v == all[i].v) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (all[k].from_a) rank_sum_a += midrank;
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    MannWhitney r;
    r.u = rank_sum_a - na * (na + 1.0) / 2.0;
    r.cl = r.u / (na * nb);
    const double var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if (var > 0.0) {
        r.z = (r.u - na * nb / 2.0) / std::sqrt(var);
        r.p_two_sided = std::erfc(std::abs(r.z) / std::sqrt(2.0));
    }
    return r;
}

double mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b) { return mann_whitney(a, b).cl; }

std::string series_csv(const std::vector<SeriesRow>& rows) {
    std::string out = "cycle,approach,pl,ec,utility,selected_rank,ideal_rank,rsm_window_id,rsm\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f,%.6f,%d,%d,%d,%.6f\n", r.cycle, r.approach.c_str(),
                      r.quality.packet_loss, r.quality.energy, r.utility, r.selected_rank, r.ideal_rank,
                      r.rsm_window_id, r.rsm);
        out += buf;
    }
    return out;
}

}  // namespace driftguard::metrics
