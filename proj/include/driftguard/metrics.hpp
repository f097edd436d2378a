#pragma once

#include <string>
#include <vector>

#include "driftguard/gmm.hpp"
#include "driftguard/lifelong.hpp"
#include "driftguard/network.hpp"

namespace driftguard::metrics {

struct UtilityModel {
    double w_pl = 0.8;
    double w_ec = 0.2;
    double ec_low = 14.5;   // full preference below
    double ec_high = 15.0;  // no preference above
    double ec_medium = 0.5;
};

double utility(const sim::QualityPoint& q, const UtilityModel& model = {});

struct RsmInput {
    std::vector<int> r;
    std::vector<int> r_star;
    int m = 0;  // ranked classes
};

double rsm(const RsmInput& input);

// Exhaustive verification of every option, with the simulator's cluster
// label (-1 for unlabeled) as ground truth.
struct ArchiveCycle {
    int cycle = 0;
    std::vector<sim::QualityPoint> quality;  // per option id
    std::vector<int> label;                  // per option id
};

struct Archive {
    std::vector<ArchiveCycle> cycles;
};

struct IdealBaseline {
    gmm::GmmModel model;              // class id = cluster index
    std::vector<gmm::ClassId> ranking;
    std::vector<int> r_star;          // per archive cycle
    int ranked_classes = 0;

    int rank_of_label(int label) const;  // 0 when the label has no class
};

IdealBaseline build_ideal_baseline(const Archive& archive, lifelong::PreferenceOrder order,
                                   std::size_t option_count = 1296);

struct MannWhitney {
    double u = 0.0;       // U of sample A
    double cl = 0.0;      // U / (|A||B|)
    double z = 0.0;       // normal approximation, tie corrected
    double p_two_sided = 1.0;
};

MannWhitney mann_whitney(const std::vector<double>& a, const std::vector<double>& b);
// Probability that a draw from A exceeds one from B, ties counting half.
double mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b);

struct SeriesRow {
    int cycle = 0;
    std::string approach;
    sim::QualityPoint quality;
    double utility = 0.0;
    int selected_rank = 0;
    int ideal_rank = 0;
    int rsm_window_id = 0;
    double rsm = 0.0;
};

std::string series_csv(const std::vector<SeriesRow>& rows);

}  // namespace driftguard::metrics
