#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "driftguard/gmm.hpp"

// DeltaIoT-style managed network: topology, adaptation options, uncertainty
// sampling, and an expected-flow quality verifier with regime transforms.
namespace driftguard::sim {

struct QualityPoint {
    double packet_loss = 0.0;  // percent
    double energy = 0.0;       // mC

    gmm::Point as_point() const { return {packet_loss, energy}; }
    bool operator==(const QualityPoint&) const = default;
};

struct Link {
    int from = 0;
    int to = 0;
    double base_snr_db = 0.0;
};

struct Topology {
    int gateway = 1;
    std::vector<int> nodes;  // sorted node ids, gateway included
    std::vector<Link> links;

    static Topology delta_iot();

    int node_index(int id) const;
    std::vector<int> outgoing(int id) const;  // link indices, in declaration order
    std::vector<int> two_parent_motes() const;
    // Non-gateway motes ordered so that every child precedes its parents.
    std::vector<int> leaf_to_root_order() const;
    void validate() const;
};

inline constexpr int kSplitLevels = 6;
inline constexpr int kConfigurableMotes = 4;

struct AdaptationOption {
    int id = 0;
    std::array<int, kConfigurableMotes> split{};  // 0..5, share to first parent = split / 5

    double first_share(int slot) const { return split[static_cast<std::size_t>(slot)] / 5.0; }
};

std::vector<AdaptationOption> enumerate_options(const Topology& topo);
AdaptationOption option_from_id(int id);

struct UncertaintySample {
    std::vector<double> snr_db;  // per link index
    std::vector<double> load;    // per node index, packets per cycle

    bool operator==(const UncertaintySample&) const = default;
};

using PowerSettings = std::vector<int>;  // per node index, 0..15

enum class Group { B = 0, R = 1, G = 2 };
inline constexpr int kGroupCount = 3;
std::string group_name(Group g);
Group group_from_name(const std::string& s);

struct ClusterSpec {
    std::string name;
    Group group = Group::B;
    gmm::Point center = gmm::Point::Zero();
    gmm::Point sd = gmm::Point(1.0, 0.05);
    double corr = 0.0;
    double proportion = 1.0;  // share within its group
};

struct GroupSpec {
    double weight = 1.0;  // share of options once fully active, relative to other groups
};

struct SegmentSpec {
    int last_cycle = 0;
    bool ramp = false;
    double interference_mean = 0.0;  // at segment end for ramps
    double interference_sd = 0.0;
};

struct RadioParams {
    double delivery_floor_db = -5.0;  // SNR where delivery probability reaches 0
    double delivery_span_db = 10.0;   // width of the linear window
    double power_gain_db = 0.6;       // per power step
    int max_power = 15;
    double target_snr_db = 0.0;
};

struct EnergyParams {
    double idle_mc = 0.0;
    double per_packet_mc = 0.0;
    double per_packet_power_mc = 0.0;
};

struct SimConfig {
    Topology topology = Topology::delta_iot();
    RadioParams radio;
    EnergyParams energy;
    double load_min = 8.0;
    double load_max = 12.0;
    std::vector<SegmentSpec> segments;  // timeline, arrivals land on ramp segments
    std::array<GroupSpec, kGroupCount> groups{};
    std::vector<ClusterSpec> clusters;
    gmm::Point reference = gmm::Point(29.0, 13.85);  // typical untransformed quality
    gmm::Point coupling = gmm::Point(0.15, 0.1);    // how much network conditions leak into a cluster

    static SimConfig defaults();
    int cycles() const { return segments.empty() ? 0 : segments.back().last_cycle; }
    void validate() const;
};

nlohmann::json to_json(const SimConfig& cfg);
SimConfig config_from_json(const nlohmann::json& j);
SimConfig load_config(const std::string& path);

// Groups active from cycle 1 and those arriving later, in arrival order.
struct AppearanceOrder {
    std::vector<Group> initial;
    std::vector<Group> arrivals;

    std::string label() const;  // e.g. "(B),R,G"
    static AppearanceOrder parse(const std::string& s);
    bool operator==(const AppearanceOrder&) const = default;
};

struct Regime {
    int cycle = 0;
    int segment = 0;
    std::array<double, kGroupCount> group_weight{};  // 0 = absent
    double interference_mean = 0.0;
    double interference_sd = 0.0;
    bool identity = false;

    bool active(Group g) const { return group_weight[static_cast<std::size_t>(g)] > 0.0; }
};

struct RegimeSchedule {
    struct Segment {
        int first = 0;
        int last = 0;
        bool ramp = false;
        std::array<double, kGroupCount> weight_start{};
        std::array<double, kGroupCount> weight_end{};
        double mean_start = 0.0;
        double mean_end = 0.0;
        double sd = 0.0;
    };
    std::vector<Segment> segments;

    int cycles() const { return segments.empty() ? 0 : segments.back().last; }
    int first_stable_length() const;
};

RegimeSchedule build_schedule(const SimConfig& cfg, const AppearanceOrder& order, int cycles);
Regime active_regime(const RegimeSchedule& schedule, int cycle);

// Independent, reproducible stream for (seed, cycle, purpose).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t cycle, std::uint64_t stream);
enum Stream : std::uint64_t { kUncertainty = 1, kAnalysis = 2, kLifelong = 3, kOptionLayout = 4, kRegressor = 5 };

UncertaintySample sample_uncertainties(const SimConfig& cfg, const Regime& regime,
                                       std::mt19937_64& rng);

PowerSettings assign_power(const SimConfig& cfg, const UncertaintySample& uncs);

struct Flow {
    double generated = 0.0;
    double delivered = 0.0;
    double lost = 0.0;
    std::vector<double> transmitted;  // per node index
    QualityPoint quality;
};

// Per-option placement inside the group/cluster layout for one regime.
struct RegimeView {
    bool identity = true;
    std::vector<int> label;  // per option id, cluster index or -1
    std::vector<gmm::Point> offset;
};

class NetworkModel {
public:
    NetworkModel(SimConfig cfg, std::uint64_t layout_seed);

    const SimConfig& config() const { return cfg_; }
    const std::vector<AdaptationOption>& options() const { return options_; }

    double delivery_probability(double snr_eff_db) const;
    double effective_snr(const UncertaintySample& uncs, const PowerSettings& power, int link) const;
    Flow flow(const UncertaintySample& uncs, const PowerSettings& power,
              const AdaptationOption& option) const;

    RegimeView view(const Regime& regime) const;
    QualityPoint verify(const UncertaintySample& uncs, const PowerSettings& power,
                        const AdaptationOption& option, const RegimeView& view) const;

    // Fraction of a mote's traffic the option sends over this link.
    double link_share(const AdaptationOption& option, int link) const;

private:
    SimConfig cfg_;
    std::vector<AdaptationOption> options_;
    std::vector<int> order_;                    // leaf-to-root node indices
    std::vector<std::vector<int>> out_links_;   // per node index
    std::vector<int> slot_of_node_;             // configurable slot or -1
    std::vector<int> link_from_idx_, link_to_idx_;
    std::vector<double> group_u_, cluster_u_;   // per option, layout draws
    std::vector<gmm::Point> scatter_;           // per option, standard normal pair
    std::vector<Eigen::Matrix2d> cluster_chol_;
};

}  // namespace driftguard::sim
