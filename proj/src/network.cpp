#include "driftguard/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Cholesky>

#include "driftguard/errors.hpp"

namespace driftguard::sim {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t cycle, std::uint64_t stream) {
    return splitmix(splitmix(splitmix(seed) ^ cycle) ^ (stream * 0xD1B54A32D192ED03ULL));
}

// ---------------------------------------------------------------------------
// Topology

Topology Topology::delta_iot() {
    Topology t;
    t.gateway = 1;
    for (int id = 1; id <= 16; ++id) t.nodes.push_back(id);
    t.links = {
        {2, 4, 7.0},   {3, 1, 9.0},   {4, 1, 8.0},   {5, 9, 2.0},   {6, 4, 5.0},
        {7, 2, 3.0},   {7, 3, 6.0},   {8, 1, 9.0},   {9, 1, 7.0},   {10, 6, 1.0},
        {10, 5, 4.0},  {11, 7, 5.0},  {11, 16, 2.0}, {12, 7, 6.0},  {12, 3, 3.0},
        {13, 11, 4.0}, {14, 12, 5.0}, {15, 12, 2.0}, {16, 3, 7.0},
    };
    return t;
}

int Topology::node_index(int id) const {
    const auto it = std::lower_bound(nodes.begin(), nodes.end(), id);
    if (it == nodes.end() || *it != id) throw InvalidTopology("unknown node " + std::to_string(id));
    return static_cast<int>(it - nodes.begin());
}

std::vector<int> Topology::outgoing(int id) const {
    std::vector<int> out;
    for (std::size_t l = 0; l < links.size(); ++l)
        if (links[l].from == id) out.push_back(static_cast<int>(l));
    return out;
}

std::vector<int> Topology::two_parent_motes() const {
    std::vector<int> out;
    for (int id : nodes)
        if (outgoing(id).size() == 2) out.push_back(id);
    return out;
}

std::vector<int> Topology::leaf_to_root_order() const {
    // Reverse post-order of a DFS on child->parent edges, reversed again so
    // that children come before parents.
    std::map<int, int> state;  // 0 new, 1 open, 2 done
    std::vector<int> post;
    std::function<void(int)> visit = [&](int id) {
        state[id] = 1;
        for (const auto& l : links)
            if (l.to == id) {
                if (state[l.from] == 1) throw InvalidTopology("topology has a cycle");
                if (state[l.from] == 0) visit(l.from);
            }
        state[id] = 2;
        post.push_back(id);
    };
    visit(gateway);
    std::vector<int> order;
    for (int id : post)
        if (id != gateway) order.push_back(id);
    return order;
}

void Topology::validate() const {
    if (!std::is_sorted(nodes.begin(), nodes.end()) ||
        std::adjacent_find(nodes.begin(), nodes.end()) != nodes.end())
        throw InvalidTopology("node ids must be unique and sorted");
    node_index(gateway);
    for (const auto& l : links) {
        node_index(l.from);
        node_index(l.to);
        if (l.from == gateway) throw InvalidTopology("gateway cannot have parents");
        if (!std::isfinite(l.base_snr_db)) throw InvalidTopology("link SNR must be finite");
    }
    for (int id : nodes) {
        const auto n = outgoing(id).size();
        if (id != gateway && (n < 1 || n > 2))
            throw InvalidTopology("mote " + std::to_string(id) + " needs one or two parents");
    }
    const auto order = leaf_to_root_order();
    if (order.size() + 1 != nodes.size()) throw InvalidTopology("some motes cannot reach the gateway");
    if (two_parent_motes().size() != kConfigurableMotes)
        throw InvalidTopology("expected exactly 4 motes with two parent links");
}

// ---------------------------------------------------------------------------
// Options

AdaptationOption option_from_id(int id) {
    if (id < 0 || id >= 1296) throw InvalidInput("option id out of range");
    AdaptationOption o;
    o.id = id;
    int rest = id;
    for (int slot = kConfigurableMotes - 1; slot >= 0; --slot) {
        o.split[static_cast<std::size_t>(slot)] = rest % kSplitLevels;
        rest /= kSplitLevels;
    }
    return o;
}

std::vector<AdaptationOption> enumerate_options(const Topology& topo) {
    if (topo.two_parent_motes().size() != kConfigurableMotes)
        throw InvalidTopology("expected exactly 4 motes with two parent links");
    std::vector<AdaptationOption> out;
    out.reserve(1296);
    for (int id = 0; id < 1296; ++id) out.push_back(option_from_id(id));
    return out;
}

// ---------------------------------------------------------------------------
// Groups and appearance orders

std::string group_name(Group g) {
    switch (g) {
        case Group::B: return "B";
        case Group::R: return "R";
        case Group::G: return "G";
    }
    return "?";
}

Group group_from_name(const std::string& s) {
    if (s == "B") return Group::B;
    if (s == "R") return Group::R;
    if (s == "G") return Group::G;
    throw InvalidInput("unknown group '" + s + "'");
}

std::string AppearanceOrder::label() const {
    std::string s = "(";
    for (std::size_t i = 0; i < initial.size(); ++i) s += (i ? "," : "") + group_name(initial[i]);
    s += ")";
    for (auto g : arrivals) s += "," + group_name(g);
    return s;
}

AppearanceOrder AppearanceOrder::parse(const std::string& s) {
    AppearanceOrder o;
    const auto open = s.find('(');
    const auto close = s.find(')');
    if (open != 0 || close == std::string::npos) throw InvalidInput("appearance order must start with (...): " + s);
    auto split = [](const std::string& part) {
        std::vector<Group> gs;
        std::stringstream ss(part);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) gs.push_back(group_from_name(tok));
        return gs;
    };
    o.initial = split(s.substr(1, close - 1));
    o.arrivals = split(s.substr(close + 1));
    std::set<Group> all(o.initial.begin(), o.initial.end());
    all.insert(o.arrivals.begin(), o.arrivals.end());
    if (o.initial.empty() || all.size() != o.initial.size() + o.arrivals.size())
        throw InvalidInput("appearance order must list distinct groups: " + s);
    return o;
}

// ---------------------------------------------------------------------------
// Configuration

SimConfig SimConfig::defaults() {
    SimConfig c;
    c.energy = {7.15, 0.021, 0.008};
    c.load_min = 8.0;
    c.load_max = 12.0;
    c.segments = {
        {140, false, 2.0, 1.5},
        {160, true, 0.0, 0.0},
        {240, false, 2.0, 1.5},
        {260, true, 0.0, 0.0},
        {350, false, 2.5, 1.5},
    };
    c.groups = {GroupSpec{1.0}, GroupSpec{1.0}, GroupSpec{1.0}};
    auto add = [&](const char* name, Group g, double pl, double ec, double prop) {
        c.clusters.push_back({name, g, gmm::Point(pl, ec), gmm::Point(1.5, 0.04), 0.0, prop});
    };
    add("B1", Group::B, 45.0, 13.20, 0.40);
    add("B2", Group::B, 55.0, 13.10, 0.35);
    add("B3", Group::B, 75.0, 13.30, 0.25);
    add("R1", Group::R, 50.0, 14.05, 0.50);
    add("R2", Group::R, 65.0, 14.20, 0.50);
    add("G1", Group::G, 5.0, 14.80, 0.40);
    add("G2", Group::G, 15.0, 14.70, 0.30);
    add("G3", Group::G, 25.0, 14.90, 0.30);
    return c;
}

void SimConfig::validate() const {
    topology.validate();
    if (segments.empty()) throw InvalidInput("config: timeline needs at least one segment");
    int prev = 0;
    for (const auto& s : segments) {
        if (s.last_cycle <= prev) throw InvalidInput("config: segment ends must increase");
        if (s.interference_sd < 0.0) throw InvalidInput("config: interference sd must be >= 0");
        prev = s.last_cycle;
    }
    if (segments.front().ramp || segments.back().ramp)
        throw InvalidInput("config: timeline must start and end with stable segments");
    if (!(load_min >= 0.0 && load_max >= load_min)) throw InvalidInput("config: bad load range");
    if (radio.delivery_span_db <= 0.0 || radio.max_power < 0)
        throw InvalidInput("config: bad radio parameters");
    for (int g = 0; g < kGroupCount; ++g) {
        if (!(groups[static_cast<std::size_t>(g)].weight > 0.0)) throw InvalidInput("config: group weight must be > 0");
        double total = 0.0;
        for (const auto& cl : clusters)
            if (static_cast<int>(cl.group) == g) total += cl.proportion;
        if (std::abs(total - 1.0) > 1e-9)
            throw InvalidInput("config: cluster proportions of group " + group_name(static_cast<Group>(g)) +
                               " must sum to 1");
    }
    for (const auto& cl : clusters)
        if (!(cl.sd[0] >= 0.0 && cl.sd[1] >= 0.0 && std::abs(cl.corr) < 1.0))
            throw InvalidInput("config: bad cluster spread for " + cl.name);
}

nlohmann::json to_json(const SimConfig& cfg) {
    using nlohmann::json;
    json links = json::array();
    for (const auto& l : cfg.topology.links) links.push_back({{"from", l.from}, {"to", l.to}, {"snr_db", l.base_snr_db}});
    json segs = json::array();
    for (const auto& s : cfg.segments)
        segs.push_back({{"last_cycle", s.last_cycle},
                        {"ramp", s.ramp},
                        {"interference_mean", s.interference_mean},
                        {"interference_sd", s.interference_sd}});
    json groups = json::object();
    for (int g = 0; g < kGroupCount; ++g)
        groups[group_name(static_cast<Group>(g))] = {{"weight", cfg.groups[static_cast<std::size_t>(g)].weight}};
    json clusters = json::array();
    for (const auto& c : cfg.clusters)
        clusters.push_back({{"name", c.name},
                            {"group", group_name(c.group)},
                            {"center", {c.center[0], c.center[1]}},
                            {"sd", {c.sd[0], c.sd[1]}},
                            {"corr", c.corr},
                            {"proportion", c.proportion}});
    return {
        {"topology", {{"gateway", cfg.topology.gateway}, {"nodes", cfg.topology.nodes}, {"links", links}}},
        {"radio",
         {{"delivery_floor_db", cfg.radio.delivery_floor_db},
          {"delivery_span_db", cfg.radio.delivery_span_db},
          {"power_gain_db", cfg.radio.power_gain_db},
          {"max_power", cfg.radio.max_power},
          {"target_snr_db", cfg.radio.target_snr_db}}},
        {"energy",
         {{"idle_mc", cfg.energy.idle_mc},
          {"per_packet_mc", cfg.energy.per_packet_mc},
          {"per_packet_power_mc", cfg.energy.per_packet_power_mc}}},
        {"load", {{"min", cfg.load_min}, {"max", cfg.load_max}}},
        {"timeline", segs},
        {"groups", groups},
        {"clusters", clusters},
        {"reference", {cfg.reference[0], cfg.reference[1]}},
        {"coupling", {cfg.coupling[0], cfg.coupling[1]}},
    };
}

SimConfig config_from_json(const nlohmann::json& j) {
    SimConfig c = SimConfig::defaults();
    try {
        if (j.contains("topology")) {
            const auto& t = j.at("topology");
            Topology topo;
            topo.gateway = t.value("gateway", 1);
            topo.nodes = t.at("nodes").get<std::vector<int>>();
            for (const auto& l : t.at("links"))
                topo.links.push_back({l.at("from").get<int>(), l.at("to").get<int>(), l.at("snr_db").get<double>()});
            c.topology = topo;
        }
        if (j.contains("radio")) {
            const auto& r = j.at("radio");
            c.radio.delivery_floor_db = r.value("delivery_floor_db", c.radio.delivery_floor_db);
            c.radio.delivery_span_db = r.value("delivery_span_db", c.radio.delivery_span_db);
            c.radio.power_gain_db = r.value("power_gain_db", c.radio.power_gain_db);
            c.radio.max_power = r.value("max_power", c.radio.max_power);
            c.radio.target_snr_db = r.value("target_snr_db", c.radio.target_snr_db);
        }
        if (j.contains("energy")) {
            const auto& e = j.at("energy");
            c.energy.idle_mc = e.value("idle_mc", c.energy.idle_mc);
            c.energy.per_packet_mc = e.value("per_packet_mc", c.energy.per_packet_mc);
            c.energy.per_packet_power_mc = e.value("per_packet_power_mc", c.energy.per_packet_power_mc);
        }
        if (j.contains("load")) {
            c.load_min = j.at("load").value("min", c.load_min);
            c.load_max = j.at("load").value("max", c.load_max);
        }
        if (j.contains("timeline")) {
            c.segments.clear();
            for (const auto& s : j.at("timeline"))
                c.segments.push_back({s.at("last_cycle").get<int>(), s.value("ramp", false),
                                      s.value("interference_mean", 0.0), s.value("interference_sd", 0.0)});
        }
        if (j.contains("groups"))
            for (const auto& [name, g] : j.at("groups").items())
                c.groups[static_cast<std::size_t>(group_from_name(name))].weight = g.value("weight", 1.0);
        if (j.contains("clusters")) {
            c.clusters.clear();
            for (const auto& cl : j.at("clusters")) {
                ClusterSpec s;
                s.name = cl.at("name").get<std::string>();
                s.group = group_from_name(cl.at("group").get<std::string>());
                s.center = gmm::Point(cl.at("center").at(0).get<double>(), cl.at("center").at(1).get<double>());
                if (cl.contains("sd")) s.sd = gmm::Point(cl.at("sd").at(0).get<double>(), cl.at("sd").at(1).get<double>());
                s.corr = cl.value("corr", 0.0);
                s.proportion = cl.value("proportion", 1.0);
                c.clusters.push_back(s);
            }
        }
        if (j.contains("reference"))
            c.reference = gmm::Point(j.at("reference").at(0).get<double>(), j.at("reference").at(1).get<double>());
        if (j.contains("coupling"))
            c.coupling = gmm::Point(j.at("coupling").at(0).get<double>(), j.at("coupling").at(1).get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

SimConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("config " + path + ": " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Schedule

int RegimeSchedule::first_stable_length() const {
    return segments.empty() ? 0 : segments.front().last - segments.front().first + 1;
}

RegimeSchedule build_schedule(const SimConfig& cfg, const AppearanceOrder& order, int cycles) {
    if (cycles < 1) throw InvalidInput("schedule: cycles must be >= 1");
    std::vector<std::size_t> ramps;
    for (std::size_t i = 0; i < cfg.segments.size(); ++i)
        if (cfg.segments[i].ramp) ramps.push_back(i);
    if (order.arrivals.size() > ramps.size())
        throw InvalidInput("schedule: more arriving groups than ramp segments");
    // Late arrivals take the last ramps, so a single newcomer lands in the final drift.
    std::map<std::size_t, Group> arrival_at;
    const std::size_t skip = ramps.size() - order.arrivals.size();
    for (std::size_t a = 0; a < order.arrivals.size(); ++a) arrival_at[ramps[skip + a]] = order.arrivals[a];

    std::array<double, kGroupCount> w{};
    for (auto g : order.initial) w[static_cast<std::size_t>(g)] = cfg.groups[static_cast<std::size_t>(g)].weight;

    RegimeSchedule s;
    int first = 1;
    for (std::size_t i = 0; i < cfg.segments.size() && first <= cycles; ++i) {
        const auto& spec = cfg.segments[i];
        RegimeSchedule::Segment seg;
        seg.first = first;
        seg.last = (i + 1 == cfg.segments.size()) ? cycles : std::min(spec.last_cycle, cycles);
        seg.ramp = spec.ramp;
        seg.weight_start = w;
        if (spec.ramp) {
            const auto it = arrival_at.find(i);
            if (it != arrival_at.end())
                w[static_cast<std::size_t>(it->second)] = cfg.groups[static_cast<std::size_t>(it->second)].weight;
            const auto& prev = cfg.segments[i - 1];
            const auto& next = cfg.segments[i + 1];
            seg.mean_start = prev.interference_mean;
            seg.mean_end = next.interference_mean;
            seg.sd = 0.5 * (prev.interference_sd + next.interference_sd);
        } else {
            seg.mean_start = seg.mean_end = spec.interference_mean;
            seg.sd = spec.interference_sd;
        }
        seg.weight_end = w;
        s.segments.push_back(seg);
        first = seg.last + 1;
    }
    return s;
}

Regime active_regime(const RegimeSchedule& schedule, int cycle) {
    if (cycle < 1 || cycle > schedule.cycles())
        throw RangeError("cycle " + std::to_string(cycle) + " outside schedule 1.." +
                         std::to_string(schedule.cycles()));
    for (std::size_t i = 0; i < schedule.segments.size(); ++i) {
        const auto& seg = schedule.segments[i];
        if (cycle > seg.last) continue;
        Regime r;
        r.cycle = cycle;
        r.segment = static_cast<int>(i);
        r.interference_sd = seg.sd;
        if (seg.ramp) {
            const double len = seg.last - seg.first + 1;
            const double t = (cycle - seg.first + 1) / len;
            for (std::size_t g = 0; g < kGroupCount; ++g)
                r.group_weight[g] = seg.weight_start[g] + t * (seg.weight_end[g] - seg.weight_start[g]);
            r.interference_mean = seg.mean_start + t * (seg.mean_end - seg.mean_start);
        } else {
            r.group_weight = seg.weight_end;
            r.interference_mean = seg.mean_start;
        }
        return r;
    }
    throw RangeError("cycle outside schedule");
}

// ---------------------------------------------------------------------------
// Uncertainties and power

UncertaintySample sample_uncertainties(const SimConfig& cfg, const Regime& regime,
                                       std::mt19937_64& rng) {
    UncertaintySample u;
    u.snr_db.resize(cfg.topology.links.size());
    u.load.assign(cfg.topology.nodes.size(), 0.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t l = 0; l < cfg.topology.links.size(); ++l) {
        const double draw = regime.interference_mean + regime.interference_sd * noise(rng);
        u.snr_db[l] = cfg.topology.links[l].base_snr_db - draw;
    }
    std::uniform_real_distribution<double> load(cfg.load_min, cfg.load_max);
    for (std::size_t n = 0; n < cfg.topology.nodes.size(); ++n) {
        const double v = load(rng);
        if (cfg.topology.nodes[n] != cfg.topology.gateway) u.load[n] = v;
    }
    return u;
}

PowerSettings assign_power(const SimConfig& cfg, const UncertaintySample& uncs) {
    const auto& topo = cfg.topology;
    PowerSettings power(topo.nodes.size(), 0);
    for (std::size_t n = 0; n < topo.nodes.size(); ++n) {
        const auto out = topo.outgoing(topo.nodes[n]);
        if (out.empty()) continue;
        double worst = std::numeric_limits<double>::infinity();
        for (int l : out) worst = std::min(worst, uncs.snr_db[static_cast<std::size_t>(l)]);
        int p = 0;
        while (p < cfg.radio.max_power && worst + cfg.radio.power_gain_db * p < cfg.radio.target_snr_db - 1e-12) ++p;
        power[n] = p;
    }
    return power;
}

// ---------------------------------------------------------------------------
// Quality model

NetworkModel::NetworkModel(SimConfig cfg, std::uint64_t layout_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& topo = cfg_.topology;
    options_ = enumerate_options(topo);

    for (int id : topo.leaf_to_root_order()) order_.push_back(topo.node_index(id));
    out_links_.resize(topo.nodes.size());
    for (std::size_t n = 0; n < topo.nodes.size(); ++n) out_links_[n] = topo.outgoing(topo.nodes[n]);
    slot_of_node_.assign(topo.nodes.size(), -1);
    const auto configurable = topo.two_parent_motes();
    for (std::size_t s = 0; s < configurable.size(); ++s)
        slot_of_node_[static_cast<std::size_t>(topo.node_index(configurable[s]))] = static_cast<int>(s);
    for (const auto& l : topo.links) {
        link_from_idx_.push_back(topo.node_index(l.from));
        link_to_idx_.push_back(topo.node_index(l.to));
    }

    for (const auto& o : options_) {
        const auto oid = static_cast<std::uint64_t>(o.id);
        group_u_.push_back(unit(derive_seed(layout_seed, oid, kOptionLayout)));
        cluster_u_.push_back(unit(derive_seed(layout_seed, oid, kOptionLayout + 100)));
        // Box-Muller on two more independent draws.
        const double u1 = std::max(unit(derive_seed(layout_seed, oid, kOptionLayout + 200)), 1e-300);
        const double u2 = unit(derive_seed(layout_seed, oid, kOptionLayout + 300));
        const double r = std::sqrt(-2.0 * std::log(u1));
        scatter_.emplace_back(r * std::cos(2.0 * M_PI * u2), r * std::sin(2.0 * M_PI * u2));
    }
    for (const auto& c : cfg_.clusters) {
        Eigen::Matrix2d l;
        l << c.sd[0], 0.0, c.corr * c.sd[1], std::sqrt(1.0 - c.corr * c.corr) * c.sd[1];
        cluster_chol_.push_back(l);
    }
}

double NetworkModel::delivery_probability(double snr_eff_db) const {
    const double d = (snr_eff_db - cfg_.radio.delivery_floor_db) / cfg_.radio.delivery_span_db;
    return std::clamp(d, 0.0, 1.0);
}

double NetworkModel::effective_snr(const UncertaintySample& uncs, const PowerSettings& power,
                                   int link) const {
    const auto l = static_cast<std::size_t>(link);
    return uncs.snr_db[l] +
           cfg_.radio.power_gain_db * power[static_cast<std::size_t>(link_from_idx_[l])];
}

double NetworkModel::link_share(const AdaptationOption& option, int link) const {
    const auto node = static_cast<std::size_t>(link_from_idx_[static_cast<std::size_t>(link)]);
    const auto& out = out_links_[node];
    if (out.size() == 1) return 1.0;
    const double first = option.first_share(slot_of_node_[node]);
    return out[0] == link ? first : 1.0 - first;
}

Flow NetworkModel::flow(const UncertaintySample& uncs, const PowerSettings& power,
                        const AdaptationOption& option) const {
    const auto n_nodes = cfg_.topology.nodes.size();
    Flow f;
    f.transmitted.assign(n_nodes, 0.0);
    std::vector<double> inflow(n_nodes, 0.0);
    double energy = cfg_.energy.idle_mc;
    for (int n : order_) {
        const auto ni = static_cast<std::size_t>(n);
        f.generated += uncs.load[ni];
        const double traffic = uncs.load[ni] + inflow[ni];
        f.transmitted[ni] = traffic;
        for (int l : out_links_[ni]) {
            const double sent = traffic * link_share(option, l);
            const double d = delivery_probability(effective_snr(uncs, power, l));
            inflow[static_cast<std::size_t>(link_to_idx_[static_cast<std::size_t>(l)])] += sent * d;
            f.lost += sent * (1.0 - d);
        }
        energy += traffic * (cfg_.energy.per_packet_mc + cfg_.energy.per_packet_power_mc * power[ni]);
    }
    f.delivered = inflow[static_cast<std::size_t>(cfg_.topology.node_index(cfg_.topology.gateway))];
    const double pl = f.generated > 0.0 ? 100.0 * (1.0 - f.delivered / f.generated) : 0.0;
    f.quality = {std::clamp(pl, 0.0, 100.0), std::max(energy, 1e-6)};
    return f;
}

RegimeView NetworkModel::view(const Regime& regime) const {
    RegimeView v;
    v.identity = regime.identity;
    if (regime.identity) return v;

    double total = 0.0;
    for (double w : regime.group_weight) total += w;
    if (!(total > 0.0)) throw InvalidState("regime has no active group");

    v.label.assign(options_.size(), -1);
    v.offset.assign(options_.size(), gmm::Point::Zero());
    for (std::size_t o = 0; o < options_.size(); ++o) {
        // Group by cumulative share, then cluster by cumulative proportion.
        double acc = 0.0;
        int group = kGroupCount - 1;
        for (int g = 0; g < kGroupCount; ++g) {
            acc += regime.group_weight[static_cast<std::size_t>(g)] / total;
            if (regime.group_weight[static_cast<std::size_t>(g)] > 0.0 && group_u_[o] < acc) {
                group = g;
                break;
            }
        }
        while (regime.group_weight[static_cast<std::size_t>(group)] <= 0.0) --group;

        int chosen = -1;
        double cacc = 0.0;
        for (std::size_t c = 0; c < cfg_.clusters.size(); ++c) {
            if (static_cast<int>(cfg_.clusters[c].group) != group) continue;
            chosen = static_cast<int>(c);
            cacc += cfg_.clusters[c].proportion;
            if (cluster_u_[o] < cacc) break;
        }
        if (chosen < 0) throw InvalidState("active group without clusters");
        const auto& cl = cfg_.clusters[static_cast<std::size_t>(chosen)];
        v.label[o] = chosen;
        v.offset[o] = cl.center + cluster_chol_[static_cast<std::size_t>(chosen)] * scatter_[o] -
                      cfg_.coupling.cwiseProduct(cfg_.reference);
    }
    return v;
}

QualityPoint NetworkModel::verify(const UncertaintySample& uncs, const PowerSettings& power,
                                  const AdaptationOption& option, const RegimeView& view) const {
    const QualityPoint base = flow(uncs, power, option).quality;
    if (view.identity) return base;
    const auto o = static_cast<std::size_t>(option.id);
    const gmm::Point q = cfg_.coupling.cwiseProduct(base.as_point()) + view.offset[o];
    return {std::clamp(q[0], 0.0, 100.0), std::max(q[1], 1e-6)};
}

}  // namespace driftguard::sim
