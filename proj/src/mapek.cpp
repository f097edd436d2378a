#include "driftguard/mapek.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "driftguard/errors.hpp"

namespace driftguard::mapek {

int PreferenceModel::rank_of(ClassId id) const {
    const auto it = std::find(ranking.begin(), ranking.end(), id);
    return it == ranking.end() ? 0 : static_cast<int>(it - ranking.begin()) + 1;
}

std::uint64_t uncertainty_digest(const sim::UncertaintySample& uncs) {
    // FNV-1a over values quantized to 0.01, SNRs first, then loads.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::int64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= static_cast<std::uint64_t>(v >> (8 * b)) & 0xFFu;
            h *= 0x100000001b3ULL;
        }
    };
    feed(static_cast<std::int64_t>(uncs.snr_db.size()));
    for (double v : uncs.snr_db) feed(std::llround(v * 100.0));
    feed(static_cast<std::int64_t>(uncs.load.size()));
    for (double v : uncs.load) feed(std::llround(v * 100.0));
    return h;
}

const CachedResult* KnowledgeBase::lookup(int cycle, std::uint64_t digest, int option_id) const {
    const auto b = blocks_.find({cycle, digest});
    if (b == blocks_.end()) return nullptr;
    const auto r = b->second.results.find(option_id);
    return r == b->second.results.end() ? nullptr : &r->second;
}

void KnowledgeBase::store(int cycle, std::uint64_t digest, int option_id, const CachedResult& result) {
    auto& block = blocks_[{cycle, digest}];
    if (!block.results.emplace(option_id, result).second)
        throw InvalidState("knowledge base: key verified twice");
    block.order.push_back(option_id);
}

std::vector<std::pair<int, CachedResult>> KnowledgeBase::cycle_entries(int cycle) const {
    std::vector<std::pair<int, CachedResult>> out;
    for (auto it = blocks_.lower_bound({cycle, 0}); it != blocks_.end() && it->first.first == cycle; ++it)
        for (int id : it->second.order) out.emplace_back(id, it->second.results.at(id));
    return out;
}

std::size_t KnowledgeBase::size() const {
    std::size_t n = 0;
    for (const auto& [key, block] : blocks_) n += block.results.size();
    return n;
}

void KnowledgeBase::prune_before(int cycle) {
    blocks_.erase(blocks_.begin(), blocks_.lower_bound({cycle, 0}));
}

int KnowledgeBase::oldest_cycle() const { return blocks_.empty() ? 0 : blocks_.begin()->first.first; }

void KnowledgeBase::install(gmm::GmmModel model, PreferenceModel pref) {
    classifier = std::move(model);
    preference = std::move(pref);
}

nlohmann::json to_json(const KnowledgeBase& kb) {
    return {{"classifier", gmm::to_json(kb.classifier)},
            {"ranking", kb.preference.ranking},
            {"results", kb.size()}};
}

const CachedResult& verified(KnowledgeBase& kb, Verifier& verifier, const sim::UncertaintySample& uncs,
                             const sim::AdaptationOption& option, int cycle, std::uint64_t digest,
                             std::size_t& verifications) {
    if (const auto* hit = kb.lookup(cycle, digest, option.id)) return *hit;
    CachedResult r;
    r.verification = verifier.verify(uncs, option);
    r.classification = gmm::classify(kb.classifier, r.verification.as_point());
    ++verifications;
    kb.store(cycle, digest, option.id, r);
    return *kb.lookup(cycle, digest, option.id);
}

AnalysisResult analyse(KnowledgeBase& kb, const std::vector<sim::AdaptationOption>& options,
                       const sim::UncertaintySample& uncs, int cycle, std::mt19937_64& rng,
                       Verifier& verifier, const AnalysisConfig& config) {
    if (options.empty()) throw InvalidInput("analyse: empty option list");
    std::vector<std::size_t> order(options.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    return analyse_ordered(kb, options, order, uncs, cycle, verifier, config);
}

AnalysisResult analyse_ordered(KnowledgeBase& kb, const std::vector<sim::AdaptationOption>& options,
                               const std::vector<std::size_t>& order, const sim::UncertaintySample& uncs,
                               int cycle, Verifier& verifier, const AnalysisConfig& config) {
    if (options.empty() || order.empty()) throw InvalidInput("analyse: empty option list");
    if (kb.classifier.empty()) throw InvalidState("analyse: no classifier installed");
    if (kb.preference.ranking.empty()) throw InvalidState("analyse: empty preference ranking");

    const std::uint64_t digest = uncertainty_digest(uncs);
    AnalysisResult res;
    std::size_t outlier_counter = 0;

    for (std::size_t r = 0; r < kb.preference.ranking.size(); ++r) {
        const ClassId target = kb.preference.ranking[r];
        for (std::size_t idx : order) {
            const auto& opt = options[idx];
            const CachedResult& cr = verified(kb, verifier, uncs, opt, cycle, digest, res.verifications);
            const auto& cls = cr.classification;
            if (cls.membership > config.prob_threshold || outlier_counter > config.counter_threshold) {
                if (cls.class_id == target) {
                    res.option_id = opt.id;
                    res.class_id = cls.class_id;
                    res.rank = static_cast<int>(r) + 1;
                    res.membership = cls.membership;
                    res.quality = cr.verification;
                    res.outliers = outlier_counter;
                    return res;
                }
            } else {
                ++outlier_counter;
            }
        }
    }

    // Every class loop exhausted: take the strongest member of the best ranked
    // class seen this cycle, or the strongest point overall if none is ranked.
    res.fallback = true;
    res.outliers = outlier_counter;
    int best_rank = 0;
    for (std::size_t idx : order) {
        const auto* cr = kb.lookup(cycle, digest, options[idx].id);
        if (!cr) continue;
        const int rk = kb.preference.rank_of(cr->classification.class_id);
        const bool better_rank = rk != 0 && (best_rank == 0 || rk < best_rank);
        const bool same_rank_stronger = rk == best_rank && res.option_id >= 0 &&
                                        cr->classification.membership > res.membership;
        if (res.option_id < 0 || better_rank || same_rank_stronger) {
            best_rank = rk;
            res.option_id = options[idx].id;
            res.class_id = cr->classification.class_id;
            res.rank = rk;
            res.membership = cr->classification.membership;
            res.quality = cr->verification;
        }
    }
    return res;
}

NetworkState plan_and_execute(const AnalysisResult& result, const sim::PowerSettings& power,
                              NetworkState& network) {
    if (result.option_id < 0) throw InvalidInput("plan_and_execute: result has no option");
    const auto option = sim::option_from_id(result.option_id);
    network.option_id = option.id;
    network.split = option.split;
    network.power = power;
    return network;
}

void prune_results(KnowledgeBase& kb, int current_cycle) {
    kb.prune_before(current_cycle - kb.retention);
}

}  // namespace driftguard::mapek
