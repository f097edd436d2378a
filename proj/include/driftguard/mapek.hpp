#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "driftguard/gmm.hpp"
#include "driftguard/network.hpp"

namespace driftguard::mapek {

using gmm::ClassId;

struct PreferenceModel {
    std::vector<ClassId> ranking;  // rank 1 first

    // 1-based rank, 0 when the class is unranked.
    int rank_of(ClassId id) const;
    bool operator==(const PreferenceModel&) const = default;
};

struct CachedResult {
    sim::QualityPoint verification;
    gmm::Classification classification;
};

std::uint64_t uncertainty_digest(const sim::UncertaintySample& uncs);

class KnowledgeBase {
public:
    gmm::GmmModel classifier;
    PreferenceModel preference;
    int retention = 1000;

    const CachedResult* lookup(int cycle, std::uint64_t digest, int option_id) const;
    // Throws InvalidState when the key already holds a result.
    void store(int cycle, std::uint64_t digest, int option_id, const CachedResult& result);
    // Verified (option id, result) pairs of a cycle, in verification order.
    std::vector<std::pair<int, CachedResult>> cycle_entries(int cycle) const;
    std::size_t size() const;
    int oldest_cycle() const;
    void prune_before(int cycle);  // drops every entry with an older cycle

    // Classifier and preference change together or not at all.
    void install(gmm::GmmModel model, PreferenceModel pref);

private:
    struct Block {
        std::vector<int> order;
        std::map<int, CachedResult> results;
    };
    std::map<std::pair<int, std::uint64_t>, Block> blocks_;
};

nlohmann::json to_json(const KnowledgeBase& kb);

class Verifier {
public:
    virtual ~Verifier() = default;
    virtual sim::QualityPoint verify(const sim::UncertaintySample& uncs,
                                     const sim::AdaptationOption& option) = 0;
};

inline constexpr double kProbThreshold = 0.001;
inline constexpr std::size_t kCounterThreshold = 10;
inline constexpr std::size_t kUnboundedCounter = std::numeric_limits<std::size_t>::max();

struct AnalysisConfig {
    double prob_threshold = kProbThreshold;
    std::size_t counter_threshold = kCounterThreshold;
};

struct AnalysisResult {
    int option_id = -1;
    ClassId class_id = 0;
    int rank = 0;  // 0 = unranked (fallback only)
    double membership = 0.0;
    sim::QualityPoint quality;
    std::size_t verifications = 0;
    std::size_t outliers = 0;
    bool fallback = false;
};

// Verify-and-classify through the cache; counts fresh verifications.
const CachedResult& verified(KnowledgeBase& kb, Verifier& verifier, const sim::UncertaintySample& uncs,
                             const sim::AdaptationOption& option, int cycle, std::uint64_t digest,
                             std::size_t& verifications);

AnalysisResult analyse(KnowledgeBase& kb, const std::vector<sim::AdaptationOption>& options,
                       const sim::UncertaintySample& uncs, int cycle, std::mt19937_64& rng,
                       Verifier& verifier, const AnalysisConfig& config = {});

// Same scan over a caller-chosen order (indices into options) instead of a shuffle.
AnalysisResult analyse_ordered(KnowledgeBase& kb, const std::vector<sim::AdaptationOption>& options,
                               const std::vector<std::size_t>& order, const sim::UncertaintySample& uncs,
                               int cycle, Verifier& verifier, const AnalysisConfig& config = {});

struct NetworkState {
    int option_id = -1;
    std::array<int, sim::kConfigurableMotes> split{};
    sim::PowerSettings power;
    bool operator==(const NetworkState&) const = default;
};

NetworkState plan_and_execute(const AnalysisResult& result, const sim::PowerSettings& power,
                              NetworkState& network);

void prune_results(KnowledgeBase& kb, int current_cycle);

}  // namespace driftguard::mapek
