#pragma once

#include <vector>

#include <Eigen/Core>

#include "driftguard/mapek.hpp"
#include "driftguard/network.hpp"

// Simplified adaptation-space reduction: a linear regressor predicts quality
// for every option, and only the K options whose predicted class ranks best
// are verified.
namespace driftguard::ml2asr {

inline constexpr std::size_t kMinSamples = 20;
inline constexpr std::size_t kSubsetSize = 20;
inline constexpr double kRidge = 1e-3;

// Split fractions of the configurable motes, power of every non-gateway mote,
// mean link SNR, total load.
Eigen::VectorXd features(const sim::Topology& topo, const sim::UncertaintySample& uncs,
                         const sim::PowerSettings& power, const sim::AdaptationOption& option);
std::size_t feature_count(const sim::Topology& topo);

struct Sample {
    Eigen::VectorXd x;
    sim::QualityPoint y;
};

struct QualityRegressor {
    Eigen::VectorXd coef_pl, coef_ec;
    double intercept_pl = 0.0;
    double intercept_ec = 0.0;
    bool ridge = false;  // fell back to ridge because the system was rank deficient

    sim::QualityPoint predict(const Eigen::VectorXd& x) const;
};

QualityRegressor train(const std::vector<Sample>& history);

class Predictor {
public:
    virtual ~Predictor() = default;
    virtual sim::QualityPoint predict(const sim::UncertaintySample& uncs, const sim::PowerSettings& power,
                                      const sim::AdaptationOption& option) const = 0;
};

class LinearPredictor : public Predictor {
public:
    LinearPredictor(sim::Topology topo, QualityRegressor reg) : topo_(std::move(topo)), reg_(std::move(reg)) {}
    sim::QualityPoint predict(const sim::UncertaintySample& uncs, const sim::PowerSettings& power,
                              const sim::AdaptationOption& option) const override;
    const QualityRegressor& regressor() const { return reg_; }

private:
    sim::Topology topo_;
    QualityRegressor reg_;
};

// Verifies at most k options, scanned best predicted rank first, and applies
// the Algorithm 1 acceptance rule to them.
mapek::AnalysisResult reduce_and_select(const std::vector<sim::AdaptationOption>& options,
                                        const sim::UncertaintySample& uncs, const sim::PowerSettings& power,
                                        const Predictor& predictor, mapek::KnowledgeBase& kb, int cycle,
                                        mapek::Verifier& verifier, std::size_t k = kSubsetSize,
                                        const mapek::AnalysisConfig& config = {});

}  // namespace driftguard::ml2asr
