#include "driftguard/ml2asr.hpp"

#include <algorithm>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "driftguard/errors.hpp"

namespace driftguard::ml2asr {

std::size_t feature_count(const sim::Topology& topo) {
    return sim::kConfigurableMotes + (topo.nodes.size() - 1) + 2;
}

Eigen::VectorXd features(const sim::Topology& topo, const sim::UncertaintySample& uncs,
                         const sim::PowerSettings& power, const sim::AdaptationOption& option) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(feature_count(topo)));
    Eigen::Index i = 0;
    for (int s = 0; s < sim::kConfigurableMotes; ++s) x[i++] = option.first_share(s);
    for (std::size_t n = 0; n < topo.nodes.size(); ++n)
        if (topo.nodes[n] != topo.gateway) x[i++] = power[n];
    double snr = 0.0;
    for (double v : uncs.snr_db) snr += v;
    x[i++] = uncs.snr_db.empty() ? 0.0 : snr / static_cast<double>(uncs.snr_db.size());
    double load = 0.0;
    for (double v : uncs.load) load += v;
    x[i++] = load;
    return x;
}

sim::QualityPoint QualityRegressor::predict(const Eigen::VectorXd& x) const {
    return {intercept_pl + coef_pl.dot(x), intercept_ec + coef_ec.dot(x)};
}

QualityRegressor train(const std::vector<Sample>& history) {
    if (history.size() < kMinSamples)
        throw InvalidInput("ml2asr: need at least " + std::to_string(kMinSamples) + " samples");
    const auto n = static_cast<Eigen::Index>(history.size());
    const Eigen::Index p = history.front().x.size();
    Eigen::MatrixXd X(n, p);
    Eigen::MatrixXd Y(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = history[static_cast<std::size_t>(i)];
        if (s.x.size() != p) throw InvalidInput("ml2asr: inconsistent feature length");
        X.row(i) = s.x.transpose();
        Y(i, 0) = s.y.packet_loss;
        Y(i, 1) = s.y.energy;
    }
    // Centering keeps the intercept out of the ridge penalty.
    const Eigen::RowVectorXd x_mean = X.colwise().mean();
    const Eigen::RowVector2d y_mean = Y.colwise().mean();
    X.rowwise() -= x_mean;
    Y.rowwise() -= y_mean;

    QualityRegressor r;
    Eigen::MatrixXd B;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() == p) {
        B = qr.solve(Y);
    } else {
        r.ridge = true;
        Eigen::MatrixXd A = X.transpose() * X;
        A.diagonal().array() += kRidge;
        B = A.ldlt().solve(X.transpose() * Y);
    }
    r.coef_pl = B.col(0);
    r.coef_ec = B.col(1);
    r.intercept_pl = y_mean[0] - x_mean.dot(r.coef_pl);
    r.intercept_ec = y_mean[1] - x_mean.dot(r.coef_ec);
    return r;
}

sim::QualityPoint LinearPredictor::predict(const sim::UncertaintySample& uncs, const sim::PowerSettings& power,
                                           const sim::AdaptationOption& option) const {
    return reg_.predict(features(topo_, uncs, power, option));
}

mapek::AnalysisResult reduce_and_select(const std::vector<sim::AdaptationOption>& options,
                                        const sim::UncertaintySample& uncs, const sim::PowerSettings& power,
                                        const Predictor& predictor, mapek::KnowledgeBase& kb, int cycle,
                                        mapek::Verifier& verifier, std::size_t k,
                                        const mapek::AnalysisConfig& config) {
    if (options.empty()) throw InvalidInput("reduce_and_select: empty option list");
    if (k == 0) throw InvalidInput("reduce_and_select: subset size must be positive");
    if (kb.classifier.empty()) throw InvalidState("reduce_and_select: no classifier installed");

    struct Scored {
        std::size_t idx;
        int rank;  // predicted, INT_MAX when unranked or outlying
        double membership;
    };
    std::vector<Scored> scored;
    scored.reserve(options.size());
    for (std::size_t i = 0; i < options.size(); ++i) {
        const auto c = gmm::classify(kb.classifier, predictor.predict(uncs, power, options[i]).as_point());
        int rk = kb.preference.rank_of(c.class_id);
        if (rk == 0 || c.membership <= config.prob_threshold) rk = std::numeric_limits<int>::max();
        scored.push_back({i, rk, c.membership});
    }
    const std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [](const Scored& a, const Scored& b) {
                          if (a.rank != b.rank) return a.rank < b.rank;
                          if (a.membership != b.membership) return a.membership > b.membership;
                          return a.idx < b.idx;
                      });
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < take; ++i) order.push_back(scored[i].idx);
    return mapek::analyse_ordered(kb, options, order, uncs, cycle, verifier, config);
}

}  // namespace driftguard::ml2asr
