#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace driftguard::gmm {

using Point = Eigen::Vector2d;  // (packet loss %, energy mC)
using ClassId = std::int64_t;

inline constexpr double kRegularization = 1e-6;
inline constexpr double kDefaultOutlierThreshold = 0.001;

struct GaussianComponent {
    Point mean = Point::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
    double weight = 1.0;
    std::int64_t support_count = 0;
    ClassId class_id = 0;

    double mahalanobis_sq(const Point& p) const;
    double log_pdf(const Point& p) const;

    bool operator==(const GaussianComponent&) const = default;
};

struct GmmModel {
    std::vector<GaussianComponent> components;
    double outlier_threshold = kDefaultOutlierThreshold;

    bool empty() const { return components.empty(); }
    std::size_t size() const { return components.size(); }
    const GaussianComponent* find(ClassId id) const;
    std::vector<ClassId> class_ids() const;

    bool operator==(const GmmModel&) const = default;
};

struct BicCurve {
    std::vector<int> component_counts;
    std::vector<double> scores;
};

struct FitOptions {
    double epsilon = kRegularization;
    double tolerance = 1e-6;  // relative log-likelihood change
    int max_iterations = 300;
    int restarts = 1;         // independent k-means++ seedings, best likelihood kept
    ClassId first_class_id = 0;
};

struct FitResult {
    GmmModel model;
    std::vector<double> log_likelihood_trace;  // one entry per E-step, restart that won
    int iterations = 0;
    bool converged = false;
};

struct Classification {
    ClassId class_id = 0;
    double membership = 0.0;
    std::size_t component_index = 0;
};

FitResult fit_gmm_detailed(const std::vector<Point>& points, int k, std::uint64_t seed,
                           const FitOptions& options = {});
GmmModel fit_gmm(const std::vector<Point>& points, int k, std::uint64_t seed,
                 ClassId first_class_id = 0);

// Single Gaussian per label; weights proportional to label counts. Used where
// class membership of every training point is known.
GmmModel fit_labeled(const std::vector<Point>& points, const std::vector<ClassId>& labels,
                     double epsilon = kRegularization);

double log_likelihood(const std::vector<Point>& points, const GmmModel& model);
int free_parameters(int k);
double bic_score(const std::vector<Point>& points, const GmmModel& model);

std::size_t kneedle_elbow(const std::vector<double>& xs, const std::vector<double>& ys,
                          double sensitivity = 1.0);

struct CountSelection {
    int count = 1;
    BicCurve curve;
    std::vector<GmmModel> fits;  // fits[k-1] is the model with k components
};

CountSelection select_component_count_detailed(const std::vector<Point>& points, int k_max,
                                               std::uint64_t seed);
int select_component_count(const std::vector<Point>& points, int k_max, std::uint64_t seed);

Classification classify(const GmmModel& model, const Point& p);

// exp(-d^2/2) to the nearest component in Mahalanobis terms.
double max_membership(const GmmModel& model, const Point& p);
double min_mahalanobis(const GmmModel& model, const Point& p);
bool is_out_of_class(const GmmModel& model, const Point& p);

GmmModel merge(const GmmModel& base, const GmmModel& addition);

bool has_cholesky(const Eigen::Matrix2d& m);

nlohmann::json to_json(const GmmModel& model);
GmmModel model_from_json(const nlohmann::json& j);

}  // namespace driftguard::gmm
