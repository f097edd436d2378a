#include "driftguard/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "driftguard/errors.hpp"

namespace driftguard::gmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2*pi)

Eigen::Matrix2d regularize(Eigen::Matrix2d cov, double eps) {
    cov = 0.5 * (cov + cov.transpose());
    cov += eps * Eigen::Matrix2d::Identity();
    double extra = eps;
    while (!has_cholesky(cov)) {
        extra *= 10.0;
        cov += extra * Eigen::Matrix2d::Identity();
    }
    return cov;
}

double log_sum_exp(const double* v, std::size_t n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

struct Moments {
    Point mean = Point::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
};

Moments weighted_moments(const std::vector<Point>& pts, const double* w, std::size_t stride,
                         double total) {
    Moments m;
    for (std::size_t i = 0; i < pts.size(); ++i) m.mean += w[i * stride] * pts[i];
    m.mean /= total;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Point d = pts[i] - m.mean;
        m.cov += w[i * stride] * (d * d.transpose());
    }
    m.cov /= total;
    return m;
}

// k-means++ seeding plus a short Lloyd refinement, on standardized coordinates
// so that the two quality axes (percent vs. millicoulomb) weigh in equally.
std::vector<int> kmeans_labels(const std::vector<Point>& pts, int k, std::mt19937_64& rng) {
    const std::size_t n = pts.size();
    Point mu = Point::Zero();
    for (const auto& p : pts) mu += p;
    mu /= static_cast<double>(n);
    Point sd = Point::Zero();
    for (const auto& p : pts) sd += (p - mu).cwiseAbs2();
    sd = (sd / static_cast<double>(n)).cwiseSqrt();
    for (int a = 0; a < 2; ++a)
        if (sd[a] <= 0.0) sd[a] = 1.0;

    std::vector<Point> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = (pts[i] - mu).cwiseQuotient(sd);

    std::vector<Point> centers;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    centers.push_back(z[pick(rng)]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) best = std::min(best, (z[i] - c).squaredNorm());
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            centers.push_back(z[pick(rng)]);
            continue;
        }
        std::uniform_real_distribution<double> u(0.0, total);
        double r = u(rng);
        std::size_t chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            r -= d2[i];
            if (r <= 0.0) {
                chosen = i;
                break;
            }
        }
        centers.push_back(z[chosen]);
    }

    std::vector<int> label(n, 0);
    for (int iter = 0; iter < 25; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = (z[i] - centers[c]).squaredNorm();
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (best != label[i]) changed = true;
            label[i] = best;
        }
        std::vector<Point> sum(k, Point::Zero());
        std::vector<int> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            sum[label[i]] += z[i];
            ++cnt[label[i]];
        }
        for (int c = 0; c < k; ++c)
            if (cnt[c] > 0) centers[c] = sum[c] / cnt[c];
        if (!changed && iter > 0) break;
    }
    return label;
}

// Returns the log-likelihood of the current parameters and fills resp (n x k, row-major).
double e_step(const std::vector<Point>& pts, const std::vector<GaussianComponent>& comps,
              std::vector<double>& resp) {
    const std::size_t n = pts.size();
    const std::size_t k = comps.size();
    resp.assign(n * k, 0.0);
    // Per-component precision entries and log normalizer, hoisted out of the point loop.
    std::vector<double> pa(k), pb(k), pc(k), lognorm(k);
    for (std::size_t c = 0; c < k; ++c) {
        const auto& cv = comps[c].cov;
        const double det = cv(0, 0) * cv(1, 1) - cv(0, 1) * cv(1, 0);
        pa[c] = cv(1, 1) / det;
        pb[c] = -cv(0, 1) / det;
        pc[c] = cv(0, 0) / det;
        lognorm[c] = std::log(comps[c].weight) - kLog2Pi - 0.5 * std::log(det);
    }
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = &resp[i * k];
        for (std::size_t c = 0; c < k; ++c) {
            const double dx = pts[i][0] - comps[c].mean[0];
            const double dy = pts[i][1] - comps[c].mean[1];
            row[c] = lognorm[c] - 0.5 * (pa[c] * dx * dx + 2.0 * pb[c] * dx * dy + pc[c] * dy * dy);
        }
        const double lse = log_sum_exp(row, k);
        ll += lse;
        for (std::size_t c = 0; c < k; ++c) row[c] = std::exp(row[c] - lse);
    }
    return ll;
}

void m_step(const std::vector<Point>& pts, std::vector<GaussianComponent>& comps,
            const std::vector<double>& resp, double eps) {
    const std::size_t n = pts.size();
    const std::size_t k = comps.size();
    for (std::size_t c = 0; c < k; ++c) {
        double nk = 0.0;
        for (std::size_t i = 0; i < n; ++i) nk += resp[i * k + c];
        if (nk < 1e-10) {
            // Starved component: keep its shape, give it a vanishing weight.
            comps[c].weight = 1e-12;
            continue;
        }
        const Moments m = weighted_moments(pts, &resp[c], k, nk);
        comps[c].mean = m.mean;
        comps[c].cov = regularize(m.cov, eps);
        comps[c].weight = nk / static_cast<double>(n);
    }
    double total = 0.0;
    for (const auto& c : comps) total += c.weight;
    for (auto& c : comps) c.weight /= total;
}

FitResult fit_once(const std::vector<Point>& pts, int k, std::mt19937_64& rng,
                   const FitOptions& opt) {
    const std::size_t n = pts.size();
    const auto label = kmeans_labels(pts, k, rng);

    Moments global;
    {
        std::vector<double> ones(n, 1.0);
        global = weighted_moments(pts, ones.data(), 1, static_cast<double>(n));
    }

    std::vector<GaussianComponent> comps(k);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (int c = 0; c < k; ++c) {
        std::vector<double> w(n, 0.0);
        double cnt = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (label[i] == c) {
                w[i] = 1.0;
                cnt += 1.0;
            }
        if (cnt > 0.0) {
            const Moments m = weighted_moments(pts, w.data(), 1, cnt);
            comps[c].mean = m.mean;
            comps[c].cov = regularize(m.cov, opt.epsilon);
            comps[c].weight = cnt / static_cast<double>(n);
        } else {
            comps[c].mean = pts[pick(rng)];
            comps[c].cov = regularize(global.cov, opt.epsilon);
            comps[c].weight = 1.0 / static_cast<double>(n);
        }
    }
    {
        double total = 0.0;
        for (const auto& c : comps) total += c.weight;
        for (auto& c : comps) c.weight /= total;
    }

    FitResult res;
    std::vector<double> resp;
    double prev = -std::numeric_limits<double>::infinity();
    int it = 0;
    for (;;) {
        const double ll = e_step(pts, comps, resp);
        res.log_likelihood_trace.push_back(ll);
        if (it > 0 && std::abs(ll - prev) < opt.tolerance * std::abs(prev)) {
            res.converged = true;
            break;
        }
        if (it >= opt.max_iterations) break;
        prev = ll;
        m_step(pts, comps, resp, opt.epsilon);
        ++it;
    }
    res.iterations = it;

    for (int c = 0; c < k; ++c) {
        double nk = 0.0;
        for (std::size_t i = 0; i < n; ++i) nk += resp[i * k + c];
        comps[c].support_count = std::llround(nk);
    }
    res.model.components = std::move(comps);
    return res;
}

}  // namespace

double GaussianComponent::mahalanobis_sq(const Point& p) const {
    const Point d = p - mean;
    const double a = cov(0, 0), b = cov(0, 1), c = cov(1, 1);
    const double det = a * c - b * b;
    return (c * d[0] * d[0] - 2.0 * b * d[0] * d[1] + a * d[1] * d[1]) / det;
}

double GaussianComponent::log_pdf(const Point& p) const {
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    return -kLog2Pi - 0.5 * std::log(det) - 0.5 * mahalanobis_sq(p);
}

const GaussianComponent* GmmModel::find(ClassId id) const {
    for (const auto& c : components)
        if (c.class_id == id) return &c;
    return nullptr;
}

std::vector<ClassId> GmmModel::class_ids() const {
    std::vector<ClassId> ids;
    ids.reserve(components.size());
    for (const auto& c : components) ids.push_back(c.class_id);
    return ids;
}

bool has_cholesky(const Eigen::Matrix2d& m) {
    if (!m.allFinite()) return false;
    if (std::abs(m(0, 1) - m(1, 0)) > 1e-12 * std::max(1.0, std::abs(m(0, 1)))) return false;
    if (!(m(0, 0) > 0.0)) return false;
    const double l11 = std::sqrt(m(0, 0));
    const double l21 = m(1, 0) / l11;
    return m(1, 1) - l21 * l21 > 0.0;
}

FitResult fit_gmm_detailed(const std::vector<Point>& points, int k, std::uint64_t seed,
                           const FitOptions& options) {
    if (points.empty()) throw InvalidInput("fit_gmm: empty input");
    if (k < 1) throw InvalidInput("fit_gmm: component count must be at least 1");
    if (points.size() < static_cast<std::size_t>(k))
        throw InvalidInput("fit_gmm: fewer points than components");

    std::mt19937_64 rng(seed);
    FitResult best;
    bool have = false;
    for (int r = 0; r < std::max(1, options.restarts); ++r) {
        FitResult res = fit_once(points, k, rng, options);
        if (!have || res.log_likelihood_trace.back() > best.log_likelihood_trace.back()) {
            best = std::move(res);
            have = true;
        }
    }

    auto& comps = best.model.components;
    std::stable_sort(comps.begin(), comps.end(), [](const auto& a, const auto& b) {
        if (a.mean[0] != b.mean[0]) return a.mean[0] < b.mean[0];
        return a.mean[1] < b.mean[1];
    });
    for (std::size_t c = 0; c < comps.size(); ++c)
        comps[c].class_id = options.first_class_id + static_cast<ClassId>(c);
    return best;
}

GmmModel fit_gmm(const std::vector<Point>& points, int k, std::uint64_t seed,
                 ClassId first_class_id) {
    FitOptions opt;
    opt.first_class_id = first_class_id;
    return fit_gmm_detailed(points, k, seed, opt).model;
}

GmmModel fit_labeled(const std::vector<Point>& points, const std::vector<ClassId>& labels,
                     double epsilon) {
    if (points.empty()) throw InvalidInput("fit_labeled: empty input");
    if (points.size() != labels.size()) throw InvalidInput("fit_labeled: label count mismatch");
    std::map<ClassId, std::vector<Point>> groups;
    for (std::size_t i = 0; i < points.size(); ++i) groups[labels[i]].push_back(points[i]);

    GmmModel model;
    for (const auto& [id, pts] : groups) {
        std::vector<double> ones(pts.size(), 1.0);
        const Moments m = weighted_moments(pts, ones.data(), 1, static_cast<double>(pts.size()));
        GaussianComponent c;
        c.mean = m.mean;
        c.cov = regularize(m.cov, epsilon);
        c.weight = static_cast<double>(pts.size()) / static_cast<double>(points.size());
        c.support_count = static_cast<std::int64_t>(pts.size());
        c.class_id = id;
        model.components.push_back(c);
    }
    return model;
}

double log_likelihood(const std::vector<Point>& points, const GmmModel& model) {
    if (model.empty()) throw InvalidInput("log_likelihood: empty model");
    std::vector<double> buf(model.size());
    double ll = 0.0;
    for (const auto& p : points) {
        for (std::size_t c = 0; c < model.size(); ++c)
            buf[c] = std::log(model.components[c].weight) + model.components[c].log_pdf(p);
        ll += log_sum_exp(buf.data(), buf.size());
    }
    return ll;
}

int free_parameters(int k) { return 6 * k - 1; }

double bic_score(const std::vector<Point>& points, const GmmModel& model) {
    if (points.empty()) throw InvalidInput("bic_score: empty input");
    const double n = static_cast<double>(points.size());
    return free_parameters(static_cast<int>(model.size())) * std::log(n) -
           2.0 * log_likelihood(points, model);
}

std::size_t kneedle_elbow(const std::vector<double>& xs, const std::vector<double>& ys,
                          double sensitivity) {
    if (xs.size() != ys.size()) throw InvalidInput("kneedle_elbow: length mismatch");
    if (xs.size() < 2) throw InvalidInput("kneedle_elbow: need at least two points");
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (!(xs[i] > xs[i - 1])) throw InvalidInput("kneedle_elbow: xs must be increasing");

    const std::size_t n = xs.size();
    const auto [ymin_it, ymax_it] = std::minmax_element(ys.begin(), ys.end());
    const double ymin = *ymin_it, ymax = *ymax_it;
    if (!(ymax > ymin)) return 0;
    const double xmin = xs.front(), xspan = xs.back() - xs.front();

    // Decreasing convex curve: flip y so the knee becomes a maximum of the
    // distance above the diagonal.
    std::vector<double> xn(n), diff(n);
    for (std::size_t i = 0; i < n; ++i) {
        xn[i] = (xs[i] - xmin) / xspan;
        const double yn = (ys[i] - ymin) / (ymax - ymin);
        diff[i] = (1.0 - yn) - xn[i];
    }
    const double step = 1.0 / static_cast<double>(n - 1);  // mean spacing of xn
    constexpr double tol = 1e-12;

    auto at = [&](std::ptrdiff_t i) {
        return diff[static_cast<std::size_t>(
            std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1))];
    };
    std::vector<bool> is_max(n), is_min(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = static_cast<std::ptrdiff_t>(i);
        is_max[i] = diff[i] >= at(s - 1) - tol && diff[i] >= at(s + 1) - tol;
        is_min[i] = diff[i] <= at(s - 1) + tol && diff[i] <= at(s + 1) + tol;
    }

    std::size_t first_max = n;
    for (std::size_t i = 0; i < n; ++i)
        if (is_max[i]) {
            first_max = i;
            break;
        }
    if (first_max == n) return 0;

    double threshold = 0.0;
    std::size_t threshold_index = first_max;
    for (std::size_t i = first_max; i + 1 < n; ++i) {
        if (is_max[i]) {
            threshold = diff[i] - sensitivity * step;
            threshold_index = i;
        }
        if (is_min[i]) threshold = 0.0;
        if (diff[i + 1] < threshold - tol) return threshold_index;
    }
    return 0;
}

CountSelection select_component_count_detailed(const std::vector<Point>& points, int k_max,
                                               std::uint64_t seed) {
    if (k_max < 1) throw InvalidInput("select_component_count: k_max must be at least 1");
    if (points.size() < static_cast<std::size_t>(k_max))
        throw InvalidInput("select_component_count: fewer points than k_max");

    // The curve runs past k_max so that a knee at (or near) k_max has a flat
    // tail after it; the answer itself is capped at k_max.
    const int k_curve = static_cast<int>(
        std::min<std::size_t>(points.size(), static_cast<std::size_t>(3 * k_max)));

    CountSelection sel;
    for (int k = 1; k <= k_curve; ++k) {
        // Several seedings where the answer can land; the tail only shapes the curve.
        FitOptions opt;
        opt.restarts = k <= k_max ? 3 : 1;
        if (k > k_max) {
            opt.tolerance = 1e-4;
            opt.max_iterations = 100;
        }
        GmmModel m = fit_gmm_detailed(points, k, seed + static_cast<std::uint64_t>(k), opt).model;
        sel.curve.component_counts.push_back(k);
        sel.curve.scores.push_back(bic_score(points, m));
        sel.fits.push_back(std::move(m));
    }
    if (k_curve == 1) {
        sel.count = 1;
        return sel;
    }
    std::vector<double> xs(sel.curve.component_counts.begin(), sel.curve.component_counts.end());
    const std::size_t idx = kneedle_elbow(xs, sel.curve.scores);
    sel.count = std::min(sel.curve.component_counts[idx], k_max);
    sel.fits.resize(static_cast<std::size_t>(k_max));
    return sel;
}

int select_component_count(const std::vector<Point>& points, int k_max, std::uint64_t seed) {
    return select_component_count_detailed(points, k_max, seed).count;
}

Classification classify(const GmmModel& model, const Point& p) {
    if (model.empty()) throw InvalidInput("classify: empty model");
    Classification out;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < model.size(); ++c) {
        const auto& comp = model.components[c];
        const double score = std::log(comp.weight) + comp.log_pdf(p);
        if (score > best) {
            best = score;
            out.component_index = c;
        }
    }
    const auto& chosen = model.components[out.component_index];
    out.class_id = chosen.class_id;
    out.membership = std::exp(-0.5 * chosen.mahalanobis_sq(p));
    return out;
}

double min_mahalanobis(const GmmModel& model, const Point& p) {
    if (model.empty()) throw InvalidInput("min_mahalanobis: empty model");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : model.components) best = std::min(best, c.mahalanobis_sq(p));
    return std::sqrt(best);
}

double max_membership(const GmmModel& model, const Point& p) {
    const double d = min_mahalanobis(model, p);
    return std::exp(-0.5 * d * d);
}

bool is_out_of_class(const GmmModel& model, const Point& p) {
    return max_membership(model, p) < model.outlier_threshold;
}

GmmModel merge(const GmmModel& base, const GmmModel& addition) {
    if (addition.empty()) return base;
    std::set<ClassId> seen;
    for (const auto& c : base.components) seen.insert(c.class_id);
    for (const auto& c : addition.components)
        if (!seen.insert(c.class_id).second)
            throw InvalidInput("merge: class_id collision on " + std::to_string(c.class_id));

    GmmModel out;
    out.outlier_threshold = base.empty() ? addition.outlier_threshold : base.outlier_threshold;
    out.components = base.components;
    out.components.insert(out.components.end(), addition.components.begin(),
                          addition.components.end());

    double total = 0.0;
    for (const auto& c : out.components) total += static_cast<double>(c.support_count);
    if (total > 0.0) {
        // A zero-support component keeps a token share so weights stay positive.
        constexpr double floor = 1e-9;
        double sum = 0.0;
        for (auto& c : out.components) {
            c.weight = std::max(static_cast<double>(c.support_count), floor * total);
            sum += c.weight;
        }
        for (auto& c : out.components) c.weight /= sum;
    } else {
        const double nb = static_cast<double>(base.size());
        const double na = static_cast<double>(addition.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            const bool from_base = i < base.size();
            out.components[i].weight *= (from_base ? nb : na) / (nb + na);
        }
    }
    return out;
}

nlohmann::json to_json(const GmmModel& model) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : model.components) {
        comps.push_back({
            {"mean", {c.mean[0], c.mean[1]}},
            {"cov", {{c.cov(0, 0), c.cov(0, 1)}, {c.cov(1, 0), c.cov(1, 1)}}},
            {"weight", c.weight},
            {"support_count", c.support_count},
            {"class_id", c.class_id},
        });
    }
    return {{"components", comps}, {"outlier_threshold", model.outlier_threshold}};
}

GmmModel model_from_json(const nlohmann::json& j) {
    try {
        GmmModel m;
        m.outlier_threshold = j.value("outlier_threshold", kDefaultOutlierThreshold);
        std::set<ClassId> ids;
        for (const auto& jc : j.at("components")) {
            GaussianComponent c;
            c.mean = Point(jc.at("mean").at(0).get<double>(), jc.at("mean").at(1).get<double>());
            const auto& cv = jc.at("cov");
            c.cov << cv.at(0).at(0).get<double>(), cv.at(0).at(1).get<double>(),
                cv.at(1).at(0).get<double>(), cv.at(1).at(1).get<double>();
            c.weight = jc.at("weight").get<double>();
            c.support_count = jc.value("support_count", std::int64_t{0});
            c.class_id = jc.at("class_id").get<ClassId>();
            if (!has_cholesky(c.cov)) throw InvalidInput("model json: covariance not positive definite");
            if (!(c.weight > 0.0)) throw InvalidInput("model json: weight must be positive");
            if (!ids.insert(c.class_id).second) throw InvalidInput("model json: duplicate class_id");
            m.components.push_back(c);
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("model json: ") + e.what());
    }
}

}  // namespace driftguard::gmm
