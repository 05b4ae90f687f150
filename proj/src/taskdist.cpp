#include "diki/taskdist.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace diki {

namespace {

Mat scatter(const Mat& features, const Vec& mu) {
    const std::size_t d = features.cols();
    Mat sigma(d, d);
    Vec centered(d);
    for (std::size_t n = 0; n < features.rows(); ++n) {
        auto row = features.row(n);
        for (std::size_t j = 0; j < d; ++j) centered[j] = row[j] - mu[j];
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) sigma(i, j) += centered[i] * centered[j];
    }
    return scale(sigma, 1.0 / static_cast<double>(features.rows()));
}

Mat with_ridge(Mat sigma, double ridge) {
    for (std::size_t i = 0; i < sigma.rows(); ++i) sigma(i, i) += ridge;
    return sigma;
}

}  // namespace

TaskGaussian::TaskGaussian(Vec mu, Mat sigma, double ridge)
    : mu_(std::move(mu)), sigma_(std::move(sigma)), ridge_(ridge), chol_(sigma_) {
    if (sigma_.rows() != mu_.size()) throw ShapeError("TaskGaussian: mean/covariance size mismatch");
}

TaskGaussian TaskGaussian::fit(const Mat& features, double ridge) {
    if (features.rows() == 0) throw ContractError("fit_gaussian: no features");
    if (!(ridge >= 0.0)) throw ContractError("fit_gaussian: negative ridge");
    Vec mu = column_mean(features);
    const Mat raw = scatter(features, mu);
    double r = ridge;
    for (;;) {
        try {
            return TaskGaussian(mu, with_ridge(raw, r), r);
        } catch (const SingularityError&) {
            const double next = r > 0.0 ? r * 10.0 : kDefaultRidge;
            if (next > kMaxRidge * (1.0 + 1e-9))
                throw SingularityError("fit_gaussian: covariance singular even with ridge " +
                                       std::to_string(r));
            r = next;
        }
    }
}

double TaskGaussian::mahalanobis_sq(std::span<const double> x) const {
    if (x.size() != mu_.size()) throw ShapeError("log_density: dimension mismatch");
    Vec diff(x.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = x[i] - mu_[i];
    return chol_.quadratic_form(diff);
}

double TaskGaussian::log_density(std::span<const double> x) const {
    const double d = static_cast<double>(mu_.size());
    return -0.5 * (mahalanobis_sq(x) + d * std::log(2.0 * std::numbers::pi) + chol_.logdet());
}

double log_density(const TaskGaussian& g, std::span<const double> x) { return g.log_density(x); }

TaskChoice select_task(std::span<const TaskGaussian> gaussians, std::span<const double> x) {
    if (gaussians.empty()) throw ContractError("select_task: no learned tasks");
    TaskChoice best{0, gaussians[0].log_density(x)};
    for (std::size_t i = 1; i < gaussians.size(); ++i) {
        const double s = gaussians[i].log_density(x);
        if (s > best.score) best = {i, s};
    }
    return best;
}

double calibration_weight(double score, double prescale_a, double prescale_b) {
    const double z = prescale_a * score + prescale_b;
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::size_t key_match(const Mat& keys, std::span<const double> query) {
    if (keys.rows() == 0) throw ContractError("key_match: no keys");
    if (keys.cols() != query.size()) throw ShapeError("key_match: dimension mismatch");
    if (std::abs(norm2(query) - 1.0) > 1e-9) throw ContractError("key_match: query not unit norm");
    std::size_t best = 0;
    double best_sim = 0.0;
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        if (std::abs(norm2(keys.row(i)) - 1.0) > 1e-9)
            throw ContractError("key_match: key " + std::to_string(i) + " not unit norm");
        const double sim = dot(keys.row(i), query);
        if (i == 0 || sim > best_sim) {
            best = i;
            best_sim = sim;
        }
    }
    return best;
}

}  // namespace diki
