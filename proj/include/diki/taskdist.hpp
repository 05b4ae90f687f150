#pragma once

// Per-task Gaussian models of frozen image features, log-density scoring,
// task selection, and the sigmoid that turns the best score into a weight for
// the residual branch. Also the cosine key-matching selector used by prompt
// pool methods.

#include <cstddef>
#include <span>

#include "diki/numkernel.hpp"

namespace diki {

inline constexpr double kDefaultRidge = 1e-7;
inline constexpr double kMaxRidge = 1e-3;

class TaskGaussian {
public:
    /// Mean and population covariance (divide by N) of the rows, plus
    /// `ridge` on the diagonal. If factorization fails the ridge is raised
    /// tenfold until it succeeds or would exceed kMaxRidge.
    static TaskGaussian fit(const Mat& features, double ridge = kDefaultRidge);

    /// Rebuilds from stored parameters; `sigma` already includes `ridge`.
    TaskGaussian(Vec mu, Mat sigma, double ridge);

    /// log N(x; mu, sigma).
    double log_density(std::span<const double> x) const;
    /// (x - mu)^T sigma^{-1} (x - mu)
    double mahalanobis_sq(std::span<const double> x) const;

    const Vec& mean() const noexcept { return mu_; }
    const Mat& covariance() const noexcept { return sigma_; }
    double ridge() const noexcept { return ridge_; }
    double logdet() const noexcept { return chol_.logdet(); }
    std::size_t dim() const noexcept { return mu_.size(); }

    friend bool operator==(const TaskGaussian& a, const TaskGaussian& b) {
        return a.mu_ == b.mu_ && a.sigma_ == b.sigma_ && a.ridge_ == b.ridge_;
    }

private:
    Vec mu_;
    Mat sigma_;
    double ridge_;
    Cholesky chol_;
};

double log_density(const TaskGaussian& g, std::span<const double> x);

struct TaskChoice {
    std::size_t index;
    double score;  ///< the maximum log-density
};

/// Argmax of log-density over tasks; ties go to the lowest index.
TaskChoice select_task(std::span<const TaskGaussian> gaussians, std::span<const double> x);

/// sigmoid(prescale_a * score + prescale_b)
double calibration_weight(double score, double prescale_a = 1.0, double prescale_b = 0.0);

/// Argmax cosine similarity between a unit query and unit key rows.
std::size_t key_match(const Mat& keys, std::span<const double> query);

}  // namespace diki
