#pragma once

// Numerical self-checks behind `diki verify`.

#include <string>
#include <vector>

#include "diki/backbone.hpp"

namespace diki {

struct Report {
    std::string name;
    bool passed = true;
    std::vector<std::string> lines;  ///< one PASS/FAIL line per check
    double max_error = 0.0;

    void check(bool ok, const std::string& what);
};

/// Fresh adapters at any depth and weight leave encoded features unchanged.
Report verify_zero_init_identity(const DualEncoder& backbone, Rng& rng, std::size_t inputs = 100);

struct GradcheckDims {
    std::size_t seq_len = 3;
    std::size_t length = 2;
    std::size_t dim = 4;
};

/// Analytic adapter gradients against central differences (h = 1e-5).
Report verify_gradcheck(const GradcheckDims& dims, std::size_t trials, Rng& rng);

struct DegenerateDims {
    std::size_t seq_len = 2;
    std::size_t length = 2;
    std::size_t dim = 3;
};

/// SGD on one residual layer from K = V = 0: key gradients stay zero and
/// value rows stay equal. A random-key control must break both.
Report verify_degenerate_init(const DegenerateDims& dims, std::size_t steps, Rng& rng);

/// Metric formulas on a hand-computed matrix and against brute force.
Report verify_metrics(Rng& rng, std::size_t trials = 100);

/// Relative error |a - b|_2 / max(|a|_2, |b|_2); zero when both vanish.
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace diki
