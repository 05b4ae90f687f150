#pragma once

// Dense row-major linear algebra in double precision, softmax calculus and a
// central-difference gradient oracle. Everything here is a pure function of
// its arguments; accumulation order is fixed so results are bit-reproducible.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "diki/errors.hpp"

namespace diki {

using Vec = std::vector<double>;

class Mat {
public:
    Mat() = default;
    /// Zero-filled rows x cols matrix.
    Mat(std::size_t rows, std::size_t cols);
    /// Takes ownership of row-major data; throws ShapeError on a length
    /// mismatch and ContractError on non-finite entries.
    Mat(std::size_t rows, std::size_t cols, std::vector<double> data);
    Mat(std::initializer_list<std::initializer_list<double>> rows);

    static Mat identity(std::size_t n);
    /// A single row holding `v`.
    static Mat row_vector(std::span<const double> v);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    bool all_finite() const noexcept;

    friend bool operator==(const Mat&, const Mat&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Elementwise and structural helpers.

Mat transpose(const Mat& a);
Mat add(const Mat& a, const Mat& b);
Mat subtract(const Mat& a, const Mat& b);
Mat scale(const Mat& a, double s);
/// a += s * b
void axpy(Mat& a, double s, const Mat& b);
/// Adds `bias` to every row of `a`.
void add_row_bias(Mat& a, std::span<const double> bias);
/// Rows [begin, end) of `a`.
Mat slice_rows(const Mat& a, std::size_t begin, std::size_t end);
/// `top` stacked above `bottom`.
Mat vstack(const Mat& top, const Mat& bottom);
Vec column_mean(const Mat& a);
double max_abs_diff(const Mat& a, const Mat& b);
double max_abs(const Mat& a);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

// ---------------------------------------------------------------------------
// Products. Each output entry is accumulated left to right over the inner
// index, so identical inputs always give identical bits.

/// a[m x k] * b[k x n]
Mat matmul(const Mat& a, const Mat& b);
/// a[m x k] * b[n x k]^T
Mat matmul_nt(const Mat& a, const Mat& b);
/// a[k x m]^T * b[k x n]
Mat matmul_tn(const Mat& a, const Mat& b);
Vec matvec(const Mat& a, std::span<const double> v);

// ---------------------------------------------------------------------------
// Softmax calculus.

/// Row-wise softmax with per-row max subtraction.
Mat softmax_rows(const Mat& z);
/// J[s][t] = a_s (delta_st - a_t) for a probability row `a`.
Mat softmax_row_jacobian(std::span<const double> a);
/// Gradient w.r.t. the logits of a softmax row given the gradient `da` w.r.t.
/// its probabilities `a`; equals J^T da with J from softmax_row_jacobian.
Vec softmax_row_backward(std::span<const double> a, std::span<const double> da);

struct CrossEntropy {
    double loss;
    Vec grad;  ///< d loss / d logits
};

CrossEntropy cross_entropy(std::span<const double> logits, std::size_t label);

// ---------------------------------------------------------------------------
// Symmetric positive definite solves.

/// Lower-triangular Cholesky factor L with S = L L^T.
class Cholesky {
public:
    /// Throws SingularityError on a non-positive pivot and ContractError when
    /// `s` is not symmetric within 1e-9.
    explicit Cholesky(const Mat& s);

    Vec solve(std::span<const double> v) const;
    /// v^T S^{-1} v
    double quadratic_form(std::span<const double> v) const;
    double logdet() const noexcept { return logdet_; }
    const Mat& lower() const noexcept { return lower_; }

private:
    Vec forward_substitute(std::span<const double> v) const;

    Mat lower_;
    double logdet_ = 0.0;
};

struct SolveResult {
    Vec x;
    double logdet;
};

SolveResult cholesky_solve_logdet(const Mat& s, std::span<const double> v);

// ---------------------------------------------------------------------------
// Gradient oracle.

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h.
Vec finite_diff_grad(const ScalarFn& f, std::span<const double> theta, double h);

// ---------------------------------------------------------------------------

/// Seeded 64-bit generator. The engine is std::mt19937_64, whose output stream
/// is fixed by the standard; the real-valued conversions below are done by
/// hand because the standard distributions are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform on [0, 1) with 53 random bits.
    double unit();
    /// Uniform on [a, b).
    double uniform(double a, double b);
    /// Standard normal via Box-Muller (cached second value is not kept).
    double normal();
    /// Uniform integer in [0, n) by rejection; n must be positive.
    std::size_t index(std::size_t n);
    /// An independent generator seeded from this stream.
    Rng split() { return Rng(next_u64()); }

    Mat uniform_mat(std::size_t rows, std::size_t cols, double a, double b);
    Mat normal_mat(std::size_t rows, std::size_t cols, double stddev);

private:
    std::mt19937_64 engine_;
};

}  // namespace diki
