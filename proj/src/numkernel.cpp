#include "diki/numkernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace diki {

namespace {

std::string dims(const Mat& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError(std::string(op) + ": " + dims(a) + " vs " + dims(b));
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols)
        throw ShapeError("Mat: data length " + std::to_string(data_.size()) + " != " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    if (!all_finite()) throw ContractError("Mat: non-finite entry");
}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("Mat: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
    if (!all_finite()) throw ContractError("Mat: non-finite entry");
}

Mat Mat::identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Mat Mat::row_vector(std::span<const double> v) {
    return Mat(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

bool Mat::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Mat transpose(const Mat& a) {
    Mat t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Mat add(const Mat& a, const Mat& b) {
    require_same_shape(a, b, "add");
    Mat out = a;
    auto o = out.flat();
    auto bb = b.flat();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += bb[i];
    return out;
}

Mat subtract(const Mat& a, const Mat& b) {
    require_same_shape(a, b, "subtract");
    Mat out = a;
    auto o = out.flat();
    auto bb = b.flat();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bb[i];
    return out;
}

Mat scale(const Mat& a, double s) {
    Mat out = a;
    for (double& x : out.flat()) x *= s;
    return out;
}

void axpy(Mat& a, double s, const Mat& b) {
    require_same_shape(a, b, "axpy");
    auto o = a.flat();
    auto bb = b.flat();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += s * bb[i];
}

void add_row_bias(Mat& a, std::span<const double> bias) {
    if (bias.size() != a.cols())
        throw ShapeError("add_row_bias: bias length " + std::to_string(bias.size()) +
                         " for " + dims(a));
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
    }
}

Mat slice_rows(const Mat& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.rows()) throw ShapeError("slice_rows: bad range for " + dims(a));
    Mat out(end - begin, a.cols());
    std::copy(a.flat().begin() + static_cast<std::ptrdiff_t>(begin * a.cols()),
              a.flat().begin() + static_cast<std::ptrdiff_t>(end * a.cols()), out.flat().begin());
    return out;
}

Mat vstack(const Mat& top, const Mat& bottom) {
    if (top.cols() != bottom.cols())
        throw ShapeError("vstack: " + dims(top) + " over " + dims(bottom));
    Mat out(top.rows() + bottom.rows(), top.cols());
    std::copy(top.flat().begin(), top.flat().end(), out.flat().begin());
    std::copy(bottom.flat().begin(), bottom.flat().end(),
              out.flat().begin() + static_cast<std::ptrdiff_t>(top.size()));
    return out;
}

Vec column_mean(const Mat& a) {
    Vec mean(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto r = a.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) mean[j] += r[j];
    }
    const double inv = a.rows() == 0 ? 0.0 : 1.0 / static_cast<double>(a.rows());
    for (double& m : mean) m *= inv;
    return mean;
}

double max_abs_diff(const Mat& a, const Mat& b) {
    require_same_shape(a, b, "max_abs_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.flat()[i] - b.flat()[i]));
    return worst;
}

double max_abs(const Mat& a) {
    double worst = 0.0;
    for (double x : a.flat()) worst = std::max(worst, std::abs(x));
    return worst;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) throw ShapeError("matmul: " + dims(a) + " * " + dims(b));
    Mat out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    }
    return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols() != b.cols()) throw ShapeError("matmul_nt: " + dims(a) + " * " + dims(b) + "^T");
    Mat out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ar = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto br = b.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
            out(i, j) = s;
        }
    }
    return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows()) throw ShapeError("matmul_tn: " + dims(a) + "^T * " + dims(b));
    Mat out(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
            out(i, j) = s;
        }
    }
    return out;
}

Vec matvec(const Mat& a, std::span<const double> v) {
    if (a.cols() != v.size()) throw ShapeError("matvec: " + dims(a) + " * vector");
    Vec out(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) out[i] = dot(a.row(i), v);
    return out;
}

Mat softmax_rows(const Mat& z) {
    Mat out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        auto in = z.row(i);
        auto o = out.row(i);
        if (in.empty()) continue;
        const double peak = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - peak);
            total += o[j];
        }
        for (double& x : o) x /= total;
    }
    return out;
}

Mat softmax_row_jacobian(std::span<const double> a) {
    double total = 0.0;
    for (double x : a) {
        if (!(x >= 0.0)) throw ContractError("softmax_row_jacobian: negative probability");
        total += x;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ContractError("softmax_row_jacobian: row sums to " + std::to_string(total));
    const std::size_t n = a.size();
    Mat j(n, n);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t t = 0; t < n; ++t) j(s, t) = s == t ? a[s] * (1.0 - a[s]) : -a[s] * a[t];
    return j;
}

Vec softmax_row_backward(std::span<const double> a, std::span<const double> da) {
    if (a.size() != da.size()) throw ShapeError("softmax_row_backward: length mismatch");
    // dz_t = sum_s J[s][t] da_s = a_t (da_t - <a, da>)
    const double mean = dot(a, da);
    Vec dz(a.size());
    for (std::size_t t = 0; t < a.size(); ++t) dz[t] = a[t] * (da[t] - mean);
    return dz;
}

CrossEntropy cross_entropy(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size())
        throw IndexError("cross_entropy: label " + std::to_string(label) + " with " +
                         std::to_string(logits.size()) + " classes");
    const auto peak_it = std::max_element(logits.begin(), logits.end());
    const double peak = *peak_it;
    const auto peak_idx = static_cast<std::size_t>(peak_it - logits.begin());
    double rest = 0.0;  // sum of exp(z - peak) over everything but the peak
    Vec e(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        e[i] = std::exp(logits[i] - peak);
        if (i != peak_idx) rest += e[i];
    }
    const double log_total = std::log1p(rest);
    CrossEntropy out{peak + log_total - logits[label], Vec(logits.size())};
    const double total = 1.0 + rest;
    for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = e[i] / total;
    out.grad[label] -= 1.0;
    return out;
}

Cholesky::Cholesky(const Mat& s) : lower_(s.rows(), s.cols()) {
    if (s.rows() != s.cols()) throw ShapeError("Cholesky: matrix is " + dims(s));
    const std::size_t n = s.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (std::abs(s(i, j) - s(j, i)) > 1e-9)
                throw ContractError("Cholesky: matrix not symmetric");

    for (std::size_t j = 0; j < n; ++j) {
        double diag = s(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= lower_(j, k) * lower_(j, k);
        if (!(diag > 0.0) || !std::isfinite(diag))
            throw SingularityError("Cholesky: non-positive pivot at column " + std::to_string(j));
        const double root = std::sqrt(diag);
        lower_(j, j) = root;
        logdet_ += 2.0 * std::log(root);
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = s(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= lower_(i, k) * lower_(j, k);
            lower_(i, j) = v / root;
        }
    }
}

Vec Cholesky::forward_substitute(std::span<const double> v) const {
    const std::size_t n = lower_.rows();
    if (v.size() != n) throw ShapeError("Cholesky: rhs length mismatch");
    Vec y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = v[i];
        for (std::size_t k = 0; k < i; ++k) s -= lower_(i, k) * y[k];
        y[i] = s / lower_(i, i);
    }
    return y;
}

Vec Cholesky::solve(std::span<const double> v) const {
    Vec x = forward_substitute(v);
    const std::size_t n = lower_.rows();
    for (std::size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= lower_(k, ii) * x[k];
        x[ii] = s / lower_(ii, ii);
    }
    return x;
}

double Cholesky::quadratic_form(std::span<const double> v) const {
    const Vec y = forward_substitute(v);
    return dot(y, y);
}

SolveResult cholesky_solve_logdet(const Mat& s, std::span<const double> v) {
    const Cholesky chol(s);
    return {chol.solve(v), chol.logdet()};
}

Vec finite_diff_grad(const ScalarFn& f, std::span<const double> theta, double h) {
    if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
    Vec probe(theta.begin(), theta.end());
    Vec grad(theta.size());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double up = f(probe);
        probe[i] = saved - h;
        const double down = f(probe);
        probe[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

double Rng::unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double a, double b) {
    const double x = a + (b - a) * unit();
    // a + (b - a) * u can round up to b when u is just below one
    return x < b ? x : std::nextafter(b, a);
}

double Rng::normal() {
    double u1 = unit();
    while (u1 <= 0.0) u1 = unit();
    const double u2 = unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw ContractError("Rng::index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % bound);
}

Mat Rng::uniform_mat(std::size_t rows, std::size_t cols, double a, double b) {
    Mat m(rows, cols);
    if (a == b) {
        for (double& x : m.flat()) x = a + 0.0;  // folds -0.0 to +0.0
        return m;
    }
    for (double& x : m.flat()) x = uniform(a, b);
    return m;
}

Mat Rng::normal_mat(std::size_t rows, std::size_t cols, double stddev) {
    Mat m(rows, cols);
    for (double& x : m.flat()) x = stddev * normal();
    return m;
}

}  // namespace diki
