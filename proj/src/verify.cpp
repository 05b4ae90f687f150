#include "diki/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "diki/metrics.hpp"

namespace diki {

namespace {

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

TokenSeq random_tokens(std::size_t vocab, Rng& rng) {
    TokenSeq seq(1 + rng.index(12));
    for (Token& t : seq) t = static_cast<Token>(rng.index(vocab));
    return seq;
}

double max_abs_diff(const Vec& a, const Vec& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Vec concat(const Mat& a, const Mat& b) {
    Vec out(a.flat().begin(), a.flat().end());
    out.insert(out.end(), b.flat().begin(), b.flat().end());
    return out;
}

double max_row_pair_diff(const Mat& m) {
    double worst = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i + 1; j < m.rows(); ++j)
            for (std::size_t c = 0; c < m.cols(); ++c) worst = std::max(worst, std::abs(m(i, c) - m(j, c)));
    return worst;
}

double half_sq_error(const Mat& out, const Mat& target) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.flat().size(); ++i) {
        const double e = out.flat()[i] - target.flat()[i];
        s += 0.5 * e * e;
    }
    return s;
}

}  // namespace

void Report::check(bool ok, const std::string& what) {
    lines.push_back(std::string(ok ? "PASS " : "FAIL ") + name + ": " + what);
    passed = passed && ok;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
    Vec diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    const double denom = std::max(norm2(a), norm2(b));
    return denom == 0.0 ? 0.0 : norm2(diff) / denom;
}

Report verify_zero_init_identity(const DualEncoder& backbone, Rng& rng, std::size_t inputs) {
    Report r{"zero-init", true, {}, 0.0};
    constexpr double kTol = 1e-12;
    constexpr std::size_t kLength = 4;
    const std::size_t d = backbone.config.dim;
    const std::size_t depth = backbone.image.depth();

    struct Case {
        std::string label;
        std::size_t depth;
        bool both;
    };
    const std::size_t two = std::min<std::size_t>(2, depth);
    const std::vector<Case> cases = {{"image encoder, depth 1", 1, false},
                                     {"image encoder, depth " + std::to_string(two), two, false},
                                     {"both encoders, depth " + std::to_string(depth), depth, true}};
    for (const Case& c : cases) {
        double worst = 0.0;
        for (std::size_t n = 0; n < inputs; ++n) {
            std::vector<Adapter> img, txt;
            for (std::size_t h = 0; h < c.depth; ++h) {
                img.push_back(init_adapter(kLength, d, 0.02, rng));
                txt.push_back(init_adapter(kLength, d, 0.02, rng));
            }
            const double w = rng.unit();
            const TokenSeq seq = random_tokens(backbone.config.vocab, rng);
            worst = std::max(worst, max_abs_diff(encode(seq, backbone.image, {img, {}, w}),
                                                 encode(seq, backbone.image)));
            if (c.both)
                worst = std::max(worst, max_abs_diff(encode(seq, backbone.text, {txt, {}, w}),
                                                     encode(seq, backbone.text)));
        }
        r.max_error = std::max(r.max_error, worst);
        r.check(worst <= kTol, c.label + ", " + std::to_string(inputs) + " inputs, max |diff| = " + sci(worst));
    }
    return r;
}

Report verify_gradcheck(const GradcheckDims& dims, std::size_t trials, Rng& rng) {
    Report r{"gradcheck", true, {}, 0.0};
    constexpr double kTol = 1e-4;
    constexpr double kStep = 1e-5;
    const std::size_t L = dims.seq_len, l = dims.length, d = dims.dim;

    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const FrozenAttention p = FrozenAttention::random(d, 1.0, 0.1, rng);
        const Mat x = rng.normal_mat(L, d, 1.0);
        const Mat d_out = rng.normal_mat(L, d, 1.0);
        const Adapter a{rng.normal_mat(l, d, 1.0), rng.normal_mat(l, d, 1.0)};
        const double w = rng.uniform(0.1, 1.0);

        auto loss = [&](std::span<const double> theta) {
            Adapter b{Mat(l, d, Vec(theta.begin(), theta.begin() + l * d)),
                      Mat(l, d, Vec(theta.begin() + l * d, theta.end()))};
            const Mat o = residual_forward(x, p, b, w);
            return dot(o.flat(), d_out.flat());
        };
        const Vec numeric = finite_diff_grad(loss, concat(a.keys, a.values), kStep);

        const AdapterGrads jac = adapter_grads(x, p, a, w, d_out);
        const Traced tr = trace_residual(x, p, a, w);
        const AdapterGrads bwd = residual_backward(tr.trace, p, a, d_out).grads;
        worst = std::max({worst, relative_error(concat(jac.d_keys, jac.d_values), numeric),
                          relative_error(concat(bwd.d_keys, bwd.d_values), numeric)});
    }
    r.max_error = worst;
    r.check(worst <= kTol, std::to_string(trials) + " trials (L=" + std::to_string(L) + ", l=" +
                               std::to_string(l) + ", d=" + std::to_string(d) +
                               "), max relative error = " + sci(worst));

    // Zero values: the key gradient vanishes identically.
    {
        const FrozenAttention p = FrozenAttention::random(d, 1.0, 0.1, rng);
        const Mat x = rng.normal_mat(L, d, 1.0);
        const Mat d_out = rng.normal_mat(L, d, 1.0);
        const Adapter a = init_adapter(l, d, 1.0, rng);
        const AdapterGrads g = adapter_grads(x, p, a, 1.0, d_out);
        const AdapterGrads b = residual_backward(trace_residual(x, p, a, 1.0).trace, p, a, d_out).grads;
        const double m = std::max(max_abs(g.d_keys), max_abs(b.d_keys));
        r.check(m == 0.0, "zero values give zero key gradient, max |dK| = " + sci(m));
    }
    // Zero weight: both gradients vanish.
    {
        const FrozenAttention p = FrozenAttention::random(d, 1.0, 0.1, rng);
        const Mat x = rng.normal_mat(L, d, 1.0);
        const Mat d_out = rng.normal_mat(L, d, 1.0);
        const Adapter a{rng.normal_mat(l, d, 1.0), rng.normal_mat(l, d, 1.0)};
        const AdapterGrads g = adapter_grads(x, p, a, 0.0, d_out);
        const AdapterGrads b = residual_backward(trace_residual(x, p, a, 0.0).trace, p, a, d_out).grads;
        const double m = std::max({max_abs(g.d_keys), max_abs(g.d_values), max_abs(b.d_keys),
                                   max_abs(b.d_values)});
        r.check(m == 0.0, "zero weight gives zero gradients, max = " + sci(m));
    }
    return r;
}

Report verify_degenerate_init(const DegenerateDims& dims, std::size_t steps, Rng& rng) {
    Report r{"degenerate-init", true, {}, 0.0};
    if (steps < 2) throw ContractError("verify_degenerate_init: need at least two steps");
    constexpr double kKeyTol = 1e-15;
    constexpr double kRowTol = 1e-12;
    constexpr double kLossTol = 1e-12;
    constexpr double kLr = 0.1;
    const std::size_t L = dims.seq_len, l = dims.length, d = dims.dim;

    const FrozenAttention p = FrozenAttention::random(d, 1.0, 0.1, rng);
    const Mat x = rng.normal_mat(L, d, 1.0);
    const Mat target = rng.normal_mat(L, d, 1.0);

    // One SGD step; returns max |dK| and the loss before the update.
    auto step = [&](Adapter& a, double& key_grad) {
        const Traced tr = trace_residual(x, p, a, 1.0);
        const double loss = half_sq_error(tr.out, target);
        const AdapterGrads g = residual_backward(tr.trace, p, a, subtract(tr.out, target)).grads;
        key_grad = max_abs(g.d_keys);
        axpy(a.keys, -kLr, g.d_keys);
        axpy(a.values, -kLr, g.d_values);
        return loss;
    };

    // (a) K = V = 0.
    Adapter a = init_adapter(l, d, 0.0, rng);
    double worst_key = 0.0, worst_row = 0.0;
    std::size_t first_bad = 0;
    for (std::size_t s = 1; s <= steps; ++s) {
        double kg = 0.0;
        step(a, kg);
        const double row = max_row_pair_diff(a.values);
        if (!first_bad && (kg > kKeyTol || row > kRowTol)) first_bad = s;
        worst_key = std::max(worst_key, kg);
        worst_row = std::max(worst_row, row);
    }
    r.max_error = std::max(worst_key, worst_row);
    std::string where = first_bad ? " (first violation at step " + std::to_string(first_bad) + ")" : "";
    r.check(worst_key <= kKeyTol, "zero init keeps dK = 0 over " + std::to_string(steps) +
                                      " steps, max |dK| = " + sci(worst_key) + where);
    r.check(worst_row <= kRowTol, "zero init keeps value rows equal, max row gap = " + sci(worst_row) + where);
    r.check(max_abs(a.values) > 0.0, "values moved away from zero");

    // Once value rows agree, the branch output ignores the keys.
    {
        const double base = half_sq_error(residual_forward(x, p, a, 1.0), target);
        Adapter moved = a;
        moved.keys = rng.uniform_mat(l, d, -1.0, 1.0);
        const double gap = std::abs(half_sq_error(residual_forward(x, p, moved, 1.0), target) - base);
        r.check(gap <= kLossTol, "perturbing keys leaves loss unchanged, |diff| = " + sci(gap));
    }

    // (b) control: random keys, zero values.
    Adapter c = init_adapter(l, d, 1.0, rng);
    double kg = 0.0;
    const double first_loss = step(c, kg);
    const double gap = max_row_pair_diff(c.values);
    r.check(gap > kRowTol, "random-key control breaks row equality after step 1, max row gap = " + sci(gap));
    for (std::size_t s = 2; s <= steps; ++s) step(c, kg);
    const double final_loss = half_sq_error(residual_forward(x, p, c, 1.0), target);
    r.check(final_loss < first_loss, "random-key control reduces loss " + sci(first_loss) + " -> " +
                                         sci(final_loss));
    return r;
}

Report verify_metrics(Rng& rng, std::size_t trials) {
    Report r{"metrics", true, {}, 0.0};
    constexpr double kTol = 1e-12;
    const Mat hand{{0.80, 0.50}, {0.75, 0.90}};
    auto near = [](double a, double b) { return std::abs(a - b) <= kTol; };

    const MetricSeries t = metric_transfer(hand);
    r.check(t.values.size() == 1 && near(t.values[0], 0.50) && near(t.aggregate, 0.50),
            "hand N=2 transfer = " + format_fixed6(t.aggregate));
    const MetricSeries a = metric_avg(hand);
    r.check(near(a.values[0], 0.775) && near(a.values[1], 0.70) && near(a.aggregate, 0.7375),
            "hand N=2 avg = (" + format_fixed6(a.values[0]) + ", " + format_fixed6(a.values[1]) + "; " +
                format_fixed6(a.aggregate) + ")");
    const MetricSeries l = metric_last(hand);
    r.check(near(l.values[0], 0.75) && near(l.values[1], 0.90) && near(l.aggregate, 0.825),
            "hand N=2 last = (" + format_fixed6(l.values[0]) + ", " + format_fixed6(l.values[1]) + "; " +
                format_fixed6(l.aggregate) + ")");

    double worst = 0.0;
    for (std::size_t n = 0; n < trials; ++n) {
        const std::size_t N = 1 + rng.index(8);
        const Mat p = rng.uniform_mat(N, N, 0.0, 1.0);
        // Brute force with explicit loops, independent of the library.
        double agg_avg = 0.0, agg_last = 0.0, agg_tr = 0.0;
        const MetricSeries avg = metric_avg(p), last = metric_last(p);
        for (std::size_t j = 0; j < N; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < N; ++i) s += p(i, j);
            worst = std::max(worst, std::abs(avg.values[j] - s / double(N)));
            worst = std::max(worst, std::abs(last.values[j] - p(N - 1, j)));
            agg_avg += s / double(N);
            agg_last += p(N - 1, j);
        }
        worst = std::max({worst, std::abs(avg.aggregate - agg_avg / double(N)),
                          std::abs(last.aggregate - agg_last / double(N))});
        if (N >= 2) {
            const MetricSeries tr = metric_transfer(p);
            for (std::size_t j = 1; j < N; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < j; ++i) s += p(i, j);
                worst = std::max(worst, std::abs(tr.values[j - 1] - s / double(j)));
                agg_tr += s / double(j);
            }
            worst = std::max(worst, std::abs(tr.aggregate - agg_tr / double(N - 1)));
        }
    }
    r.max_error = worst;
    r.check(worst <= kTol, std::to_string(trials) + " random matrices (N <= 8) vs brute force, max |diff| = " +
                               sci(worst));
    return r;
}

}  // namespace diki
