#include "diki/attention.hpp"

#include <cmath>
#include <string>

namespace diki {

namespace {

void check_input(const Mat& x, const FrozenAttention& p, const char* op) {
    if (x.cols() != p.dim())
        throw ShapeError(std::string(op) + ": input has " + std::to_string(x.cols()) +
                         " columns, layer expects " + std::to_string(p.dim()));
    if (x.rows() == 0) throw ShapeError(std::string(op) + ": empty sequence");
}

void check_adapter(const Adapter& a, const FrozenAttention& p) {
    if (a.keys.cols() != p.dim() || a.values.cols() != p.dim() ||
        a.keys.rows() != a.values.rows() || a.keys.rows() == 0)
        throw ShapeError("adapter shape does not match layer dimension " +
                         std::to_string(p.dim()));
}

void check_weight(double w) {
    if (!(w >= 0.0 && w <= 1.0))
        throw ContractError("residual weight " + std::to_string(w) + " outside [0, 1]");
}

Mat project(const Mat& x, const Mat& w, const Vec& b) {
    Mat out = matmul(x, w);
    add_row_bias(out, b);
    return out;
}

// Row-wise softmax backward: rows of d_scores from rows of d_attn.
Mat softmax_rows_backward(const Mat& attn, const Mat& d_attn) {
    Mat d_scores(attn.rows(), attn.cols());
    for (std::size_t i = 0; i < attn.rows(); ++i) {
        const Vec dz = softmax_row_backward(attn.row(i), d_attn.row(i));
        std::copy(dz.begin(), dz.end(), d_scores.row(i).begin());
    }
    return d_scores;
}

Traced trace_self_attention(Mat input, const FrozenAttention& p) {
    Traced r;
    auto& t = r.trace;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.dim()));
    t.q = project(input, p.w_q, p.b_q);
    t.k = project(input, p.w_k, p.b_k);
    t.v = project(input, p.w_v, p.b_v);
    t.attn = softmax_rows(scale(matmul_nt(t.q, t.k), inv_sqrt_d));
    t.frozen_out = matmul(t.attn, t.v);
    t.input = std::move(input);
    r.out = t.frozen_out;
    return r;
}

}  // namespace

FrozenAttention FrozenAttention::random(std::size_t d, double weight_scale, double bias_scale,
                                        Rng& rng) {
    const double sd = weight_scale / std::sqrt(static_cast<double>(d));
    FrozenAttention p;
    p.w_q = rng.normal_mat(d, d, sd);
    p.w_k = rng.normal_mat(d, d, sd);
    p.w_v = rng.normal_mat(d, d, sd);
    auto bias = [&] {
        Vec b(d);
        for (double& x : b) x = bias_scale * rng.normal();
        return b;
    };
    p.b_q = bias();
    p.b_k = bias();
    p.b_v = bias();
    return p;
}

Traced trace_frozen(const Mat& x, const FrozenAttention& p) {
    check_input(x, p, "frozen_forward");
    return trace_self_attention(x, p);
}

Traced trace_residual(const Mat& x, const FrozenAttention& p, const Adapter& a, double w) {
    check_input(x, p, "residual_forward");
    check_adapter(a, p);
    check_weight(w);
    Traced r = trace_self_attention(x, p);
    auto& t = r.trace;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.dim()));
    t.residual_attn = softmax_rows(scale(matmul_nt(t.q, a.keys), inv_sqrt_d));
    t.weight = w;
    // O = O_L + w O_r; O_L itself is left bit-identical to the frozen path.
    axpy(r.out, w, matmul(t.residual_attn, a.values));
    return r;
}

Traced trace_prepend(const Mat& x, const FrozenAttention& p, const PromptBaseline& prompt) {
    check_input(x, p, "prepend_forward");
    if (prompt.prompts.cols() != p.dim())
        throw ShapeError("prepend_forward: prompt width does not match layer dimension");
    Traced r = trace_self_attention(vstack(prompt.prompts, x), p);
    r.trace.prompt_rows = prompt.length();
    r.out = slice_rows(r.trace.frozen_out, prompt.length(), r.trace.frozen_out.rows());
    return r;
}

Mat frozen_forward(const Mat& x, const FrozenAttention& p) { return trace_frozen(x, p).out; }

Mat prepend_forward(const Mat& x, const FrozenAttention& p, const PromptBaseline& prompt) {
    return trace_prepend(x, p, prompt).out;
}

Mat residual_forward(const Mat& x, const FrozenAttention& p, const Adapter& a, double w) {
    return trace_residual(x, p, a, w).out;
}

namespace {

// Backward through the frozen self-attention given the gradient on every
// output row; also returns d_q so the residual branch can add into it.
struct SelfAttentionGrads {
    Mat d_q, d_k, d_v;
};

SelfAttentionGrads self_attention_backward(const AttentionTrace& t, const FrozenAttention& p,
                                           const Mat& d_out) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.dim()));
    SelfAttentionGrads g;
    const Mat d_attn = matmul_nt(d_out, t.v);
    g.d_v = matmul_tn(t.attn, d_out);
    const Mat d_scores = softmax_rows_backward(t.attn, d_attn);
    g.d_q = scale(matmul(d_scores, t.k), inv_sqrt_d);
    g.d_k = scale(matmul_tn(d_scores, t.q), inv_sqrt_d);
    return g;
}

Mat input_grad(const SelfAttentionGrads& g, const FrozenAttention& p) {
    Mat d_x = matmul_nt(g.d_q, p.w_q);
    axpy(d_x, 1.0, matmul_nt(g.d_k, p.w_k));
    axpy(d_x, 1.0, matmul_nt(g.d_v, p.w_v));
    return d_x;
}

void check_grad_shape(const Mat& d_out, std::size_t rows, std::size_t cols, const char* op) {
    if (d_out.rows() != rows || d_out.cols() != cols)
        throw ShapeError(std::string(op) + ": output gradient shape mismatch");
}

}  // namespace

Mat frozen_backward(const AttentionTrace& t, const FrozenAttention& p, const Mat& d_out) {
    check_grad_shape(d_out, t.input.rows(), p.dim(), "frozen_backward");
    return input_grad(self_attention_backward(t, p, d_out), p);
}

ResidualBackward residual_backward(const AttentionTrace& t, const FrozenAttention& p,
                                   const Adapter& a, const Mat& d_out) {
    check_grad_shape(d_out, t.input.rows(), p.dim(), "residual_backward");
    if (t.residual_attn.empty()) throw ContractError("residual_backward: trace has no residual branch");
    check_adapter(a, p);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.dim()));

    SelfAttentionGrads g = self_attention_backward(t, p, d_out);

    // Residual branch: O_r = A_r V_r, A_r = softmax(Q K_r^T / sqrt d).
    const Mat d_or = scale(d_out, t.weight);
    ResidualBackward out;
    out.grads.d_values = matmul_tn(t.residual_attn, d_or);
    const Mat d_attn_r = matmul_nt(d_or, a.values);
    const Mat d_scores_r = softmax_rows_backward(t.residual_attn, d_attn_r);
    out.grads.d_keys = scale(matmul_tn(d_scores_r, t.q), inv_sqrt_d);
    axpy(g.d_q, inv_sqrt_d, matmul(d_scores_r, a.keys));

    out.d_x = input_grad(g, p);
    return out;
}

PrependBackward prepend_backward(const AttentionTrace& t, const FrozenAttention& p,
                                 const Mat& d_out) {
    const std::size_t l = t.prompt_rows;
    check_grad_shape(d_out, t.input.rows() - l, p.dim(), "prepend_backward");
    // Prompt output rows are discarded, so their gradient is zero.
    const Mat padded = vstack(Mat(l, p.dim()), d_out);
    const Mat d_input = input_grad(self_attention_backward(t, p, padded), p);
    return {slice_rows(d_input, l, d_input.rows()), slice_rows(d_input, 0, l)};
}

AdapterGrads adapter_grads(const Mat& x, const FrozenAttention& p, const Adapter& a, double w,
                           const Mat& d_out) {
    const Traced fwd = trace_residual(x, p, a, w);
    if (d_out.rows() != fwd.out.rows() || d_out.cols() != fwd.out.cols())
        throw ShapeError("adapter_grads: output gradient shape mismatch");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.dim()));
    const auto& t = fwd.trace;

    AdapterGrads g;
    const Mat d_or = scale(d_out, w);
    g.d_values = matmul_tn(t.residual_attn, d_or);
    const Mat d_attn = matmul_nt(d_or, a.values);
    // Per query row, chain through the explicit softmax Jacobian.
    Mat d_scores(t.residual_attn.rows(), t.residual_attn.cols());
    for (std::size_t i = 0; i < d_scores.rows(); ++i) {
        const Mat jac = softmax_row_jacobian(t.residual_attn.row(i));
        const Vec dz = matvec(transpose(jac), d_attn.row(i));
        std::copy(dz.begin(), dz.end(), d_scores.row(i).begin());
    }
    g.d_keys = scale(matmul_tn(d_scores, t.q), inv_sqrt_d);
    return g;
}

Adapter init_adapter(std::size_t l, std::size_t d, double bound, Rng& rng) {
    if (l == 0 || d == 0) throw ContractError("init_adapter: length and dimension must be positive");
    if (!(bound >= 0.0)) throw ContractError("init_adapter: negative bound");
    return {rng.uniform_mat(l, d, -bound, bound), Mat(l, d)};
}

Adapter init_adapter_ablation(std::size_t l, std::size_t d, double bound, Rng& rng) {
    if (l == 0 || d == 0) throw ContractError("init_adapter: length and dimension must be positive");
    if (!(bound >= 0.0)) throw ContractError("init_adapter: negative bound");
    Mat keys = rng.uniform_mat(l, d, -bound, bound);
    Mat values = rng.uniform_mat(l, d, -bound, bound);
    return {std::move(keys), std::move(values)};
}

PromptBaseline init_prompt(std::size_t l, std::size_t d, double bound, Rng& rng) {
    if (l == 0 || d == 0) throw ContractError("init_prompt: length and dimension must be positive");
    return {rng.uniform_mat(l, d, -bound, bound)};
}

}  // namespace diki
