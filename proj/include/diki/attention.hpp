#pragma once

// Single-head frozen self-attention plus the two ways of injecting task
// knowledge into it: prepending prompt tokens to the sequence, or a residual
// cross-attention branch over learnable keys/values whose output is added to
// the untouched frozen output.

#include <cstddef>

#include "diki/numkernel.hpp"

namespace diki {

/// Pre-trained projections of one attention layer. Never mutated.
struct FrozenAttention {
    Mat w_q, w_k, w_v;  // d x d
    Vec b_q, b_k, b_v;  // d

    std::size_t dim() const noexcept { return w_q.rows(); }

    /// Weights drawn N(0, weight_scale^2 / d), biases N(0, bias_scale^2).
    static FrozenAttention random(std::size_t d, double weight_scale, double bias_scale, Rng& rng);
};

/// Learnable residual keys and values for one layer.
struct Adapter {
    Mat keys;    // l x d
    Mat values;  // l x d

    std::size_t length() const noexcept { return keys.rows(); }
    std::size_t dim() const noexcept { return keys.cols(); }
    friend bool operator==(const Adapter&, const Adapter&) = default;
};

/// Prompt tokens prepended to a layer's input sequence.
struct PromptBaseline {
    Mat prompts;  // l x d

    std::size_t length() const noexcept { return prompts.rows(); }
    friend bool operator==(const PromptBaseline&, const PromptBaseline&) = default;
};

/// softmax((x W_q + b_q)(x W_k + b_k)^T / sqrt(d)) (x W_v + b_v)
Mat frozen_forward(const Mat& x, const FrozenAttention& p);

/// Attention over [prompts; x]; returns only the rows at x's positions.
Mat prepend_forward(const Mat& x, const FrozenAttention& p, const PromptBaseline& prompt);

/// frozen_forward(x) + w * softmax(Q K_r^T / sqrt(d)) V_r, with w in [0, 1].
Mat residual_forward(const Mat& x, const FrozenAttention& p, const Adapter& a, double w);

struct AdapterGrads {
    Mat d_keys;
    Mat d_values;
};

/// Gradients of <d_out, residual_forward(x, p, a, w)> w.r.t. the adapter.
AdapterGrads adapter_grads(const Mat& x, const FrozenAttention& p, const Adapter& a, double w,
                           const Mat& d_out);

/// Values all zero, keys uniform on [-bound, bound]; the branch starts as an
/// exact identity.
Adapter init_adapter(std::size_t l, std::size_t d, double bound, Rng& rng);
/// Keys and values both uniform on [-bound, bound].
Adapter init_adapter_ablation(std::size_t l, std::size_t d, double bound, Rng& rng);
PromptBaseline init_prompt(std::size_t l, std::size_t d, double bound, Rng& rng);

// ---------------------------------------------------------------------------
// Traced forward/backward used by the encoder stack during training.

/// Intermediates of one attention evaluation. For the prepend variant
/// `input` holds the concatenated sequence.
struct AttentionTrace {
    Mat input;
    Mat q, k, v;
    Mat attn;           // softmax scores of the frozen path
    Mat frozen_out;     // O_L
    Mat residual_attn;  // L x l, empty unless a residual branch ran
    double weight = 0.0;
    std::size_t prompt_rows = 0;
};

struct Traced {
    Mat out;
    AttentionTrace trace;
};

Traced trace_frozen(const Mat& x, const FrozenAttention& p);
Traced trace_residual(const Mat& x, const FrozenAttention& p, const Adapter& a, double w);
Traced trace_prepend(const Mat& x, const FrozenAttention& p, const PromptBaseline& prompt);

struct ResidualBackward {
    Mat d_x;
    AdapterGrads grads;
};

struct PrependBackward {
    Mat d_x;
    Mat d_prompts;
};

/// Gradient w.r.t. the layer input of <d_out, frozen_forward(x)>.
Mat frozen_backward(const AttentionTrace& t, const FrozenAttention& p, const Mat& d_out);
ResidualBackward residual_backward(const AttentionTrace& t, const FrozenAttention& p,
                                   const Adapter& a, const Mat& d_out);
PrependBackward prepend_backward(const AttentionTrace& t, const FrozenAttention& p,
                                 const Mat& d_out);

}  // namespace diki
