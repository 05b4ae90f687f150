#include "diki/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace diki {

TokenSeq ClassTemplate::tokens() const {
    TokenSeq seq(prefix.begin(), prefix.end());
    seq.push_back(class_token);
    return seq;
}

DualEncoder DualEncoder::build(const BackboneConfig& cfg) {
    if (cfg.vocab == 0 || cfg.dim == 0 || cfg.depth == 0)
        throw ConfigError("backbone: vocab, dim and depth must be positive");
    Rng rng(cfg.seed);
    DualEncoder enc;
    enc.config = cfg;
    const Mat embed = rng.normal_mat(cfg.vocab, cfg.dim, 1.0);
    for (EncoderStack* stack : {&enc.image, &enc.text}) {
        stack->embed = embed;
        Rng layer_rng = rng.split();
        for (std::size_t h = 0; h < cfg.depth; ++h)
            stack->layers.push_back(
                FrozenAttention::random(cfg.dim, cfg.weight_scale, cfg.bias_scale, layer_rng));
    }
    return enc;
}

namespace {

void check_injection(const EncoderStack& stack, const Injection& inj) {
    if (!inj.adapters.empty() && !inj.prompts.empty())
        throw ContractError("injection carries both adapters and prompts");
    if (inj.adapters.size() > stack.depth() || inj.prompts.size() > stack.depth())
        throw ShapeError("injection deeper than the encoder stack");
}

Mat embed_tokens(const TokenSeq& seq, const EncoderStack& stack) {
    if (seq.empty()) throw ContractError("encode: empty token sequence");
    Mat x(seq.size(), stack.dim());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (seq[i] >= stack.vocab())
            throw IndexError("encode: token " + std::to_string(seq[i]) + " outside vocabulary of " +
                             std::to_string(stack.vocab()));
        auto src = stack.embed.row(seq[i]);
        std::copy(src.begin(), src.end(), x.row(i).begin());
    }
    return x;
}

Traced run_layer(const Mat& x, const EncoderStack& stack, const Injection& inj, std::size_t h) {
    const FrozenAttention& layer = stack.layers[h];
    if (h < inj.adapters.size()) return trace_residual(x, layer, inj.adapters[h], inj.weight);
    if (h < inj.prompts.size()) return trace_prepend(x, layer, inj.prompts[h]);
    return trace_frozen(x, layer);
}

}  // namespace

EncodeTrace encode_traced(const TokenSeq& seq, const EncoderStack& stack, const Injection& inj) {
    check_injection(stack, inj);
    EncodeTrace trace;
    Mat x = embed_tokens(seq, stack);
    for (std::size_t h = 0; h < stack.depth(); ++h) {
        Traced step = run_layer(x, stack, inj, h);
        axpy(x, 1.0, step.out);
        trace.layers.push_back(std::move(step.trace));
    }
    trace.pooled = column_mean(x);
    const double n = norm2(trace.pooled);
    if (!(n > 0.0)) throw ContractError("encode: pooled feature has zero norm");
    trace.feature = trace.pooled;
    for (double& v : trace.feature) v /= n;
    return trace;
}

Vec encode(const TokenSeq& seq, const EncoderStack& stack, const Injection& inj) {
    return encode_traced(seq, stack, inj).feature;
}

InjectionGrads InjectionGrads::zeros_like(const Injection& inj) {
    InjectionGrads g;
    for (const Adapter& a : inj.adapters)
        g.adapters.push_back({Mat(a.keys.rows(), a.keys.cols()), Mat(a.values.rows(), a.values.cols())});
    for (const PromptBaseline& p : inj.prompts)
        g.prompts.emplace_back(p.prompts.rows(), p.prompts.cols());
    return g;
}

void encode_backward(const EncodeTrace& trace, const EncoderStack& stack, const Injection& inj,
                     std::span<const double> d_feature, InjectionGrads& acc) {
    const std::size_t d = stack.dim();
    if (d_feature.size() != d) throw ShapeError("encode_backward: feature gradient length");
    if (acc.adapters.size() != inj.adapters.size() || acc.prompts.size() != inj.prompts.size())
        throw ShapeError("encode_backward: accumulator does not match injection");

    // feature = pooled / |pooled|
    const double n = norm2(trace.pooled);
    const double along = dot(trace.feature, d_feature);
    Vec d_pooled(d);
    for (std::size_t j = 0; j < d; ++j) d_pooled[j] = (d_feature[j] - trace.feature[j] * along) / n;

    const std::size_t len = trace.layers.front().input.rows() - trace.layers.front().prompt_rows;
    Mat d_x(len, d);
    const double inv_len = 1.0 / static_cast<double>(len);
    for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < d; ++j) d_x(i, j) = d_pooled[j] * inv_len;

    const std::size_t deepest = std::max(inj.adapters.size(), inj.prompts.size());
    if (deepest == 0) return;
    // Residual skip: dX_h = dX_{h+1} + (d attn(X_h) / dX_h)^T dX_{h+1}.
    // Layer 0 input is the frozen embedding, so its input gradient is unused.
    for (std::size_t h = stack.depth(); h-- > 0;) {
        const FrozenAttention& layer = stack.layers[h];
        const AttentionTrace& t = trace.layers[h];
        Mat through;
        if (h < inj.adapters.size()) {
            ResidualBackward rb = residual_backward(t, layer, inj.adapters[h], d_x);
            axpy(acc.adapters[h].d_keys, 1.0, rb.grads.d_keys);
            axpy(acc.adapters[h].d_values, 1.0, rb.grads.d_values);
            through = std::move(rb.d_x);
        } else if (h < inj.prompts.size()) {
            PrependBackward pb = prepend_backward(t, layer, d_x);
            axpy(acc.prompts[h], 1.0, pb.d_prompts);
            through = std::move(pb.d_x);
        } else {
            through = frozen_backward(t, layer, d_x);
        }
        if (h == 0) break;
        axpy(d_x, 1.0, through);
    }
}

Mat class_embeddings(std::span<const ClassTemplate> classes, const EncoderStack& text,
                     const Injection& inj) {
    if (classes.empty()) throw ContractError("class_embeddings: no classes");
    Mat out(classes.size(), text.dim());
    for (std::size_t j = 0; j < classes.size(); ++j) {
        const Vec f = encode(classes[j].tokens(), text, inj);
        std::copy(f.begin(), f.end(), out.row(j).begin());
    }
    return out;
}

Vec logits(std::span<const double> feature, const Mat& text_embs, double logit_scale) {
    if (feature.size() != text_embs.cols()) throw ShapeError("logits: dimension mismatch");
    if (std::abs(norm2(feature) - 1.0) > 1e-9) throw ContractError("logits: feature not unit norm");
    Vec out(text_embs.rows());
    for (std::size_t j = 0; j < text_embs.rows(); ++j) {
        if (std::abs(norm2(text_embs.row(j)) - 1.0) > 1e-9)
            throw ContractError("logits: text embedding " + std::to_string(j) + " not unit norm");
        out[j] = logit_scale * dot(feature, text_embs.row(j));
    }
    return out;
}

std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw ContractError("argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace diki
