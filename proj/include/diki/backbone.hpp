#pragma once

// A tiny frozen dual encoder: an image-like and a text-like stack of
// attention blocks over token sequences, each producing a unit-norm feature.
// Classification is by cosine similarity between an image feature and the
// text features of per-class templates.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "diki/attention.hpp"

namespace diki {

using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;

inline constexpr std::size_t kTemplatePrefixLength = 3;

/// "a photo of {c}": a fixed prefix followed by one class token.
struct ClassTemplate {
    std::array<Token, kTemplatePrefixLength> prefix{};
    Token class_token = 0;

    TokenSeq tokens() const;
    friend bool operator==(const ClassTemplate&, const ClassTemplate&) = default;
};

struct BackboneConfig {
    std::size_t vocab = 256;
    std::size_t dim = 32;
    std::size_t depth = 2;
    std::uint64_t seed = 1234;
    double weight_scale = 0.5;
    double bias_scale = 0.1;
};

struct EncoderStack {
    Mat embed;  // vocab x d
    std::vector<FrozenAttention> layers;

    std::size_t dim() const noexcept { return embed.cols(); }
    std::size_t vocab() const noexcept { return embed.rows(); }
    std::size_t depth() const noexcept { return layers.size(); }
};

/// Both encoders read the same token embedding table (the aligned
/// "pre-training" of this toy) but own independent attention layers.
struct DualEncoder {
    BackboneConfig config;
    EncoderStack image;
    EncoderStack text;

    static DualEncoder build(const BackboneConfig& cfg);
};

/// What to attach to the first layers of a stack. At most one of `adapters`
/// and `prompts` is non-empty; `weight` scales residual branches only.
struct Injection {
    std::span<const Adapter> adapters{};
    std::span<const PromptBaseline> prompts{};
    double weight = 1.0;
};

/// Embed, run x <- x + attn(x) per layer, mean-pool, L2-normalize.
Vec encode(const TokenSeq& seq, const EncoderStack& stack, const Injection& inj = {});

struct EncodeTrace {
    std::vector<AttentionTrace> layers;
    Vec pooled;
    Vec feature;
};

EncodeTrace encode_traced(const TokenSeq& seq, const EncoderStack& stack, const Injection& inj);

/// Per-layer gradients for whatever the injection attached.
struct InjectionGrads {
    std::vector<AdapterGrads> adapters;
    std::vector<Mat> prompts;

    static InjectionGrads zeros_like(const Injection& inj);
};

/// Backpropagates d(loss)/d(feature) through a traced encode and adds the
/// resulting adapter or prompt gradients into `acc`.
void encode_backward(const EncodeTrace& trace, const EncoderStack& stack, const Injection& inj,
                     std::span<const double> d_feature, InjectionGrads& acc);

/// Row j is the text feature of template j.
Mat class_embeddings(std::span<const ClassTemplate> classes, const EncoderStack& text,
                     const Injection& inj = {});

/// logit_scale * cosine(feature, row j) for every row.
Vec logits(std::span<const double> feature, const Mat& text_embs, double logit_scale);

/// First index of the maximum.
std::size_t argmax(std::span<const double> v);

}  // namespace diki
