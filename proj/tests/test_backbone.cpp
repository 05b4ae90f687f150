#include <doctest.h>

#include <cmath>

#include "diki/backbone.hpp"
#include "diki/verify.hpp"
#include "helpers.hpp"

using namespace diki;

namespace {

DualEncoder small_backbone(std::size_t depth = 2) {
    BackboneConfig cfg;
    cfg.vocab = 40;
    cfg.dim = 6;
    cfg.depth = depth;
    cfg.seed = 77;
    return DualEncoder::build(cfg);
}

TokenSeq tokens(std::initializer_list<Token> t) { return TokenSeq(t); }

std::vector<Adapter> trained_adapters(std::size_t n, std::size_t d, Rng& rng) {
    std::vector<Adapter> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({rng.normal_mat(3, d, 1.0), rng.normal_mat(3, d, 0.5)});
    return out;
}

}  // namespace

TEST_CASE("encode is deterministic and unit norm") {
    const DualEncoder bb = small_backbone();
    const TokenSeq s = tokens({1, 5, 9, 39});
    const Vec a = encode(s, bb.image), b = encode(s, bb.image);
    CHECK(a == b);
    CHECK(std::abs(norm2(a) - 1.0) <= 1e-12);
    CHECK(std::abs(norm2(encode(s, bb.text)) - 1.0) <= 1e-12);
    CHECK_THROWS_AS(encode(tokens({1, 40}), bb.image), IndexError);
    CHECK_THROWS_AS(encode(TokenSeq{}, bb.image), ContractError);
}

TEST_CASE("backbone build is seeded and shares the embedding table") {
    const DualEncoder a = small_backbone(), b = small_backbone();
    CHECK(a.image.embed == b.image.embed);
    CHECK(a.image.embed == a.text.embed);
    CHECK(a.image.layers[0].w_q == b.image.layers[0].w_q);
    CHECK_FALSE(a.image.layers[0].w_q == a.text.layers[0].w_q);
    BackboneConfig bad;
    bad.depth = 0;
    CHECK_THROWS_AS(DualEncoder::build(bad), ConfigError);
}

TEST_CASE("fresh adapters or zero weight pass features through") {
    const DualEncoder bb = small_backbone(3);
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        TokenSeq s(1 + rng.index(8));
        for (Token& tok : s) tok = static_cast<Token>(rng.index(40));
        const std::size_t depth = 1 + rng.index(3);
        std::vector<Adapter> fresh;
        for (std::size_t h = 0; h < depth; ++h) fresh.push_back(init_adapter(3, 6, 0.02, rng));
        const double w = rng.unit();
        CHECK(test::max_abs_diff(encode(s, bb.image, {fresh, {}, w}), encode(s, bb.image)) <= 1e-12);
        CHECK(test::max_abs_diff(encode(s, bb.text, {fresh, {}, w}), encode(s, bb.text)) <= 1e-12);

        const auto trained = trained_adapters(depth, 6, rng);
        CHECK(encode(s, bb.image, {trained, {}, 0.0}) == encode(s, bb.image));
    }
    const auto too_deep = trained_adapters(4, 6, rng);
    CHECK_THROWS_AS(encode(tokens({1}), bb.image, {too_deep, {}, 1.0}), ShapeError);
}

TEST_CASE("class embeddings") {
    const DualEncoder bb = small_backbone();
    const ClassTemplate a{{0, 1, 2}, 7}, b{{0, 1, 2}, 8}, c{{0, 1, 2}, 9};
    const std::vector<ClassTemplate> one{a};
    const Mat e1 = class_embeddings(one, bb.text);
    CHECK(e1.rows() == 1);
    CHECK(std::abs(norm2(e1.row(0)) - 1.0) <= 1e-12);

    const std::vector<ClassTemplate> abc{a, b, c}, cab{c, a, b};
    const Mat m = class_embeddings(abc, bb.text), p = class_embeddings(cab, bb.text);
    CHECK(test::max_abs_diff(m.row(0), p.row(1)) == 0.0);
    CHECK(test::max_abs_diff(m.row(2), p.row(0)) == 0.0);

    Rng rng(2);
    std::vector<Adapter> fresh{init_adapter(3, 6, 0.02, rng), init_adapter(3, 6, 0.02, rng)};
    CHECK(max_abs_diff(class_embeddings(abc, bb.text, {fresh, {}, 1.0}), m) <= 1e-12);
    CHECK_THROWS_AS(class_embeddings(std::vector<ClassTemplate>{}, bb.text), ContractError);
}

TEST_CASE("logits and argmax") {
    const Mat t{{1, 0, 0}, {0, 1, 0}};
    const Vec e1{1, 0, 0}, e3{0, 0, 1};
    const Vec l = logits(e1, t, 1.0);
    CHECK(l == Vec{1.0, 0.0});
    CHECK(argmax(l) == 0);
    CHECK(logits(e3, t, 1.0) == Vec{0.0, 0.0});
    CHECK(argmax(logits(e3, t, 1.0)) == 0);  // tie goes to the lowest index
    CHECK(argmax(Vec{0.2, 0.9, 0.9}) == 1);
    CHECK_THROWS_AS(logits(Vec{2, 0, 0}, t, 1.0), ContractError);
    CHECK_THROWS_AS(logits(e1, Mat{{2, 0, 0}}, 1.0), ContractError);

    Rng rng(3);
    const DualEncoder bb = small_backbone();
    const std::vector<ClassTemplate> cls{{{0, 1, 2}, 7}, {{0, 1, 2}, 8}, {{0, 1, 2}, 9}};
    const Mat te = class_embeddings(cls, bb.text);
    for (int i = 0; i < 20; ++i) {
        const Vec f = encode(tokens({Token(rng.index(40)), Token(rng.index(40))}), bb.image);
        const Vec a = logits(f, te, 1.0), b = logits(f, te, 100.0);
        CHECK(argmax(a) == argmax(b));
        for (double x : a) CHECK(std::abs(x) <= 1.0 + 1e-12);
    }
}

TEST_CASE("stack backward matches central differences") {
    const DualEncoder bb = small_backbone(3);
    Rng rng(4);
    const TokenSeq s = tokens({3, 17, 22, 5, 31});
    const Vec g = [&] {
        const Mat m = rng.normal_mat(1, 6, 1.0);
        return Vec(m.flat().begin(), m.flat().end());
    }();

    for (std::size_t depth : {1, 2, 3}) {
        CAPTURE(depth);
        auto adapters = trained_adapters(depth, 6, rng);
        const double w = 0.6;
        const Injection inj{adapters, {}, w};
        InjectionGrads acc = InjectionGrads::zeros_like(inj);
        encode_backward(encode_traced(s, bb.image, inj), bb.image, inj, g, acc);

        for (std::size_t h = 0; h < depth; ++h) {
            for (int which = 0; which < 2; ++which) {
                Mat& target = which == 0 ? adapters[h].keys : adapters[h].values;
                const Mat saved = target;
                auto loss = [&](std::span<const double> th) {
                    target = Mat(saved.rows(), saved.cols(), Vec(th.begin(), th.end()));
                    const double v = dot(encode(s, bb.image, inj), g);
                    target = saved;
                    return v;
                };
                const Vec num = finite_diff_grad(loss, Vec(saved.flat().begin(), saved.flat().end()), 1e-6);
                const Mat& ana = which == 0 ? acc.adapters[h].d_keys : acc.adapters[h].d_values;
                CHECK(relative_error(ana.flat(), num) <= 1e-6);
            }
        }
    }

    SUBCASE("prompts") {
        std::vector<PromptBaseline> prompts{{rng.normal_mat(2, 6, 1.0)}, {rng.normal_mat(2, 6, 1.0)}};
        const Injection inj{{}, prompts, 1.0};
        InjectionGrads acc = InjectionGrads::zeros_like(inj);
        encode_backward(encode_traced(s, bb.text, inj), bb.text, inj, g, acc);
        for (std::size_t h = 0; h < 2; ++h) {
            Mat& target = prompts[h].prompts;
            const Mat saved = target;
            auto loss = [&](std::span<const double> th) {
                target = Mat(saved.rows(), saved.cols(), Vec(th.begin(), th.end()));
                const double v = dot(encode(s, bb.text, inj), g);
                target = saved;
                return v;
            };
            const Vec num = finite_diff_grad(loss, Vec(saved.flat().begin(), saved.flat().end()), 1e-6);
            CHECK(relative_error(acc.prompts[h].flat(), num) <= 1e-6);
        }
    }
}
