#include <doctest.h>

#include <cmath>
#include <numbers>

#include "diki/stream.hpp"
#include "helpers.hpp"

using namespace diki;

namespace {

struct Fixture {
    DualEncoder backbone = DualEncoder::build(BackboneConfig{});
    std::vector<TaskData> stream;
    TrainConfig cfg;

    Fixture() {
        StreamSpec spec;
        spec.num_tasks = 2;
        spec.classes_per_task = 3;
        spec.samples_per_class = 30;
        stream = gen_stream(spec, backbone.config.vocab);
        cfg.epochs = 15;
        cfg.batch = 8;
    }
};

double train_accuracy(const TaskData& t, const AdapterSet& s, const DualEncoder& bb) {
    const Mat te = class_embeddings(t.classes, bb.text, s.text(1.0));
    std::size_t ok = 0;
    for (const Sample& x : t.train) ok += argmax(logits(encode(x.tokens, bb.image, s.image(1.0)), te, 1.0)) == x.label;
    return double(ok) / double(t.train.size());
}

double frozen_train_accuracy(const TaskData& t, const DualEncoder& bb) {
    std::size_t ok = 0;
    for (const Sample& x : t.train) ok += zero_shot_infer(x.tokens, t.classes, bb).class_index == x.label;
    return double(ok) / double(t.train.size());
}

}  // namespace

TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0, 10, 0.5) == 0.5);
    CHECK(std::abs(cosine_lr(10, 10, 0.5)) <= 1e-17);
    CHECK(cosine_lr(5, 10, 0.5) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(cosine_lr(3, 10, 2.0) == doctest::Approx(1.0 + std::cos(std::numbers::pi * 0.3)).epsilon(1e-15));
    CHECK_THROWS_AS(cosine_lr(11, 10, 0.5), ContractError);
    CHECK_THROWS_AS(cosine_lr(0, 0, 0.5), ContractError);
}

TEST_CASE("mode strings") {
    CHECK(ModeSpec::parse("iki").kind == AdapterMode::iki);
    CHECK(ModeSpec::parse("prepend").kind == AdapterMode::prepend);
    const ModeSpec abl = ModeSpec::parse("iki-ablation:1");
    CHECK(abl.kind == AdapterMode::iki_ablation);
    CHECK(abl.ablation_bound == 1.0);
    CHECK(ModeSpec::parse(abl.to_string()) == abl);
    CHECK(ModeSpec::parse(ModeSpec::parse("iki-ablation:0.015625").to_string()).ablation_bound == 0.015625);
    CHECK_THROWS_AS(ModeSpec::parse("iki-ablation:"), ConfigError);
    CHECK_THROWS_AS(ModeSpec::parse("iki-ablation:-1"), ConfigError);
    CHECK_THROWS_AS(ModeSpec::parse("lora"), ConfigError);
}

TEST_CASE("train config validation") {
    const DualEncoder bb = DualEncoder::build(BackboneConfig{});
    TrainConfig c;
    CHECK_NOTHROW(c.validate(bb));
    c.adapter_depth = 3;
    CHECK_THROWS_AS(c.validate(bb), ConfigError);
    c = {};
    c.length = 0;
    CHECK_THROWS_AS(c.validate(bb), ConfigError);
    c = {};
    c.lr0 = 0.0;
    CHECK_THROWS_AS(c.validate(bb), ConfigError);
}

TEST_CASE("task statistics come from frozen features") {
    Fixture f;
    const TaskData& t = f.stream[0];
    const std::span<const Sample> one(t.train.data(), 1);
    const TaskStats s1 = estimate_task_stats(one, f.backbone, 1e-7);
    CHECK(s1.gaussian.mean() == encode(t.train[0].tokens, f.backbone.image));
    CHECK(s1.gaussian.covariance() == scale(Mat::identity(32), 1e-7));

    const TaskStats s = estimate_task_stats(t.train, f.backbone, 1e-7);
    const TaskGaussian direct = TaskGaussian::fit(frozen_features(t.train, f.backbone.image), 1e-7);
    CHECK(s.gaussian == direct);
    CHECK(std::abs(norm2(s.mean_key) - 1.0) <= 1e-12);
    CHECK_THROWS_AS(estimate_task_stats(std::span<const Sample>{}, f.backbone, 1e-7), ContractError);
}

TEST_CASE("training") {
    Fixture f;
    const TaskData& t = f.stream[0];

    SUBCASE("zero epochs return the initialization") {
        TrainConfig c = f.cfg;
        c.epochs = 0;
        Rng a(3), b(3);
        const AdapterSet s = train_task(t, f.backbone, c, a);
        CHECK(s == init_task_params(f.backbone, c, b));
        for (const Adapter& ad : s.image_adapters) CHECK(max_abs(ad.values) == 0.0);
        CHECK(s.image_adapters.size() == c.adapter_depth);
        CHECK(s.text_adapters.size() == c.adapter_depth);
    }
    SUBCASE("seeded training is reproducible and beats the frozen encoders") {
        Rng a(5), b(5);
        const AdapterSet s = train_task(t, f.backbone, f.cfg, a);
        CHECK(s == train_task(t, f.backbone, f.cfg, b));
        const double trained = train_accuracy(t, s, f.backbone);
        const double frozen = frozen_train_accuracy(t, f.backbone);
        MESSAGE("train accuracy " << trained << " vs frozen " << frozen);
        CHECK(trained > frozen);
    }
    SUBCASE("prepend and ablation modes") {
        TrainConfig c = f.cfg;
        c.mode = ModeSpec::parse("prepend");
        Rng a(6);
        const AdapterSet p = train_task(t, f.backbone, c, a);
        CHECK(p.image_adapters.empty());
        CHECK(p.image_prompts.size() == c.adapter_depth);
        c.mode = ModeSpec::parse("iki-ablation:1");
        c.epochs = 0;
        const AdapterSet abl = train_task(t, f.backbone, c, a);
        CHECK(max_abs(abl.image_adapters[0].values) > 0.0);
    }
    SUBCASE("labels outside the class list are rejected") {
        TaskData bad = t;
        bad.train[0].label = 99;
        Rng a(1);
        CHECK_THROWS_AS(train_task(bad, f.backbone, f.cfg, a), IndexError);
    }
}

TEST_CASE("learning a task never touches earlier pool entries") {
    Fixture f;
    TaskPool pool{f.cfg.mode, {}};
    Rng rng(9);
    learn_task(pool, f.stream[0], f.backbone, f.cfg, rng);
    const PoolEntry before = pool.entries[0];
    learn_task(pool, f.stream[1], f.backbone, f.cfg, rng);
    REQUIRE(pool.entries.size() == 2);
    CHECK(pool.entries[0].params == before.params);
    CHECK(pool.entries[0].gaussian == before.gaussian);
    CHECK(pool.entries[0].mean_key == before.mean_key);
    CHECK(pool.prefix(1).entries.size() == 1);
    CHECK_THROWS_AS(pool.prefix(3), IndexError);
}

TEST_CASE("inference") {
    Fixture f;
    TaskPool pool{f.cfg.mode, {}};
    Rng rng(10);
    learn_task(pool, f.stream[0], f.backbone, f.cfg, rng);
    const TaskData& t = f.stream[0];
    const TokenSeq& x = t.test[0].tokens;

    CHECK_THROWS_AS(infer(x, TaskPool{}, t.classes, f.backbone), ContractError);

    SUBCASE("weight is the calibrated score of the selected task") {
        const Prediction p = infer(x, pool, t.classes, f.backbone);
        const Vec frozen = encode(x, f.backbone.image);
        CHECK(p.task == 0);
        CHECK(p.score == pool.entries[0].gaussian.log_density(frozen));
        CHECK(p.weight == calibration_weight(p.score));
        InferOptions off;
        off.calibrate = false;
        CHECK(infer(x, pool, t.classes, f.backbone, off).weight == 1.0);
    }
    SUBCASE("a sample at the task mean gets the peak score") {
        const TaskGaussian& g = pool.entries[0].gaussian;
        const std::vector<TaskGaussian> gs{g};
        const double peak = select_task(gs, g.mean()).score;
        CHECK(peak == -0.5 * (32 * std::log(2 * std::numbers::pi) + g.logdet()));
        CHECK(calibration_weight(peak) == 1.0 / (1.0 + std::exp(-peak)));
    }
    SUBCASE("far samples fall back to zero-shot") {
        TaskPool far = pool;
        Vec mu(32, 0.0);
        mu[0] = 50.0;
        far.entries[0].gaussian = TaskGaussian(mu, Mat::identity(32), 0.0);
        for (const Sample& s : t.test) {
            const Prediction p = infer(s.tokens, far, t.classes, f.backbone);
            CHECK(p.weight < 1e-12);
            const Prediction z = zero_shot_infer(s.tokens, t.classes, f.backbone);
            CHECK(p.class_index == z.class_index);
            CHECK(test::max_abs_diff(p.logits, z.logits) <= 1e-9);
        }
    }
    SUBCASE("fresh adapters equal zero-shot") {
        TaskPool fresh = pool;
        Rng r(2);
        fresh.entries[0].params = init_task_params(f.backbone, f.cfg, r);
        for (const Sample& s : t.test) {
            const Prediction p = infer(s.tokens, fresh, t.classes, f.backbone);
            const Prediction z = zero_shot_infer(s.tokens, t.classes, f.backbone);
            CHECK(p.class_index == z.class_index);
            CHECK(test::max_abs_diff(p.logits, z.logits) <= 1e-9);
        }
    }
    SUBCASE("zero-shot is deterministic") {
        CHECK(zero_shot_infer(x, t.classes, f.backbone).logits == zero_shot_infer(x, t.classes, f.backbone).logits);
    }
    SUBCASE("fixed weight and candidate sources") {
        InferOptions o;
        o.fixed_weight = 0.0;
        const Prediction p = infer(x, pool, f.stream[1].classes, f.backbone, o);
        CHECK(p.weight == 0.0);
        CHECK(p.logits == zero_shot_infer(x, f.stream[1].classes, f.backbone).logits);
        o.fixed_weight = 2.0;
        CHECK_THROWS_AS(infer(x, pool, t.classes, f.backbone, o), ContractError);
        o.fixed_weight.reset();
        o.candidates_from_selected = true;
        const Prediction sel = infer(x, pool, f.stream[1].classes, f.backbone, o);
        CHECK(sel.predicted.class_token == t.classes[sel.class_index].class_token);
    }
    SUBCASE("key selector") {
        InferOptions o;
        o.selector = Selector::key_match;
        const Prediction p = infer(x, pool, t.classes, f.backbone, o);
        CHECK(p.task == 0);
        CHECK(p.score == pool.entries[0].gaussian.log_density(encode(x, f.backbone.image)));
    }
}

TEST_CASE("prepend inference gates prompts on the calibrated weight") {
    Fixture f;
    TrainConfig c = f.cfg;
    c.mode = ModeSpec::parse("prepend");
    TaskPool pool{c.mode, {}};
    Rng rng(12);
    learn_task(pool, f.stream[0], f.backbone, c, rng);
    const TaskData& t = f.stream[0];
    InferOptions o;
    for (double w : {0.0, 0.49, 0.5, 1.0}) {
        o.fixed_weight = w;
        const Prediction p = infer(t.test[0].tokens, pool, t.classes, f.backbone, o);
        CHECK(p.weight == (w >= 0.5 ? 1.0 : 0.0));
    }
    o.fixed_weight = 0.0;
    CHECK(infer(t.test[0].tokens, pool, t.classes, f.backbone, o).logits ==
          zero_shot_infer(t.test[0].tokens, t.classes, f.backbone).logits);
}
