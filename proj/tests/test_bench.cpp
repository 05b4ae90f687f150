#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "diki/io.hpp"
#include "diki/verify.hpp"
#include "helpers.hpp"

using namespace diki;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("diki_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Stream generation.

TEST_CASE("stream is deterministic, disjoint and split 80/20") {
    const StreamSpec spec;
    const auto a = gen_stream(spec, 256), b = gen_stream(spec, 256);
    CHECK(a == b);
    REQUIRE(a.size() == 5);
    std::set<Token> class_tokens;
    for (const TaskData& t : a) {
        CHECK(t.classes.size() == 4);
        CHECK(t.train.size() == 4 * 160);
        CHECK(t.test.size() == 4 * 40);
        for (const ClassTemplate& c : t.classes) CHECK(class_tokens.insert(c.class_token).second);
        for (const Sample& s : t.train) {
            CHECK(s.tokens.size() == 8);
            for (Token tok : s.tokens) CHECK(tok < 256);
        }
    }
    StreamSpec other = spec;
    other.seed = 1;
    CHECK_FALSE(gen_stream(other, 256) == a);

    StreamSpec one = spec;
    one.num_tasks = 1;
    CHECK(gen_stream(one, 256).size() == 1);
}

TEST_CASE("infeasible streams are config errors") {
    StreamSpec spec;
    CHECK_THROWS_AS(gen_stream(spec, 64), ConfigError);
    spec.num_tasks = 40;
    CHECK_THROWS_AS(gen_stream(spec, 256), ConfigError);
    spec = {};
    spec.cue_rate = 0.95;
    CHECK_THROWS_AS(gen_stream(spec, 256), ConfigError);
    spec = {};
    spec.samples_per_class = 1;
    CHECK_THROWS_AS(gen_stream(spec, 256), ConfigError);
}

TEST_CASE("default stream gives separable frozen-feature clusters") {
    const DualEncoder bb = DualEncoder::build(BackboneConfig{});
    const auto stream = gen_stream(StreamSpec{}, 256);
    std::vector<TaskGaussian> gs;
    std::vector<Vec> centers;
    for (const TaskData& t : stream) {
        gs.push_back(TaskGaussian::fit(frozen_features(t.train, bb.image)));
        centers.push_back(gs.back().mean());
    }
    for (std::size_t i = 0; i < centers.size(); ++i)
        for (std::size_t j = i + 1; j < centers.size(); ++j) {
            Vec diff(centers[i].size());
            for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = centers[i][k] - centers[j][k];
            CHECK(norm2(diff) > 0.0);
        }
    std::size_t right = 0, total = 0;
    for (std::size_t j = 0; j < stream.size(); ++j)
        for (const Sample& s : stream[j].test) {
            right += select_task(gs, encode(s.tokens, bb.image)).index == j;
            ++total;
        }
    const double rate = double(right) / double(total);
    MESSAGE("held-out assignment " << rate);
    CHECK(rate >= 0.95);
}

// ---------------------------------------------------------------------------
// Metrics and CSV.

TEST_CASE("metric examples") {
    const Mat p{{0.80, 0.50}, {0.75, 0.90}};
    const MetricSeries t = metric_transfer(p);
    CHECK(t.tasks == std::vector<std::size_t>{1});
    CHECK(t.values == Vec{0.50});
    CHECK(t.aggregate == 0.50);
    const MetricSeries a = metric_avg(p);
    CHECK(std::abs(a.values[0] - 0.775) <= 1e-15);
    CHECK(std::abs(a.values[1] - 0.70) <= 1e-15);
    CHECK(std::abs(a.aggregate - 0.7375) <= 1e-15);
    const MetricSeries l = metric_last(p);
    CHECK(l.values == Vec{0.75, 0.90});
    CHECK(std::abs(l.aggregate - 0.825) <= 1e-15);

    const Mat one{{0.9}};
    CHECK(metric_last(one).values == Vec{0.9});
    CHECK(metric_last(one).aggregate == 0.9);
    CHECK(metric_avg(one).aggregate == 0.9);
    CHECK_THROWS_AS(metric_transfer(one), ContractError);
    CHECK_THROWS_AS(metric_avg(Mat(2, 3)), ShapeError);
}

TEST_CASE("metrics are order stable") {
    Rng rng(1);
    const Mat p = rng.uniform_mat(6, 6, 0.0, 1.0);
    CHECK(metric_transfer(p).values == metric_transfer(p).values);
    CHECK(metric_avg(p).aggregate == metric_avg(p).aggregate);
}

TEST_CASE("csv output") {
    SUBCASE("single task") {
        const fs::path dir = scratch("csv1");
        write_csv(Mat{{0.9}}, dir);
        CHECK(slurp(dir / "grid.csv") == "trained_task,eval_task,accuracy\n0,0,0.900000\n");
        CHECK(slurp(dir / "summary.csv") ==
              "metric,task,value\navg,0,0.900000\navg,aggregate,0.900000\n"
              "last,0,0.900000\nlast,aggregate,0.900000\n");
    }
    SUBCASE("two tasks") {
        const fs::path dir = scratch("csv2");
        write_csv(Mat{{0.80, 0.50}, {0.75, 0.90}}, dir);
        const std::string summary = slurp(dir / "summary.csv");
        CHECK(summary.find("transfer,1,0.500000\ntransfer,aggregate,0.500000\n") != std::string::npos);
        CHECK(summary.find("avg,aggregate,0.737500\n") != std::string::npos);
        CHECK(summary.find("last,aggregate,0.825000\n") != std::string::npos);
    }
    SUBCASE("round trip at six digits") {
        Rng rng(2);
        Mat p(4, 4);
        for (double& x : p.flat()) x = double(rng.index(1000001)) / 1e6;
        const fs::path dir = scratch("csv3");
        write_csv(p, dir);
        CHECK(read_grid_csv(dir / "grid.csv") == p);
    }
    SUBCASE("unwritable path") {
        const fs::path file = scratch("csv_blocker");
        std::ofstream(file) << "x";
        CHECK_THROWS_AS(write_csv(Mat{{0.5}}, file / "sub"), IoError);
    }
}

// ---------------------------------------------------------------------------
// Config.

TEST_CASE("config parsing") {
    const ExperimentConfig d = parse_config("");
    CHECK(render_config(d) == render_config(ExperimentConfig{}));
    const ExperimentConfig c = parse_config(
        "# comment\n"
        "tasks = 3   # trailing\n"
        "lr0 = 0.25\n"
        "mode = iki-ablation:1\n"
        "calibrate = off\n"
        "selector = key\n");
    CHECK(c.stream.num_tasks == 3);
    CHECK(c.train.lr0 == 0.25);
    CHECK(c.train.mode == ModeSpec::parse("iki-ablation:1"));
    CHECK_FALSE(c.eval.calibrate);
    CHECK(c.eval.selector == Selector::key_match);
    CHECK(render_config(parse_config(render_config(c))) == render_config(c));

    CHECK_THROWS_AS(parse_config("colour = red\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("tasks = 3\ntasks = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("tasks = three\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("tasks = -1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("lr0 = 1x\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("calibrate = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("just words\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/diki.cfg"), ConfigError);
}

// ---------------------------------------------------------------------------
// Serialization.

TEST_CASE("task directory round trip") {
    StreamSpec spec;
    spec.num_tasks = 2;
    spec.samples_per_class = 10;
    spec.cue_rate = 0.1 + 0.2;  // not exactly representable in decimal
    const auto tasks = gen_stream(spec, 256);
    const fs::path dir = scratch("tasks");
    write_task_dir(dir, spec, 256, tasks);
    const TaskDir td = read_task_dir(dir);
    CHECK(td.vocab == 256);
    CHECK(td.tasks == tasks);
    CHECK(td.spec.cue_rate == spec.cue_rate);
    CHECK(td.spec.seed == spec.seed);

    std::ofstream(dir / "task_1.txt") << "diki-task 1\nclasses 1\nclass 0 1 2 999\ntrain 0\ntest 0\n";
    CHECK_THROWS_AS(read_task_dir(dir), IoError);
    CHECK_THROWS_AS(read_task_dir(scratch("missing")), IoError);
}

TEST_CASE("pool round trip is bit exact") {
    const DualEncoder bb = DualEncoder::build(BackboneConfig{});
    StreamSpec spec;
    spec.num_tasks = 2;
    spec.samples_per_class = 10;
    const auto tasks = gen_stream(spec, 256);

    for (const std::string mode : {"iki", "prepend", "iki-ablation:0.3"}) {
        CAPTURE(mode);
        TrainConfig cfg;
        cfg.epochs = 1;
        cfg.mode = ModeSpec::parse(mode);
        const PoolFile pf{bb.config, 37.5, train_pool(tasks, bb, cfg)};
        const fs::path file = scratch("pool.txt");
        write_pool(file, pf);
        const PoolFile back = read_pool(file);
        CHECK(back.logit_scale == 37.5);
        CHECK(back.backbone.seed == bb.config.seed);
        CHECK(back.backbone.weight_scale == bb.config.weight_scale);
        CHECK(back.pool.mode == pf.pool.mode);
        REQUIRE(back.pool.entries.size() == 2);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(back.pool.entries[i].params == pf.pool.entries[i].params);
            CHECK(back.pool.entries[i].gaussian == pf.pool.entries[i].gaussian);
            CHECK(back.pool.entries[i].mean_key == pf.pool.entries[i].mean_key);
            CHECK(back.pool.entries[i].classes == pf.pool.entries[i].classes);
        }
        const fs::path again = scratch("pool2.txt");
        write_pool(again, back);
        const bool identical = slurp(file) == slurp(again);
        CHECK(identical);
    }
}

TEST_CASE("malformed pools are rejected") {
    const fs::path file = scratch("bad_pool.txt");
    std::ofstream(file) << "diki-pool 2\n";
    CHECK_THROWS_AS(read_pool(file), IoError);
    std::ofstream(file) << "diki-pool 1\nmode lora\n";
    CHECK_THROWS_AS(read_pool(file), IoError);
    std::ofstream(file) << "diki-pool 1\nmode iki\nbackbone 256 32 2 1 0x1p-1\n";
    CHECK_THROWS_AS(read_pool(file), IoError);
    CHECK_THROWS_AS(read_pool(scratch("no_pool.txt")), IoError);
}

// ---------------------------------------------------------------------------
// Continual loop and verifiers.

TEST_CASE("continual run is deterministic and pool re-evaluation matches") {
    ExperimentConfig cfg;
    cfg.stream.num_tasks = 2;
    cfg.stream.samples_per_class = 20;
    cfg.train.epochs = 2;
    const DualEncoder bb = DualEncoder::build(cfg.backbone);
    const auto stream = gen_stream(cfg.stream, cfg.backbone.vocab);
    const ContinualResult a = run_continual(stream, bb, cfg.train, cfg.eval);
    const ContinualResult b = run_continual(stream, bb, cfg.train, cfg.eval);
    CHECK(a.accuracy == b.accuracy);
    const ContinualResult re = evaluate_pool(a.pool, stream, bb, infer_options(cfg.eval, cfg.train.logit_scale));
    CHECK(re.accuracy == a.accuracy);
    const TaskPool trained = train_pool(stream, bb, cfg.train);
    for (std::size_t i = 0; i < 2; ++i) CHECK(trained.entries[i].params == a.pool.entries[i].params);
    for (double x : a.accuracy.flat()) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }
    CHECK(learned_assignment_accuracy(Mat{{1.0, 0.0}, {0.5, 0.25}}) == doctest::Approx((1.0 + 0.5 + 0.25) / 3));
}

TEST_CASE("verifiers pass") {
    Rng rng(0);
    const DualEncoder bb = DualEncoder::build(BackboneConfig{});
    const Report z = verify_zero_init_identity(bb, rng, 20);
    CHECK(z.passed);
    CHECK(z.lines.size() == 3);
    CHECK(verify_gradcheck({}, 10, rng).passed);
    const Report d = verify_degenerate_init({}, 10, rng);
    CHECK(d.passed);
    CHECK_THROWS_AS(verify_degenerate_init({}, 1, rng), ContractError);
    CHECK(verify_metrics(rng, 20).passed);
    CHECK(relative_error(Vec{0.0}, Vec{0.0}) == 0.0);
    CHECK(relative_error(Vec{1.0, 0.0}, Vec{0.0, 1.0}) == doctest::Approx(std::sqrt(2.0)));
}
