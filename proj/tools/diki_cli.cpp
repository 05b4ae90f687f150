// diki: generate task streams, train adapter pools, evaluate them, and run
// the numerical verifiers.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "diki/experiment.hpp"
#include "diki/io.hpp"
#include "diki/verify.hpp"

namespace {

using namespace diki;

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void print_summary(const AccuracyMatrix& p) {
    if (p.rows() >= 2) std::cout << "transfer " << format_fixed6(metric_transfer(p).aggregate) << '\n';
    std::cout << "avg " << format_fixed6(metric_avg(p).aggregate) << '\n';
    std::cout << "last " << format_fixed6(metric_last(p).aggregate) << '\n';
}

int cmd_gen(const StreamSpec& spec, std::size_t vocab, const std::string& out) {
    write_task_dir(out, spec, vocab, gen_stream(spec, vocab));
    std::cout << "wrote " << spec.num_tasks << " tasks to " << out << '\n';
    return kOk;
}

int cmd_train(const std::string& config, const std::string& tasks, const std::string& out) {
    const ExperimentConfig cfg = load_config(config);
    const TaskDir td = read_task_dir(tasks);
    if (td.vocab != cfg.backbone.vocab)
        throw UsageError("task vocabulary " + std::to_string(td.vocab) + " does not match config vocab " +
                         std::to_string(cfg.backbone.vocab));
    const DualEncoder backbone = DualEncoder::build(cfg.backbone);
    PoolFile pf{cfg.backbone, cfg.train.logit_scale, train_pool(td.tasks, backbone, cfg.train)};
    write_pool(out, pf);
    std::cout << "trained " << pf.pool.entries.size() << " tasks (" << pf.pool.mode.to_string() << ") -> "
              << out << '\n';
    return kOk;
}

int cmd_eval(const std::string& pool_file, const std::string& tasks, bool calibrate,
             const std::string& mode, const std::string& selector, const std::string& out) {
    const PoolFile pf = read_pool(pool_file);
    if (ModeSpec::parse(mode) != pf.pool.mode)
        throw UsageError("--mode " + mode + " does not match pool mode " + pf.pool.mode.to_string());
    const TaskDir td = read_task_dir(tasks);
    if (td.vocab != pf.backbone.vocab) throw UsageError("task vocabulary does not match the pool's backbone");
    EvalConfig eval;
    eval.calibrate = calibrate;
    eval.selector = selector == "key" ? Selector::key_match : Selector::gaussian;
    const DualEncoder backbone = DualEncoder::build(pf.backbone);
    const ContinualResult r = evaluate_pool(pf.pool, td.tasks, backbone, infer_options(eval, pf.logit_scale));
    write_csv(r.accuracy, out);
    print_summary(r.accuracy);
    return kOk;
}

int cmd_run(const std::string& config, const std::string& out) {
    const ContinualResult r = run_experiment(load_config(config), out);
    print_summary(r.accuracy);
    std::cout << "assignment " << format_fixed6(learned_assignment_accuracy(r.assignment)) << '\n';
    return kOk;
}

int cmd_verify(const std::string& suite) {
    // Each suite draws from its own fixed seed, so results do not depend on
    // which other suites ran.
    std::vector<Report> reports;
    const bool all = suite == "all";
    if (all || suite == "zero-init") {
        Rng rng(1);
        reports.push_back(verify_zero_init_identity(DualEncoder::build(BackboneConfig{}), rng));
    }
    if (all || suite == "gradcheck") {
        Rng rng(2);
        reports.push_back(verify_gradcheck(GradcheckDims{}, 50, rng));
    }
    if (all || suite == "degenerate-init") {
        Rng rng(0);
        reports.push_back(verify_degenerate_init(DegenerateDims{}, 10, rng));
    }
    if (all || suite == "metrics") {
        Rng rng(4);
        reports.push_back(verify_metrics(rng));
    }
    bool ok = true;
    for (const Report& r : reports) {
        for (const std::string& line : r.lines) std::cout << line << '\n';
        ok = ok && r.passed;
    }
    std::cout << (ok ? "PASS" : "FAIL") << " verify " << suite << '\n';
    return ok ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Residual attention adapters with distribution-aware calibration on a toy dual encoder"};
    app.require_subcommand(1);

    StreamSpec spec;
    std::size_t vocab = BackboneConfig{}.vocab;
    std::string out, config, tasks, pool, mode = "iki", calibrate = "on", selector = "gaussian", suite;

    auto* gen = app.add_subcommand("gen-tasks", "Generate a synthetic task stream");
    gen->add_option("--seed", spec.seed, "Stream seed");
    gen->add_option("--tasks", spec.num_tasks, "Number of tasks");
    gen->add_option("--classes", spec.classes_per_task, "Classes per task");
    gen->add_option("--samples", spec.samples_per_class, "Samples per class");
    gen->add_option("--vocab", vocab, "Backbone vocabulary size");
    gen->add_option("--out", out, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train an adapter pool over a task stream");
    train->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
    train->add_option("--tasks", tasks, "Task directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", out, "Pool file")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate a trained pool");
    eval->add_option("--pool", pool, "Pool file")->required()->check(CLI::ExistingFile);
    eval->add_option("--tasks", tasks, "Task directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--calibrate", calibrate, "Distribution-aware calibration")
        ->check(CLI::IsMember({"on", "off"}));
    eval->add_option("--mode", mode, "iki | prepend | iki-ablation:B");
    eval->add_option("--selector", selector, "Task selector")->check(CLI::IsMember({"gaussian", "key"}));
    eval->add_option("--out", out, "Output directory")->required();

    auto* run = app.add_subcommand("run", "Generate, train and evaluate end to end");
    run->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out, "Output directory")->required();

    auto* verify = app.add_subcommand("verify", "Run numerical verifiers");
    verify->add_option("--suite", suite, "Suite")
        ->required()
        ->check(CLI::IsMember({"zero-init", "gradcheck", "degenerate-init", "metrics", "all"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*gen) return cmd_gen(spec, vocab, out);
        if (*train) return cmd_train(config, tasks, out);
        if (*eval) return cmd_eval(pool, tasks, calibrate == "on", mode, selector, out);
        if (*run) return cmd_run(config, out);
        if (*verify) return cmd_verify(suite);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
