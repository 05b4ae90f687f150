#pragma once

// The continual evaluation loop and the flat key = value experiment config.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diki/metrics.hpp"
#include "diki/stream.hpp"

namespace diki {

struct EvalConfig {
    bool calibrate = true;
    double prescale_a = 1.0;
    double prescale_b = 0.0;
    Selector selector = Selector::gaussian;
    bool candidates_from_selected = false;
};

struct ExperimentConfig {
    BackboneConfig backbone{};
    StreamSpec stream{};
    TrainConfig train{};
    EvalConfig eval{};
};

/// Parses `key = value` lines; '#' starts a comment. Unknown or repeated keys
/// and unparsable values throw ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& file);
/// Every key with its current value, in parse_config's syntax.
std::string render_config(const ExperimentConfig& cfg);

InferOptions infer_options(const EvalConfig& eval, double logit_scale);

struct TaskEval {
    double accuracy = 0.0;
    double assignment = 0.0;  ///< fraction routed to `expected_task`
    double mean_weight = 0.0;
};

/// Accuracy of `pool` on one task's test split. A prediction is correct when
/// the predicted template's class token is the sample's true class token.
TaskEval evaluate_task(const TaskPool& pool, const TaskData& task, std::size_t expected_task,
                       const DualEncoder& backbone, const InferOptions& opts);

double zero_shot_accuracy(const TaskData& task, const DualEncoder& backbone, double logit_scale);

struct ContinualResult {
    AccuracyMatrix accuracy;
    /// assignment(i, j): fraction of task j's test samples routed to task j
    /// after step i; meaningful for j <= i.
    Mat assignment;
    Mat mean_weight;
    TaskPool pool;
};

/// Trains tasks in order; after each, evaluates every task's test split with
/// the pool as it stands (unseen tasks included).
ContinualResult run_continual(const std::vector<TaskData>& stream, const DualEncoder& backbone,
                              const TrainConfig& cfg, const EvalConfig& eval);

/// Trains every task in order with the same RNG stream as run_continual.
TaskPool train_pool(const std::vector<TaskData>& stream, const DualEncoder& backbone,
                    const TrainConfig& cfg);

/// Re-evaluates a trained pool: row i uses the first i + 1 entries.
ContinualResult evaluate_pool(const TaskPool& pool, const std::vector<TaskData>& stream,
                              const DualEncoder& backbone, const InferOptions& opts);

/// Mean over learned tasks (j <= i) of the assignment matrix.
double learned_assignment_accuracy(const Mat& assignment);

/// gen + train + eval; writes grid.csv, summary.csv and diagnostics.csv.
ContinualResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace diki
