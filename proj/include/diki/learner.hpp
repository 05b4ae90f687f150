#pragma once

// Continual training over a growing pool of per-task parameter sets, and
// inference that picks a task by Gaussian score and scales its residual
// branch by the calibrated weight.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "diki/backbone.hpp"
#include "diki/taskdist.hpp"

namespace diki {

struct Sample {
    TokenSeq tokens;
    std::size_t label = 0;  ///< index into the task's class list

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct TaskData {
    std::vector<ClassTemplate> classes;
    std::vector<Sample> train;
    std::vector<Sample> test;

    friend bool operator==(const TaskData&, const TaskData&) = default;
};

enum class AdapterMode { iki, iki_ablation, prepend };

/// How per-task parameters are attached and initialized.
struct ModeSpec {
    AdapterMode kind = AdapterMode::iki;
    double ablation_bound = 0.0;  ///< only for iki_ablation

    /// "iki", "prepend" or "iki-ablation:B".
    static ModeSpec parse(const std::string& text);
    std::string to_string() const;
    bool residual() const noexcept { return kind != AdapterMode::prepend; }
    friend bool operator==(const ModeSpec&, const ModeSpec&) = default;
};

struct TrainConfig {
    double lr0 = 2.0;
    std::size_t epochs = 30;
    std::size_t batch = 32;
    double logit_scale = 100.0;
    std::size_t length = 4;         ///< keys/values (or prompts) per layer
    std::size_t adapter_depth = 2;  ///< number of leading layers adapted
    double k_bound = 0.02;
    double ridge = kDefaultRidge;
    std::uint64_t seed = 0;
    ModeSpec mode{};

    /// Throws ConfigError unless every field is usable with `backbone`.
    void validate(const DualEncoder& backbone) const;
};

/// Learnable parameters of one task, for both encoders. Residual modes fill
/// the adapter lists, prepend mode fills the prompt lists.
struct AdapterSet {
    std::vector<Adapter> image_adapters;
    std::vector<Adapter> text_adapters;
    std::vector<PromptBaseline> image_prompts;
    std::vector<PromptBaseline> text_prompts;

    Injection image(double w) const { return {image_adapters, image_prompts, w}; }
    Injection text(double w) const { return {text_adapters, text_prompts, w}; }
    friend bool operator==(const AdapterSet&, const AdapterSet&) = default;
};

struct PoolEntry {
    AdapterSet params;
    TaskGaussian gaussian;
    Vec mean_key;
    std::vector<ClassTemplate> classes;
};

struct TaskPool {
    ModeSpec mode{};
    std::vector<PoolEntry> entries;

    /// The pool as it stood after training the first `n` tasks.
    TaskPool prefix(std::size_t n) const;
    std::vector<TaskGaussian> gaussians() const;
};

struct TaskStats {
    TaskGaussian gaussian;
    Vec mean_key;
};

/// Frozen-encoder features of the samples, one row each.
Mat frozen_features(std::span<const Sample> samples, const EncoderStack& image);

/// Gaussian and normalized mean key of the frozen training features.
TaskStats estimate_task_stats(std::span<const Sample> train, const DualEncoder& backbone,
                              double ridge);

/// lr0 * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

/// Fresh parameters for one task according to cfg.mode.
AdapterSet init_task_params(const DualEncoder& backbone, const TrainConfig& cfg, Rng& rng);

/// Minibatch SGD on cross-entropy over cosine logits, weight 1 throughout.
AdapterSet train_task(const TaskData& task, const DualEncoder& backbone, const TrainConfig& cfg,
                      Rng& rng);

/// Trains one task and appends it to the pool; earlier entries are untouched.
void learn_task(TaskPool& pool, const TaskData& task, const DualEncoder& backbone,
                const TrainConfig& cfg, Rng& rng);

enum class Selector { gaussian, key_match };

struct InferOptions {
    bool calibrate = true;
    double prescale_a = 1.0;
    double prescale_b = 0.0;
    double logit_scale = 100.0;
    /// Overrides the calibrated weight (manual dial).
    std::optional<double> fixed_weight{};
    Selector selector = Selector::gaussian;
    /// Score against the selected task's classes instead of the supplied ones.
    bool candidates_from_selected = false;
};

struct Prediction {
    std::size_t class_index = 0;  ///< into the candidate list actually used
    std::size_t task = std::numeric_limits<std::size_t>::max();
    double weight = 0.0;
    double score = 0.0;  ///< best log-density (gaussian selector only)
    Vec logits;
    ClassTemplate predicted{};
};

Prediction infer(const TokenSeq& x, const TaskPool& pool, std::span<const ClassTemplate> candidates,
                 const DualEncoder& backbone, const InferOptions& opts = {});

/// Frozen encoders only.
Prediction zero_shot_infer(const TokenSeq& x, std::span<const ClassTemplate> candidates,
                           const DualEncoder& backbone, double logit_scale = 100.0);

}  // namespace diki
