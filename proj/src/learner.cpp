#include "diki/learner.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace diki {

ModeSpec ModeSpec::parse(const std::string& text) {
    if (text == "iki") return {AdapterMode::iki, 0.0};
    if (text == "prepend") return {AdapterMode::prepend, 0.0};
    const std::string prefix = "iki-ablation:";
    if (text.rfind(prefix, 0) == 0) {
        const std::string num = text.substr(prefix.size());
        std::size_t used = 0;
        double bound = 0.0;
        try {
            bound = std::stod(num, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != num.size() || !(bound >= 0.0) || !std::isfinite(bound))
            throw ConfigError("mode: bad ablation bound in '" + text + "'");
        return {AdapterMode::iki_ablation, bound};
    }
    throw ConfigError("mode: expected iki, prepend or iki-ablation:B, got '" + text + "'");
}

std::string ModeSpec::to_string() const {
    switch (kind) {
        case AdapterMode::iki: return "iki";
        case AdapterMode::prepend: return "prepend";
        case AdapterMode::iki_ablation: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "iki-ablation:%g", ablation_bound);
            return buf;
        }
    }
    return "iki";
}

void TrainConfig::validate(const DualEncoder& backbone) const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (batch == 0) throw ConfigError("batch must be positive");
    if (!(logit_scale > 0.0)) throw ConfigError("logit_scale must be positive");
    if (length == 0) throw ConfigError("prompt length must be positive");
    if (adapter_depth == 0 || adapter_depth > backbone.config.depth)
        throw ConfigError("adapter_depth must be in [1, backbone depth]");
    if (!(k_bound >= 0.0)) throw ConfigError("k_bound must be non-negative");
    if (!(ridge > 0.0)) throw ConfigError("ridge must be positive");
}

TaskPool TaskPool::prefix(std::size_t n) const {
    if (n > entries.size()) throw IndexError("TaskPool::prefix: pool has fewer entries");
    TaskPool out{mode, {}};
    out.entries.assign(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

std::vector<TaskGaussian> TaskPool::gaussians() const {
    std::vector<TaskGaussian> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.gaussian);
    return out;
}

Mat frozen_features(std::span<const Sample> samples, const EncoderStack& image) {
    Mat feats(samples.size(), image.dim());
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const Vec f = encode(samples[n].tokens, image);
        std::copy(f.begin(), f.end(), feats.row(n).begin());
    }
    return feats;
}

TaskStats estimate_task_stats(std::span<const Sample> train, const DualEncoder& backbone,
                              double ridge) {
    if (train.empty()) throw ContractError("estimate_task_stats: empty dataset");
    const Mat feats = frozen_features(train, backbone.image);
    TaskGaussian g = TaskGaussian::fit(feats, ridge);
    Vec key = g.mean();
    const double n = norm2(key);
    if (n > 0.0)
        for (double& v : key) v /= n;
    return {std::move(g), std::move(key)};
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
    if (total_steps == 0) throw ContractError("cosine_lr: total_steps must be positive");
    if (step > total_steps) throw ContractError("cosine_lr: step beyond schedule");
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

AdapterSet init_task_params(const DualEncoder& backbone, const TrainConfig& cfg, Rng& rng) {
    cfg.validate(backbone);
    const std::size_t d = backbone.config.dim;
    AdapterSet set;
    for (std::size_t h = 0; h < cfg.adapter_depth; ++h) {
        switch (cfg.mode.kind) {
            case AdapterMode::iki:
                set.image_adapters.push_back(init_adapter(cfg.length, d, cfg.k_bound, rng));
                set.text_adapters.push_back(init_adapter(cfg.length, d, cfg.k_bound, rng));
                break;
            case AdapterMode::iki_ablation:
                set.image_adapters.push_back(
                    init_adapter_ablation(cfg.length, d, cfg.mode.ablation_bound, rng));
                set.text_adapters.push_back(
                    init_adapter_ablation(cfg.length, d, cfg.mode.ablation_bound, rng));
                break;
            case AdapterMode::prepend:
                set.image_prompts.push_back(init_prompt(cfg.length, d, cfg.k_bound, rng));
                set.text_prompts.push_back(init_prompt(cfg.length, d, cfg.k_bound, rng));
                break;
        }
    }
    return set;
}

namespace {

void sgd_step(AdapterSet& set, const InjectionGrads& image, const InjectionGrads& text, double lr) {
    for (std::size_t h = 0; h < set.image_adapters.size(); ++h) {
        axpy(set.image_adapters[h].keys, -lr, image.adapters[h].d_keys);
        axpy(set.image_adapters[h].values, -lr, image.adapters[h].d_values);
        axpy(set.text_adapters[h].keys, -lr, text.adapters[h].d_keys);
        axpy(set.text_adapters[h].values, -lr, text.adapters[h].d_values);
    }
    for (std::size_t h = 0; h < set.image_prompts.size(); ++h) {
        axpy(set.image_prompts[h].prompts, -lr, image.prompts[h]);
        axpy(set.text_prompts[h].prompts, -lr, text.prompts[h]);
    }
}

}  // namespace

AdapterSet train_task(const TaskData& task, const DualEncoder& backbone, const TrainConfig& cfg,
                      Rng& rng) {
    cfg.validate(backbone);
    if (task.classes.empty()) throw ContractError("train_task: task has no classes");
    for (const Sample& s : task.train)
        if (s.label >= task.classes.size())
            throw IndexError("train_task: label " + std::to_string(s.label) + " out of range");

    AdapterSet set = init_task_params(backbone, cfg, rng);
    if (cfg.epochs == 0 || task.train.empty()) return set;

    const std::size_t n = task.train.size();
    const std::size_t batches = (n + cfg.batch - 1) / cfg.batch;
    const std::size_t total_steps = cfg.epochs * batches;
    const std::size_t n_cls = task.classes.size();
    const std::size_t d = backbone.config.dim;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

        for (std::size_t b = 0; b < batches; ++b, ++step) {
            const std::size_t begin = b * cfg.batch;
            const std::size_t end = std::min(n, begin + cfg.batch);
            const double inv_bs = 1.0 / static_cast<double>(end - begin);

            const Injection img_inj = set.image(1.0);
            const Injection txt_inj = set.text(1.0);

            std::vector<EncodeTrace> text_traces;
            text_traces.reserve(n_cls);
            for (const ClassTemplate& c : task.classes)
                text_traces.push_back(encode_traced(c.tokens(), backbone.text, txt_inj));

            InjectionGrads g_img = InjectionGrads::zeros_like(img_inj);
            InjectionGrads g_txt = InjectionGrads::zeros_like(txt_inj);
            Mat d_text(n_cls, d);
            double loss = 0.0;

            for (std::size_t k = begin; k < end; ++k) {
                const Sample& s = task.train[order[k]];
                const EncodeTrace tr = encode_traced(s.tokens, backbone.image, img_inj);
                Vec z(n_cls);
                for (std::size_t c = 0; c < n_cls; ++c)
                    z[c] = cfg.logit_scale * dot(tr.feature, text_traces[c].feature);
                const CrossEntropy ce = cross_entropy(z, s.label);
                loss += ce.loss * inv_bs;

                Vec d_feat(d, 0.0);
                for (std::size_t c = 0; c < n_cls; ++c) {
                    const double gz = ce.grad[c] * cfg.logit_scale * inv_bs;
                    const auto& t = text_traces[c].feature;
                    auto dt = d_text.row(c);
                    for (std::size_t j = 0; j < d; ++j) {
                        d_feat[j] += gz * t[j];
                        dt[j] += gz * tr.feature[j];
                    }
                }
                encode_backward(tr, backbone.image, img_inj, d_feat, g_img);
            }
            for (std::size_t c = 0; c < n_cls; ++c)
                encode_backward(text_traces[c], backbone.text, txt_inj, d_text.row(c), g_txt);

            if (!std::isfinite(loss))
                throw DivergenceError(step, "train_task: non-finite loss at step " +
                                                std::to_string(step));
            sgd_step(set, g_img, g_txt, cosine_lr(step, total_steps, cfg.lr0));
        }
    }
    return set;
}

void learn_task(TaskPool& pool, const TaskData& task, const DualEncoder& backbone,
                const TrainConfig& cfg, Rng& rng) {
    if (!(pool.mode == cfg.mode)) {
        if (!pool.entries.empty()) throw ContractError("learn_task: pool mode differs from config");
        pool.mode = cfg.mode;
    }
    // Statistics come from the frozen encoder before any adapter exists.
    TaskStats stats = estimate_task_stats(task.train, backbone, cfg.ridge);
    AdapterSet params = train_task(task, backbone, cfg, rng);
    pool.entries.push_back(
        {std::move(params), std::move(stats.gaussian), std::move(stats.mean_key), task.classes});
}

namespace {

Prediction classify(const TokenSeq& x, std::span<const ClassTemplate> candidates,
                    const DualEncoder& backbone, const Injection& img, const Injection& txt,
                    double logit_scale) {
    if (candidates.empty()) throw ContractError("infer: no candidate classes");
    Prediction p;
    const Vec feature = encode(x, backbone.image, img);
    const Mat text = class_embeddings(candidates, backbone.text, txt);
    p.logits = logits(feature, text, logit_scale);
    p.class_index = argmax(p.logits);
    p.predicted = candidates[p.class_index];
    return p;
}

}  // namespace

Prediction infer(const TokenSeq& x, const TaskPool& pool, std::span<const ClassTemplate> candidates,
                 const DualEncoder& backbone, const InferOptions& opts) {
    if (pool.entries.empty()) throw ContractError("infer: empty task pool");

    const Vec frozen = encode(x, backbone.image);
    std::size_t task = 0;
    double score = 0.0;
    if (opts.selector == Selector::gaussian) {
        const TaskChoice choice = select_task(pool.gaussians(), frozen);
        task = choice.index;
        score = choice.score;
    } else {
        Mat keys(pool.entries.size(), frozen.size());
        for (std::size_t i = 0; i < pool.entries.size(); ++i) {
            const Vec& k = pool.entries[i].mean_key;
            std::copy(k.begin(), k.end(), keys.row(i).begin());
        }
        task = key_match(keys, frozen);
        score = pool.entries[task].gaussian.log_density(frozen);
    }

    double w = 1.0;
    if (opts.fixed_weight) {
        w = *opts.fixed_weight;
        if (!(w >= 0.0 && w <= 1.0)) throw ContractError("infer: fixed weight outside [0, 1]");
    } else if (opts.calibrate) {
        w = calibration_weight(score, opts.prescale_a, opts.prescale_b);
    }

    const PoolEntry& entry = pool.entries[task];
    const std::span<const ClassTemplate> cands =
        opts.candidates_from_selected ? std::span<const ClassTemplate>(entry.classes) : candidates;

    Prediction p;
    if (pool.mode.residual()) {
        p = classify(x, cands, backbone, entry.params.image(w), entry.params.text(w),
                     opts.logit_scale);
    } else {
        // Prompts cannot be scaled: they are either attached or not.
        w = w >= 0.5 ? 1.0 : 0.0;
        p = w > 0.0 ? classify(x, cands, backbone, entry.params.image(1.0), entry.params.text(1.0),
                               opts.logit_scale)
                    : classify(x, cands, backbone, {}, {}, opts.logit_scale);
    }
    p.task = task;
    p.weight = w;
    p.score = score;
    return p;
}

Prediction zero_shot_infer(const TokenSeq& x, std::span<const ClassTemplate> candidates,
                           const DualEncoder& backbone, double logit_scale) {
    return classify(x, candidates, backbone, {}, {}, logit_scale);
}

}  // namespace diki
