#include "diki/stream.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace diki {

void StreamSpec::validate(std::size_t vocab) const {
    if (num_tasks == 0) throw ConfigError("stream: need at least one task");
    if (classes_per_task == 0) throw ConfigError("stream: need at least one class per task");
    if (samples_per_class < 2) throw ConfigError("stream: need at least two samples per class");
    if (seq_len == 0) throw ConfigError("stream: seq_len must be positive");
    if (cues_per_class == 0) throw ConfigError("stream: cues_per_class must be positive");
    auto rate = [](double r, const char* name) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError(std::string("stream: ") + name + " outside [0, 1]");
    };
    rate(class_token_rate, "class_token_rate");
    rate(cue_rate, "cue_rate");
    rate(domain_shift, "domain_shift");
    if (class_token_rate + cue_rate > 1.0) throw ConfigError("stream: class_token_rate + cue_rate > 1");
    if (domain_shift < 1.0 && shared_tokens == 0)
        throw ConfigError("stream: shared background needed when domain_shift < 1");

    const std::size_t fixed = kTemplatePrefixLength + num_tasks * classes_per_task + shared_tokens;
    const std::size_t per_block = classes_per_task * cues_per_class + kMinDomainTokens;
    if (fixed + num_tasks * per_block > vocab)
        throw ConfigError("stream: vocabulary of " + std::to_string(vocab) + " too small for " +
                          std::to_string(num_tasks) + " tasks x " + std::to_string(classes_per_task) +
                          " disjoint classes");
}

TokenLayout token_layout(const StreamSpec& spec, std::size_t vocab) {
    spec.validate(vocab);
    TokenLayout layout{};
    layout.class_begin = kTemplatePrefixLength;
    layout.shared_begin = layout.class_begin + spec.num_tasks * spec.classes_per_task;
    layout.blocks_begin = layout.shared_begin + spec.shared_tokens;
    layout.block_size = (vocab - layout.blocks_begin) / spec.num_tasks;
    return layout;
}

std::vector<TaskData> gen_stream(const StreamSpec& spec, std::size_t vocab) {
    const TokenLayout layout = token_layout(spec, vocab);
    const std::size_t k = spec.classes_per_task;
    const std::size_t cue_count = k * spec.cues_per_class;
    const std::size_t domain_count = layout.block_size - cue_count;
    const auto n_test = static_cast<std::size_t>(
        std::llround(kTestFraction * static_cast<double>(spec.samples_per_class)));
    const std::size_t n_train = spec.samples_per_class - std::max<std::size_t>(n_test, 1);

    Rng root(spec.seed);
    std::vector<TaskData> tasks(spec.num_tasks);
    for (std::size_t t = 0; t < spec.num_tasks; ++t) {
        Rng rng = root.split();
        TaskData& task = tasks[t];
        const std::size_t block = layout.blocks_begin + t * layout.block_size;
        for (std::size_t c = 0; c < k; ++c) {
            ClassTemplate tmpl;
            for (std::size_t i = 0; i < kTemplatePrefixLength; ++i) tmpl.prefix[i] = static_cast<Token>(i);
            tmpl.class_token = static_cast<Token>(layout.class_begin + t * k + c);
            task.classes.push_back(tmpl);
        }
        for (std::size_t c = 0; c < k; ++c) {
            const std::size_t cue_base = block + c * spec.cues_per_class;
            for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
                Sample sample;
                sample.label = c;
                sample.tokens.resize(spec.seq_len);
                for (Token& tok : sample.tokens) {
                    const double r = rng.unit();
                    if (r < spec.class_token_rate) {
                        tok = task.classes[c].class_token;
                    } else if (r < spec.class_token_rate + spec.cue_rate) {
                        tok = static_cast<Token>(cue_base + rng.index(spec.cues_per_class));
                    } else if (rng.unit() < spec.domain_shift) {
                        tok = static_cast<Token>(block + cue_count + rng.index(domain_count));
                    } else {
                        tok = static_cast<Token>(layout.shared_begin + rng.index(spec.shared_tokens));
                    }
                }
                (s < n_train ? task.train : task.test).push_back(std::move(sample));
            }
        }
    }
    return tasks;
}

}  // namespace diki
