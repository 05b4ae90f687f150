#pragma once

// Synthetic domain-and-class incremental task streams.
//
// Vocabulary layout (contiguous blocks):
//   [0, 3)                 template prefix ("a photo of")
//   [3, 3 + N*K)           one class token per class, disjoint across tasks
//   next shared_tokens     background shared by every task
//   remainder, split N-way per-task block: K*cues_per_class cue tokens
//                          followed by that task's domain tokens
//
// Each position of an image-like sequence independently shows the class
// token (zero-shot signal the frozen text encoder can match), one of the
// class's cue tokens (signal only a trained adapter can use), or background:
// a domain token of the task with probability domain_shift, otherwise a
// shared token.

#include <cstdint>
#include <vector>

#include "diki/learner.hpp"

namespace diki {

struct StreamSpec {
    std::size_t num_tasks = 5;
    std::size_t classes_per_task = 4;
    std::size_t samples_per_class = 200;
    std::size_t seq_len = 8;
    std::size_t shared_tokens = 32;
    std::size_t cues_per_class = 2;
    double class_token_rate = 0.1;
    double cue_rate = 0.5;
    double domain_shift = 0.6;
    std::uint64_t seed = 0;

    /// Throws ConfigError when the layout does not fit in `vocab`.
    void validate(std::size_t vocab) const;
};

inline constexpr double kTestFraction = 0.2;
inline constexpr std::size_t kMinDomainTokens = 4;

struct TokenLayout {
    std::size_t class_begin;
    std::size_t shared_begin;
    std::size_t blocks_begin;
    std::size_t block_size;
};

TokenLayout token_layout(const StreamSpec& spec, std::size_t vocab);

/// Deterministic in spec.seed. Per class, the first 80% of samples go to the
/// train split and the rest to test.
std::vector<TaskData> gen_stream(const StreamSpec& spec, std::size_t vocab);

}  // namespace diki
