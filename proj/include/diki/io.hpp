#pragma once

// On-disk formats. All reals are written as C99 hex floats ("%a"), so every
// double round-trips bit-exactly.
//
// Task directory:
//   stream.txt     `key = value` lines: vocab plus every StreamSpec field
//   task_<i>.txt   one file per task:
//                    diki-task 1
//                    classes <K>
//                    class <p0> <p1> <p2> <class_token>      (K lines)
//                    train <M>
//                    <label> <L> <tok_1> ... <tok_L>         (M lines)
//                    test <M'>
//                    ...
//
// Pool file (whitespace-separated tokens, one record per line):
//   diki-pool 1
//   mode <iki | prepend | iki-ablation:B>
//   backbone <vocab> <dim> <depth> <seed> <weight_scale> <bias_scale>
//   logit_scale <x>
//   tasks <N>
//   then per task:
//     task <i>
//     classes <K> followed by K `class` lines as above
//     image_adapters <D> / text_adapters <D>: D pairs of `mat` records (keys, values)
//     image_prompts <D> / text_prompts <D>: D `mat` records
//     ridge <x>
//     mu <d> <x_1> ... <x_d>
//     sigma: one `mat` record
//     key <d> <x_1> ... <x_d>
//   end
//   where a `mat` record is `mat <rows> <cols>` and then one line per row.

#include <filesystem>
#include <vector>

#include "diki/experiment.hpp"

namespace diki {

void write_task_dir(const std::filesystem::path& dir, const StreamSpec& spec, std::size_t vocab,
                    const std::vector<TaskData>& tasks);

struct TaskDir {
    StreamSpec spec;
    std::size_t vocab = 0;
    std::vector<TaskData> tasks;
};

TaskDir read_task_dir(const std::filesystem::path& dir);

struct PoolFile {
    BackboneConfig backbone;
    double logit_scale = 100.0;
    TaskPool pool;
};

void write_pool(const std::filesystem::path& file, const PoolFile& pf);
PoolFile read_pool(const std::filesystem::path& file);

}  // namespace diki
