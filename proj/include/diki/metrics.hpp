#pragma once

// Continual-learning summary metrics over an accuracy matrix p, where
// p(i, j) is the accuracy on task j after training through task i.

#include <filesystem>
#include <string>
#include <vector>

#include "diki/numkernel.hpp"

namespace diki {

using AccuracyMatrix = Mat;

struct MetricSeries {
    std::vector<std::size_t> tasks;  ///< 0-based task index of each value
    Vec values;
    double aggregate = 0.0;
};

/// Mean accuracy on task j before it was trained, j = 1..N-1. Needs N >= 2.
MetricSeries metric_transfer(const AccuracyMatrix& p);
/// Mean accuracy on task j across all N steps.
MetricSeries metric_avg(const AccuracyMatrix& p);
/// Accuracy on task j after the final step.
MetricSeries metric_last(const AccuracyMatrix& p);

/// Writes `grid.csv` (trained_task,eval_task,accuracy) and `summary.csv`
/// (metric,task,value) into `dir`, creating it if needed. Values carry six
/// fraction digits. Transfer rows are omitted when N < 2.
void write_csv(const AccuracyMatrix& p, const std::filesystem::path& dir);

/// Parses a grid.csv back into a matrix.
AccuracyMatrix read_grid_csv(const std::filesystem::path& file);

std::string format_fixed6(double v);

}  // namespace diki
