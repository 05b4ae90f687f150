#include "diki/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace diki {

namespace {

void check_square(const AccuracyMatrix& p, const char* op) {
    if (p.rows() != p.cols() || p.rows() == 0)
        throw ShapeError(std::string(op) + ": accuracy matrix must be square and non-empty");
}

double mean(const Vec& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

MetricSeries metric_transfer(const AccuracyMatrix& p) {
    check_square(p, "metric_transfer");
    const std::size_t n = p.rows();
    if (n < 2) throw ContractError("metric_transfer: needs at least two tasks");
    MetricSeries out;
    for (std::size_t j = 1; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < j; ++i) s += p(i, j);
        out.tasks.push_back(j);
        out.values.push_back(s / static_cast<double>(j));
    }
    out.aggregate = mean(out.values);
    return out;
}

MetricSeries metric_avg(const AccuracyMatrix& p) {
    check_square(p, "metric_avg");
    const std::size_t n = p.rows();
    MetricSeries out;
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += p(i, j);
        out.tasks.push_back(j);
        out.values.push_back(s / static_cast<double>(n));
    }
    out.aggregate = mean(out.values);
    return out;
}

MetricSeries metric_last(const AccuracyMatrix& p) {
    check_square(p, "metric_last");
    const std::size_t n = p.rows();
    MetricSeries out;
    for (std::size_t j = 0; j < n; ++j) {
        out.tasks.push_back(j);
        out.values.push_back(p(n - 1, j));
    }
    out.aggregate = mean(out.values);
    return out;
}

std::string format_fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void write_csv(const AccuracyMatrix& p, const std::filesystem::path& dir) {
    check_square(p, "write_csv");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("write_csv: cannot create " + dir.string() + ": " + ec.message());

    std::ofstream grid(dir / "grid.csv", std::ios::binary);
    if (!grid) throw IoError("write_csv: cannot open " + (dir / "grid.csv").string());
    grid << "trained_task,eval_task,accuracy\n";
    for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t j = 0; j < p.cols(); ++j)
            grid << i << ',' << j << ',' << format_fixed6(p(i, j)) << '\n';

    std::ofstream summary(dir / "summary.csv", std::ios::binary);
    if (!summary) throw IoError("write_csv: cannot open " + (dir / "summary.csv").string());
    summary << "metric,task,value\n";
    auto emit = [&](const char* name, const MetricSeries& m) {
        for (std::size_t k = 0; k < m.values.size(); ++k)
            summary << name << ',' << m.tasks[k] << ',' << format_fixed6(m.values[k]) << '\n';
        summary << name << ",aggregate," << format_fixed6(m.aggregate) << '\n';
    };
    if (p.rows() >= 2) emit("transfer", metric_transfer(p));
    emit("avg", metric_avg(p));
    emit("last", metric_last(p));
    if (!grid || !summary) throw IoError("write_csv: write failed in " + dir.string());
}

AccuracyMatrix read_grid_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("read_grid_csv: cannot open " + file.string());
    std::string line;
    if (!std::getline(in, line) || line != "trained_task,eval_task,accuracy")
        throw IoError("read_grid_csv: bad header in " + file.string());
    struct Cell {
        std::size_t i, j;
        double v;
    };
    std::vector<Cell> cells;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Cell c{};
        char comma1 = 0, comma2 = 0;
        if (!(ss >> c.i >> comma1 >> c.j >> comma2 >> c.v) || comma1 != ',' || comma2 != ',')
            throw IoError("read_grid_csv: bad row '" + line + "'");
        n = std::max({n, c.i + 1, c.j + 1});
        cells.push_back(c);
    }
    if (cells.size() != n * n) throw IoError("read_grid_csv: grid is not complete");
    AccuracyMatrix p(n, n);
    for (const Cell& c : cells) p(c.i, c.j) = c.v;
    return p;
}

}  // namespace diki
