#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sttgcn/tensor_core.hpp"

namespace stt {

double mae(std::span<const double> y, std::span<const double> pred);
double rmse(std::span<const double> y, std::span<const double> pred);

struct MapeResult {
    double percent = 0.0;
    std::size_t included = 0;
    std::size_t excluded = 0;  // targets equal to zero
};

// Throws NumericalError when every target is zero.
MapeResult mape(std::span<const double> y, std::span<const double> pred);

struct MetricRow {
    std::string label;  // horizon step "1".."H" or "all"
    double mae = 0.0;
    double rmse = 0.0;
    double mape = 0.0;
    std::size_t n = 0;
    std::size_t mape_excluded = 0;
};

struct MetricReport {
    std::vector<MetricRow> per_step;
    MetricRow aggregate;
    double runtime_seconds = 0.0;
};

// targets/preds: one horizon x sensors matrix per sample, raw scale.
MetricReport compute_report(std::span<const DenseMatrix> targets, std::span<const DenseMatrix> preds);

// Header `step,mae,rmse,mape,n,mape_excluded`; per-step rows then `all`.
void write_report_csv(const std::filesystem::path& path, const MetricReport& report);
MetricReport read_report_csv(const std::filesystem::path& path);

} // namespace stt
