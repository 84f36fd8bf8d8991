#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sttgcn/stgraph.hpp"
#include "sttgcn/tensor_core.hpp"

namespace stt {

// Traffic flow, one row per 5-minute step and one column per sensor.
struct FlowSeries {
    DenseMatrix values;

    std::size_t n_steps() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t n_sensors() const { return static_cast<std::size_t>(values.cols()); }
};

enum class FlowFormat { csv, stt_binary };

// Picks stt_binary for *.stf / *.bin, csv otherwise.
FlowFormat flow_format_for(const std::filesystem::path& path);

// CSV: optional header row, one comma-separated row per time step.
// stt_binary: "STF1", u64 n_steps, u64 n_sensors, row-major little-endian doubles.
FlowSeries load_flow(const std::filesystem::path& path, FlowFormat format);
void save_flow(const std::filesystem::path& path, const FlowSeries& s, FlowFormat format);

struct NormStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;  // population std; 1 for constant sensors
};

NormStats fit_zscore(const DenseMatrix& values);
DenseMatrix apply_zscore(const DenseMatrix& values, const NormStats& stats);
DenseMatrix denormalize(const DenseMatrix& values, const NormStats& stats);

// Stats fitted on the first `fit_rows` steps, applied to the whole series.
std::pair<DenseMatrix, NormStats> zscore(const FlowSeries& s, std::size_t fit_rows);

enum class Split { train, val, test };

// Sliding windows over a series. Sample w reads inputs [start_w, start_w + T)
// and targets [start_w + T, start_w + T + horizon). Splits are contiguous runs
// of samples in time order: train, then val, then test.
struct WindowedDataset {
    std::size_t window = 12;
    std::size_t horizon = 12;
    DenseMatrix raw;         // steps x sensors
    DenseMatrix normalized;  // filled by split()
    NormStats stats;
    std::vector<std::size_t> starts;
    std::array<std::size_t, 3> counts{0, 0, 0};
    bool is_split = false;

    std::size_t size() const { return starts.size(); }
    std::size_t n_sensors() const { return static_cast<std::size_t>(raw.cols()); }
    // Sample indices of one split.
    std::vector<std::size_t> indices(Split s) const;
    // Steps [0, train_end) are the only ones training samples touch.
    std::size_t train_end() const;

    // window x sensors, normalized
    DenseMatrix input(std::size_t sample) const;
    // horizon x sensors, raw scale
    DenseMatrix target(std::size_t sample) const;
};

WindowedDataset make_windows(const FlowSeries& s, std::size_t window = 12, std::size_t horizon = 12,
                             std::size_t stride = 1);

// Assigns split counts by flooring ratio shares (test takes the remainder),
// then fits normalization on the training steps only.
void split(WindowedDataset& ds, std::array<double, 3> ratios = {6, 2, 2});

WindowedDataset prepare_dataset(const FlowSeries& s, std::size_t window, std::size_t horizon);

// Training-split mean per time-of-day slot and sensor (period x sensors).
// Slots never seen in training fall back to the sensor's training mean.
DenseMatrix historical_average(const WindowedDataset& ds, std::size_t period);

struct SynthOptions {
    double level = 100.0;      // signal scale
    double amplitude = 0.015;  // daily forcing, fraction of level
    double noise = 0.05;       // per-step noise std, fraction of level
    double self_weight = 0.6;
    double neighbor_weight = 0.35;
    std::size_t period = 288;  // steps per day
};

struct SynthData {
    FlowSeries series;
    SpatialGraph graph;
};

// Ring-road diffusion:
//   x_{t+1,i} = a x_{t,i} + b mean_{j~i} x_{t,j} + (1-a-b) level
//               + amplitude*level*sin(2 pi t / period + pi/2 * i / n)
//               + noise*level*eps,  eps ~ N(0,1)
// starting from x_0 = level everywhere.
SynthData synth_diffusion(std::size_t n_nodes, std::size_t n_steps, std::uint64_t seed, const SynthOptions& opts = {});

// One update of the recursion above with explicit standard-normal draws.
Eigen::VectorXd diffusion_step(const Eigen::VectorXd& x, const SpatialGraph& ring, std::size_t t,
                               const Eigen::VectorXd& eps, const SynthOptions& opts);

SpatialGraph ring_graph(std::size_t n);

} // namespace stt
