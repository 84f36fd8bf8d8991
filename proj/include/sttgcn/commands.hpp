#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sttgcn/data_io.hpp"
#include "sttgcn/metrics.hpp"
#include "sttgcn/net/train.hpp"
#include "sttgcn/stgraph.hpp"

// Library side of the command-line tool. Each command reads its inputs,
// writes its artifacts under `out` and logs human-readable lines to `log`.
namespace stt::cmd {

namespace fs = std::filesystem;

// Parameter count published for the full-size PEMS08 model, shown next to
// ours for comparison only.
inline constexpr std::size_t kReferenceParamCount = 1207108;

// Raises the glibc mmap and trim thresholds so per-batch temporaries are
// reused from the heap instead of being mapped and zeroed by the kernel on
// every allocation. No effect with other C libraries.
void tune_allocator();

// The default model shaped for the 170-sensor PEMS08 network.
net::ModelConfig pems08_config();

struct GraphInput {
    fs::path distances;
    std::size_t nodes = 0;  // 0: infer from the largest id
    int id_base = 1;
};

// ---- build-graph: out/fusion.stm, out/adjacency.stt ----

struct BuildGraphResult {
    SpatialGraph spatial;
    FusionGraph fusion;
};

BuildGraphResult build_graph(const GraphInput& in, const fs::path& out, std::ostream& log);

// ---- reconstruct: out/reconstructed.stm, out/reconstruct.manifest ----

struct ReconstructArgs {
    GraphInput graph;
    GraphMethod method = GraphMethod::tucker_hooi;
    std::uint64_t seed = 0;
    ReconstructOptions options;
};

struct ReconstructResult {
    Reconstruction rec;
    double seconds = 0.0;
};

// The seed drives a random L1-Tucker start when options.l1.init is random.
ReconstructResult reconstruct(const ReconstructArgs& args, const fs::path& out, std::ostream& log);

// ---- train: out/checkpoint.manifest (+ .params.stm), out/history.csv ----

struct TrainArgs {
    fs::path flow;
    fs::path graph;                   // reconstructed fusion matrix (STM1)
    GraphInput distances;             // used when graph is empty
    GraphMethod method = GraphMethod::tucker_hooi;
    net::ModelConfig model;           // n_nodes is taken from the data
    std::size_t threads = 0;
};

struct TrainSummary {
    net::TrainHistory history;
    std::size_t param_count = 0;
    std::size_t pems08_param_count = 0;
    fs::path checkpoint;
};

TrainSummary train(const TrainArgs& args, const fs::path& out, std::ostream& log);

// ---- evaluate ----

class Forecaster {
public:
    virtual ~Forecaster() = default;
    // One horizon x sensors raw-scale matrix per requested sample.
    virtual std::vector<DenseMatrix> predict(const WindowedDataset& ds, std::span<const std::size_t> samples) = 0;
};

class ModelForecaster : public Forecaster {
public:
    ModelForecaster(net::Model model, net::ModelParams params, std::size_t threads = 0);
    std::vector<DenseMatrix> predict(const WindowedDataset& ds, std::span<const std::size_t> samples) override;

private:
    net::Model model_;
    net::ModelParams params_;
    std::size_t threads_;
};

// Returns the true targets.
class PerfectForecaster : public Forecaster {
public:
    std::vector<DenseMatrix> predict(const WindowedDataset& ds, std::span<const std::size_t> samples) override;
};

// Training mean per time-of-day slot and sensor.
class HistoricalAverageForecaster : public Forecaster {
public:
    HistoricalAverageForecaster(const WindowedDataset& ds, std::size_t period);
    std::vector<DenseMatrix> predict(const WindowedDataset& ds, std::span<const std::size_t> samples) override;

private:
    DenseMatrix table_;
    std::size_t period_;
};

struct Evaluation {
    std::vector<std::size_t> samples;
    std::vector<DenseMatrix> targets;
    std::vector<DenseMatrix> preds;
    MetricReport report;
};

Evaluation evaluate(Forecaster& f, const WindowedDataset& ds, Split split);

// `sample,step,sensor,target,prediction,residual`, all indices 1-based.
void write_predictions_csv(const fs::path& path, const Evaluation& e);
Evaluation read_predictions_csv(const fs::path& path);

struct EvaluateArgs {
    fs::path checkpoint;
    fs::path flow;
    fs::path graph;  // empty: the path recorded in the checkpoint
    std::size_t period = 288;
    std::size_t threads = 0;
};

struct EvaluateResult {
    Evaluation model;
    MetricReport baseline;  // historical average on the same samples
};

// Writes out/metrics.csv, out/predictions.csv, out/baseline_metrics.csv and
// out/evaluation.manifest.
EvaluateResult evaluate_checkpoint(const EvaluateArgs& args, const fs::path& out, std::ostream& log);

// Shared writer used by evaluate_checkpoint; exposed for stub forecasters.
void write_evaluation(const Evaluation& e, const fs::path& out);

// ---- export-graph: out/graph.csv (whole matrix), out/slice.csv (block (1,1)) ----

void export_graph_csv(const fs::path& graph, const fs::path& out, std::ostream& log);

// ---- bench-decomp: out/bench.csv `method,n,repeat,seconds,iterations,objective` ----

struct BenchArgs {
    std::vector<std::size_t> sizes{4, 8, 12};
    std::size_t repeats = 3;
    std::uint64_t seed = 0;
    GraphInput graph;  // when distances is set, benchmarks that graph only
};

void bench_decomp(const BenchArgs& args, const fs::path& out, std::ostream& log);

// ---- synth: out/flow.csv (or flow.stf), out/distances.csv ----

struct SynthArgs {
    std::size_t nodes = 12;
    std::size_t steps = 5000;
    std::uint64_t seed = 42;
    FlowFormat format = FlowFormat::csv;
    SynthOptions options;
};

SynthData synth(const SynthArgs& args, const fs::path& out, std::ostream& log);

} // namespace stt::cmd
