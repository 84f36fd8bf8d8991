#include "sttgcn/commands.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <random>

#include <fmt/format.h>

#include "sttgcn/error.hpp"
#include "sttgcn/io.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace stt::cmd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void require_file(const fs::path& p, const char* what) {
    if (p.empty()) throw UsageError(fmt::format("missing {} path", what));
    if (!fs::exists(p)) throw IoError(fmt::format("{} file not found: {}", what, p.string()));
}

SpatialGraph load_graph(const GraphInput& in) {
    require_file(in.distances, "distance");
    return read_distance_csv(in.distances, in.nodes, in.id_base);
}

SpatialGraph random_graph(std::size_t n, std::mt19937_64& rng) {
    std::bernoulli_distribution edge(0.3);
    std::vector<EdgeRecord> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (edge(rng)) {
                edges.push_back({static_cast<long long>(i + 1), static_cast<long long>(j + 1), 1.0, 0});
            }
    return build_spatial_adjacency(edges, n);
}

} // namespace

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

net::ModelConfig pems08_config() {
    net::ModelConfig cfg;
    cfg.n_nodes = 170;
    return cfg;
}

BuildGraphResult build_graph(const GraphInput& in, const fs::path& out, std::ostream& log) {
    BuildGraphResult r;
    r.spatial = load_graph(in);
    r.fusion = build_fusion_matrix(r.spatial);
    io::write_matrix(out / "fusion.stm", r.fusion.matrix);
    io::write_tensor(out / "adjacency.stt", blocks_to_tensor(r.fusion).tensor);

    log << fmt::format("nodes: {}  edges: {}  fusion matrix: {}x{}\n", r.spatial.n, r.spatial.edges.size(),
                       r.fusion.matrix.rows(), r.fusion.matrix.cols());
    for (std::size_t k = 0; k < kFusionSteps; ++k) {
        std::string line = "  ";
        for (std::size_t l = 0; l < kFusionSteps; ++l) {
            const auto nnz = (r.fusion.block(k, l).array() != 0.0).count();
            line += fmt::format("{:>8}", fmt::format("[{}]", nnz));
        }
        log << line << '\n';
    }
    log << "block nonzero counts shown per (row step, column step)\n";
    return r;
}

ReconstructResult reconstruct(const ReconstructArgs& args, const fs::path& out, std::ostream& log) {
    const SpatialGraph g = load_graph(args.graph);
    ReconstructOptions opts = args.options;
    opts.l1.seed = args.seed;
    const auto t0 = Clock::now();
    ReconstructResult r{reconstruct_fusion_graph_detailed(g, args.method, opts), 0.0};
    r.seconds = seconds_since(t0);

    io::write_matrix(out / "reconstructed.stm", r.rec.graph.matrix);
    io::Manifest m;
    m.set("method", to_string(args.method));
    m.set("seed", std::to_string(args.seed));
    m.set("nodes", static_cast<long long>(g.n));
    m.set("iterations", static_cast<long long>(r.rec.iterations));
    m.set("objective_trace", r.rec.objective_trace);
    m.set("graph", std::string("reconstructed.stm"));
    m.set("wall_seconds", r.seconds);
    m.write(out / "reconstruct.manifest");

    log << fmt::format("method: {}  nodes: {}  iterations: {}  wall: {:.3f}s\n", to_string(args.method), g.n,
                       r.rec.iterations, r.seconds);
    if (!r.rec.objective_trace.empty()) {
        log << fmt::format("objective: {} -> {}\n", io::format_double(r.rec.objective_trace.front()),
                           io::format_double(r.rec.objective_trace.back()));
    }
    return r;
}

TrainSummary train(const TrainArgs& args, const fs::path& out, std::ostream& log) {
    require_file(args.flow, "flow");
    const FlowSeries series = load_flow(args.flow, flow_format_for(args.flow));
    net::ModelConfig cfg = args.model;
    cfg.n_nodes = series.n_sensors();
    cfg.validate();

    DenseMatrix fusion;
    std::string graph_path;
    if (!args.graph.empty()) {
        require_file(args.graph, "graph");
        fusion = io::read_matrix(args.graph);
        graph_path = fs::absolute(args.graph).string();
    } else {
        const SpatialGraph g = load_graph(args.distances);
        ReconstructOptions opts;
        opts.l1.seed = cfg.seed;
        fusion = reconstruct_fusion_graph(g, args.method, opts).matrix;
        io::write_matrix(out / "reconstructed.stm", fusion);
        graph_path = fs::absolute(out / "reconstructed.stm").string();
    }

    const WindowedDataset ds = prepare_dataset(series, cfg.window, cfg.horizon);
    TrainSummary s;
    s.param_count = net::ParamLayout(cfg).total();
    s.pems08_param_count = net::closed_form_param_count(pems08_config());
    log << fmt::format("samples: train {}  val {}  test {}\n", ds.counts[0], ds.counts[1], ds.counts[2]);
    log << fmt::format("parameters: {}\n", s.param_count);
    log << fmt::format("parameters for a PEMS08-shaped default config: {} (published full model: {})\n",
                       s.pems08_param_count, kReferenceParamCount);

    net::TrainOptions topts;
    topts.threads = args.threads;
    topts.on_epoch = [&](const net::EpochRecord& e) {
        log << fmt::format("epoch {:>4}  loss {:.6f}  val MAE {:.4f}  RMSE {:.4f}  MAPE {:.3f}%\n", e.epoch,
                           e.train_loss, e.val_mae, e.val_rmse, e.val_mape);
    };
    auto res = net::train(ds, fusion, cfg, topts);
    s.history = std::move(res.history);

    net::write_history_csv(out / "history.csv", s.history);
    s.checkpoint = out / "checkpoint.manifest";
    net::Checkpoint ck{cfg, std::move(res.params), ds.stats, s.history.best_epoch, s.history.best_val_mae,
                       graph_path};
    net::save_checkpoint(s.checkpoint, ck);
    log << fmt::format("best epoch {} (val MAE {:.4f}){}\n", s.history.best_epoch, s.history.best_val_mae,
                       s.history.stopped_early ? ", stopped early" : "");
    return s;
}

ModelForecaster::ModelForecaster(net::Model model, net::ModelParams params, std::size_t threads)
    : model_(std::move(model)), params_(std::move(params)), threads_(threads) {}

std::vector<DenseMatrix> ModelForecaster::predict(const WindowedDataset& ds, std::span<const std::size_t> samples) {
    return net::predict(model_, params_, ds, samples, threads_);
}

std::vector<DenseMatrix> PerfectForecaster::predict(const WindowedDataset& ds, std::span<const std::size_t> samples) {
    std::vector<DenseMatrix> out;
    for (auto s : samples) out.push_back(ds.target(s));
    return out;
}

HistoricalAverageForecaster::HistoricalAverageForecaster(const WindowedDataset& ds, std::size_t period)
    : table_(historical_average(ds, period)), period_(period) {}

std::vector<DenseMatrix> HistoricalAverageForecaster::predict(const WindowedDataset& ds,
                                                              std::span<const std::size_t> samples) {
    std::vector<DenseMatrix> out;
    for (auto s : samples) {
        DenseMatrix p(static_cast<Eigen::Index>(ds.horizon), table_.cols());
        const std::size_t first = ds.starts.at(s) + ds.window;
        for (std::size_t h = 0; h < ds.horizon; ++h) {
            p.row(static_cast<Eigen::Index>(h)) = table_.row(static_cast<Eigen::Index>((first + h) % period_));
        }
        out.push_back(std::move(p));
    }
    return out;
}

Evaluation evaluate(Forecaster& f, const WindowedDataset& ds, Split split) {
    Evaluation e;
    e.samples = ds.indices(split);
    if (e.samples.empty()) throw UsageError("evaluation split is empty");
    for (auto s : e.samples) e.targets.push_back(ds.target(s));
    const auto t0 = Clock::now();
    e.preds = f.predict(ds, e.samples);
    const double secs = seconds_since(t0);
    e.report = compute_report(e.targets, e.preds);
    e.report.runtime_seconds = secs;
    return e;
}

void write_predictions_csv(const fs::path& path, const Evaluation& e) {
    io::ensure_parent_dir(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    out << "sample,step,sensor,target,prediction,residual\n";
    for (std::size_t k = 0; k < e.samples.size(); ++k) {
        const auto& y = e.targets[k];
        const auto& p = e.preds[k];
        for (Eigen::Index h = 0; h < y.rows(); ++h)
            for (Eigen::Index i = 0; i < y.cols(); ++i) {
                out << fmt::format("{},{},{},{},{},{}\n", e.samples[k] + 1, h + 1, i + 1, io::format_double(y(h, i)),
                                   io::format_double(p(h, i)), io::format_double(p(h, i) - y(h, i)));
            }
    }
    if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

Evaluation read_predictions_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
    std::string line;
    std::getline(in, line);
    if (io::trim(line) != "sample,step,sensor,target,prediction,residual") {
        throw FormatError(fmt::format("{}:1: unexpected predictions header", path.string()));
    }
    struct Cell {
        double y, p;
    };
    std::map<std::uint64_t, std::map<std::pair<std::uint64_t, std::uint64_t>, Cell>> cells;
    std::uint64_t max_step = 0, max_sensor = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (io::trim(line).empty()) continue;
        const auto f = io::split(io::trim(line), ',');
        std::uint64_t s = 0, h = 0, i = 0;
        double y = 0, p = 0, r = 0;
        if (f.size() != 6 || !io::parse_u64(f[0], s) || !io::parse_u64(f[1], h) || !io::parse_u64(f[2], i) ||
            !io::parse_double(f[3], y) || !io::parse_double(f[4], p) || !io::parse_double(f[5], r) || s == 0 ||
            h == 0 || i == 0) {
            throw FormatError(fmt::format("{}:{}: malformed prediction row", path.string(), lineno));
        }
        cells[s][{h, i}] = {y, p};
        max_step = std::max(max_step, h);
        max_sensor = std::max(max_sensor, i);
    }
    Evaluation e;
    for (const auto& [s, grid] : cells) {
        if (grid.size() != max_step * max_sensor) {
            throw FormatError(fmt::format("{}: sample {} is incomplete", path.string(), s));
        }
        DenseMatrix y(static_cast<Eigen::Index>(max_step), static_cast<Eigen::Index>(max_sensor));
        DenseMatrix p(y.rows(), y.cols());
        for (const auto& [key, c] : grid) {
            y(static_cast<Eigen::Index>(key.first - 1), static_cast<Eigen::Index>(key.second - 1)) = c.y;
            p(static_cast<Eigen::Index>(key.first - 1), static_cast<Eigen::Index>(key.second - 1)) = c.p;
        }
        e.samples.push_back(static_cast<std::size_t>(s - 1));
        e.targets.push_back(std::move(y));
        e.preds.push_back(std::move(p));
    }
    if (e.samples.empty()) throw FormatError(fmt::format("{}: no prediction rows", path.string()));
    e.report = compute_report(e.targets, e.preds);
    return e;
}

void write_evaluation(const Evaluation& e, const fs::path& out) {
    write_report_csv(out / "metrics.csv", e.report);
    write_predictions_csv(out / "predictions.csv", e);
}

EvaluateResult evaluate_checkpoint(const EvaluateArgs& args, const fs::path& out, std::ostream& log) {
    require_file(args.checkpoint, "checkpoint");
    require_file(args.flow, "flow");
    net::Checkpoint ck = net::load_checkpoint(args.checkpoint);
    const fs::path graph = args.graph.empty() ? fs::path(ck.graph_path) : args.graph;
    require_file(graph, "graph");
    const FlowSeries series = load_flow(args.flow, flow_format_for(args.flow));
    if (series.n_sensors() != ck.config.n_nodes) {
        throw UsageError(fmt::format("flow has {} sensors, checkpoint expects {}", series.n_sensors(),
                                     ck.config.n_nodes));
    }
    const WindowedDataset ds = prepare_dataset(series, ck.config.window, ck.config.horizon);
    const std::size_t params = ck.params.total_count();
    ModelForecaster model(net::Model(ck.config, io::read_matrix(graph), ck.stats), std::move(ck.params), args.threads);
    EvaluateResult r{evaluate(model, ds, Split::test), {}};
    HistoricalAverageForecaster ha(ds, args.period);
    r.baseline = evaluate(ha, ds, Split::test).report;

    write_evaluation(r.model, out);
    write_report_csv(out / "baseline_metrics.csv", r.baseline);
    io::Manifest m;
    m.set("checkpoint", fs::absolute(args.checkpoint).string());
    m.set("test_samples", static_cast<long long>(r.model.samples.size()));
    m.set("param_count", static_cast<long long>(params));
    m.set("mae", r.model.report.aggregate.mae);
    m.set("rmse", r.model.report.aggregate.rmse);
    m.set("mape", r.model.report.aggregate.mape);
    m.set("baseline_mae", r.baseline.aggregate.mae);
    m.set("runtime_seconds", r.model.report.runtime_seconds);
    m.write(out / "evaluation.manifest");

    log << fmt::format("test samples: {}\n", r.model.samples.size());
    log << "step      MAE     RMSE   MAPE%\n";
    for (const auto& row : r.model.report.per_step) {
        log << fmt::format("{:>4} {:>8.4f} {:>8.4f} {:>7.3f}\n", row.label, row.mae, row.rmse, row.mape);
    }
    const auto& a = r.model.report.aggregate;
    log << fmt::format(" all {:>8.4f} {:>8.4f} {:>7.3f}\n", a.mae, a.rmse, a.mape);
    log << fmt::format("historical average MAE {:.4f}  ratio {:.4f}\n", r.baseline.aggregate.mae,
                       a.mae / r.baseline.aggregate.mae);
    return r;
}

void export_graph_csv(const fs::path& graph, const fs::path& out, std::ostream& log) {
    require_file(graph, "graph");
    const DenseMatrix m = io::read_matrix(graph);
    if (m.rows() != m.cols() || m.rows() % 3 != 0 || m.rows() == 0) {
        throw FormatError(fmt::format("{} is {}x{}, not a 3n x 3n fusion matrix", graph.string(), m.rows(), m.cols()));
    }
    const FusionGraph f{static_cast<std::size_t>(m.rows() / 3), m};
    export_graph(f, out / "graph.csv");
    export_slice(f, out / "slice.csv");
    log << fmt::format("wrote {} and {} ({} nodes)\n", (out / "graph.csv").string(), (out / "slice.csv").string(),
                       f.n);
}

void bench_decomp(const BenchArgs& args, const fs::path& out, std::ostream& log) {
    if (args.repeats == 0) throw UsageError("bench needs at least one repeat");
    std::vector<SpatialGraph> graphs;
    if (!args.graph.distances.empty()) {
        graphs.push_back(load_graph(args.graph));
    } else {
        std::mt19937_64 rng(args.seed);
        for (auto n : args.sizes) {
            if (n == 0) throw UsageError("bench graph sizes must be positive");
            graphs.push_back(random_graph(n, rng));
        }
    }
    const fs::path path = out / "bench.csv";
    io::ensure_parent_dir(path);
    std::ofstream csv(path, std::ios::trunc);
    if (!csv) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    csv << "method,n,repeat,seconds,iterations,objective\n";
    for (const auto& g : graphs)
        for (auto method : {GraphMethod::tucker_hooi, GraphMethod::l1_tucker, GraphMethod::tt}) {
            double total = 0.0;
            for (std::size_t rep = 0; rep < args.repeats; ++rep) {
                ReconstructOptions opts;
                opts.l1.seed = args.seed;
                const auto t0 = Clock::now();
                const auto r = reconstruct_fusion_graph_detailed(g, method, opts);
                const double secs = seconds_since(t0);
                total += secs;
                const double obj = r.objective_trace.empty() ? 0.0 : r.objective_trace.back();
                csv << fmt::format("{},{},{},{},{},{}\n", to_string(method), g.n, rep + 1, io::format_double(secs),
                                   r.iterations, io::format_double(obj));
            }
            log << fmt::format("{:<10} n={:<4} mean {:.6f}s\n", to_string(method), g.n,
                               total / static_cast<double>(args.repeats));
        }
    if (!csv) throw IoError(fmt::format("write failed for {}", path.string()));
}

SynthData synth(const SynthArgs& args, const fs::path& out, std::ostream& log) {
    SynthData d = synth_diffusion(args.nodes, args.steps, args.seed, args.options);
    const fs::path flow = out / (args.format == FlowFormat::csv ? "flow.csv" : "flow.stf");
    save_flow(flow, d.series, args.format);
    write_distance_csv(out / "distances.csv", d.graph);
    log << fmt::format("wrote {} ({} steps x {} sensors) and {}\n", flow.string(), d.series.n_steps(),
                       d.series.n_sensors(), (out / "distances.csv").string());
    return d;
}

} // namespace stt::cmd
