// Command-line front end. Every failure ends in one stderr line of the form
//   error[<kind>]: <message>
// with exit code 2 (usage), 3 (format), 4 (numerical) or 5 (io).

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sttgcn/commands.hpp"
#include "sttgcn/error.hpp"

namespace fs = std::filesystem;
using namespace stt;

namespace {

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::usage: return 2;
        case ErrorKind::format: return 3;
        case ErrorKind::numerical: return 4;
        case ErrorKind::io: return 5;
    }
    return 1;
}

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
}

int fail(ErrorKind k, const std::string& msg) {
    std::cerr << "error[" << to_string(k) << "]: " << one_line(msg) << '\n';
    return exit_code(k);
}

GraphMethod method_from_flag(const std::string& s) { return parse_graph_method(s); }

void add_graph_input(CLI::App* sub, cmd::GraphInput& g, bool required) {
    auto* opt = sub->add_option("--distances", g.distances, "Road distance CSV (from,to,cost)");
    if (required) opt->required();
    sub->add_option("--nodes", g.nodes, "Node count (0: largest id in the file)");
    sub->add_option("--id-base", g.id_base, "Sensor id base in the distance file")->check(CLI::IsMember({0, 1}));
}

} // namespace

int main(int argc, char** argv) {
    cmd::tune_allocator();
    CLI::App app{"Fusion-graph reconstruction and spatial-temporal traffic forecasting"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "INI file; [section] names match subcommands, flags override file values");

    std::uint64_t seed = 0;
    fs::path out = "out";
    std::string method = "tucker";
    app.add_option("--seed", seed, "Random seed");
    app.add_option("--out", out, "Output directory");
    app.add_option("--method", method, "Decomposition for the fusion graph")
        ->check(CLI::IsMember({"tucker", "l1tucker", "tt"}));

    // build-graph
    cmd::GraphInput bg;
    auto* build = app.add_subcommand("build-graph", "Build the binary fusion matrix and adjacency tensor");
    add_graph_input(build, bg, true);

    // reconstruct
    cmd::ReconstructArgs rc;
    std::string l1_init = "hosvd";
    auto* recon = app.add_subcommand("reconstruct", "Reconstruct the fusion graph by tensor decomposition");
    add_graph_input(recon, rc.graph, true);
    recon->add_option("--hooi-iters", rc.options.hooi.max_iter, "HOOI sweep limit");
    recon->add_option("--hooi-tol", rc.options.hooi.tol, "HOOI stop when a sweep gains less than this");
    recon->add_option("--l1-iters", rc.options.l1.max_iter, "L1-Tucker sweep limit");
    recon->add_option("--l1-tol", rc.options.l1.tol, "L1-Tucker stop when a sweep gains less than this");
    recon->add_option("--l1-init", l1_init, "L1-Tucker start")->check(CLI::IsMember({"hosvd", "random"}));
    recon->add_option("--tt-max-rank", rc.options.tt_max_rank, "TT rank cap (0: none)");
    recon->add_option("--tt-tol", rc.options.tt_tol, "TT relative truncation budget");

    // train
    cmd::TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train the forecaster");
    train->add_option("--flow", tr.flow, "Flow series (.csv or .stf)")->required();
    train->add_option("--graph", tr.graph, "Reconstructed fusion matrix (.stm); otherwise built from --distances");
    add_graph_input(train, tr.distances, false);
    auto& mc = tr.model;
    train->add_option("--window", mc.window, "Input steps");
    train->add_option("--horizon", mc.horizon, "Predicted steps");
    train->add_option("--layers", mc.layers, "Stacked spatial-temporal layers");
    train->add_option("--filters", mc.filters, "Graph convolution widths per module")->delimiter(',');
    train->add_option("--dilation", mc.dilation, "Dilation of the temporal branch");
    train->add_option("--dilated-channels", mc.dilated_channels, "Width of the temporal branch");
    train->add_option("--fc-hidden", mc.fc_hidden, "Hidden width of the output block");
    train->add_option("--huber-delta", mc.huber_delta, "Huber threshold");
    train->add_option("--lr", mc.learning_rate, "Learning rate");
    train->add_option("--batch", mc.batch_size, "Batch size");
    train->add_option("--epochs", mc.max_epochs, "Maximum epochs");
    train->add_option("--patience", mc.patience, "Early-stop patience in epochs");

    // evaluate
    cmd::EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
    evaluate->add_option("--checkpoint", ev.checkpoint, "Checkpoint manifest (default: <out>/checkpoint.manifest)");
    evaluate->add_option("--flow", ev.flow, "Flow series used for training")->required();
    evaluate->add_option("--graph", ev.graph, "Fusion matrix (default: path stored in the checkpoint)");
    evaluate->add_option("--period", ev.period, "Steps per day for the historical-average baseline");

    // export-graph
    fs::path export_src;
    auto* exportg = app.add_subcommand("export-graph", "Write a fusion matrix as row,col,value CSV");
    exportg->add_option("--graph", export_src, "Fusion matrix (default: <out>/reconstructed.stm)");

    // bench-decomp
    cmd::BenchArgs bn;
    auto* bench = app.add_subcommand("bench-decomp", "Time the three decompositions");
    bench->add_option("--sizes", bn.sizes, "Random graph sizes")->delimiter(',');
    bench->add_option("--repeats", bn.repeats, "Runs per method and size");
    add_graph_input(bench, bn.graph, false);

    // synth
    cmd::SynthArgs sy;
    std::string synth_format = "csv";
    auto* synth = app.add_subcommand("synth", "Generate a ring-road diffusion dataset");
    synth->add_option("--nodes", sy.nodes, "Sensors on the ring")->check(CLI::Range(2, 1 << 20));
    synth->add_option("--steps", sy.steps, "Time steps");
    synth->add_option("--format", synth_format, "Flow file format")->check(CLI::IsMember({"csv", "stf"}));
    synth->add_option("--level", sy.options.level, "Signal level");
    synth->add_option("--amplitude", sy.options.amplitude, "Daily forcing as a fraction of the level");
    synth->add_option("--noise", sy.options.noise, "Noise std as a fraction of the level");
    synth->add_option("--period", sy.options.period, "Steps per day");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(ErrorKind::usage, e.what());
    }

    try {
        fs::create_directories(out);
        auto& log = std::cout;
        if (*build) {
            cmd::build_graph(bg, out, log);
        } else if (*recon) {
            rc.method = method_from_flag(method);
            rc.seed = seed;
            if (l1_init == "random") rc.options.l1.init = L1Init::random;
            cmd::reconstruct(rc, out, log);
        } else if (*train) {
            tr.method = method_from_flag(method);
            tr.model.seed = seed;
            if (tr.graph.empty() && tr.distances.distances.empty()) {
                throw UsageError("train needs --graph or --distances");
            }
            cmd::train(tr, out, log);
        } else if (*evaluate) {
            if (ev.checkpoint.empty()) ev.checkpoint = out / "checkpoint.manifest";
            cmd::evaluate_checkpoint(ev, out, log);
        } else if (*exportg) {
            if (export_src.empty()) export_src = out / "reconstructed.stm";
            cmd::export_graph_csv(export_src, out, log);
        } else if (*bench) {
            bn.seed = seed;
            cmd::bench_decomp(bn, out, log);
        } else if (*synth) {
            sy.seed = seed;
            sy.format = synth_format == "csv" ? FlowFormat::csv : FlowFormat::stt_binary;
            cmd::synth(sy, out, log);
        }
    } catch (const Error& e) {
        return fail(e.kind(), e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(ErrorKind::io, e.what());
    } catch (const std::bad_alloc&) {
        return fail(ErrorKind::numerical, "out of memory");
    } catch (const std::exception& e) {
        return fail(ErrorKind::usage, e.what());
    }
    return 0;
}
