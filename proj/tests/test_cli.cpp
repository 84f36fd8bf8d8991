#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "sttgcn/commands.hpp"
#include "sttgcn/error.hpp"
#include "sttgcn/io.hpp"

using namespace stt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / "sttgcn_cli_tests" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& s) {
    std::ofstream out(p);
    out << s;
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

struct Run {
    int code = 0;
    std::string err;
};

Run run_cli(const std::string& args, const fs::path& dir) {
    const auto err_path = dir / "stderr.txt";
    const std::string cmdline =
        std::string("\"") + STT_CLI_PATH + "\" " + args + " > \"" + (dir / "stdout.txt").string() + "\" 2> \"" + err_path.string() + "\"";
    const int status = std::system(cmdline.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err_path);
    return r;
}

net::ModelConfig quick_model() {
    net::ModelConfig m;
    m.layers = 2;
    m.filters = {8, 8, 8};
    m.dilated_channels = 8;
    m.fc_hidden = 16;
    m.max_epochs = 2;
    m.batch_size = 16;
    m.seed = 3;
    return m;
}

// Synthetic 6-node data in `dir`: flow.csv and distances.csv.
void make_data(const fs::path& dir, std::size_t steps = 400) {
    std::ostringstream log;
    cmd::SynthArgs a;
    a.nodes = 6;
    a.steps = steps;
    a.seed = 9;
    cmd::synth(a, dir, log);
}

} // namespace

TEST(Evaluate, PerfectForecasterHasZeroErrorAndTwelveRows) {
    const auto dir = fresh_dir("perfect");
    make_data(dir);
    auto ds = prepare_dataset(load_flow(dir / "flow.csv", FlowFormat::csv), 12, 12);
    cmd::PerfectForecaster f;
    const auto e = cmd::evaluate(f, ds, Split::test);
    ASSERT_EQ(e.report.per_step.size(), 12u);
    for (const auto& r : e.report.per_step) {
        EXPECT_EQ(r.mae, 0.0);
        EXPECT_EQ(r.rmse, 0.0);
        EXPECT_EQ(r.mape, 0.0);
    }
    EXPECT_EQ(e.samples, ds.indices(Split::test));
}

TEST(Evaluate, PredictionsCsvRecomputesMetrics) {
    const auto dir = fresh_dir("predcsv");
    make_data(dir);
    auto ds = prepare_dataset(load_flow(dir / "flow.csv", FlowFormat::csv), 12, 12);
    cmd::HistoricalAverageForecaster f(ds, 288);
    const auto e = cmd::evaluate(f, ds, Split::test);
    cmd::write_evaluation(e, dir);
    const auto back = cmd::read_predictions_csv(dir / "predictions.csv");
    const auto rep = compute_report(back.targets, back.preds);
    const auto written = read_report_csv(dir / "metrics.csv");
    ASSERT_EQ(written.per_step.size(), 12u);
    for (std::size_t h = 0; h < 12; ++h) {
        EXPECT_NEAR(rep.per_step[h].mae, written.per_step[h].mae, 1e-9);
        EXPECT_NEAR(rep.per_step[h].rmse, written.per_step[h].rmse, 1e-9);
        EXPECT_NEAR(rep.per_step[h].mape, written.per_step[h].mape, 1e-9);
    }
    EXPECT_EQ(count_lines(slurp(dir / "predictions.csv")), 1 + e.samples.size() * 12 * 6);
}

TEST(Commands, BuildGraphTwoNodesAndRerunIsByteIdentical) {
    const auto dir = fresh_dir("build");
    write_file(dir / "d.csv", "from,to,cost\n1,2,5.0\n");
    std::ostringstream log;
    const auto r = cmd::build_graph({dir / "d.csv", 0, 1}, dir / "a", log);
    DenseMatrix want(6, 6);
    want << 0, 1, 1, 0, 0, 0,
            1, 0, 0, 1, 0, 0,
            1, 0, 0, 1, 1, 0,
            0, 1, 1, 0, 0, 1,
            0, 0, 1, 0, 0, 1,
            0, 0, 0, 1, 1, 0;
    EXPECT_EQ(r.fusion.matrix, want);
    EXPECT_EQ(io::read_matrix(dir / "a" / "fusion.stm"), want);
    EXPECT_EQ(io::read_tensor(dir / "a" / "adjacency.stt").dims(), (Dims3{2, 2, 9}));
    cmd::build_graph({dir / "d.csv", 0, 1}, dir / "b", log);
    EXPECT_EQ(slurp(dir / "a" / "fusion.stm"), slurp(dir / "b" / "fusion.stm"));
    EXPECT_EQ(slurp(dir / "a" / "adjacency.stt"), slurp(dir / "b" / "adjacency.stt"));
}

TEST(Commands, ReconstructMatchesLibraryAndTraceIsMonotone) {
    const auto dir = fresh_dir("recon");
    make_data(dir);
    std::ostringstream log;
    for (auto method : {GraphMethod::tucker_hooi, GraphMethod::l1_tucker, GraphMethod::tt}) {
        cmd::ReconstructArgs a;
        a.graph.distances = dir / "distances.csv";
        a.method = method;
        const auto sub = dir / to_string(method);
        const auto r = cmd::reconstruct(a, sub, log);
        const auto lib = reconstruct_fusion_graph(read_distance_csv(dir / "distances.csv"), method);
        EXPECT_EQ(io::read_matrix(sub / "reconstructed.stm"), lib.matrix);
        const auto m = io::Manifest::read(sub / "reconstruct.manifest");
        EXPECT_EQ(m.get("method"), to_string(method));
        const auto trace = m.get_doubles("objective_trace");
        EXPECT_EQ(trace, r.rec.objective_trace);
        for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GE(trace[i], trace[i - 1]);
        // Second run: same graph bytes.
        cmd::reconstruct(a, dir / "again", log);
        EXPECT_EQ(slurp(sub / "reconstructed.stm"), slurp(dir / "again" / "reconstructed.stm"));
    }
}

TEST(Commands, BenchCsvFormat) {
    const auto dir = fresh_dir("bench");
    std::ostringstream log;
    cmd::BenchArgs a;
    a.sizes = {3, 4};
    a.repeats = 2;
    cmd::bench_decomp(a, dir, log);
    std::ifstream in(dir / "bench.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "method,n,repeat,seconds,iterations,objective");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(io::split(line, ',').size(), 6u) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 3u * 2 * 2);
}

TEST(Commands, ExportGraphCsv) {
    const auto dir = fresh_dir("export");
    write_file(dir / "d.csv", "from,to,cost\n1,2,5.0\n");
    std::ostringstream log;
    cmd::ReconstructArgs a;
    a.graph.distances = dir / "d.csv";
    cmd::reconstruct(a, dir, log);
    cmd::export_graph_csv(dir / "reconstructed.stm", dir, log);
    EXPECT_EQ(count_lines(slurp(dir / "graph.csv")), 37u);
    const auto back = import_graph_csv(dir / "graph.csv");
    EXPECT_LT((back.matrix - io::read_matrix(dir / "reconstructed.stm")).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Commands, TrainTwiceGivesIdenticalHistoryAndEvaluateWritesArtifacts) {
    const auto dir = fresh_dir("train");
    make_data(dir);
    std::ostringstream log;
    cmd::TrainArgs a;
    a.flow = dir / "flow.csv";
    a.distances.distances = dir / "distances.csv";
    a.model = quick_model();
    a.threads = 1;
    const auto s1 = cmd::train(a, dir / "r1", log);
    cmd::train(a, dir / "r2", log);
    EXPECT_EQ(slurp(dir / "r1" / "history.csv"), slurp(dir / "r2" / "history.csv"));
    EXPECT_EQ(slurp(dir / "r1" / "checkpoint.manifest.params.stm"), slurp(dir / "r2" / "checkpoint.manifest.params.stm"));
    EXPECT_EQ(count_lines(slurp(dir / "r1" / "history.csv")), 1 + s1.history.epochs.size());
    EXPECT_NE(log.str().find("parameters: " + std::to_string(s1.param_count)), std::string::npos);

    cmd::EvaluateArgs e;
    e.checkpoint = s1.checkpoint;
    e.flow = a.flow;
    const auto r = cmd::evaluate_checkpoint(e, dir / "r1", log);
    EXPECT_EQ(r.model.report.per_step.size(), 12u);
    for (const char* f : {"metrics.csv", "predictions.csv", "baseline_metrics.csv", "evaluation.manifest"})
        EXPECT_TRUE(fs::exists(dir / "r1" / f)) << f;
    const auto m = io::Manifest::read(dir / "r1" / "evaluation.manifest");
    EXPECT_EQ(m.get_double("mae"), r.model.report.aggregate.mae);
}

TEST(Commands, Pems08ParameterCount) {
    const auto cfg = cmd::pems08_config();
    EXPECT_EQ(cfg.n_nodes, 170u);
    EXPECT_EQ(net::closed_form_param_count(cfg), net::ModelParams(cfg).total_count());
}

// ---- the binary ----

TEST(Cli, ExitCodesAndSingleLineErrors) {
    const auto dir = fresh_dir("cli");
    auto one_line = [](const std::string& s) { return count_lines(s) == 1; };

    auto r = run_cli("reconstruct", dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_TRUE(one_line(r.err)) << r.err;
    EXPECT_EQ(r.err.rfind("error[usage]: ", 0), 0u) << r.err;

    r = run_cli("--method svd reconstruct --distances x.csv", dir);
    EXPECT_EQ(r.code, 2);

    r = run_cli("reconstruct --distances \"" + (dir / "missing.csv").string() + "\" --out \"" + dir.string() + "\"", dir);
    EXPECT_EQ(r.code, 5);
    EXPECT_EQ(r.err.rfind("error[io]: ", 0), 0u) << r.err;
    EXPECT_TRUE(one_line(r.err));

    write_file(dir / "bad.csv", "from,to,cost\n1,2,5\n2,x,1\n");
    r = run_cli("build-graph --distances \"" + (dir / "bad.csv").string() + "\" --out \"" + dir.string() + "\"", dir);
    EXPECT_EQ(r.code, 3);
    EXPECT_EQ(r.err.rfind("error[format]: ", 0), 0u) << r.err;
    EXPECT_NE(r.err.find(":3"), std::string::npos) << r.err;
    EXPECT_TRUE(one_line(r.err));

    // Zero flow from step 52 on: the last horizon step of the test split has
    // only zero targets, so its MAPE is undefined; validation never reaches it.
    std::string flow = "a,b\n";
    for (int t = 0; t < 60; ++t) flow += t < 52 ? std::to_string(10 + t % 7) + "," + std::to_string(20 + t % 5) + "\n" : "0,0\n";
    write_file(dir / "zero.csv", flow);
    write_file(dir / "d2.csv", "from,to,cost\n1,2,1\n");
    const std::string common = " --out \"" + dir.string() + "\"";
    r = run_cli("train --flow \"" + (dir / "zero.csv").string() + "\" --distances \"" + (dir / "d2.csv").string() +
                    "\" --layers 2 --filters 4,4 --dilated-channels 4 --fc-hidden 4 --epochs 1" + common,
                dir);
    ASSERT_EQ(r.code, 0) << r.err;
    r = run_cli("evaluate --flow \"" + (dir / "zero.csv").string() + "\"" + common, dir);
    EXPECT_EQ(r.code, 4) << r.err;
    EXPECT_EQ(r.err.rfind("error[numerical]: ", 0), 0u) << r.err;
    EXPECT_TRUE(one_line(r.err));
}

TEST(Cli, SynthThenConfigFileWithFlagOverride) {
    const auto dir = fresh_dir("config");
    const std::string out = " --out \"" + dir.string() + "\"";
    auto r = run_cli("synth --nodes 5 --steps 300 --seed 4" + out, dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(load_flow(dir / "flow.csv", FlowFormat::csv).values.cols(), 5);

    write_file(dir / "run.ini",
               "[train]\nlayers=2\nfilters=4,4\ndilated-channels=4\nfc-hidden=8\nepochs=3\nbatch=8\n");
    const std::string data =
        " --flow \"" + (dir / "flow.csv").string() + "\" --distances \"" + (dir / "distances.csv").string() + "\"";
    r = run_cli("--config \"" + (dir / "run.ini").string() + "\" train" + data + " --epochs 1" + out, dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto m = io::Manifest::read(dir / "checkpoint.manifest");
    EXPECT_EQ(m.get_int("max_epochs"), 1);  // flag wins
    EXPECT_EQ(m.get_int("layers"), 2);      // file value used
    EXPECT_EQ(m.get_int("fc_hidden"), 8);
    EXPECT_EQ(count_lines(slurp(dir / "history.csv")), 2u);

    r = run_cli("--seed 4 --method tt reconstruct --distances \"" + (dir / "distances.csv").string() + "\"" + out, dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(io::Manifest::read(dir / "reconstruct.manifest").get("method"), "tt");
    r = run_cli("export-graph" + out, dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(count_lines(slurp(dir / "graph.csv")), 1u + 15 * 15);
}
