#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "sttgcn/error.hpp"
#include "sttgcn/stgraph.hpp"

using namespace stt;

namespace {

std::filesystem::path tmp(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "sttgcn_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

SpatialGraph path2() {
    const std::vector<EdgeRecord> e{{1, 2, 1.0, 0}};
    return build_spatial_adjacency(e, 2);
}

SpatialGraph random_graph(std::size_t n, double p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(p);
    std::vector<EdgeRecord> edges;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = i + 1; j <= n; ++j)
            if (coin(rng)) edges.push_back({static_cast<long long>(i), static_cast<long long>(j), 1.0, 0});
    return build_spatial_adjacency(edges, n);
}

void write_file(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p);
    out << s;
}

} // namespace

TEST(SpatialAdjacency, Examples) {
    const auto g = path2();
    DenseMatrix want(2, 2);
    want << 0, 1, 1, 0;
    EXPECT_EQ(g.adjacency, want);
    const auto empty = build_spatial_adjacency(std::vector<EdgeRecord>{}, 3);
    EXPECT_EQ(empty.adjacency, DenseMatrix::Zero(3, 3));
}

TEST(SpatialAdjacency, DeduplicatesAndRejectsBadEdges) {
    const std::vector<EdgeRecord> dup{{1, 2, 1.0, 1}, {2, 1, 3.0, 2}, {2, 3, 0.5, 3}};
    const auto g = build_spatial_adjacency(dup, 3);
    EXPECT_EQ(g.edges.size(), 2u);
    EXPECT_EQ(g.adjacency.sum(), 4.0);
    EXPECT_EQ(g.adjacency, g.adjacency.transpose());

    auto message = [](std::vector<EdgeRecord> e, std::size_t n) {
        try {
            build_spatial_adjacency(e, n);
        } catch (const FormatError& err) {
            return std::string(err.what());
        }
        return std::string("no error");
    };
    EXPECT_NE(message({{1, 1, 1.0, 7}}, 2).find("7"), std::string::npos);
    EXPECT_NE(message({{1, 3, 1.0, 8}}, 2).find("8"), std::string::npos);
    EXPECT_NE(message({{1, 2, -1.0, 9}}, 2).find("9"), std::string::npos);
}

TEST(DistanceCsv, ReadsHeaderInfersNodesAndReportsLines) {
    write_file(tmp("d.csv"), "from,to,cost\n1,2,10.5\n2,3,4\n");
    const auto g = read_distance_csv(tmp("d.csv"));
    EXPECT_EQ(g.n, 3u);
    EXPECT_EQ(g.edges.size(), 2u);
    write_file(tmp("d0.csv"), "from,to,cost\n0,1,1\n");
    EXPECT_EQ(read_distance_csv(tmp("d0.csv"), 0, 0).n, 2u);
    write_file(tmp("bad.csv"), "from,to,cost\n1,2,1\n1,x,2\n");
    try {
        read_distance_csv(tmp("bad.csv"));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
    }
    EXPECT_THROW(read_distance_csv(tmp("missing.csv")), IoError);
    write_distance_csv(tmp("rt.csv"), g);
    EXPECT_EQ(read_distance_csv(tmp("rt.csv")).adjacency, g.adjacency);
}

TEST(FusionMatrix, TwoNodeLayout) {
    DenseMatrix want(6, 6);
    want << 0, 1, 1, 0, 0, 0,  //
        1, 0, 0, 1, 0, 0,      //
        1, 0, 0, 1, 1, 0,      //
        0, 1, 1, 0, 0, 1,      //
        0, 0, 1, 0, 0, 1,      //
        0, 0, 0, 1, 1, 0;
    EXPECT_EQ(build_fusion_matrix(path2()).matrix, want);
}

TEST(FusionMatrix, SingleNodeChain) {
    const auto g = build_spatial_adjacency(std::vector<EdgeRecord>{}, 1);
    DenseMatrix want(3, 3);
    want << 0, 1, 0, 1, 0, 1, 0, 1, 0;
    EXPECT_EQ(build_fusion_matrix(g).matrix, want);
}

TEST(FusionMatrix, BlockStructureCellByCell) {
    for (std::size_t n = 1; n <= 3; ++n)
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto g = random_graph(n, 0.5, seed);
            const auto f = build_fusion_matrix(g);
            EXPECT_EQ(f.matrix, f.matrix.transpose());
            for (std::size_t k = 0; k < 3; ++k)
                for (std::size_t l = 0; l < 3; ++l) {
                    const auto e = static_cast<Eigen::Index>(n);
                    DenseMatrix want = DenseMatrix::Zero(e, e);
                    if (k == l) want = g.adjacency;
                    if (k + 1 == l || l + 1 == k) want = DenseMatrix::Identity(e, e);
                    EXPECT_EQ(DenseMatrix(f.block(k, l)), want) << "block " << k << "," << l;
                }
        }
}

TEST(AdjTensor, LateralSliceMapping) {
    FusionGraph f{2, DenseMatrix::Zero(6, 6)};
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t l = 0; l < 3; ++l)
            f.matrix.block(2 * static_cast<Eigen::Index>(k), 2 * static_cast<Eigen::Index>(l), 2, 2).setConstant(
                static_cast<double>(10 * (k + 1) + l + 1));
    const auto t = blocks_to_tensor(f).tensor;
    ASSERT_EQ(t.dims(), (Dims3{2, 2, 9}));
    // 1-based slice l + 3(k-1): block (2,3) -> slice 6, (1,1) -> 1, (3,3) -> 9.
    EXPECT_EQ(t(0, 0, 5), 23.0);
    EXPECT_EQ(t(1, 1, 0), 11.0);
    EXPECT_EQ(t(0, 1, 8), 33.0);
    EXPECT_EQ(tensor_to_blocks(blocks_to_tensor(f)).matrix, f.matrix);
}

TEST(AdjTensor, TwoNodeSlices) {
    const auto t = blocks_to_tensor(build_fusion_matrix(path2())).tensor;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            EXPECT_EQ(t(i, j, 0), i != j ? 1.0 : 0.0);
            EXPECT_EQ(t(i, j, 1), i == j ? 1.0 : 0.0);
            EXPECT_EQ(t(i, j, 2), 0.0);
        }
}

TEST(AdjTensor, InverseRoundTripAndErrors) {
    std::mt19937_64 rng(31);
    const AdjTensor t{oracle::random_tensor({4, 4, 9}, rng)};
    EXPECT_EQ(blocks_to_tensor(tensor_to_blocks(t)).tensor, t.tensor);
    const auto zero = tensor_to_blocks(AdjTensor{DenseTensor3({3, 3, 9})});
    EXPECT_EQ(zero.matrix, DenseMatrix::Zero(9, 9));
    DenseTensor3 six({2, 2, 9});
    six(1, 0, 5) = 4.0;
    EXPECT_EQ(tensor_to_blocks(AdjTensor{six}).block(1, 2)(1, 0), 4.0);
    EXPECT_THROW(tensor_to_blocks(AdjTensor{DenseTensor3({2, 2, 8})}), UsageError);
    EXPECT_THROW(blocks_to_tensor(FusionGraph{2, DenseMatrix::Zero(5, 5)}), UsageError);
}

TEST(FixDiagonal, TouchesExactlyNinePerNode) {
    const std::size_t n = 4;
    const auto z = fix_diagonal(AdjTensor{DenseTensor3({n, n, 9})});
    double ones = 0;
    for (double v : z.tensor.data()) ones += v;
    EXPECT_EQ(ones, 9.0 * n);
    for (std::size_t s = 0; s < 9; ++s)
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(z.tensor(i, i, s), 1.0);

    std::mt19937_64 rng(32);
    AdjTensor r{oracle::random_tensor({n, n, 9}, rng)};
    r.tensor(0, 0, 0) = 0.3;
    const auto fixed = fix_diagonal(r);
    EXPECT_EQ(fixed.tensor(0, 0, 0), 1.0);
    EXPECT_EQ(fixed.tensor(0, 1, 0), r.tensor(0, 1, 0));
    std::size_t changed = 0;
    for (std::size_t i = 0; i < r.tensor.size(); ++i) changed += fixed.tensor.data()[i] != r.tensor.data()[i];
    EXPECT_EQ(changed, 9 * n);
    EXPECT_EQ(fix_diagonal(fixed).tensor, fixed.tensor);
}

TEST(Reconstruct, TuckerPreservesNormAndIsExactBeforeFix) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto g = random_graph(2 + seed, 0.4, seed);
        const auto r = reconstruct_fusion_graph_detailed(g, GraphMethod::tucker_hooi);
        EXPECT_NEAR(frobenius_norm(r.raw.tensor), frobenius_norm(r.source.tensor),
                    1e-10 * frobenius_norm(r.source.tensor));
        EXPECT_TRUE(r.graph.matrix.allFinite());
        for (Eigen::Index i = 0; i < r.graph.matrix.rows(); ++i) EXPECT_EQ(r.graph.matrix(i, i), 1.0);
    }
}

TEST(Reconstruct, SingleNode) {
    const auto g = build_spatial_adjacency(std::vector<EdgeRecord>{}, 1);
    for (auto m : {GraphMethod::tucker_hooi, GraphMethod::l1_tucker, GraphMethod::tt}) {
        const auto f = reconstruct_fusion_graph(g, m);
        ASSERT_EQ(f.matrix.rows(), 3);
        EXPECT_TRUE(f.matrix.allFinite());
        for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(f.matrix(i, i), 1.0);
    }
}

TEST(Reconstruct, TtContractionReproducesFusionGraph) {
    const auto g = random_graph(5, 0.4, 3);
    const auto r = reconstruct_fusion_graph_detailed(g, GraphMethod::tt);
    EXPECT_LT(oracle::max_abs(r.raw.tensor, r.source.tensor), 1e-10);
}

TEST(Reconstruct, MatchesComposedOracleOnEightNodes) {
    const auto g = random_graph(8, 0.3, 7);
    const auto got = reconstruct_fusion_graph(g, GraphMethod::tucker_hooi);

    // Oracle: hand-built block matrix, reshape by the slice rule, Jacobi HOSVD
    // at full rank (one HOOI sweep cannot move a full-rank basis), naive core,
    // unit diagonals, inverse reshape.
    const std::size_t n = 8;
    DenseMatrix a = DenseMatrix::Zero(24, 24);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j)
                a(static_cast<Eigen::Index>(k * n + i), static_cast<Eigen::Index>(k * n + j)) =
                    g.adjacency(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (k + 1 < 3) {
                a(static_cast<Eigen::Index>(k * n + i), static_cast<Eigen::Index>((k + 1) * n + i)) = 1;
                a(static_cast<Eigen::Index>((k + 1) * n + i), static_cast<Eigen::Index>(k * n + i)) = 1;
            }
        }
    DenseTensor3 t({n, n, 9});
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t l = 0; l < 3; ++l)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    t(i, j, l + 3 * k) = a(static_cast<Eigen::Index>(k * n + i), static_cast<Eigen::Index>(l * n + j));
    auto core = oracle::hosvd(t, t.dims()).core;
    for (std::size_t s = 0; s < 9; ++s)
        for (std::size_t i = 0; i < n; ++i) core(i, i, s) = 1.0;
    DenseMatrix want(24, 24);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t l = 0; l < 3; ++l)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    want(static_cast<Eigen::Index>(k * n + i), static_cast<Eigen::Index>(l * n + j)) =
                        core(i, j, l + 3 * k);
    EXPECT_LT((got.matrix - want).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Reconstruct, DeterministicAndMethodParsing) {
    const auto g = random_graph(6, 0.4, 9);
    for (auto m : {GraphMethod::tucker_hooi, GraphMethod::l1_tucker, GraphMethod::tt}) {
        EXPECT_EQ(reconstruct_fusion_graph(g, m).matrix, reconstruct_fusion_graph(g, m).matrix);
        EXPECT_EQ(parse_graph_method(m == GraphMethod::tucker_hooi ? "tucker"
                                     : m == GraphMethod::l1_tucker ? "l1tucker"
                                                                   : "tt"),
                  m);
    }
    EXPECT_THROW(parse_graph_method("cp"), UsageError);
}

TEST(Export, TwoNodeCsvAndRoundTrip) {
    const auto f = build_fusion_matrix(path2());
    export_graph(f, tmp("g.csv"));
    std::ifstream in(tmp("g.csv"));
    std::string line;
    std::size_t lines = 0;
    std::getline(in, line);
    EXPECT_EQ(line, "row,col,value");
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 36u);
    EXPECT_EQ(import_graph_csv(tmp("g.csv")).matrix, f.matrix);

    const auto r = reconstruct_fusion_graph(random_graph(5, 0.5, 4), GraphMethod::l1_tucker);
    export_graph(r, tmp("r.csv"));
    EXPECT_EQ(import_graph_csv(tmp("r.csv")).matrix, r.matrix);
    export_slice(r, tmp("s.csv"));
    std::ifstream s(tmp("s.csv"));
    lines = 0;
    while (std::getline(s, line)) ++lines;
    EXPECT_EQ(lines, 26u);
}
