#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sttgcn/decomp.hpp"
#include "sttgcn/tensor_core.hpp"

namespace stt {

// Number of consecutive time steps joined by one fusion graph.
inline constexpr std::size_t kFusionSteps = 3;
inline constexpr std::size_t kFusionSlices = kFusionSteps * kFusionSteps;

// One undirected road segment as read from a distance file. Ids are 1-based;
// `line` is the source line (0 when not read from a file).
struct EdgeRecord {
    long long from = 0;
    long long to = 0;
    double cost = 0.0;
    std::size_t line = 0;
};

struct Edge {
    std::size_t a = 0;  // 0-based, a < b
    std::size_t b = 0;
    double cost = 0.0;
};

struct SpatialGraph {
    std::size_t n = 0;
    std::vector<Edge> edges;
    DenseMatrix adjacency;  // n x n, binary, symmetric, zero diagonal
};

// 3n x 3n block matrix; node i at step t (both 0-based) sits at row t*n + i.
struct FusionGraph {
    std::size_t n = 0;
    DenseMatrix matrix;

    auto block(std::size_t k, std::size_t l) const {
        const auto e = static_cast<Eigen::Index>(n);
        return matrix.block(static_cast<Eigen::Index>(k) * e, static_cast<Eigen::Index>(l) * e, e, e);
    }
};

// n x n x 9 tensor; block (k, l) of the fusion matrix is lateral slice
// s = l + 3k (0-based), i.e. slice l + 3(k-1) in 1-based terms.
struct AdjTensor {
    DenseTensor3 tensor;

    std::size_t n() const { return tensor.dims()[0]; }
};

SpatialGraph build_spatial_adjacency(std::span<const EdgeRecord> edges, std::size_t n);

// Reads a `from,to,cost` CSV. With n == 0 the node count is the largest id
// seen. id_base selects 1-based (default) or 0-based ids.
SpatialGraph read_distance_csv(const std::filesystem::path& path, std::size_t n = 0, int id_base = 1);
void write_distance_csv(const std::filesystem::path& path, const SpatialGraph& g);

FusionGraph build_fusion_matrix(const SpatialGraph& g);
AdjTensor blocks_to_tensor(const FusionGraph& f);
FusionGraph tensor_to_blocks(const AdjTensor& t);

// Sets t(i, i, s) = 1 for every node i and every slice s.
AdjTensor fix_diagonal(AdjTensor t);

enum class GraphMethod { tucker_hooi, l1_tucker, tt };

std::string to_string(GraphMethod m);
GraphMethod parse_graph_method(const std::string& s);

struct ReconstructOptions {
    HooiOptions hooi;
    L1TuckerOptions l1;
    std::size_t tt_max_rank = 0;  // 0: no cap
    double tt_tol = 0.0;
};

struct Reconstruction {
    FusionGraph graph;           // A' after diagonal adjustment
    AdjTensor raw;               // reconstructed tensor before adjustment
    AdjTensor source;            // adjacency tensor of the binary fusion graph
    std::vector<double> objective_trace;
    int iterations = 0;
};

// build_fusion_matrix -> blocks_to_tensor -> full-size decomposition -> core
// (or contracted TT chain) -> fix_diagonal -> tensor_to_blocks.
Reconstruction reconstruct_fusion_graph_detailed(const SpatialGraph& g, GraphMethod method,
                                                 const ReconstructOptions& opts = {});
FusionGraph reconstruct_fusion_graph(const SpatialGraph& g, GraphMethod method, const ReconstructOptions& opts = {});

// `row,col,value` CSV (1-based) of the whole matrix.
void export_graph(const FusionGraph& f, const std::filesystem::path& path);
// `row,col,value` CSV of block (1,1), the slice-1 node-to-node relations.
void export_slice(const FusionGraph& f, const std::filesystem::path& path);
FusionGraph import_graph_csv(const std::filesystem::path& path);

} // namespace stt
