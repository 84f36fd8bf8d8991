#include "sttgcn/stgraph.hpp"

#include <cmath>
#include <algorithm>
#include <fstream>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "sttgcn/error.hpp"
#include "sttgcn/io.hpp"

namespace stt {

namespace {

std::string where(const EdgeRecord& e) {
    return e.line ? fmt::format("line {}", e.line) : std::string("edge record");
}

} // namespace

SpatialGraph build_spatial_adjacency(std::span<const EdgeRecord> edges, std::size_t n) {
    if (n == 0) throw UsageError("spatial graph needs at least one node");
    SpatialGraph g;
    g.n = n;
    g.adjacency = DenseMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    std::map<std::pair<std::size_t, std::size_t>, double> unique;
    for (const auto& e : edges) {
        const auto nn = static_cast<long long>(n);
        if (e.from < 1 || e.from > nn || e.to < 1 || e.to > nn) {
            throw FormatError(fmt::format("{}: node id out of range [1, {}] in edge ({}, {})", where(e), n, e.from,
                                          e.to));
        }
        if (!(e.cost >= 0.0) || !std::isfinite(e.cost)) {
            throw FormatError(fmt::format("{}: negative or non-finite cost {}", where(e), e.cost));
        }
        if (e.from == e.to) throw FormatError(fmt::format("{}: self-loop on node {}", where(e), e.from));
        auto a = static_cast<std::size_t>(e.from - 1);
        auto b = static_cast<std::size_t>(e.to - 1);
        if (a > b) std::swap(a, b);
        unique.try_emplace({a, b}, e.cost);
    }
    for (const auto& [key, cost] : unique) {
        g.edges.push_back({key.first, key.second, cost});
        g.adjacency(static_cast<Eigen::Index>(key.first), static_cast<Eigen::Index>(key.second)) = 1.0;
        g.adjacency(static_cast<Eigen::Index>(key.second), static_cast<Eigen::Index>(key.first)) = 1.0;
    }
    return g;
}

SpatialGraph read_distance_csv(const std::filesystem::path& path, std::size_t n, int id_base) {
    if (id_base != 0 && id_base != 1) throw UsageError("id_base must be 0 or 1");
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open distance file {}", path.string()));
    std::string line;
    std::size_t lineno = 0;
    std::vector<EdgeRecord> edges;
    long long max_id = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = io::trim(line);
        if (t.empty()) continue;
        auto cells = io::split(t, ',');
        if (lineno == 1 && cells.size() == 3 && io::trim(cells[0]) == "from") continue;
        double from = 0, to = 0, cost = 0;
        if (cells.size() != 3 || !io::parse_double(cells[0], from) || !io::parse_double(cells[1], to) ||
            !io::parse_double(cells[2], cost) || from != std::floor(from) || to != std::floor(to)) {
            throw FormatError(fmt::format("{}:{}: expected from,to,cost with integer ids", path.string(), lineno));
        }
        EdgeRecord e{static_cast<long long>(from) + (1 - id_base), static_cast<long long>(to) + (1 - id_base), cost,
                     lineno};
        max_id = std::max({max_id, e.from, e.to});
        edges.push_back(e);
    }
    if (n == 0) n = static_cast<std::size_t>(std::max<long long>(max_id, 1));
    try {
        return build_spatial_adjacency(edges, n);
    } catch (const FormatError& err) {
        throw FormatError(fmt::format("{}: {}", path.string(), err.what()));
    }
}

void write_distance_csv(const std::filesystem::path& path, const SpatialGraph& g) {
    io::ensure_parent_dir(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    out << "from,to,cost\n";
    for (const auto& e : g.edges) out << fmt::format("{},{},{}\n", e.a + 1, e.b + 1, io::format_double(e.cost));
    if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

FusionGraph build_fusion_matrix(const SpatialGraph& g) {
    const auto n = static_cast<Eigen::Index>(g.n);
    if (g.adjacency.rows() != n || g.adjacency.cols() != n) throw UsageError("spatial adjacency shape mismatch");
    FusionGraph f;
    f.n = g.n;
    f.matrix = DenseMatrix::Zero(3 * n, 3 * n);
    const DenseMatrix eye = DenseMatrix::Identity(n, n);
    for (Eigen::Index k = 0; k < 3; ++k) {
        f.matrix.block(k * n, k * n, n, n) = g.adjacency;
        if (k + 1 < 3) {
            f.matrix.block(k * n, (k + 1) * n, n, n) = eye;
            f.matrix.block((k + 1) * n, k * n, n, n) = eye;
        }
    }
    return f;
}

AdjTensor blocks_to_tensor(const FusionGraph& f) {
    const auto rows = static_cast<std::size_t>(f.matrix.rows());
    if (rows == 0 || rows % kFusionSteps != 0 || f.matrix.cols() != f.matrix.rows()) {
        throw UsageError(fmt::format("fusion matrix {}x{} is not square with a side divisible by 3",
                                     f.matrix.rows(), f.matrix.cols()));
    }
    const std::size_t n = rows / kFusionSteps;
    AdjTensor out{DenseTensor3({n, n, kFusionSlices})};
    for (std::size_t k = 0; k < kFusionSteps; ++k)
        for (std::size_t l = 0; l < kFusionSteps; ++l) {
            const std::size_t s = l + kFusionSteps * k;
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < n; ++i)
                    out.tensor(i, j, s) = f.matrix(static_cast<Eigen::Index>(k * n + i),
                                                   static_cast<Eigen::Index>(l * n + j));
        }
    return out;
}

FusionGraph tensor_to_blocks(const AdjTensor& t) {
    const auto& d = t.tensor.dims();
    if (d[2] != kFusionSlices || d[0] != d[1]) {
        throw UsageError(fmt::format("adjacency tensor must be n x n x 9, got ({}, {}, {})", d[0], d[1], d[2]));
    }
    const std::size_t n = d[0];
    FusionGraph f;
    f.n = n;
    f.matrix = DenseMatrix::Zero(static_cast<Eigen::Index>(3 * n), static_cast<Eigen::Index>(3 * n));
    for (std::size_t s = 0; s < kFusionSlices; ++s) {
        const std::size_t k = s / kFusionSteps, l = s % kFusionSteps;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i)
                f.matrix(static_cast<Eigen::Index>(k * n + i), static_cast<Eigen::Index>(l * n + j)) =
                    t.tensor(i, j, s);
    }
    return f;
}

AdjTensor fix_diagonal(AdjTensor t) {
    const auto& d = t.tensor.dims();
    if (d[2] != kFusionSlices || d[0] != d[1]) throw UsageError("fix_diagonal expects an n x n x 9 tensor");
    for (std::size_t s = 0; s < kFusionSlices; ++s)
        for (std::size_t i = 0; i < d[0]; ++i) t.tensor(i, i, s) = 1.0;
    return t;
}

std::string to_string(GraphMethod m) {
    switch (m) {
        case GraphMethod::tucker_hooi: return "tucker";
        case GraphMethod::l1_tucker: return "l1tucker";
        case GraphMethod::tt: return "tt";
    }
    return "unknown";
}

GraphMethod parse_graph_method(const std::string& s) {
    if (s == "tucker" || s == "tucker_hooi") return GraphMethod::tucker_hooi;
    if (s == "l1tucker" || s == "l1_tucker") return GraphMethod::l1_tucker;
    if (s == "tt") return GraphMethod::tt;
    throw UsageError(fmt::format("unknown graph method '{}'; expected tucker, l1tucker or tt", s));
}

Reconstruction reconstruct_fusion_graph_detailed(const SpatialGraph& g, GraphMethod method,
                                                 const ReconstructOptions& opts) {
    Reconstruction r;
    r.source = blocks_to_tensor(build_fusion_matrix(g));
    const Dims3 full = r.source.tensor.dims();
    switch (method) {
        case GraphMethod::tucker_hooi: {
            auto d = hooi(r.source.tensor, full, opts.hooi);
            r.raw.tensor = std::move(d.core);
            r.objective_trace = std::move(d.objective_trace);
            r.iterations = d.iterations;
            break;
        }
        case GraphMethod::l1_tucker: {
            auto d = l1_tucker(r.source.tensor, full, opts.l1);
            r.raw.tensor = std::move(d.core);
            r.objective_trace = std::move(d.objective_trace);
            r.iterations = d.iterations;
            break;
        }
        case GraphMethod::tt: {
            const std::size_t cap =
                opts.tt_max_rank ? opts.tt_max_rank : std::numeric_limits<std::size_t>::max();
            auto d = tt_svd(r.source.tensor, cap, opts.tt_tol);
            r.raw.tensor = tt_reconstruct(d);
            r.iterations = 1;
            break;
        }
    }
    if (!r.raw.tensor.all_finite()) throw NumericalError("reconstructed adjacency tensor has non-finite entries");
    r.graph = tensor_to_blocks(fix_diagonal(r.raw));
    return r;
}

FusionGraph reconstruct_fusion_graph(const SpatialGraph& g, GraphMethod method, const ReconstructOptions& opts) {
    return reconstruct_fusion_graph_detailed(g, method, opts).graph;
}

namespace {

void write_matrix_csv(const std::filesystem::path& path, const DenseMatrix& m) {
    io::ensure_parent_dir(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    out << "row,col,value\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            out << fmt::format("{},{},{}\n", i + 1, j + 1, io::format_double(m(i, j)));
    if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

} // namespace

void export_graph(const FusionGraph& f, const std::filesystem::path& path) { write_matrix_csv(path, f.matrix); }

void export_slice(const FusionGraph& f, const std::filesystem::path& path) { write_matrix_csv(path, f.block(0, 0)); }

FusionGraph import_graph_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
    std::string line;
    std::getline(in, line);
    if (io::trim(line) != "row,col,value") {
        throw FormatError(fmt::format("{}:1: expected header row,col,value", path.string()));
    }
    struct Cell {
        std::uint64_t r, c;
        double v;
    };
    std::vector<Cell> cells;
    std::uint64_t side = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (io::trim(line).empty()) continue;
        auto parts = io::split(line, ',');
        Cell c{};
        if (parts.size() != 3 || !io::parse_u64(parts[0], c.r) || !io::parse_u64(parts[1], c.c) ||
            !io::parse_double(parts[2], c.v) || c.r == 0 || c.c == 0) {
            throw FormatError(fmt::format("{}:{}: malformed row,col,value entry", path.string(), lineno));
        }
        side = std::max({side, c.r, c.c});
        cells.push_back(c);
    }
    if (side == 0 || side % kFusionSteps != 0 || cells.size() != side * side) {
        throw FormatError(fmt::format("{}: entries do not form a 3n x 3n matrix", path.string()));
    }
    FusionGraph f;
    f.n = side / kFusionSteps;
    f.matrix = DenseMatrix::Zero(static_cast<Eigen::Index>(side), static_cast<Eigen::Index>(side));
    for (const auto& c : cells) f.matrix(static_cast<Eigen::Index>(c.r - 1), static_cast<Eigen::Index>(c.c - 1)) = c.v;
    return f;
}

} // namespace stt
