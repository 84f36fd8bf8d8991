#include "sttgcn/data_io.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "sttgcn/error.hpp"
#include "sttgcn/io.hpp"

namespace stt {

namespace {

FlowSeries load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open flow file {}", path.string()));
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = io::trim(line);
        if (t.empty()) continue;
        auto cells = io::split(t, ',');
        std::vector<double> row(cells.size());
        bool numeric = true;
        for (std::size_t c = 0; c < cells.size() && numeric; ++c) numeric = io::parse_double(cells[c], row[c]);
        if (!numeric) {
            // The first non-empty line may be a header.
            if (rows.empty() && width == 0) {
                width = cells.size();
                continue;
            }
            throw FormatError(fmt::format("{}:{}: non-numeric cell", path.string(), lineno));
        }
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (!std::isfinite(row[c])) {
                throw FormatError(fmt::format("{}:{}: non-finite value in column {}", path.string(), lineno, c + 1));
            }
        }
        if (width == 0) width = row.size();
        if (row.size() != width) {
            throw FormatError(fmt::format("{}:{}: ragged row with {} cells, expected {}", path.string(), lineno,
                                          row.size(), width));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw FormatError(fmt::format("{}: no data rows", path.string()));
    FlowSeries s;
    s.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < width; ++c)
            s.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return s;
}

FlowSeries load_binary(const std::filesystem::path& path) {
    // Same container shape as STM1, with its own magic.
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open flow file {}", path.string()));
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::string_view(magic, 4) != "STF1") throw FormatError(fmt::format("{}: bad magic", path.string()));
    std::uint64_t header[2] = {};
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in) throw FormatError(fmt::format("{}: truncated header", path.string()));
    static_assert(std::endian::native == std::endian::little, "flow binary reader assumes a little-endian host");
    FlowSeries s;
    s.values.resize(static_cast<Eigen::Index>(header[0]), static_cast<Eigen::Index>(header[1]));
    std::vector<double> buf(header[0] * header[1]);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (!in) throw FormatError(fmt::format("{}: truncated payload", path.string()));
    for (std::size_t i = 0; i < buf.size(); ++i) {
        if (!std::isfinite(buf[i])) {
            throw FormatError(fmt::format("{}: non-finite value at step {}, sensor {}", path.string(),
                                          i / header[1] + 1, i % header[1] + 1));
        }
    }
    s.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        buf.data(), static_cast<Eigen::Index>(header[0]), static_cast<Eigen::Index>(header[1]));
    return s;
}

} // namespace

FlowFormat flow_format_for(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    return ext == ".stf" || ext == ".bin" ? FlowFormat::stt_binary : FlowFormat::csv;
}

FlowSeries load_flow(const std::filesystem::path& path, FlowFormat format) {
    return format == FlowFormat::csv ? load_csv(path) : load_binary(path);
}

void save_flow(const std::filesystem::path& path, const FlowSeries& s, FlowFormat format) {
    io::ensure_parent_dir(path);
    if (format == FlowFormat::csv) {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
        for (Eigen::Index c = 0; c < s.values.cols(); ++c) out << (c ? "," : "") << "s" << c + 1;
        out << '\n';
        for (Eigen::Index r = 0; r < s.values.rows(); ++r) {
            for (Eigen::Index c = 0; c < s.values.cols(); ++c) out << (c ? "," : "") << io::format_double(s.values(r, c));
            out << '\n';
        }
        if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    out.write("STF1", 4);
    const std::uint64_t header[2] = {static_cast<std::uint64_t>(s.values.rows()),
                                     static_cast<std::uint64_t>(s.values.cols())};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    for (Eigen::Index r = 0; r < s.values.rows(); ++r)
        for (Eigen::Index c = 0; c < s.values.cols(); ++c) {
            const double v = s.values(r, c);
            out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
    if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

NormStats fit_zscore(const DenseMatrix& values) {
    if (values.rows() == 0) throw UsageError("cannot fit normalization on zero rows");
    NormStats st;
    st.mean = values.colwise().mean().transpose();
    st.std.resize(values.cols());
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
        const double var = (values.col(c).array() - st.mean(c)).square().mean();
        const double sd = std::sqrt(var);
        st.std(c) = sd > 0.0 ? sd : 1.0;
    }
    return st;
}

DenseMatrix apply_zscore(const DenseMatrix& values, const NormStats& stats) {
    if (values.cols() != stats.mean.size()) throw UsageError("normalization stats do not match sensor count");
    return (values.rowwise() - stats.mean.transpose()).array().rowwise() / stats.std.transpose().array();
}

DenseMatrix denormalize(const DenseMatrix& values, const NormStats& stats) {
    if (values.cols() != stats.mean.size()) throw UsageError("normalization stats do not match sensor count");
    return (values.array().rowwise() * stats.std.transpose().array()).rowwise() + stats.mean.transpose().array();
}

std::pair<DenseMatrix, NormStats> zscore(const FlowSeries& s, std::size_t fit_rows) {
    if (fit_rows == 0 || fit_rows > s.n_steps()) throw UsageError("fit_rows must lie in [1, n_steps]");
    auto stats = fit_zscore(s.values.topRows(static_cast<Eigen::Index>(fit_rows)));
    return {apply_zscore(s.values, stats), std::move(stats)};
}

std::vector<std::size_t> WindowedDataset::indices(Split s) const {
    if (!is_split) throw UsageError("dataset has not been split");
    std::size_t begin = 0;
    if (s == Split::val) begin = counts[0];
    if (s == Split::test) begin = counts[0] + counts[1];
    const std::size_t count = counts[static_cast<std::size_t>(s)];
    std::vector<std::size_t> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = begin + i;
    return out;
}

std::size_t WindowedDataset::train_end() const {
    if (!is_split || counts[0] == 0) throw UsageError("dataset has no training split");
    return starts[counts[0] - 1] + window + horizon;
}

DenseMatrix WindowedDataset::input(std::size_t sample) const {
    return normalized.middleRows(static_cast<Eigen::Index>(starts.at(sample)), static_cast<Eigen::Index>(window));
}

DenseMatrix WindowedDataset::target(std::size_t sample) const {
    return raw.middleRows(static_cast<Eigen::Index>(starts.at(sample) + window), static_cast<Eigen::Index>(horizon));
}

WindowedDataset make_windows(const FlowSeries& s, std::size_t window, std::size_t horizon, std::size_t stride) {
    if (window == 0 || horizon == 0 || stride == 0) throw UsageError("window, horizon and stride must be positive");
    if (s.n_steps() < window + horizon) {
        throw UsageError(fmt::format("series has {} steps; windows need at least {}", s.n_steps(), window + horizon));
    }
    WindowedDataset ds;
    ds.window = window;
    ds.horizon = horizon;
    ds.raw = s.values;
    for (std::size_t t = 0; t + window + horizon <= s.n_steps(); t += stride) ds.starts.push_back(t);
    return ds;
}

void split(WindowedDataset& ds, std::array<double, 3> ratios) {
    const std::size_t n = ds.size();
    if (n < 3) throw UsageError(fmt::format("need at least 3 samples to split, have {}", n));
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (!(ratios[0] > 0 && ratios[1] > 0 && ratios[2] > 0)) throw UsageError("split ratios must be positive");
    ds.counts[0] = static_cast<std::size_t>(std::floor(ratios[0] / total * static_cast<double>(n)));
    ds.counts[1] = static_cast<std::size_t>(std::floor(ratios[1] / total * static_cast<double>(n)));
    if (ds.counts[0] == 0 || ds.counts[1] == 0 || ds.counts[0] + ds.counts[1] >= n) {
        throw UsageError(fmt::format("{} samples are too few for a train/val/test split", n));
    }
    ds.counts[2] = n - ds.counts[0] - ds.counts[1];
    ds.is_split = true;
    // Statistics see training steps only.
    ds.stats = fit_zscore(ds.raw.topRows(static_cast<Eigen::Index>(ds.train_end())));
    ds.normalized = apply_zscore(ds.raw, ds.stats);
}

WindowedDataset prepare_dataset(const FlowSeries& s, std::size_t window, std::size_t horizon) {
    auto ds = make_windows(s, window, horizon);
    split(ds);
    return ds;
}

DenseMatrix historical_average(const WindowedDataset& ds, std::size_t period) {
    if (period == 0) throw UsageError("period must be positive");
    const auto sensors = ds.raw.cols();
    const std::size_t end = ds.train_end();
    DenseMatrix sum = DenseMatrix::Zero(static_cast<Eigen::Index>(period), sensors);
    std::vector<std::size_t> count(period, 0);
    for (std::size_t t = 0; t < end; ++t) {
        sum.row(static_cast<Eigen::Index>(t % period)) += ds.raw.row(static_cast<Eigen::Index>(t));
        ++count[t % period];
    }
    for (std::size_t p = 0; p < period; ++p) {
        const auto row = static_cast<Eigen::Index>(p);
        if (count[p]) sum.row(row) /= static_cast<double>(count[p]);
        else sum.row(row) = ds.stats.mean.transpose();
    }
    return sum;
}

SpatialGraph ring_graph(std::size_t n) {
    if (n < 2) throw UsageError("ring graph needs at least 2 nodes");
    std::vector<EdgeRecord> edges;
    for (std::size_t i = 0; i < n; ++i) {
        edges.push_back({static_cast<long long>(i + 1), static_cast<long long>((i + 1) % n + 1), 1.0, 0});
    }
    return build_spatial_adjacency(edges, n);
}

Eigen::VectorXd diffusion_step(const Eigen::VectorXd& x, const SpatialGraph& ring, std::size_t t,
                               const Eigen::VectorXd& eps, const SynthOptions& opts) {
    const auto n = x.size();
    const Eigen::VectorXd degree = ring.adjacency.rowwise().sum();
    const Eigen::VectorXd neighbor_sum = ring.adjacency * x;
    const double leak = 1.0 - opts.self_weight - opts.neighbor_weight;
    Eigen::VectorXd next(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double nb = degree(i) > 0 ? neighbor_sum(i) / degree(i) : x(i);
        const double phase = std::numbers::pi / 2.0 * static_cast<double>(i) / static_cast<double>(n);
        const double day = 2.0 * std::numbers::pi * static_cast<double>(t % opts.period) /
                           static_cast<double>(opts.period);
        next(i) = opts.self_weight * x(i) + opts.neighbor_weight * nb + leak * opts.level +
                  opts.amplitude * opts.level * std::sin(day + phase) + opts.noise * opts.level * eps(i);
    }
    return next;
}

SynthData synth_diffusion(std::size_t n_nodes, std::size_t n_steps, std::uint64_t seed, const SynthOptions& opts) {
    if (n_nodes < 2) throw UsageError("synthetic dataset needs at least 2 nodes");
    if (n_steps == 0 || opts.period == 0) throw UsageError("n_steps and period must be positive");
    SynthData d;
    d.graph = ring_graph(n_nodes);
    const auto n = static_cast<Eigen::Index>(n_nodes);
    d.series.values.resize(static_cast<Eigen::Index>(n_steps), n);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, opts.level);
    Eigen::VectorXd eps(n);
    d.series.values.row(0) = x.transpose();
    for (std::size_t t = 0; t + 1 < n_steps; ++t) {
        for (Eigen::Index i = 0; i < n; ++i) eps(i) = normal(rng);
        x = diffusion_step(x, d.graph, t, eps, opts);
        d.series.values.row(static_cast<Eigen::Index>(t + 1)) = x.transpose();
    }
    return d;
}

} // namespace stt
