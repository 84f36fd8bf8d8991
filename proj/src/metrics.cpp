#include "sttgcn/metrics.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "sttgcn/error.hpp"
#include "sttgcn/io.hpp"

namespace stt {

namespace {

void check_pair(std::span<const double> y, std::span<const double> pred) {
    if (y.size() != pred.size()) {
        throw UsageError(fmt::format("metric inputs differ in length: {} vs {}", y.size(), pred.size()));
    }
    if (y.empty()) throw UsageError("metric inputs are empty");
}

MetricRow row_for(std::string label, const std::vector<double>& y, const std::vector<double>& p) {
    MetricRow r;
    r.label = std::move(label);
    r.mae = mae(y, p);
    r.rmse = rmse(y, p);
    const auto m = mape(y, p);
    r.mape = m.percent;
    r.mape_excluded = m.excluded;
    r.n = y.size();
    return r;
}

} // namespace

double mae(std::span<const double> y, std::span<const double> pred) {
    check_pair(y, pred);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - pred[i]);
    return s / static_cast<double>(y.size());
}

double rmse(std::span<const double> y, std::span<const double> pred) {
    check_pair(y, pred);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - pred[i]) * (y[i] - pred[i]);
    return std::sqrt(s / static_cast<double>(y.size()));
}

MapeResult mape(std::span<const double> y, std::span<const double> pred) {
    check_pair(y, pred);
    MapeResult r;
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == 0.0) {
            ++r.excluded;
            continue;
        }
        s += std::abs((y[i] - pred[i]) / y[i]);
        ++r.included;
    }
    if (r.included == 0) throw NumericalError("MAPE is undefined: every target is zero");
    r.percent = 100.0 * s / static_cast<double>(r.included);
    return r;
}

MetricReport compute_report(std::span<const DenseMatrix> targets, std::span<const DenseMatrix> preds) {
    if (targets.size() != preds.size() || targets.empty()) {
        throw UsageError("report needs the same nonzero number of targets and predictions");
    }
    const auto horizon = targets.front().rows();
    const auto sensors = targets.front().cols();
    std::vector<std::vector<double>> ys(static_cast<std::size_t>(horizon)), ps(static_cast<std::size_t>(horizon));
    std::vector<double> all_y, all_p;
    for (std::size_t s = 0; s < targets.size(); ++s) {
        if (targets[s].rows() != horizon || targets[s].cols() != sensors || preds[s].rows() != horizon ||
            preds[s].cols() != sensors) {
            throw UsageError(fmt::format("sample {} has inconsistent target/prediction shape", s));
        }
        for (Eigen::Index h = 0; h < horizon; ++h)
            for (Eigen::Index c = 0; c < sensors; ++c) {
                ys[static_cast<std::size_t>(h)].push_back(targets[s](h, c));
                ps[static_cast<std::size_t>(h)].push_back(preds[s](h, c));
                all_y.push_back(targets[s](h, c));
                all_p.push_back(preds[s](h, c));
            }
    }
    MetricReport rep;
    for (Eigen::Index h = 0; h < horizon; ++h) {
        rep.per_step.push_back(row_for(std::to_string(h + 1), ys[static_cast<std::size_t>(h)],
                                       ps[static_cast<std::size_t>(h)]));
    }
    rep.aggregate = row_for("all", all_y, all_p);
    return rep;
}

void write_report_csv(const std::filesystem::path& path, const MetricReport& report) {
    io::ensure_parent_dir(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    out << "step,mae,rmse,mape,n,mape_excluded\n";
    auto line = [&](const MetricRow& r) {
        out << fmt::format("{},{},{},{},{},{}\n", r.label, io::format_double(r.mae), io::format_double(r.rmse),
                           io::format_double(r.mape), r.n, r.mape_excluded);
    };
    for (const auto& r : report.per_step) line(r);
    line(report.aggregate);
    if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

MetricReport read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
    std::string line;
    std::getline(in, line);
    if (io::trim(line) != "step,mae,rmse,mape,n,mape_excluded") {
        throw FormatError(fmt::format("{}:1: unexpected metrics header", path.string()));
    }
    MetricReport rep;
    bool have_all = false;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (io::trim(line).empty()) continue;
        auto cells = io::split(io::trim(line), ',');
        MetricRow r;
        std::uint64_t n = 0, ex = 0;
        if (cells.size() != 6 || !io::parse_double(cells[1], r.mae) || !io::parse_double(cells[2], r.rmse) ||
            !io::parse_double(cells[3], r.mape) || !io::parse_u64(cells[4], n) || !io::parse_u64(cells[5], ex)) {
            throw FormatError(fmt::format("{}:{}: malformed metrics row", path.string(), lineno));
        }
        r.label = std::string(cells[0]);
        r.n = n;
        r.mape_excluded = ex;
        if (r.label == "all") {
            rep.aggregate = r;
            have_all = true;
        } else {
            rep.per_step.push_back(r);
        }
    }
    if (!have_all) throw FormatError(fmt::format("{}: missing aggregate row", path.string()));
    return rep;
}

} // namespace stt
