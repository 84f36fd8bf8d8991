#include "sttgcn/net/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <random>
#include <thread>

#include <fmt/format.h>

#include "sttgcn/error.hpp"
#include "sttgcn/metrics.hpp"

namespace stt::net {

namespace {

// Runs fn(0..count-1) on up to `threads` workers, item c on worker c % threads.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t c = 0; c < count; ++c) fn(c);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < threads; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t c = w; c < count; c += threads) fn(c);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::size_t resolve_threads(std::size_t requested) { return requested == 0 ? threads_from_env() : requested; }

std::size_t to_size(double v, const char* key) {
    if (!(v >= 0) || v != std::floor(v)) throw FormatError(fmt::format("checkpoint key {} is not a count", key));
    return static_cast<std::size_t>(v);
}

} // namespace

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw UsageError("optimizer size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * grads[i];
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * grads[i] * grads[i];
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

std::size_t threads_from_env() {
    const char* s = std::getenv("STT_THREADS");
    if (!s || !*s) return 1;
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (*end != '\0' || v < 0) throw UsageError(fmt::format("STT_THREADS must be a nonnegative integer, got '{}'", s));
    return v <= 1 ? 1 : static_cast<std::size_t>(v);
}

std::size_t chunk_size_for(const ModelConfig& cfg) {
    // Rough count of cached doubles per sample: four tall arrays per conv
    // position plus the dilated and output caches.
    const std::size_t n = cfg.n_nodes, t = cfg.window;
    std::size_t per_sample = t * n * cfg.embed_width() * 2;
    for (auto f : cfg.filters) per_sample += cfg.layers * t * 3 * n * (f + 3 * f);
    per_sample += ModelConfig::dilated_layers * t * n * cfg.dilated_channels * 4;
    per_sample += n * (cfg.feature_width() + 2 * cfg.fc_hidden);
    constexpr std::size_t budget = std::size_t{32} << 20;
    return std::clamp<std::size_t>(budget / std::max<std::size_t>(per_sample, 1), 1, 16);
}

double batch_loss_and_grad(const Model& model, const ModelParams& params, const WindowedDataset& ds,
                           std::span<const std::size_t> samples, ModelParams& grads, std::size_t threads) {
    if (samples.empty()) throw UsageError("empty batch");
    const auto& cfg = model.config();
    const std::size_t chunk = chunk_size_for(cfg);
    const std::size_t n_chunks = (samples.size() + chunk - 1) / chunk;
    const double total = static_cast<double>(samples.size() * cfg.n_nodes * cfg.horizon);

    std::vector<ModelParams> chunk_grads(n_chunks);
    std::vector<double> chunk_loss(n_chunks, 0.0);
    parallel_for(n_chunks, resolve_threads(threads), [&](std::size_t c) {
        const auto part = samples.subspan(c * chunk, std::min(chunk, samples.size() - c * chunk));
        const Batch b = make_batch(ds, part);
        ForwardTrace trace;
        const DenseMatrix pred = model.forward(b.x, b.size, params, &trace);
        DenseMatrix d_pred(pred.rows(), pred.cols());
        double loss = 0.0;
        const double delta = cfg.huber_delta;
        for (Eigen::Index j = 0; j < pred.cols(); ++j)
            for (Eigen::Index i = 0; i < pred.rows(); ++i) {
                const double r = pred(i, j) - b.y(i, j);
                const double a = std::abs(r);
                loss += a <= delta ? 0.5 * r * r : delta * a - 0.5 * delta * delta;
                d_pred(i, j) = huber_grad(r, delta) / total;
            }
        chunk_loss[c] = loss;
        chunk_grads[c] = ModelParams(cfg);
        model.backward(&trace, d_pred, params, chunk_grads[c]);
    });

    double loss = 0.0;
    auto& g = grads.values();
    for (std::size_t c = 0; c < n_chunks; ++c) {
        loss += chunk_loss[c];
        const auto& cg = chunk_grads[c].values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += cg[i];
    }
    return loss / total;
}

std::vector<DenseMatrix> predict(const Model& model, const ModelParams& params, const WindowedDataset& ds,
                                 std::span<const std::size_t> samples, std::size_t threads) {
    const std::size_t chunk = chunk_size_for(model.config());
    const std::size_t n_chunks = (samples.size() + chunk - 1) / chunk;
    std::vector<std::vector<DenseMatrix>> parts(n_chunks);
    parallel_for(n_chunks, resolve_threads(threads), [&](std::size_t c) {
        const auto part = samples.subspan(c * chunk, std::min(chunk, samples.size() - c * chunk));
        const Batch b = make_batch(ds, part);
        parts[c] = unpack_predictions(model.forward(b.x, b.size, params, nullptr), b.size, model.config().n_nodes);
    });
    std::vector<DenseMatrix> out;
    out.reserve(samples.size());
    for (auto& p : parts)
        for (auto& m : p) out.push_back(std::move(m));
    return out;
}

TrainResult train(const WindowedDataset& ds, const DenseMatrix& fusion, const ModelConfig& cfg,
                  const TrainOptions& opts) {
    if (!ds.is_split) throw UsageError("dataset must be split before training");
    if (ds.counts[0] == 0 || ds.counts[1] == 0) throw UsageError("training needs nonempty train and validation splits");
    if (cfg.n_nodes != ds.n_sensors()) {
        throw UsageError(fmt::format("config has {} nodes, dataset has {} sensors", cfg.n_nodes, ds.n_sensors()));
    }
    if (cfg.window != ds.window || cfg.horizon != ds.horizon || cfg.in_features != 1) {
        throw UsageError("config window/horizon/features do not match the dataset");
    }
    const std::size_t threads = resolve_threads(opts.threads);
    const Model model(cfg, fusion, ds.stats);
    ModelParams params = init_params(cfg, cfg.seed);
    ModelParams grads(cfg);
    Adam adam(params.total_count(), cfg.learning_rate);
    std::mt19937_64 rng(cfg.seed + 0x9e3779b97f4a7c15ULL);

    auto order = ds.indices(Split::train);
    const auto val = ds.indices(Split::val);
    std::vector<DenseMatrix> val_targets;
    for (auto s : val) val_targets.push_back(ds.target(s));

    TrainResult res{params, {}};
    res.history.best_val_mae = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto batch = std::span<const std::size_t>(order).subspan(
                start, std::min(cfg.batch_size, order.size() - start));
            grads.set_zero();
            loss_sum += batch_loss_and_grad(model, params, ds, batch, grads, threads) *
                        static_cast<double>(batch.size());
            adam.step(params.values(), grads.values());
        }
        for (double v : params.values())
            if (!std::isfinite(v)) throw NumericalError(fmt::format("parameters diverged in epoch {}", epoch));

        const auto preds = predict(model, params, ds, val, threads);
        const MetricReport rep = compute_report(val_targets, preds);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), rep.aggregate.mae, rep.aggregate.rmse,
                        rep.aggregate.mape};
        res.history.epochs.push_back(rec);
        if (opts.on_epoch) opts.on_epoch(rec);

        if (rec.val_mae < res.history.best_val_mae) {
            res.history.best_val_mae = rec.val_mae;
            res.history.best_epoch = epoch;
            res.params = params;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            res.history.stopped_early = true;
            break;
        }
    }
    return res;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
    io::ensure_parent_dir(path);
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
    out << "epoch,train_loss,val_mae,val_rmse,val_mape\n";
    for (const auto& e : h.epochs) {
        out << e.epoch << ',' << io::format_double(e.train_loss) << ',' << io::format_double(e.val_mae) << ','
            << io::format_double(e.val_rmse) << ',' << io::format_double(e.val_mape) << '\n';
    }
    if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

void write_config(io::Manifest& m, const ModelConfig& cfg) {
    m.set("n_nodes", static_cast<long long>(cfg.n_nodes));
    m.set("in_features", static_cast<long long>(cfg.in_features));
    m.set("window", static_cast<long long>(cfg.window));
    m.set("horizon", static_cast<long long>(cfg.horizon));
    m.set("layers", static_cast<long long>(cfg.layers));
    m.set("filters", std::vector<double>(cfg.filters.begin(), cfg.filters.end()));
    m.set("dilation", static_cast<long long>(cfg.dilation));
    m.set("dilated_channels", static_cast<long long>(cfg.dilated_channels));
    m.set("fc_hidden", static_cast<long long>(cfg.fc_hidden));
    m.set("huber_delta", cfg.huber_delta);
    m.set("learning_rate", cfg.learning_rate);
    m.set("batch_size", static_cast<long long>(cfg.batch_size));
    m.set("max_epochs", static_cast<long long>(cfg.max_epochs));
    m.set("patience", static_cast<long long>(cfg.patience));
    m.set("seed", std::to_string(cfg.seed));
}

ModelConfig read_config(const io::Manifest& m) {
    ModelConfig cfg;
    auto count = [&](const char* key) { return to_size(m.get_double(key), key); };
    cfg.n_nodes = count("n_nodes");
    cfg.in_features = count("in_features");
    cfg.window = count("window");
    cfg.horizon = count("horizon");
    cfg.layers = count("layers");
    cfg.filters.clear();
    for (double f : m.get_doubles("filters")) cfg.filters.push_back(to_size(f, "filters"));
    cfg.dilation = count("dilation");
    cfg.dilated_channels = count("dilated_channels");
    cfg.fc_hidden = count("fc_hidden");
    cfg.huber_delta = m.get_double("huber_delta");
    cfg.learning_rate = m.get_double("learning_rate");
    cfg.batch_size = count("batch_size");
    cfg.max_epochs = count("max_epochs");
    cfg.patience = count("patience");
    std::uint64_t seed = 0;
    if (!io::parse_u64(m.get("seed"), seed)) throw FormatError("checkpoint seed is not an unsigned integer");
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    io::Manifest m;
    m.set("format", std::string("sttgcn-checkpoint-1"));
    write_config(m, ck.config);
    m.set("epoch", static_cast<long long>(ck.epoch));
    m.set("best_val_mae", ck.best_val_mae);
    m.set("param_count", static_cast<long long>(ck.params.total_count()));
    m.set("stats.mean", std::vector<double>(ck.stats.mean.data(), ck.stats.mean.data() + ck.stats.mean.size()));
    m.set("stats.std", std::vector<double>(ck.stats.std.data(), ck.stats.std.data() + ck.stats.std.size()));
    m.set("graph", ck.graph_path);
    const auto params_path = std::filesystem::path(path.string() + ".params.stm");
    m.set("params", params_path.filename().string());
    m.write(path);
    const auto& v = ck.params.values();
    io::write_matrix(params_path, Eigen::Map<const DenseMatrix>(v.data(), static_cast<Eigen::Index>(v.size()), 1));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto m = io::Manifest::read(path);
    if (!m.contains("format") || m.get("format") != "sttgcn-checkpoint-1") {
        throw FormatError(fmt::format("{} is not a checkpoint manifest", path.string()));
    }
    Checkpoint ck;
    ck.config = read_config(m);
    ck.params = ModelParams(ck.config);
    ck.epoch = to_size(m.get_double("epoch"), "epoch");
    ck.best_val_mae = m.get_double("best_val_mae");
    const auto mean = m.get_doubles("stats.mean");
    const auto sd = m.get_doubles("stats.std");
    if (mean.size() != ck.config.n_nodes || sd.size() != ck.config.n_nodes) {
        throw FormatError("checkpoint normalization statistics do not match n_nodes");
    }
    ck.stats.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    ck.stats.std = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    ck.graph_path = m.contains("graph") ? m.get("graph") : "";
    const DenseMatrix flat = io::read_matrix(path.parent_path() / m.get("params"));
    if (flat.size() != static_cast<Eigen::Index>(ck.params.total_count())) {
        throw FormatError(fmt::format("checkpoint holds {} parameters, config needs {}", flat.size(),
                                      ck.params.total_count()));
    }
    std::copy(flat.data(), flat.data() + flat.size(), ck.params.values().begin());
    return ck;
}

} // namespace stt::net
