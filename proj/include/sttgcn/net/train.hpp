#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sttgcn/io.hpp"
#include "sttgcn/net/model.hpp"

namespace stt::net {

// Adam with the usual bias correction.
class Adam {
public:
    Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(std::vector<double>& params, const std::vector<double>& grads);
    std::size_t steps() const { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    std::size_t t_ = 0;
    std::vector<double> m_, v_;
};

// Worker threads from STT_THREADS; unset, 0 and 1 all mean one thread.
std::size_t threads_from_env();

// Samples processed per forward/backward call. Depends on the model shape
// only, so gradient sums are identical for every thread count.
std::size_t chunk_size_for(const ModelConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_mae = 0.0;
    double val_rmse = 0.0;
    double val_mape = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_mae = 0.0;
    bool stopped_early = false;
};

struct TrainOptions {
    std::size_t threads = 0;  // 0: threads_from_env()
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    ModelParams params;  // best validation MAE
    TrainHistory history;
};

// Mean Huber loss of the batch and its gradient, accumulated into grads.
double batch_loss_and_grad(const Model& model, const ModelParams& params, const WindowedDataset& ds,
                           std::span<const std::size_t> samples, ModelParams& grads, std::size_t threads);

TrainResult train(const WindowedDataset& ds, const DenseMatrix& fusion, const ModelConfig& cfg,
                  const TrainOptions& opts = {});

// One horizon x sensors matrix per sample, raw scale.
std::vector<DenseMatrix> predict(const Model& model, const ModelParams& params, const WindowedDataset& ds,
                                 std::span<const std::size_t> samples, std::size_t threads = 0);

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h);

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    NormStats stats;
    std::size_t epoch = 0;
    double best_val_mae = 0.0;
    std::string graph_path;
};

// `path` gets the manifest; the flat parameter vector goes to path + ".params.stm".
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_config(io::Manifest& m, const ModelConfig& cfg);
ModelConfig read_config(const io::Manifest& m);

} // namespace stt::net
