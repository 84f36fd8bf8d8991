#pragma once

#include <span>
#include <vector>

#include "sttgcn/data_io.hpp"
#include "sttgcn/net/layers.hpp"
#include "sttgcn/net/params.hpp"

namespace stt::net {

// Activations kept by Model::forward for the reverse pass.
struct ForwardTrace {
    bool valid = false;
    std::size_t batch = 0;
    DenseMatrix input;     // (T*B*N) x C
    DenseMatrix embedded;  // (T*B*N) x C0
    std::vector<SttgclCache> stt;
    std::vector<DilatedCache> dilated;
    DenseMatrix stt_out, dil_out;
    OutputCache output;
};

// STTGCN forward/backward over a fixed fusion graph and normalization.
//
// Inputs are normalized, time-major: row ((t*B + b)*N + i). Predictions are
// returned on the raw scale as a (B*N) x horizon matrix, row b*N + i.
class Model {
public:
    Model(ModelConfig cfg, DenseMatrix fusion, NormStats stats);

    const ModelConfig& config() const { return cfg_; }
    const DenseMatrix& fusion() const { return a_; }
    const NormStats& stats() const { return stats_; }

    DenseMatrix forward(const DenseMatrix& x, std::size_t batch, const ModelParams& p, ForwardTrace* trace) const;

    // Accumulates d loss / d params into `grads` given d loss / d predictions.
    void backward(const ForwardTrace* trace, const DenseMatrix& d_pred, const ModelParams& p,
                  ModelParams& grads) const;

private:
    ModelConfig cfg_;
    DenseMatrix a_;
    NormStats stats_;
};

// Packs samples into model layout: x is (T*B*N) x 1 normalized input and
// y is (B*N) x horizon raw target.
struct Batch {
    DenseMatrix x;
    DenseMatrix y;
    std::size_t size = 0;
};

Batch make_batch(const WindowedDataset& ds, std::span<const std::size_t> samples);

// Row b*N + i of a (B*N) x H block back to one H x N matrix per sample.
std::vector<DenseMatrix> unpack_predictions(const DenseMatrix& pred, std::size_t batch, std::size_t nodes);

} // namespace stt::net
