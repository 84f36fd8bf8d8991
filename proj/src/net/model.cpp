#include "sttgcn/net/model.hpp"

#include <fmt/format.h>

#include "sttgcn/error.hpp"

namespace stt::net {

namespace {

using Index = Eigen::Index;

std::vector<GluWeights> conv_weights(const ModelParams& p, const std::vector<ConvSlots>& slots) {
    std::vector<GluWeights> out;
    for (const auto& s : slots) out.push_back({p.map(s.w1), p.map(s.b1), p.map(s.w2), p.map(s.b2)});
    return out;
}

std::vector<GluGrads> conv_grads(ModelParams& g, const std::vector<ConvSlots>& slots) {
    std::vector<GluGrads> out;
    for (const auto& s : slots) out.push_back({g.map(s.w1), g.map(s.b1), g.map(s.w2), g.map(s.b2)});
    return out;
}

std::vector<DilatedWeights> dilated_weights(const ModelParams& p) {
    std::vector<DilatedWeights> out;
    for (const auto& s : p.layout().dilated) {
        out.push_back({p.map(s.wv0), p.map(s.wv1), p.map(s.bv), p.map(s.wg0), p.map(s.wg1), p.map(s.bg)});
    }
    return out;
}

DilatedGrads dilated_grads(ModelParams& g, const DilatedSlots& s) {
    return {g.map(s.wv0), g.map(s.wv1), g.map(s.bv), g.map(s.wg0), g.map(s.wg1), g.map(s.bg)};
}

OutputWeights output_weights(const ModelParams& p) {
    const auto& L = p.layout();
    return {p.map(L.fc1_w), p.map(L.fc1_b), p.map(L.fc2_w), p.map(L.fc2_b)};
}

} // namespace

Model::Model(ModelConfig cfg, DenseMatrix fusion, NormStats stats)
    : cfg_(std::move(cfg)), a_(std::move(fusion)), stats_(std::move(stats)) {
    cfg_.validate();
    const auto n3 = static_cast<Index>(3 * cfg_.n_nodes);
    if (a_.rows() != n3 || a_.cols() != n3) {
        throw UsageError(fmt::format("fusion graph is {}x{}, model expects {}x{}", a_.rows(), a_.cols(), n3, n3));
    }
    if (stats_.mean.size() != static_cast<Index>(cfg_.n_nodes) ||
        stats_.std.size() != static_cast<Index>(cfg_.n_nodes)) {
        throw UsageError("normalization statistics do not match the node count");
    }
}

DenseMatrix Model::forward(const DenseMatrix& x, std::size_t batch, const ModelParams& p, ForwardTrace* trace) const {
    const std::size_t n = cfg_.n_nodes, t = cfg_.window;
    if (batch == 0 || x.rows() != static_cast<Index>(t * batch * n) || x.cols() != static_cast<Index>(cfg_.in_features)) {
        throw UsageError(fmt::format("model input is {}x{}, expected {}x{}", x.rows(), x.cols(), t * batch * n,
                                     cfg_.in_features));
    }
    if (p.total_count() != ParamLayout(cfg_).total()) throw UsageError("parameter vector does not match the config");
    const auto& L = p.layout();

    const EmbedWeights ew{p.map(L.proj_w), p.map(L.proj_b), p.map(L.temporal), p.map(L.spatial)};
    DenseMatrix emb = position_embed(x, t, batch, n, ew);

    if (trace) {
        trace->stt.assign(cfg_.layers, {});
        trace->dilated.clear();
    }
    DenseMatrix h = emb;
    std::size_t steps = t;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const auto convs = conv_weights(p, L.stt[l]);
        h = sttgcl_forward(h, steps, batch, n, a_, convs, trace ? &trace->stt[l] : nullptr);
        steps -= 2;
    }

    const auto dw = dilated_weights(p);
    DenseMatrix d = dilated_conv_forward(emb, t, batch * n, cfg_.dilation, dw, trace ? &trace->dilated : nullptr);

    const std::size_t rows = batch * n;
    DenseMatrix out = output_block(h, cfg_.stt_steps(), d, cfg_.dilated_steps(), rows, output_weights(p),
                                   trace ? &trace->output : nullptr);

    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n; ++i) {
            auto row = out.row(static_cast<Index>(b * n + i));
            row = row * stats_.std(static_cast<Index>(i)) + Eigen::RowVectorXd::Constant(row.size(), stats_.mean(static_cast<Index>(i)));
        }

    if (trace) {
        trace->valid = true;
        trace->batch = batch;
        trace->input = x;
        trace->embedded = std::move(emb);
        trace->stt_out = std::move(h);
        trace->dil_out = std::move(d);
    }
    return out;
}

void Model::backward(const ForwardTrace* trace, const DenseMatrix& d_pred, const ModelParams& p,
                     ModelParams& grads) const {
    if (!trace || !trace->valid) throw UsageError("backward needs the trace of a forward pass");
    const std::size_t n = cfg_.n_nodes, batch = trace->batch, rows = batch * n;
    if (d_pred.rows() != static_cast<Index>(rows) || d_pred.cols() != static_cast<Index>(cfg_.horizon)) {
        throw UsageError("prediction gradient shape does not match the trace");
    }
    if (grads.total_count() != p.total_count()) throw UsageError("gradient container does not match the parameters");
    const auto& L = p.layout();

    DenseMatrix d_out = d_pred;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n; ++i) d_out.row(static_cast<Index>(b * n + i)) *= stats_.std(static_cast<Index>(i));

    OutputGrads og{grads.map(L.fc1_w), grads.map(L.fc1_b), grads.map(L.fc2_w), grads.map(L.fc2_b)};
    auto [d_stt, d_dil] = output_block_backward(d_out, rows, output_weights(p), trace->output, og);

    // Dilated branch back to the embedding.
    const auto dw = dilated_weights(p);
    DenseMatrix d_emb = std::move(d_dil);
    for (std::size_t l = dw.size(); l-- > 0;) {
        d_emb = dilated_layer_backward(d_emb, rows, cfg_.dilation, dw[l], trace->dilated[l],
                                       dilated_grads(grads, L.dilated[l]));
    }

    DenseMatrix d_h = std::move(d_stt);
    for (std::size_t l = cfg_.layers; l-- > 0;) {
        const auto convs = conv_weights(p, L.stt[l]);
        auto cg = conv_grads(grads, L.stt[l]);
        d_h = sttgcl_backward(d_h, batch, n, a_, convs, trace->stt[l], cg);
    }
    d_emb += d_h;

    EmbedGrads eg{grads.map(L.proj_w), grads.map(L.proj_b), grads.map(L.temporal), grads.map(L.spatial)};
    position_embed_backward(trace->input, d_emb, cfg_.window, batch, n, eg);
}

Batch make_batch(const WindowedDataset& ds, std::span<const std::size_t> samples) {
    if (!ds.is_split) throw UsageError("dataset must be split (normalized) before batching");
    const std::size_t b_count = samples.size(), n = ds.n_sensors(), t = ds.window, h = ds.horizon;
    Batch out;
    out.size = b_count;
    out.x.resize(static_cast<Index>(t * b_count * n), 1);
    out.y.resize(static_cast<Index>(b_count * n), static_cast<Index>(h));
    for (std::size_t b = 0; b < b_count; ++b) {
        const std::size_t start = ds.starts.at(samples[b]);
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t i = 0; i < n; ++i) {
                out.x(static_cast<Index>((s * b_count + b) * n + i), 0) =
                    ds.normalized(static_cast<Index>(start + s), static_cast<Index>(i));
            }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < h; ++k) {
                out.y(static_cast<Index>(b * n + i), static_cast<Index>(k)) =
                    ds.raw(static_cast<Index>(start + t + k), static_cast<Index>(i));
            }
    }
    return out;
}

std::vector<DenseMatrix> unpack_predictions(const DenseMatrix& pred, std::size_t batch, std::size_t nodes) {
    std::vector<DenseMatrix> out;
    out.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        out.push_back(pred.middleRows(static_cast<Index>(b * nodes), static_cast<Index>(nodes)).transpose());
    }
    return out;
}

} // namespace stt::net
