#include "sttgcn/net/layers.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "sttgcn/error.hpp"

namespace stt::net {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

DenseMatrix sigmoid_of(const DenseMatrix& m) { return m.unaryExpr([](double v) { return sigmoid(v); }); }

void check_cols(const char* what, Index got, Index want) {
    if (got != want) throw UsageError(fmt::format("{}: expected {} columns, got {}", what, want, got));
}

} // namespace

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

DenseMatrix to_wide(const DenseMatrix& tall, std::size_t blocks) {
    const Index r = tall.rows() / idx(blocks);
    const Index c = tall.cols();
    DenseMatrix wide(r, c * idx(blocks));
    for (Index j = 0; j < idx(blocks); ++j) wide.middleCols(j * c, c) = tall.middleRows(j * r, r);
    return wide;
}

DenseMatrix to_tall(const DenseMatrix& wide, std::size_t blocks) {
    const Index r = wide.rows();
    const Index c = wide.cols() / idx(blocks);
    DenseMatrix tall(r * idx(blocks), c);
    for (Index j = 0; j < idx(blocks); ++j) tall.middleRows(j * r, r) = wide.middleCols(j * c, c);
    return tall;
}

// ---- position embedding ----

DenseMatrix position_embed(const DenseMatrix& x, std::size_t steps, std::size_t batch, std::size_t nodes,
                           const EmbedWeights& w) {
    if (x.rows() != idx(steps * batch * nodes)) throw UsageError("position_embed: input row count mismatch");
    check_cols("position_embed input", x.cols(), w.proj_w.rows());
    if (w.temporal.rows() != idx(steps) || w.spatial.rows() != idx(nodes)) {
        throw UsageError("position_embed: embedding tables do not match steps/nodes");
    }
    DenseMatrix out = x * w.proj_w;
    out.rowwise() += w.proj_b.row(0);
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < nodes; ++i) {
                out.row(idx((t * batch + b) * nodes + i)) += w.temporal.row(idx(t)) + w.spatial.row(idx(i));
            }
    return out;
}

void position_embed_backward(const DenseMatrix& x, const DenseMatrix& d_out, std::size_t steps, std::size_t batch,
                             std::size_t nodes, EmbedGrads g) {
    g.proj_w.noalias() += x.transpose() * d_out;
    g.proj_b.row(0) += d_out.colwise().sum();
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t i = 0; i < nodes; ++i) {
                const auto row = d_out.row(idx((t * batch + b) * nodes + i));
                g.temporal.row(idx(t)) += row;
                g.spatial.row(idx(i)) += row;
            }
}

// ---- GLU graph convolution ----

DenseMatrix glu_conv_forward(const DenseMatrix& h_wide, const DenseMatrix& a, const GluWeights& w, std::size_t blocks,
                             GluCache* cache) {
    if (a.rows() != h_wide.rows() || a.cols() != a.rows()) {
        throw UsageError(fmt::format("graph conv: adjacency {}x{} does not match {} block rows", a.rows(), a.cols(),
                                     h_wide.rows()));
    }
    check_cols("graph conv input", h_wide.cols(), w.w1.rows() * idx(blocks));
    const DenseMatrix zw = a * h_wide;
    DenseMatrix z = to_tall(zw, blocks);
    DenseMatrix g1 = z * w.w1;
    g1.rowwise() += w.b1.row(0);
    DenseMatrix g2 = z * w.w2;
    g2.rowwise() += w.b2.row(0);
    DenseMatrix s = sigmoid_of(g2);
    DenseMatrix out = g1.cwiseProduct(s);
    if (cache) {
        cache->z = std::move(z);
        cache->g1 = std::move(g1);
        cache->s = std::move(s);
    }
    return out;
}

DenseMatrix glu_conv_backward(const DenseMatrix& d_out_tall, const DenseMatrix& a, const GluWeights& w,
                              const GluCache& cache, std::size_t blocks, GluGrads g) {
    const DenseMatrix dg1 = d_out_tall.cwiseProduct(cache.s);
    const DenseMatrix dg2 =
        d_out_tall.cwiseProduct(cache.g1).cwiseProduct(cache.s.cwiseProduct((1.0 - cache.s.array()).matrix()));
    g.w1.noalias() += cache.z.transpose() * dg1;
    g.b1.row(0) += dg1.colwise().sum();
    g.w2.noalias() += cache.z.transpose() * dg2;
    g.b2.row(0) += dg2.colwise().sum();
    DenseMatrix dz = dg1 * w.w1.transpose();
    dz.noalias() += dg2 * w.w2.transpose();
    return a.transpose() * to_wide(dz, blocks);
}

DenseMatrix glu_graph_conv(const DenseMatrix& h, const DenseMatrix& a, const GluWeights& w) {
    return glu_conv_forward(h, a, w, 1, nullptr);
}

// ---- STSGCM ----

DenseMatrix stsgcm_forward_blocks(const DenseMatrix& h_wide, const DenseMatrix& a, std::span<const GluWeights> convs,
                                  std::size_t nodes, std::size_t blocks, StsgcmCache* cache) {
    if (convs.empty()) throw UsageError("stsgcm needs at least one convolution");
    if (h_wide.rows() != idx(3 * nodes)) throw UsageError("stsgcm: input must stack 3 steps of N nodes");
    const std::size_t k_count = convs.size();
    if (cache) cache->convs.assign(k_count, {});
    std::vector<DenseMatrix> outs;
    outs.reserve(k_count);
    DenseMatrix input = h_wide;
    for (std::size_t k = 0; k < k_count; ++k) {
        outs.push_back(glu_conv_forward(input, a, convs[k], blocks, cache ? &cache->convs[k] : nullptr));
        if (k + 1 < k_count) input = to_wide(outs.back(), blocks);
    }
    const Index width = outs.front().cols();
    for (const auto& o : outs) check_cols("stsgcm max-pool", o.cols(), width);

    const Index n = idx(nodes);
    DenseMatrix out(idx(blocks) * n, width);
    if (cache) cache->winner.assign(static_cast<std::size_t>(out.size()), 0);
    for (Index c = 0; c < width; ++c)
        for (Index j = 0; j < idx(blocks); ++j)
            for (Index i = 0; i < n; ++i) {
                const Index src = j * 3 * n + n + i;
                std::uint8_t best = 0;
                double v = outs[0](src, c);
                for (std::size_t k = 1; k < k_count; ++k) {
                    if (outs[k](src, c) > v) {
                        v = outs[k](src, c);
                        best = static_cast<std::uint8_t>(k);
                    }
                }
                out(j * n + i, c) = v;
                if (cache) cache->winner[static_cast<std::size_t>(c * out.rows() + j * n + i)] = best;
            }
    return out;
}

DenseMatrix stsgcm_backward_blocks(const DenseMatrix& d_out, const DenseMatrix& a, std::span<const GluWeights> convs,
                                   std::size_t nodes, std::size_t blocks, const StsgcmCache& cache,
                                   std::span<GluGrads> grads) {
    const std::size_t k_count = convs.size();
    if (cache.convs.size() != k_count || grads.size() != k_count) throw UsageError("stsgcm backward: missing cache");
    const Index n = idx(nodes);
    const Index width = d_out.cols();
    std::vector<DenseMatrix> d_outs(k_count, DenseMatrix::Zero(idx(blocks) * 3 * n, width));
    for (Index c = 0; c < width; ++c)
        for (Index j = 0; j < idx(blocks); ++j)
            for (Index i = 0; i < n; ++i) {
                const auto k = cache.winner[static_cast<std::size_t>(c * d_out.rows() + j * n + i)];
                d_outs[k](j * 3 * n + n + i, c) += d_out(j * n + i, c);
            }
    DenseMatrix dh;
    for (std::size_t k = k_count; k-- > 0;) {
        dh = glu_conv_backward(d_outs[k], a, convs[k], cache.convs[k], blocks, grads[k]);
        if (k > 0) d_outs[k - 1] += to_tall(dh, blocks);
    }
    return dh;
}

DenseMatrix stsgcm_forward(const DenseMatrix& x3, const DenseMatrix& a, std::span<const GluWeights> convs) {
    if (x3.rows() % 3 != 0) throw UsageError("stsgcm: input rows must be 3N");
    return stsgcm_forward_blocks(x3, a, convs, static_cast<std::size_t>(x3.rows() / 3), 1, nullptr);
}

// ---- STTGCL ----

DenseMatrix sttgcl_forward(const DenseMatrix& x, std::size_t steps_in, std::size_t batch, std::size_t nodes,
                           const DenseMatrix& a, std::span<const GluWeights> convs, SttgclCache* cache) {
    if (steps_in < 3) throw UsageError(fmt::format("sttgcl needs at least 3 input steps, got {}", steps_in));
    if (x.rows() != idx(steps_in * batch * nodes)) throw UsageError("sttgcl: input row count mismatch");
    const std::size_t positions = steps_in - 2;
    const std::size_t blocks = positions * batch;
    const Index n = idx(nodes);
    const Index c = x.cols();
    DenseMatrix h(3 * n, idx(blocks) * c);
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t b = 0; b < batch; ++b) {
            const Index j = idx(p * batch + b);
            for (std::size_t s = 0; s < 3; ++s) {
                h.block(idx(s) * n, j * c, n, c) = x.middleRows(idx(((p + s) * batch + b) * nodes), n);
            }
        }
    if (cache) cache->steps_in = steps_in;
    return stsgcm_forward_blocks(h, a, convs, nodes, blocks, cache ? &cache->module : nullptr);
}

DenseMatrix sttgcl_backward(const DenseMatrix& d_out, std::size_t batch, std::size_t nodes, const DenseMatrix& a,
                            std::span<const GluWeights> convs, const SttgclCache& cache, std::span<GluGrads> grads) {
    const std::size_t steps_in = cache.steps_in;
    const std::size_t positions = steps_in - 2;
    const std::size_t blocks = positions * batch;
    const DenseMatrix dh = stsgcm_backward_blocks(d_out, a, convs, nodes, blocks, cache.module, grads);
    const Index n = idx(nodes);
    const Index c = dh.cols() / idx(blocks);
    DenseMatrix dx = DenseMatrix::Zero(idx(steps_in * batch) * n, c);
    for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t b = 0; b < batch; ++b) {
            const Index j = idx(p * batch + b);
            for (std::size_t s = 0; s < 3; ++s) {
                dx.middleRows(idx(((p + s) * batch + b) * nodes), n) += dh.block(idx(s) * n, j * c, n, c);
            }
        }
    return dx;
}

// ---- dilated convolution ----

DenseMatrix dilated_layer_forward(const DenseMatrix& x, std::size_t steps, std::size_t rows_per_step,
                                  std::size_t dilation, const DilatedWeights& w, DilatedCache* cache) {
    if (steps <= dilation) {
        throw UsageError(fmt::format("dilated conv: {} steps cannot cover dilation {}", steps, dilation));
    }
    if (x.rows() != idx(steps * rows_per_step)) throw UsageError("dilated conv: input row count mismatch");
    check_cols("dilated conv input", x.cols(), w.wv0.rows());
    const Index out_rows = idx((steps - dilation) * rows_per_step);
    const auto lo = x.topRows(out_rows);
    const auto hi = x.middleRows(idx(dilation * rows_per_step), out_rows);
    DenseMatrix v = lo * w.wv0;
    v.noalias() += hi * w.wv1;
    v.rowwise() += w.bv.row(0);
    DenseMatrix gate = lo * w.wg0;
    gate.noalias() += hi * w.wg1;
    gate.rowwise() += w.bg.row(0);
    DenseMatrix s = sigmoid_of(gate);
    DenseMatrix out = v.cwiseProduct(s);
    if (cache) {
        cache->input = x;
        cache->v = std::move(v);
        cache->s = std::move(s);
        cache->steps_in = steps;
    }
    return out;
}

DenseMatrix dilated_layer_backward(const DenseMatrix& d_out, std::size_t rows_per_step, std::size_t dilation,
                                   const DilatedWeights& w, const DilatedCache& cache, DilatedGrads g) {
    const Index out_rows = d_out.rows();
    const auto lo = cache.input.topRows(out_rows);
    const auto hi = cache.input.middleRows(idx(dilation * rows_per_step), out_rows);
    const DenseMatrix dv = d_out.cwiseProduct(cache.s);
    const DenseMatrix dg =
        d_out.cwiseProduct(cache.v).cwiseProduct(cache.s.cwiseProduct((1.0 - cache.s.array()).matrix()));
    g.wv0.noalias() += lo.transpose() * dv;
    g.wv1.noalias() += hi.transpose() * dv;
    g.bv.row(0) += dv.colwise().sum();
    g.wg0.noalias() += lo.transpose() * dg;
    g.wg1.noalias() += hi.transpose() * dg;
    g.bg.row(0) += dg.colwise().sum();
    DenseMatrix dx = DenseMatrix::Zero(cache.input.rows(), cache.input.cols());
    dx.topRows(out_rows).noalias() += dv * w.wv0.transpose();
    dx.topRows(out_rows).noalias() += dg * w.wg0.transpose();
    dx.middleRows(idx(dilation * rows_per_step), out_rows).noalias() += dv * w.wv1.transpose();
    dx.middleRows(idx(dilation * rows_per_step), out_rows).noalias() += dg * w.wg1.transpose();
    return dx;
}

DenseMatrix dilated_conv_forward(const DenseMatrix& x, std::size_t steps, std::size_t rows_per_step,
                                 std::size_t dilation, std::span<const DilatedWeights> layers,
                                 std::vector<DilatedCache>* caches) {
    if (caches) caches->assign(layers.size(), {});
    DenseMatrix h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        h = dilated_layer_forward(h, steps, rows_per_step, dilation, layers[l], caches ? &(*caches)[l] : nullptr);
        steps -= dilation;
    }
    return h;
}

// ---- output block ----

DenseMatrix output_block(const DenseMatrix& stt, std::size_t stt_steps, const DenseMatrix& dil, std::size_t dil_steps,
                         std::size_t rows, const OutputWeights& w, OutputCache* cache) {
    if (stt.rows() != idx(stt_steps * rows) || dil.rows() != idx(dil_steps * rows)) {
        throw UsageError("output block: branch shapes do not match their step counts");
    }
    const std::size_t crop = std::min(stt_steps, dil_steps);
    const Index cs = stt.cols(), cd = dil.cols(), width = cs + cd, r = idx(rows);
    if (w.fc1_w.rows() != idx(crop) * width) {
        throw UsageError(fmt::format("output block: fc1 expects {} features, got {}", w.fc1_w.rows(),
                                     idx(crop) * width));
    }
    DenseMatrix f(r, idx(crop) * width);
    for (std::size_t t = 0; t < crop; ++t) {
        f.block(0, idx(t) * width, r, cs) = stt.middleRows(idx(stt_steps - crop + t) * r, r);
        f.block(0, idx(t) * width + cs, r, cd) = dil.middleRows(idx(dil_steps - crop + t) * r, r);
    }
    DenseMatrix pre = f * w.fc1_w;
    pre.rowwise() += w.fc1_b.row(0);
    DenseMatrix hidden = pre.cwiseMax(0.0);
    DenseMatrix out = hidden * w.fc2_w;
    out.rowwise() += w.fc2_b.row(0);
    if (cache) {
        cache->features = std::move(f);
        cache->hidden_pre = std::move(pre);
        cache->hidden = std::move(hidden);
        cache->stt_steps = stt_steps;
        cache->dil_steps = dil_steps;
        cache->crop = crop;
        cache->stt_width = cs;
    }
    return out;
}

std::pair<DenseMatrix, DenseMatrix> output_block_backward(const DenseMatrix& d_out, std::size_t rows,
                                                          const OutputWeights& w, const OutputCache& cache,
                                                          OutputGrads g) {
    g.fc2_w.noalias() += cache.hidden.transpose() * d_out;
    g.fc2_b.row(0) += d_out.colwise().sum();
    DenseMatrix dh = d_out * w.fc2_w.transpose();
    dh = dh.cwiseProduct((cache.hidden_pre.array() > 0.0).cast<double>().matrix());
    g.fc1_w.noalias() += cache.features.transpose() * dh;
    g.fc1_b.row(0) += dh.colwise().sum();
    const DenseMatrix df = dh * w.fc1_w.transpose();

    const Index r = idx(rows);
    const Index width = df.cols() / idx(cache.crop);
    const Index stt_width = cache.stt_width;
    const Index dil_width = width - stt_width;
    DenseMatrix d_stt = DenseMatrix::Zero(idx(cache.stt_steps) * r, stt_width);
    DenseMatrix d_dil = DenseMatrix::Zero(idx(cache.dil_steps) * r, dil_width);
    for (std::size_t t = 0; t < cache.crop; ++t) {
        d_stt.middleRows(idx(cache.stt_steps - cache.crop + t) * r, r) = df.block(0, idx(t) * width, r, stt_width);
        d_dil.middleRows(idx(cache.dil_steps - cache.crop + t) * r, r) =
            df.block(0, idx(t) * width + stt_width, r, dil_width);
    }
    return {std::move(d_stt), std::move(d_dil)};
}

// ---- loss ----

double huber_loss(std::span<const double> y, std::span<const double> pred, double delta) {
    if (y.size() != pred.size() || y.empty()) throw UsageError("huber_loss: shape mismatch");
    if (!(delta > 0)) throw UsageError("huber_loss: delta must be positive");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = std::abs(pred[i] - y[i]);
        s += r <= delta ? 0.5 * r * r : delta * r - 0.5 * delta * delta;
    }
    return s / static_cast<double>(y.size());
}

double huber_grad(double residual, double delta) {
    if (std::abs(residual) <= delta) return residual;
    return residual > 0 ? delta : -delta;
}

} // namespace stt::net
