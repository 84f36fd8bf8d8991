#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "sttgcn/net/params.hpp"
#include "sttgcn/tensor_core.hpp"

// Building blocks of the forecaster with their reverse-mode passes.
//
// Sequences are stored time-major: a (steps * batch * nodes) x channels
// matrix whose row ((t * batch + b) * nodes + i) holds node i of sample b at
// step t. Graph convolutions work on "blocks", one per (position, sample)
// pair; a block is the 3N x C stack of three consecutive steps, node i of
// step s at row s*N + i. Blocks are kept either tall (blocks stacked along
// rows) or wide (blocks side by side along columns) so that both the
// adjacency product and the weight product are single GEMMs.
namespace stt::net {

using WeightRef = Eigen::Ref<const RowMat>;
using GradRef = Eigen::Ref<RowMat>;

DenseMatrix to_wide(const DenseMatrix& tall, std::size_t blocks);
DenseMatrix to_tall(const DenseMatrix& wide, std::size_t blocks);

double sigmoid(double x);

// ---- position embedding ----

struct EmbedWeights {
    WeightRef proj_w;    // C x C0
    WeightRef proj_b;    // 1 x C0
    WeightRef temporal;  // T x C0
    WeightRef spatial;   // N x C0
};

struct EmbedGrads {
    GradRef proj_w, proj_b, temporal, spatial;
};

// x: (T*B*N) x C  ->  (T*B*N) x C0
DenseMatrix position_embed(const DenseMatrix& x, std::size_t steps, std::size_t batch, std::size_t nodes,
                           const EmbedWeights& w);
void position_embed_backward(const DenseMatrix& x, const DenseMatrix& d_out, std::size_t steps, std::size_t batch,
                             std::size_t nodes, EmbedGrads g);

// ---- GLU graph convolution ----

struct GluWeights {
    WeightRef w1, b1, w2, b2;
};

struct GluGrads {
    GradRef w1, b1, w2, b2;
};

struct GluCache {
    DenseMatrix z;   // A' h, tall
    DenseMatrix g1;  // linear path, tall
    DenseMatrix s;   // sigmoid of gate path, tall
};

// (A' h W1 + b1) * sigmoid(A' h W2 + b2) for a single 3N x C block.
DenseMatrix glu_graph_conv(const DenseMatrix& h, const DenseMatrix& a, const GluWeights& w);

// h_wide: 3N x (blocks*C). Returns the tall (blocks*3N) x C' output.
DenseMatrix glu_conv_forward(const DenseMatrix& h_wide, const DenseMatrix& a, const GluWeights& w, std::size_t blocks,
                             GluCache* cache);
// Returns d h in wide layout and accumulates weight gradients.
DenseMatrix glu_conv_backward(const DenseMatrix& d_out_tall, const DenseMatrix& a, const GluWeights& w,
                              const GluCache& cache, std::size_t blocks, GluGrads g);

// ---- spatial-temporal synchronous module ----

struct StsgcmCache {
    std::vector<GluCache> convs;
    std::vector<std::uint8_t> winner;  // argmax conv per (middle row, channel)
};

// Stacked GLU convolutions over wide input blocks, elementwise max across
// their outputs, cropped to the middle step: returns (blocks*N) x C'.
DenseMatrix stsgcm_forward_blocks(const DenseMatrix& h_wide, const DenseMatrix& a, std::span<const GluWeights> convs,
                                  std::size_t nodes, std::size_t blocks, StsgcmCache* cache);
DenseMatrix stsgcm_backward_blocks(const DenseMatrix& d_out, const DenseMatrix& a, std::span<const GluWeights> convs,
                                   std::size_t nodes, std::size_t blocks, const StsgcmCache& cache,
                                   std::span<GluGrads> grads);

// Single-block convenience form: x3 is 3N x C, result N x C'.
DenseMatrix stsgcm_forward(const DenseMatrix& x3, const DenseMatrix& a, std::span<const GluWeights> convs);

// ---- STTGCL: one shared module slid over every triple of steps ----

struct SttgclCache {
    StsgcmCache module;
    std::size_t steps_in = 0;
};

// x: (T_in*B*N) x C  ->  ((T_in-2)*B*N) x C'
DenseMatrix sttgcl_forward(const DenseMatrix& x, std::size_t steps_in, std::size_t batch, std::size_t nodes,
                           const DenseMatrix& a, std::span<const GluWeights> convs, SttgclCache* cache);
DenseMatrix sttgcl_backward(const DenseMatrix& d_out, std::size_t batch, std::size_t nodes, const DenseMatrix& a,
                            std::span<const GluWeights> convs, const SttgclCache& cache, std::span<GluGrads> grads);

// ---- dilated temporal convolution ----

struct DilatedWeights {
    WeightRef wv0, wv1, bv, wg0, wg1, bg;
};

struct DilatedGrads {
    GradRef wv0, wv1, bv, wg0, wg1, bg;
};

struct DilatedCache {
    DenseMatrix input;
    DenseMatrix v;  // value path
    DenseMatrix s;  // sigmoid of gate path
    std::size_t steps_in = 0;
};

// Valid (unpadded) kernel-2 convolution along time with dilation d, GLU gated:
// out_t = (x_t Wv0 + x_{t+d} Wv1 + bv) * sigmoid(x_t Wg0 + x_{t+d} Wg1 + bg).
// x: (T*R) x C with R rows per step; output ((T-d)*R) x C_d.
DenseMatrix dilated_layer_forward(const DenseMatrix& x, std::size_t steps, std::size_t rows_per_step,
                                  std::size_t dilation, const DilatedWeights& w, DilatedCache* cache);
DenseMatrix dilated_layer_backward(const DenseMatrix& d_out, std::size_t rows_per_step, std::size_t dilation,
                                   const DilatedWeights& w, const DilatedCache& cache, DilatedGrads g);

// Stack of dilated layers; caches (if given) must have one entry per layer.
DenseMatrix dilated_conv_forward(const DenseMatrix& x, std::size_t steps, std::size_t rows_per_step,
                                 std::size_t dilation, std::span<const DilatedWeights> layers,
                                 std::vector<DilatedCache>* caches);

// ---- output block ----

struct OutputWeights {
    WeightRef fc1_w, fc1_b, fc2_w, fc2_b;
};

struct OutputGrads {
    GradRef fc1_w, fc1_b, fc2_w, fc2_b;
};

struct OutputCache {
    DenseMatrix features;  // rows x T_min*(C'+C_d)
    DenseMatrix hidden_pre;
    DenseMatrix hidden;
    std::size_t stt_steps = 0, dil_steps = 0, crop = 0;
    Eigen::Index stt_width = 0;
};

// Crops both branches to their latest common steps, concatenates channels,
// flattens (step, channel) per row, then FC -> ReLU -> FC. rows = B*N.
DenseMatrix output_block(const DenseMatrix& stt, std::size_t stt_steps, const DenseMatrix& dil, std::size_t dil_steps,
                         std::size_t rows, const OutputWeights& w, OutputCache* cache);
// Returns {d stt, d dil}.
std::pair<DenseMatrix, DenseMatrix> output_block_backward(const DenseMatrix& d_out, std::size_t rows,
                                                          const OutputWeights& w, const OutputCache& cache,
                                                          OutputGrads g);

// ---- loss ----

// Mean over elements of: r^2/2 if |r| <= delta, delta*|r| - delta^2/2 otherwise.
double huber_loss(std::span<const double> y, std::span<const double> pred, double delta);
// d/d pred of the pointwise loss; |r| == delta takes the squared branch.
double huber_grad(double residual, double delta);

} // namespace stt::net
