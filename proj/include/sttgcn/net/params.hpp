#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sttgcn/net/config.hpp"

namespace stt::net {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ParamMap = Eigen::Map<RowMat>;
using ConstParamMap = Eigen::Map<const RowMat>;

struct ParamSlot {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
};

struct ConvSlots {
    std::size_t w1, b1, w2, b2;
};

struct DilatedSlots {
    std::size_t wv0, wv1, bv, wg0, wg1, bg;
};

// Flat parameter enumeration. Every slot is a row-major (rows x cols) block of
// the flat vector, biases are 1 x width. Order:
//   embed.proj_w (C x C0), embed.proj_b, embed.temporal (T x C0),
//   embed.spatial (N x C0),
//   for each STT layer l, for each stacked conv k: w1, b1, w2, b2,
//   for each dilated layer: wv0, wv1, bv, wg0, wg1, bg  (tap 0 reads step t,
//   tap 1 reads step t + d),
//   fc1_w (T_min*(C'+C_d) x hidden), fc1_b, fc2_w (hidden x horizon), fc2_b.
class ParamLayout {
public:
    ParamLayout() = default;
    explicit ParamLayout(const ModelConfig& cfg);

    const std::vector<ParamSlot>& slots() const { return slots_; }
    std::size_t total() const { return total_; }

    std::size_t proj_w = 0, proj_b = 0, temporal = 0, spatial = 0;
    std::vector<std::vector<ConvSlots>> stt;
    std::vector<DilatedSlots> dilated;
    std::size_t fc1_w = 0, fc1_b = 0, fc2_w = 0, fc2_b = 0;

private:
    std::size_t add(std::string name, std::size_t rows, std::size_t cols);

    std::vector<ParamSlot> slots_;
    std::size_t total_ = 0;
};

// Parameter count from the layer sizes alone, without building a layout.
std::size_t closed_form_param_count(const ModelConfig& cfg);

// Learnable arrays of the forecaster; also used as the gradient container.
class ModelParams {
public:
    ModelParams() = default;
    explicit ModelParams(const ModelConfig& cfg);

    const ParamLayout& layout() const { return layout_; }
    std::size_t total_count() const { return values_.size(); }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    ParamMap map(std::size_t slot);
    ConstParamMap map(std::size_t slot) const;

    void set_zero();

private:
    ParamLayout layout_;
    std::vector<double> values_;
};

// Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases and embeddings.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

} // namespace stt::net
