#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace stt::net {

struct ModelConfig {
    std::size_t n_nodes = 0;
    std::size_t in_features = 1;
    std::size_t window = 12;
    std::size_t horizon = 12;
    std::size_t layers = 4;                        // STTGCLs, each crops 2 steps
    std::vector<std::size_t> filters{64, 64, 64};  // stacked graph convolutions per module
    std::size_t dilation = 2;
    std::size_t dilated_channels = 64;
    std::size_t fc_hidden = 128;
    double huber_delta = 1.0;
    double learning_rate = 0.003;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 5000;
    std::size_t patience = 30;
    std::uint64_t seed = 0;

    static constexpr std::size_t kernel = 2;
    static constexpr std::size_t dilated_layers = 2;

    std::size_t embed_width() const { return filters.empty() ? 0 : filters.front(); }
    std::size_t stt_width() const { return filters.empty() ? 0 : filters.back(); }
    std::size_t stt_steps() const { return window - 2 * layers; }
    std::size_t dilated_steps() const { return window - dilated_layers * (kernel - 1) * dilation; }
    std::size_t crop_steps() const;
    std::size_t feature_width() const { return crop_steps() * (stt_width() + dilated_channels); }

    // Throws UsageError when shapes cannot work.
    void validate() const;
};

} // namespace stt::net
