#include "sttgcn/net/params.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "sttgcn/error.hpp"

namespace stt::net {

std::size_t ModelConfig::crop_steps() const { return std::min(stt_steps(), dilated_steps()); }

void ModelConfig::validate() const {
    if (n_nodes == 0 || in_features == 0 || window == 0 || horizon == 0 || layers == 0 || dilation == 0 ||
        dilated_channels == 0 || fc_hidden == 0 || batch_size == 0 || max_epochs == 0) {
        throw UsageError("model dimensions must all be positive");
    }
    if (filters.empty() || std::any_of(filters.begin(), filters.end(), [](auto f) { return f == 0; })) {
        throw UsageError("filters must be a nonempty list of positive widths");
    }
    if (std::any_of(filters.begin(), filters.end(), [&](auto f) { return f != filters.front(); })) {
        throw UsageError("max-pool aggregation needs equal filter widths in every stacked convolution");
    }
    if (window < 2 * layers + 1) {
        throw UsageError(fmt::format("window {} is too short for {} layers (each removes 2 steps)", window, layers));
    }
    if (window < dilated_layers * (kernel - 1) * dilation + 1) {
        throw UsageError(fmt::format("window {} is shorter than the dilated receptive field", window));
    }
    if (!(huber_delta > 0)) throw UsageError("huber_delta must be positive");
    if (!(learning_rate >= 0)) throw UsageError("learning_rate must be nonnegative");
}

std::size_t ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
    slots_.push_back({std::move(name), total_, rows, cols});
    total_ += rows * cols;
    return slots_.size() - 1;
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t c0 = cfg.embed_width();
    proj_w = add("embed.proj_w", cfg.in_features, c0);
    proj_b = add("embed.proj_b", 1, c0);
    temporal = add("embed.temporal", cfg.window, c0);
    spatial = add("embed.spatial", cfg.n_nodes, c0);

    std::size_t width = c0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        auto& layer = stt.emplace_back();
        for (std::size_t k = 0; k < cfg.filters.size(); ++k) {
            const std::size_t out = cfg.filters[k];
            const auto p = fmt::format("stt{}.conv{}.", l, k);
            ConvSlots s{};
            s.w1 = add(p + "w1", width, out);
            s.b1 = add(p + "b1", 1, out);
            s.w2 = add(p + "w2", width, out);
            s.b2 = add(p + "b2", 1, out);
            layer.push_back(s);
            width = out;
        }
    }

    std::size_t din = c0;
    const std::size_t cd = cfg.dilated_channels;
    for (std::size_t l = 0; l < ModelConfig::dilated_layers; ++l) {
        const auto p = fmt::format("dilated{}.", l);
        DilatedSlots s{};
        s.wv0 = add(p + "wv0", din, cd);
        s.wv1 = add(p + "wv1", din, cd);
        s.bv = add(p + "bv", 1, cd);
        s.wg0 = add(p + "wg0", din, cd);
        s.wg1 = add(p + "wg1", din, cd);
        s.bg = add(p + "bg", 1, cd);
        dilated.push_back(s);
        din = cd;
    }

    fc1_w = add("out.fc1_w", cfg.feature_width(), cfg.fc_hidden);
    fc1_b = add("out.fc1_b", 1, cfg.fc_hidden);
    fc2_w = add("out.fc2_w", cfg.fc_hidden, cfg.horizon);
    fc2_b = add("out.fc2_b", 1, cfg.horizon);
}

std::size_t closed_form_param_count(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t c0 = cfg.embed_width();
    std::size_t total = cfg.in_features * c0 + c0 + cfg.window * c0 + cfg.n_nodes * c0;
    // Layer inputs: c0 for the first conv of layer 0, previous width otherwise.
    std::size_t conv_in_sum = c0 + (cfg.filters.size() - 1) * cfg.filters.front();
    std::size_t out_sum = 0;
    for (auto f : cfg.filters) out_sum += f;
    const std::size_t first_layer = 2 * (conv_in_sum * cfg.filters.front() + out_sum);
    const std::size_t other_layer = 2 * (cfg.filters.size() * cfg.filters.front() * cfg.filters.front() + out_sum);
    total += first_layer + (cfg.layers - 1) * other_layer;
    const std::size_t cd = cfg.dilated_channels;
    total += 4 * c0 * cd + 2 * cd + 4 * cd * cd + 2 * cd;
    total += cfg.feature_width() * cfg.fc_hidden + cfg.fc_hidden + cfg.fc_hidden * cfg.horizon + cfg.horizon;
    return total;
}

ModelParams::ModelParams(const ModelConfig& cfg) : layout_(cfg), values_(layout_.total(), 0.0) {}

ParamMap ModelParams::map(std::size_t slot) {
    const auto& s = layout_.slots().at(slot);
    return ParamMap(values_.data() + s.offset, static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols));
}

ConstParamMap ModelParams::map(std::size_t slot) const {
    const auto& s = layout_.slots().at(slot);
    return ConstParamMap(values_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                         static_cast<Eigen::Index>(s.cols));
}

void ModelParams::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p(cfg);
    std::mt19937_64 rng(seed);
    const auto& L = p.layout();
    auto xavier = [&](std::size_t slot, std::size_t fan_in, std::size_t fan_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        auto m = p.map(slot);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    };
    auto dense = [&](std::size_t slot) {
        const auto& s = L.slots()[slot];
        xavier(slot, s.rows, s.cols);
    };
    dense(L.proj_w);
    for (const auto& layer : L.stt)
        for (const auto& c : layer) {
            dense(c.w1);
            dense(c.w2);
        }
    for (const auto& d : L.dilated) {
        const auto& s = L.slots()[d.wv0];
        for (auto slot : {d.wv0, d.wv1, d.wg0, d.wg1}) xavier(slot, ModelConfig::kernel * s.rows, s.cols);
    }
    dense(L.fc1_w);
    dense(L.fc2_w);
    return p;
}

} // namespace stt::net
