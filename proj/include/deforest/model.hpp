#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "deforest/dataset.hpp"
#include "deforest/grid.hpp"
#include "deforest/losses.hpp"
#include "deforest/tensor.hpp"

namespace deforest {

struct ModelConfig {
    int in_channels = 3;   // 8 for Landsat-8, 3 for Sentinel-1
    int depth = 4;         // number of pooling levels; bottleneck sits below them
    int base_filters = 64;
    Sensor sensor = Sensor::Sentinel1;
};

// Named parameter store. The name list and every shape are a pure
// function of the config; values are a pure function of (config, seed).
struct ModelParams {
    ModelConfig config;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, Tensor>> params; // canonical order

    Tensor& find(const std::string& name);
    const Tensor& find(const std::string& name) const;
    std::int64_t total_weights() const;
};

// Canonical (name, shape) listing for a config, in initialization order.
std::vector<std::pair<std::string, std::vector<int>>> parameter_spec(const ModelConfig& config);

// Encoder/decoder with two conv+norm+relu layers per level, attention
// gates on every skip connection, nearest-neighbour upsampling followed
// by a 3x3 conv, and a 1x1 conv + sigmoid head. Weights are fan-in-scaled
// uniform, deterministic in the seed; biases start at zero.
ModelParams build_attention_unet(const ModelConfig& config, std::uint64_t seed);

// Probability mask in (0,1), same spatial size as the input.
Grid forward(const ModelParams& params, const Tensor& image);

struct GateParams {
    Tensor theta_x_w; // (Fint, Fx), 1x1 stride 2, no bias
    Tensor theta_g_w; // (Fint, G)
    Tensor theta_g_b; // (Fint)
    Tensor psi_w;     // (1, Fint)
    Tensor psi_b;     // (1)
};

struct GateResult {
    Tensor gated; // same shape as x
    Grid alpha;   // attention coefficients at x's resolution, in [0,1]
};

// Additive attention gate: project x (stride 2) and g to a joint space,
// relu, map to a scalar, sigmoid, upsample, multiply onto x.
GateResult attention_gate(const Tensor& x, const Tensor& g, const GateParams& params);

struct GradResult {
    double loss = 0.0;
    std::vector<std::pair<std::string, Tensor>> grads; // aligned with ModelParams order
};

GradResult forward_with_gradients(const ModelParams& params, const Tensor& image,
                                  const Grid& label, const LossConfig& loss_config);

// Binary container, version-checked, bit-exact round trip (float64
// payload, so float32 parameter values survive exactly as well).
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

} // namespace deforest
