#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dshift/tensor.hpp"

namespace dshift {

enum class LayerKind : uint32_t { Conv = 0, ReLU = 1, MaxPool2 = 2, Flatten = 3, Dense = 4 };

/// One layer record. Conv carries weight (out_ch, in_ch, k, k) and bias
/// (out_ch); Dense carries weight (in, out) and bias (out); the other kinds
/// are parameter-free.
struct Layer {
    LayerKind kind = LayerKind::ReLU;
    Tensor weight;
    Tensor bias;
};

/// Fixed-topology classifier: optional per-image standardization, then the
/// layer stack. Weights are held in double precision; the file format stores
/// them as f32.
struct Model {
    std::string arch;
    double widen = 1.0;
    bool standardize_input = false;
    std::vector<int64_t> input_shape;  // C, H, W
    int32_t num_classes = 0;
    std::vector<Layer> layers;

    int64_t parameter_count() const;
};

/// Builds a seeded model.
///   lenet:  conv5x5(32w) relu pool2 conv5x5(64w) relu pool2 dense(1024w) relu dense(k)
///   mlp:    dense(256w) relu dense(k)
///   linear: dense(k)
/// Widened sizes round half-up with a floor of 1. The lenet family accepts
/// widen in {0.125, 0.25, 0.5, 1, 2, 4}. Weights are fan-in-scaled uniform,
/// biases zero.
Model build_model(std::string_view arch, double widen, int32_t num_classes,
                  std::span<const int64_t> input_shape, uint64_t seed, bool standardize = false);

/// Batch inference; returns logits (batch x num_classes). Applies per-image
/// standardization first when the model asks for it.
Tensor forward(const Model& model, const Tensor& batch);

/// Argmax predictions; ties resolve to the lowest class index.
std::vector<int32_t> predict(const Model& model, const Tensor& batch);

struct LossValue {
    double mean = 0.0;
    std::vector<double> per_example;
};

struct LayerGrads {
    Tensor weight;
    Tensor bias;
};

struct Gradients {
    std::vector<LayerGrads> params;  // aligned with model.layers
    Tensor input;                    // empty unless requested
};

enum class GradWrt { Params, Input, Both };

/// Mean softmax cross-entropy over the batch with exact reverse-mode
/// gradients. Input gradients are w.r.t. the raw pixels (they pass through
/// the standardization layer).
std::pair<LossValue, Gradients> loss_and_grads(const Model& model, const Tensor& batch,
                                               std::span<const int32_t> labels, GradWrt wrt);

/// Central-finite-difference check of the analytic gradients on a random
/// subsample of at least 200 coordinates per tensor. Returns the largest
/// error relative to the sampled gradient scale of each tensor.
double grad_check(const Model& model, const Tensor& batch, std::span<const int32_t> labels,
                  double h);

/// Model file, magic "DSNM": little-endian header plus per-layer f32 payloads.
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace dshift
