#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cxr/imaging.hpp"

namespace cxr {

/// Square-kernel 2-D convolution, weights laid out [out][in][k][k].
struct Conv2d {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    std::vector<double> weight;
    std::vector<double> bias;

    Conv2d() = default;
    Conv2d(int in, int out, int k, int stride, int pad);
    int out_size(int in_size) const { return (in_size + 2 * pad - kernel) / stride + 1; }
    std::size_t fan_in() const { return std::size_t(in_channels) * kernel * kernel; }
};

/// Desk-scale residual classifier:
///
///   stem   3x3 conv (in -> F) + ReLU
///   block1 3x3 conv + ReLU, 3x3 conv, identity shortcut, ReLU
///   block2 3x3 conv stride 2 (F -> 2F) + ReLU, 3x3 conv, 1x1 stride-2 projection shortcut, ReLU
///   gap    global average pool
///   head   linear 2F -> 2 logits (index 1 = positive)
struct TinyResNet {
    int in_channels = 1;
    int base_channels = 8;
    Conv2d stem;
    Conv2d block1_conv1;
    Conv2d block1_conv2;
    Conv2d block2_conv1;
    Conv2d block2_conv2;
    Conv2d block2_proj;
    std::vector<double> head_weight;  // [2][2F]
    std::vector<double> head_bias;    // [2]

    TinyResNet() = default;
    /// All parameters zero.
    TinyResNet(int in_channels, int base_channels);
    /// He-normal convolution weights, small normal head, zero biases.
    static TinyResNet initialized(int in_channels, int base_channels, std::uint64_t seed);

    int feature_channels() const { return 2 * base_channels; }

    struct Param {
        std::string name;
        std::vector<int> shape;
        std::span<double> values;
    };
    /// Every parameter tensor in declared (checkpoint) order.
    std::vector<Param> parameters();
    std::size_t parameter_count() const;
    /// Same architecture with all parameters zeroed; used as a gradient buffer.
    TinyResNet zeros_like() const { return TinyResNet(in_channels, base_channels); }
};

using Logits = std::array<double, 2>;

struct ForwardResult {
    Logits logits{};
    Tensor features;  // last-block activations, 2F x H/2 x W/2
};

ForwardResult forward(const TinyResNet& net, const Tensor& x);

struct ClassWeights {
    double negative = 1.0;
    double positive = 1.0;
    double operator[](int cls) const { return cls == 1 ? positive : negative; }
};

/// Weighted mean cross-entropy: sum_i w_{y_i} * nll_i / sum_i w_{y_i}.
/// Returns 0 when every sample carries zero weight.
double weighted_ce_loss(std::span<const Logits> logits, std::span<const int> targets, ClassWeights weights);

std::array<double, 2> softmax(const Logits& z);

struct Gradients {
    TinyResNet grad;  // same layout as the network
    double loss = 0.0;
};

/// Analytic gradient of weighted_ce_loss over the batch w.r.t. every parameter.
Gradients backward(const TinyResNet& net, std::span<const Tensor> batch, std::span<const int> targets,
                   ClassWeights weights);

struct TrainConfig {
    int batch_size = 32;
    double base_lr = 0.001;
    int warmup_epochs = 20;
    int total_epochs = 60;
    double eta_min = 0.0;
    std::optional<ClassWeights> class_weights;  // inverse class frequency when unset
    std::uint64_t seed = 0;
    double threshold = 0.9;

    void validate() const;
};

/// Constant base_lr through warm-up, then one cosine descent to eta_min.
/// Defined for 0 <= epoch <= total_epochs; epoch == total_epochs is the end
/// of the annealing horizon where the rate equals eta_min.
double lr_at(const TrainConfig& cfg, int epoch);

struct Dataset {
    std::vector<Tensor> inputs;
    std::vector<int> targets;  // 0 negative, 1 positive

    std::size_t size() const { return inputs.size(); }
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<double> val_auroc;
    std::optional<double> val_aupr;
};

/// Inverse class frequency: w_c = N / (2 N_c).
ClassWeights inverse_frequency_weights(std::span<const int> targets);

struct TrainResult {
    TinyResNet net;
    ClassWeights weights_used;
    std::vector<EpochRecord> history;
};

/// Mini-batch SGD (no momentum). Shuffles with cfg.seed, keeps the last
/// partial batch, evaluates `val` after every epoch when it has both classes.
TrainResult train(TinyResNet net, const Dataset& train_set, const Dataset& val, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Prediction {
    double p_positive = 0.0;
    bool label = false;
};

/// label = p_positive > threshold (strict).
Prediction predict(const TinyResNet& net, const Tensor& patch, double threshold = 0.9);
Prediction prediction_from_logits(const Logits& z, double threshold);

struct Heatmap {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    double at(int x, int y) const { return values[std::size_t(y) * width + x]; }
    /// Location of the maximum (first in raster order).
    std::pair<int, int> argmax() const;
};

/// sum_k weights[k] * features_k, bilinearly resampled to out_w x out_h and
/// min-max normalised; a constant map becomes all zeros.
Heatmap class_activation_map(const Tensor& features, std::span<const double> weights, int out_w, int out_h);

Heatmap cam(const TinyResNet& net, const Tensor& patch, int cls = 1);

// -- checkpoints ---------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    TinyResNet net;
    TrainConfig config;
    std::optional<ClassWeights> weights_used;
    nlohmann::json preprocess = nlohmann::json::object();
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const EpochRecord& r);

}  // namespace cxr
