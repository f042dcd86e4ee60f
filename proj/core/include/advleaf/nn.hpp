#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advleaf/tensor.hpp"

namespace advleaf {

enum class LayerKind { Conv, MaxPool, Relu, Flatten, Linear, Dropout };

std::string layer_kind_name(LayerKind k);

/// One layer of a sequential model. Only the fields relevant to `kind` are
/// meaningful; build_model() validates that consecutive shapes chain.
struct LayerSpec {
    LayerKind kind;
    int in_channels = 0;  // conv
    int out_channels = 0; // conv
    int kernel = 0;       // conv / maxpool
    int stride = 1;       // conv / maxpool
    int padding = 0;      // conv
    int in_features = 0;  // linear
    int out_features = 0; // linear
    float rate = 0.0f;    // dropout

    static LayerSpec conv(int in_ch, int out_ch, int k, int stride = 1, int padding = 0);
    static LayerSpec maxpool(int k, int stride);
    static LayerSpec relu();
    static LayerSpec flatten();
    static LayerSpec linear(int in_features, int out_features);
    static LayerSpec dropout(float rate);
};

struct ChannelsHW {
    int c = 0, h = 0, w = 0;
};

/// Options for a single forward pass; default is the model's own mode/rng.
struct ForwardOptions {
    std::optional<bool> training;          ///< override train/eval mode
    Rng* rng = nullptr;                    ///< dropout source override
    std::vector<Tensor>* activations = nullptr; ///< per-layer outputs, aligned with layer_names()
};

/// Sequential CNN classifier: ordered layers plus named parameter tensors.
/// Parameters are named "<layer>.weight" / "<layer>.bias" where <layer> is
/// the unique layer name ("conv1", "fc2", ...).
class Model {
public:
    Model() = default;

    Tensor forward(const Tensor& x) const;
    Tensor forward(const Tensor& x, const ForwardOptions& opt) const;

    int class_count() const { return class_count_; }
    ChannelsHW input_shape() const { return input_shape_; }

    bool training() const { return training_; }
    void set_training(bool on) { training_ = on; }

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const std::vector<std::string>& layer_names() const { return layer_names_; }
    /// Name of the last conv layer (default attribution target); empty if none.
    std::string last_conv_layer() const;
    int layer_index(const std::string& name) const; ///< ConfigError lists valid names

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    const std::vector<std::string>& param_names() const { return param_names_; }
    Tensor& param(const std::string& name);

    void zero_grads();
    void reseed_dropout(uint64_t seed) { dropout_rng_ = Rng(seed); }

    /// Shapes each layer produces for a given input, index-aligned with
    /// layers(); used for FLOPs estimation and validation.
    static std::vector<ChannelsHW> chain_shapes(const std::vector<LayerSpec>& layers,
                                                ChannelsHW input);

    friend Model build_model(std::vector<LayerSpec> layers, int class_count,
                             ChannelsHW input_shape, uint64_t seed);

private:
    std::vector<LayerSpec> layers_;
    std::vector<std::string> layer_names_;
    std::vector<Tensor> params_;
    std::vector<std::string> param_names_;
    int class_count_ = 0;
    ChannelsHW input_shape_;
    bool training_ = false;
    mutable Rng dropout_rng_{0};
};

/// Generic builder: validates shape chaining, initialises parameters
/// (Kaiming-uniform fan-in weights, zero biases) from `seed`.
Model build_model(std::vector<LayerSpec> layers, int class_count, ChannelsHW input_shape,
                  uint64_t seed = 0);

/// Four conv blocks 3->32->64->128->256 (k=3, pad=1, ReLU, maxpool 2), then
/// flatten -> linear(.,128) -> ReLU -> linear(128, class_count).
/// H and W must be divisible by 16.
Model build_paper_cnn(int class_count, ChannelsHW input_shape, uint64_t seed = 0);

/// Compact student: three conv blocks scaled by `width_multiplier`, one
/// fully connected classifier head preceded by dropout(0.5).
Model build_student(int class_count, ChannelsHW input_shape, float width_multiplier,
                    uint64_t seed = 0);

/// Larger stand-in teacher: wider conv plan with `depth_multiplier` stacked
/// convs per block.
Model build_teacher(int class_count, ChannelsHW input_shape, int depth_multiplier,
                    uint64_t seed = 0);

int64_t count_params(const Model& model);

/// Forward cost for one sample under the documented convention:
/// multiply-accumulate = 2 FLOPs for conv/linear; pooling and ReLU count one
/// comparison per input element; flatten and dropout are free.
int64_t estimate_flops(const Model& model, ChannelsHW input_shape);

int64_t ensemble_params(const std::vector<int64_t>& member_params); ///< sum
int64_t ensemble_flops(const std::vector<int64_t>& member_flops);   ///< max

/// Temporarily clears requires_grad on all parameters so input-gradient
/// passes skip the parameter-gradient work.
class ParamGradPause {
public:
    explicit ParamGradPause(Model& m);
    ~ParamGradPause();

private:
    Model& model_;
    std::vector<bool> saved_;
};

/// Model checkpoint; bit-exact round trip.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

/// Named architecture choice used by the CLI and scenario harness.
struct ModelConfig {
    enum class Arch { PaperCnn, Student, Teacher };
    Arch arch = Arch::PaperCnn;
    float width_multiplier = 1.0f;
    int depth_multiplier = 1;

    Model build(int class_count, ChannelsHW input_shape, uint64_t seed) const;
};

} // namespace advleaf
