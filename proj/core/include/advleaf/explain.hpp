#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "advleaf/nn.hpp"
#include "advleaf/tensor.hpp"

namespace advleaf::explain {

/// Non-negative H x W attribution grid, max-normalized into [0,1] (an inert
/// class yields the all-zero map rather than an undefined one).
struct SaliencyMap {
    int height = 0;
    int width = 0;
    std::vector<float> values; ///< row-major
    int target_class = 0;
    std::string method;
    uint64_t sample_id = 0;

    float at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

// All attribution entry points take a single sample x of shape [1,C,H,W]
// (or [C,H,W]) and run the model in eval mode.

/// Channel-max of |d logit[target] / d input|.
SaliencyMap vanilla_saliency(const Model& model, const Tensor& x, int target_class);

/// Like vanilla saliency, with every ReLU backward masked to positions where
/// both its forward input and the incoming gradient are positive.
SaliencyMap guided_backprop(const Model& model, const Tensor& x, int target_class);

/// Channel weights = spatial mean of d logit/d A_c; map = relu(sum_c w_c A_c),
/// bilinearly upsampled to the input size. `layer_name` must name a conv
/// layer output; empty selects the last conv layer.
SaliencyMap gradcam(const Model& model, const Tensor& x, int target_class,
                    const std::string& layer_name = {});

/// relu(sum_c (d logit/d A_c) * A_c) with the elementwise product taken
/// before the channel sum (no spatial averaging of the weights).
SaliencyMap hirescam(const Model& model, const Tensor& x, int target_class,
                     const std::string& layer_name = {});

/// Elementwise product of the guided-backprop map and the upsampled gradcam
/// map, renormalized.
SaliencyMap guided_gradcam(const Model& model, const Tensor& x, int target_class,
                           const std::string& layer_name = {});

SaliencyMap make_map(std::vector<float> grid, int h, int w, int target_class,
                     std::string method); ///< applies the max-normalization rule

/// Mean absolute per-pixel difference between two maps (focus-shift measure).
double map_difference(const SaliencyMap& a, const SaliencyMap& b);

/// Bilinear resize with half-pixel-centre sampling.
std::vector<float> bilinear_upsample(const std::vector<float>& src, int sh, int sw,
                                     int dh, int dw);

enum class HeatmapMode { Raw, Overlay };

/// Raw mode: 8-bit PGM of the map. Overlay mode: PPM blending
/// 0.5*grayscale(image) + 0.5*colormap(map). The optional comment line is
/// embedded in the netpbm header.
void export_heatmap(const SaliencyMap& map, const Tensor& x, HeatmapMode mode,
                    const std::string& path, const std::string& comment = {});

/// Piecewise-linear jet colormap used by the overlay; exposed for tests.
std::array<float, 3> jet_colormap(float v);

// ---------------------------------------------------------------------------
// t-SNE
// ---------------------------------------------------------------------------

struct Embedding2D {
    std::vector<std::array<float, 2>> points;
    std::vector<int> labels;
    double kl = 0.0; ///< final objective value
    int iterations = 0;
};

struct TsneConfig {
    double perplexity = 30.0;
    int iterations = 1000;
    uint64_t seed = 0;
    double learning_rate = 200.0;
    double exaggeration = 12.0;   ///< applied for the first 250 iterations
    int exaggeration_iters = 250;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;  ///< from iteration 250 on
};

/// Exact O(N^2) embedding of [N,D] features: per-point sigma found by binary
/// search until the conditional entropy matches ln(perplexity) within 1e-3,
/// Student-t low-dimensional kernel, momentum gradient descent.
Embedding2D tsne_embed(const Tensor& features, const TsneConfig& cfg,
                       const std::vector<int>& labels = {});

/// Per-point conditional entropies (nats) of the calibrated high-dimensional
/// distribution; exposed so the perplexity calibration is testable.
std::vector<double> tsne_calibration_entropies(const Tensor& features, double perplexity);

/// Penultimate features (input of the model's last linear layer).
Tensor penultimate_features(const Model& model, const Tensor& x);

void export_embedding_csv(const Embedding2D& emb, const std::vector<std::string>& class_names,
                          const std::string& path);
void export_embedding_svg(const Embedding2D& emb, const std::vector<std::string>& class_names,
                          const std::string& path, const std::string& title = {});

} // namespace advleaf::explain
