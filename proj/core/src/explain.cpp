#include "advleaf/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "advleaf/netpbm.hpp"

namespace advleaf::explain {

namespace {

Tensor as_single_batch(const Tensor& x) {
    if (x.shape().size() == 3)
        return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
    if (x.shape().size() == 4 && x.dim(0) == 1) return x;
    throw ShapeError("attribution expects one sample [1,C,H,W] or [C,H,W], got " +
                     shape_str(x.shape()));
}

void check_target(const Model& model, int target_class) {
    if (target_class < 0 || target_class >= model.class_count())
        throw IndexError("target class " + std::to_string(target_class) + " outside [0," +
                         std::to_string(model.class_count()) + ")");
}

/// |d logit[target] / d input| reduced over channels by max.
std::vector<float> input_gradient_map(const Model& model, const Tensor& x, int target_class) {
    check_target(model, target_class);
    Tensor input = as_single_batch(x).clone().set_requires_grad(true);
    ParamGradPause pause(const_cast<Model&>(model));
    Tape tape;
    Tensor logits = model.forward(input, {.training = false});
    Tensor score = select_scalar(logits, target_class);
    backward(tape, score);

    const int c = input.dim(1), h = input.dim(2), w = input.dim(3);
    std::vector<float> grid(static_cast<size_t>(h) * w, 0.0f);
    if (input.has_grad()) {
        auto g = input.grad();
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h * w; ++i) {
                const float v = std::fabs(g[static_cast<size_t>(ch) * h * w + i]);
                grid[static_cast<size_t>(i)] = std::max(grid[static_cast<size_t>(i)], v);
            }
    }
    return grid;
}

} // namespace

SaliencyMap make_map(std::vector<float> grid, int h, int w, int target_class,
                     std::string method) {
    float mx = 0.0f;
    for (float v : grid) {
        if (v < 0.0f) throw NumericError("saliency grid has negative values before normalization");
        mx = std::max(mx, v);
    }
    if (mx > 0.0f)
        for (float& v : grid) v /= mx;
    SaliencyMap m;
    m.height = h;
    m.width = w;
    m.values = std::move(grid);
    m.target_class = target_class;
    m.method = std::move(method);
    return m;
}

double map_difference(const SaliencyMap& a, const SaliencyMap& b) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("map_difference: map sizes differ");
    double acc = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i)
        acc += std::fabs(static_cast<double>(a.values[i]) - b.values[i]);
    return acc / static_cast<double>(a.values.size());
}

SaliencyMap vanilla_saliency(const Model& model, const Tensor& x, int target_class) {
    Tensor xb = as_single_batch(x);
    auto grid = input_gradient_map(model, xb, target_class);
    return make_map(std::move(grid), xb.dim(2), xb.dim(3), target_class, "saliency");
}

SaliencyMap guided_backprop(const Model& model, const Tensor& x, int target_class) {
    Tensor xb = as_single_batch(x);
    GuidedBackpropGuard guard;
    auto grid = input_gradient_map(model, xb, target_class);
    return make_map(std::move(grid), xb.dim(2), xb.dim(3), target_class, "guided_backprop");
}

namespace {

struct CamCapture {
    Tensor activation;     ///< [1,C,Hl,Wl] conv output
    std::vector<float> gradient; ///< same layout
    int channels = 0, h = 0, w = 0;
};

CamCapture capture_layer(const Model& model, const Tensor& x, int target_class,
                         const std::string& layer_name) {
    check_target(model, target_class);
    std::string name = layer_name.empty() ? model.last_conv_layer() : layer_name;
    if (name.empty()) throw ConfigError("model has no conv layer for CAM attribution");
    const int layer_idx = model.layer_index(name);
    if (model.layers()[static_cast<size_t>(layer_idx)].kind != LayerKind::Conv)
        throw ConfigError("layer '" + name + "' is not a conv layer");

    Tensor input = as_single_batch(x).clone();
    ParamGradPause pause(const_cast<Model&>(model));
    Tape tape;
    std::vector<Tensor> activations;
    // the conv activation itself is what we differentiate against
    input.set_requires_grad(true);
    Tensor logits = model.forward(input, {.training = false, .activations = &activations});
    Tensor score = select_scalar(logits, target_class);
    backward(tape, score);

    CamCapture cap;
    cap.activation = activations[static_cast<size_t>(layer_idx)];
    cap.channels = cap.activation.dim(1);
    cap.h = cap.activation.dim(2);
    cap.w = cap.activation.dim(3);
    if (cap.activation.has_grad()) {
        auto g = cap.activation.grad();
        cap.gradient.assign(g.begin(), g.end());
    } else {
        cap.gradient.assign(static_cast<size_t>(cap.activation.size()), 0.0f);
    }
    return cap;
}

std::vector<float> relu_grid(std::vector<float> grid) {
    for (float& v : grid) v = v > 0.0f ? v : 0.0f;
    return grid;
}

} // namespace

std::vector<float> bilinear_upsample(const std::vector<float>& src, int sh, int sw,
                                     int dh, int dw) {
    std::vector<float> dst(static_cast<size_t>(dh) * dw);
    const float sy_scale = static_cast<float>(sh) / static_cast<float>(dh);
    const float sx_scale = static_cast<float>(sw) / static_cast<float>(dw);
    for (int y = 0; y < dh; ++y) {
        // half-pixel centres
        float sy = (static_cast<float>(y) + 0.5f) * sy_scale - 0.5f;
        sy = std::clamp(sy, 0.0f, static_cast<float>(sh - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, sh - 1);
        const float fy = sy - static_cast<float>(y0);
        for (int x = 0; x < dw; ++x) {
            float sx = (static_cast<float>(x) + 0.5f) * sx_scale - 0.5f;
            sx = std::clamp(sx, 0.0f, static_cast<float>(sw - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, sw - 1);
            const float fx = sx - static_cast<float>(x0);
            const float a = src[static_cast<size_t>(y0) * sw + x0];
            const float b = src[static_cast<size_t>(y0) * sw + x1];
            const float c = src[static_cast<size_t>(y1) * sw + x0];
            const float d = src[static_cast<size_t>(y1) * sw + x1];
            dst[static_cast<size_t>(y) * dw + x] =
                a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx;
        }
    }
    return dst;
}

SaliencyMap gradcam(const Model& model, const Tensor& x, int target_class,
                    const std::string& layer_name) {
    Tensor xb = as_single_batch(x);
    CamCapture cap = capture_layer(model, xb, target_class, layer_name);
    const int hw = cap.h * cap.w;
    std::vector<float> grid(static_cast<size_t>(hw), 0.0f);
    const float* act = cap.activation.data().data();
    for (int c = 0; c < cap.channels; ++c) {
        double wsum = 0.0;
        for (int i = 0; i < hw; ++i) wsum += cap.gradient[static_cast<size_t>(c) * hw + i];
        const float wc = static_cast<float>(wsum / hw);
        for (int i = 0; i < hw; ++i)
            grid[static_cast<size_t>(i)] += wc * act[static_cast<size_t>(c) * hw + i];
    }
    grid = relu_grid(std::move(grid));
    grid = bilinear_upsample(grid, cap.h, cap.w, xb.dim(2), xb.dim(3));
    return make_map(std::move(grid), xb.dim(2), xb.dim(3), target_class, "gradcam");
}

SaliencyMap hirescam(const Model& model, const Tensor& x, int target_class,
                     const std::string& layer_name) {
    Tensor xb = as_single_batch(x);
    CamCapture cap = capture_layer(model, xb, target_class, layer_name);
    const int hw = cap.h * cap.w;
    std::vector<float> grid(static_cast<size_t>(hw), 0.0f);
    const float* act = cap.activation.data().data();
    for (int c = 0; c < cap.channels; ++c)
        for (int i = 0; i < hw; ++i)
            grid[static_cast<size_t>(i)] += cap.gradient[static_cast<size_t>(c) * hw + i] *
                                            act[static_cast<size_t>(c) * hw + i];
    grid = relu_grid(std::move(grid));
    grid = bilinear_upsample(grid, cap.h, cap.w, xb.dim(2), xb.dim(3));
    return make_map(std::move(grid), xb.dim(2), xb.dim(3), target_class, "hirescam");
}

SaliencyMap guided_gradcam(const Model& model, const Tensor& x, int target_class,
                           const std::string& layer_name) {
    Tensor xb = as_single_batch(x);
    SaliencyMap guided = guided_backprop(model, xb, target_class);
    SaliencyMap cam = gradcam(model, xb, target_class, layer_name);
    std::vector<float> grid(guided.values.size());
    for (size_t i = 0; i < grid.size(); ++i) grid[i] = guided.values[i] * cam.values[i];
    return make_map(std::move(grid), guided.height, guided.width, target_class,
                    "guided_gradcam");
}

// ---------------------------------------------------------------------------
// Heatmap export
// ---------------------------------------------------------------------------

std::array<float, 3> jet_colormap(float v) {
    v = std::clamp(v, 0.0f, 1.0f);
    auto band = [](float x) { return std::clamp(x, 0.0f, 1.0f); };
    return {band(1.5f - std::fabs(4.0f * v - 3.0f)),
            band(1.5f - std::fabs(4.0f * v - 2.0f)),
            band(1.5f - std::fabs(4.0f * v - 1.0f))};
}

void export_heatmap(const SaliencyMap& map, const Tensor& x, HeatmapMode mode,
                    const std::string& path, const std::string& comment) {
    auto quant = [](float v) {
        return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    };
    if (mode == HeatmapMode::Raw) {
        std::vector<uint8_t> bytes(map.values.size());
        for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = quant(map.values[i]);
        write_pgm(path, map.width, map.height, bytes, comment);
        return;
    }

    Tensor xb = as_single_batch(x);
    const int c = xb.dim(1), h = xb.dim(2), w = xb.dim(3);
    if (h != map.height || w != map.width)
        throw ShapeError("export_heatmap: image " + std::to_string(w) + "x" + std::to_string(h) +
                         " vs map " + std::to_string(map.width) + "x" +
                         std::to_string(map.height));
    const float* px = xb.data().data();
    std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
    for (int i = 0; i < h * w; ++i) {
        float gray = 0.0f;
        for (int ch = 0; ch < c; ++ch) gray += px[static_cast<size_t>(ch) * h * w + i];
        gray /= static_cast<float>(c);
        const auto heat = jet_colormap(map.values[static_cast<size_t>(i)]);
        for (int ch = 0; ch < 3; ++ch)
            rgb[static_cast<size_t>(i) * 3 + ch] = quant(0.5f * gray + 0.5f * heat[ch]);
    }
    write_ppm(path, w, h, rgb, comment);
}

// ---------------------------------------------------------------------------
// Feature extraction and embedding export
// ---------------------------------------------------------------------------

Tensor penultimate_features(const Model& model, const Tensor& x) {
    int last_linear = -1;
    for (size_t i = 0; i < model.layers().size(); ++i)
        if (model.layers()[i].kind == LayerKind::Linear) last_linear = static_cast<int>(i);
    if (last_linear <= 0)
        throw ConfigError("model has no linear head to take penultimate features from");
    std::vector<Tensor> acts;
    model.forward(x, {.training = false, .activations = &acts});
    return acts[static_cast<size_t>(last_linear - 1)].detach();
}

void export_embedding_csv(const Embedding2D& emb, const std::vector<std::string>& class_names,
                          const std::string& path) {
    std::string text = "x,y,label,class_name\n";
    for (size_t i = 0; i < emb.points.size(); ++i) {
        const int label = i < emb.labels.size() ? emb.labels[i] : 0;
        const std::string cname =
            label >= 0 && label < static_cast<int>(class_names.size()) ? class_names[static_cast<size_t>(label)]
                                                                       : std::to_string(label);
        text += std::to_string(emb.points[i][0]) + "," + std::to_string(emb.points[i][1]) + "," +
                std::to_string(label) + "," + cname + "\n";
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << text;
    out.close();
    if (out.fail()) throw IoError("write failed on '" + path + "'");
}

void export_embedding_svg(const Embedding2D& emb, const std::vector<std::string>& class_names,
                          const std::string& path, const std::string& title) {
    const int size = 640, margin = 40;
    float min_x = 0, max_x = 1, min_y = 0, max_y = 1;
    if (!emb.points.empty()) {
        min_x = max_x = emb.points[0][0];
        min_y = max_y = emb.points[0][1];
        for (const auto& p : emb.points) {
            min_x = std::min(min_x, p[0]);
            max_x = std::max(max_x, p[0]);
            min_y = std::min(min_y, p[1]);
            max_y = std::max(max_y, p[1]);
        }
    }
    const float span_x = std::max(1e-6f, max_x - min_x);
    const float span_y = std::max(1e-6f, max_y - min_y);

    int n_classes = static_cast<int>(class_names.size());
    for (int l : emb.labels) n_classes = std::max(n_classes, l + 1);
    n_classes = std::max(n_classes, 1);

    auto class_color = [&](int label) {
        const float hue = static_cast<float>(label) / static_cast<float>(n_classes);
        const float hp = hue * 6.0f;
        const float xw = 1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f);
        float r = 0, g = 0, b = 0;
        if (hp < 1) { r = 1; g = xw; }
        else if (hp < 2) { r = xw; g = 1; }
        else if (hp < 3) { g = 1; b = xw; }
        else if (hp < 4) { g = xw; b = 1; }
        else if (hp < 5) { r = xw; b = 1; }
        else { r = 1; b = xw; }
        char buf[8];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(r * 200),
                      static_cast<int>(g * 200), static_cast<int>(b * 200));
        return std::string(buf);
    };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      std::to_string(size) + "\" height=\"" + std::to_string(size) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        svg += "<text x=\"" + std::to_string(size / 2) +
               "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
    for (size_t i = 0; i < emb.points.size(); ++i) {
        const float fx = (emb.points[i][0] - min_x) / span_x;
        const float fy = (emb.points[i][1] - min_y) / span_y;
        const int cx = margin + static_cast<int>(fx * (size - 2 * margin));
        const int cy = size - margin - static_cast<int>(fy * (size - 2 * margin));
        const int label = i < emb.labels.size() ? emb.labels[i] : 0;
        svg += "<circle cx=\"" + std::to_string(cx) + "\" cy=\"" + std::to_string(cy) +
               "\" r=\"3\" fill=\"" + class_color(label) + "\" fill-opacity=\"0.75\"/>\n";
    }
    // legend
    for (int l = 0; l < static_cast<int>(class_names.size()); ++l) {
        const int ly = margin + 16 * l;
        svg += "<circle cx=\"" + std::to_string(size - margin - 110) + "\" cy=\"" +
               std::to_string(ly) + "\" r=\"4\" fill=\"" + class_color(l) + "\"/>\n";
        svg += "<text x=\"" + std::to_string(size - margin - 100) + "\" y=\"" +
               std::to_string(ly + 4) + "\" font-size=\"11\">" + class_names[static_cast<size_t>(l)] +
               "</text>\n";
    }
    svg += "</svg>\n";

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << svg;
    out.close();
    if (out.fail()) throw IoError("write failed on '" + path + "'");
}

} // namespace advleaf::explain
