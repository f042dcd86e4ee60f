#include "advleaf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "advleaf/io_util.hpp"

namespace advleaf {

std::string layer_kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Linear: return "linear";
    case LayerKind::Dropout: return "dropout";
    }
    return "?";
}

LayerSpec LayerSpec::conv(int in_ch, int out_ch, int k, int stride, int padding) {
    LayerSpec s;
    s.kind = LayerKind::Conv;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = k;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::maxpool(int k, int stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool;
    s.kernel = k;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::Relu;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

LayerSpec LayerSpec::linear(int in_features, int out_features) {
    LayerSpec s;
    s.kind = LayerKind::Linear;
    s.in_features = in_features;
    s.out_features = out_features;
    return s;
}

LayerSpec LayerSpec::dropout(float rate) {
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
}

// ---------------------------------------------------------------------------

std::vector<ChannelsHW> Model::chain_shapes(const std::vector<LayerSpec>& layers,
                                            ChannelsHW in) {
    std::vector<ChannelsHW> out;
    out.reserve(layers.size());
    // flattened layers are encoded as c = features, h = w = 0
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string at = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
        switch (l.kind) {
        case LayerKind::Conv: {
            if (in.h == 0) throw ShapeError(at + ": conv after flatten");
            if (l.in_channels != in.c)
                throw ShapeError(at + ": expects " + std::to_string(l.in_channels) +
                                 " channels, gets " + std::to_string(in.c));
            const int ho = (in.h + 2 * l.padding - l.kernel) / l.stride + 1;
            const int wo = (in.w + 2 * l.padding - l.kernel) / l.stride + 1;
            if (l.kernel > in.h + 2 * l.padding || l.kernel > in.w + 2 * l.padding || ho < 1 ||
                wo < 1)
                throw ShapeError(at + ": kernel does not fit input " + std::to_string(in.h) +
                                 "x" + std::to_string(in.w));
            in = {l.out_channels, ho, wo};
            break;
        }
        case LayerKind::MaxPool: {
            if (in.h == 0) throw ShapeError(at + ": pool after flatten");
            if (l.kernel > in.h || l.kernel > in.w)
                throw ShapeError(at + ": window " + std::to_string(l.kernel) +
                                 " exceeds input " + std::to_string(in.h) + "x" +
                                 std::to_string(in.w));
            in = {in.c, (in.h - l.kernel) / l.stride + 1, (in.w - l.kernel) / l.stride + 1};
            break;
        }
        case LayerKind::Relu:
        case LayerKind::Dropout:
            break;
        case LayerKind::Flatten:
            if (in.h == 0) throw ShapeError(at + ": input already flat");
            in = {in.c * in.h * in.w, 0, 0};
            break;
        case LayerKind::Linear:
            if (in.h != 0) throw ShapeError(at + ": linear requires flattened input");
            if (l.in_features != in.c)
                throw ShapeError(at + ": expects " + std::to_string(l.in_features) +
                                 " features, gets " + std::to_string(in.c));
            in = {l.out_features, 0, 0};
            break;
        }
        out.push_back(in);
    }
    return out;
}

Model build_model(std::vector<LayerSpec> layers, int class_count, ChannelsHW input_shape,
                  uint64_t seed) {
    if (class_count < 2) throw ConfigError("class_count must be >= 2");
    const auto shapes = Model::chain_shapes(layers, input_shape);
    if (shapes.empty() || shapes.back().h != 0 || shapes.back().c != class_count)
        throw ShapeError("model must end with " + std::to_string(class_count) +
                         " flat outputs, got " +
                         (shapes.empty() ? std::string("no layers")
                                         : std::to_string(shapes.back().c)));

    Model m;
    m.layers_ = std::move(layers);
    m.class_count_ = class_count;
    m.input_shape_ = input_shape;
    m.dropout_rng_ = Rng(seed ^ 0xD509F0u);

    Rng init_rng(seed);
    std::map<std::string, int> kind_counts;
    for (const auto& l : m.layers_) {
        const std::string base = l.kind == LayerKind::Linear ? "fc" : layer_kind_name(l.kind);
        const int idx = ++kind_counts[base];
        m.layer_names_.push_back(base + std::to_string(idx));
    }

    auto kaiming_uniform = [&](const Shape& shape, int fan_in) {
        auto t = Tensor::zeros(shape);
        const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
        for (float& v : t.data()) v = init_rng.uniform(-bound, bound);
        t.set_requires_grad(true);
        return t;
    };

    for (size_t i = 0; i < m.layers_.size(); ++i) {
        const auto& l = m.layers_[i];
        if (l.kind == LayerKind::Conv) {
            m.param_names_.push_back(m.layer_names_[i] + ".weight");
            m.params_.push_back(kaiming_uniform(
                {l.out_channels, l.in_channels, l.kernel, l.kernel},
                l.in_channels * l.kernel * l.kernel));
            m.param_names_.push_back(m.layer_names_[i] + ".bias");
            m.params_.push_back(Tensor::zeros({l.out_channels}).set_requires_grad(true));
        } else if (l.kind == LayerKind::Linear) {
            m.param_names_.push_back(m.layer_names_[i] + ".weight");
            m.params_.push_back(
                kaiming_uniform({l.in_features, l.out_features}, l.in_features));
            m.param_names_.push_back(m.layer_names_[i] + ".bias");
            m.params_.push_back(Tensor::zeros({l.out_features}).set_requires_grad(true));
        }
    }
    return m;
}

Tensor Model::forward(const Tensor& x) const { return forward(x, {}); }

Tensor Model::forward(const Tensor& x, const ForwardOptions& opt) const {
    if (x.shape().size() != 4)
        throw ShapeError("forward: expected [N,C,H,W], got " + shape_str(x.shape()));
    if (x.dim(1) != input_shape_.c || x.dim(2) != input_shape_.h || x.dim(3) != input_shape_.w)
        throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match model input " +
                         std::to_string(input_shape_.c) + "x" + std::to_string(input_shape_.h) +
                         "x" + std::to_string(input_shape_.w));
    const bool train_mode = opt.training.value_or(training_);
    Rng& rng = opt.rng ? *opt.rng : dropout_rng_;
    if (opt.activations) opt.activations->clear();

    Tensor h = x;
    size_t pi = 0; // parameter cursor: conv/linear own two tensors each, in order
    for (size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        switch (l.kind) {
        case LayerKind::Conv: {
            const Tensor& w = params_[pi];
            const Tensor& b = params_[pi + 1];
            pi += 2;
            h = conv2d(h, w, b, l.stride, l.padding);
            break;
        }
        case LayerKind::MaxPool:
            h = maxpool2d(h, l.kernel, l.stride);
            break;
        case LayerKind::Relu:
            h = relu(h);
            break;
        case LayerKind::Flatten: {
            const auto& s = h.shape();
            h = reshape(h, {s[0], static_cast<int>(numel(s) / s[0])});
            break;
        }
        case LayerKind::Linear: {
            const Tensor& w = params_[pi];
            const Tensor& b = params_[pi + 1];
            pi += 2;
            h = linear(h, w, b);
            break;
        }
        case LayerKind::Dropout:
            h = dropout(h, l.rate, train_mode, rng);
            break;
        }
        if (opt.activations) opt.activations->push_back(h);
    }
    return h;
}

std::string Model::last_conv_layer() const {
    for (size_t i = layers_.size(); i-- > 0;)
        if (layers_[i].kind == LayerKind::Conv) return layer_names_[i];
    return {};
}

int Model::layer_index(const std::string& name) const {
    for (size_t i = 0; i < layer_names_.size(); ++i)
        if (layer_names_[i] == name) return static_cast<int>(i);
    std::string valid;
    for (const auto& n : layer_names_) valid += valid.empty() ? n : ", " + n;
    throw ConfigError("unknown layer '" + name + "'; valid layers: " + valid);
}

Tensor& Model::param(const std::string& name) {
    for (size_t i = 0; i < param_names_.size(); ++i)
        if (param_names_[i] == name) return params_[i];
    throw ConfigError("unknown parameter '" + name + "'");
}

void Model::zero_grads() {
    for (auto& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

Model build_paper_cnn(int class_count, ChannelsHW in, uint64_t seed) {
    if (in.h % 16 != 0 || in.w % 16 != 0)
        throw ConfigError("input H and W must be divisible by 16 (four 2x2 pool stages), got " +
                          std::to_string(in.h) + "x" + std::to_string(in.w));
    std::vector<LayerSpec> layers;
    const int plan[5] = {in.c, 32, 64, 128, 256};
    for (int b = 0; b < 4; ++b) {
        layers.push_back(LayerSpec::conv(plan[b], plan[b + 1], 3, 1, 1));
        layers.push_back(LayerSpec::relu());
        layers.push_back(LayerSpec::maxpool(2, 2));
    }
    layers.push_back(LayerSpec::flatten());
    const int flat = 256 * (in.h / 16) * (in.w / 16);
    layers.push_back(LayerSpec::linear(flat, 128));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::linear(128, class_count));
    return build_model(std::move(layers), class_count, in, seed);
}

Model build_student(int class_count, ChannelsHW in, float width_multiplier, uint64_t seed) {
    if (width_multiplier <= 0.0f)
        throw ConfigError("width_multiplier must be > 0, got " + std::to_string(width_multiplier));
    auto ch = [&](int base) {
        const int c = static_cast<int>(std::lround(base * width_multiplier));
        if (c < 1)
            throw ConfigError("width_multiplier " + std::to_string(width_multiplier) +
                              " produces zero channels at base width " + std::to_string(base));
        return c;
    };
    if (in.h % 8 != 0 || in.w % 8 != 0)
        throw ConfigError("student input H and W must be divisible by 8, got " +
                          std::to_string(in.h) + "x" + std::to_string(in.w));
    std::vector<LayerSpec> layers;
    const int plan[3] = {ch(16), ch(32), ch(64)};
    int prev = in.c;
    for (int b = 0; b < 3; ++b) {
        layers.push_back(LayerSpec::conv(prev, plan[b], 3, 1, 1));
        layers.push_back(LayerSpec::relu());
        layers.push_back(LayerSpec::maxpool(2, 2));
        prev = plan[b];
    }
    layers.push_back(LayerSpec::flatten());
    layers.push_back(LayerSpec::dropout(0.5f));
    const int flat = plan[2] * (in.h / 8) * (in.w / 8);
    layers.push_back(LayerSpec::linear(flat, class_count));
    return build_model(std::move(layers), class_count, in, seed);
}

Model build_teacher(int class_count, ChannelsHW in, int depth_multiplier, uint64_t seed) {
    if (depth_multiplier < 1)
        throw ConfigError("depth_multiplier must be >= 1, got " + std::to_string(depth_multiplier));
    if (in.h % 16 != 0 || in.w % 16 != 0)
        throw ConfigError("teacher input H and W must be divisible by 16, got " +
                          std::to_string(in.h) + "x" + std::to_string(in.w));
    std::vector<LayerSpec> layers;
    const int plan[4] = {48, 96, 192, 384};
    int prev = in.c;
    for (int b = 0; b < 4; ++b) {
        layers.push_back(LayerSpec::conv(prev, plan[b], 3, 1, 1));
        layers.push_back(LayerSpec::relu());
        for (int d = 1; d < depth_multiplier; ++d) {
            layers.push_back(LayerSpec::conv(plan[b], plan[b], 3, 1, 1));
            layers.push_back(LayerSpec::relu());
        }
        layers.push_back(LayerSpec::maxpool(2, 2));
        prev = plan[b];
    }
    layers.push_back(LayerSpec::flatten());
    const int flat = plan[3] * (in.h / 16) * (in.w / 16);
    layers.push_back(LayerSpec::linear(flat, 128));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::linear(128, class_count));
    return build_model(std::move(layers), class_count, in, seed);
}

Model ModelConfig::build(int class_count, ChannelsHW input_shape, uint64_t seed) const {
    switch (arch) {
    case Arch::PaperCnn: return build_paper_cnn(class_count, input_shape, seed);
    case Arch::Student: return build_student(class_count, input_shape, width_multiplier, seed);
    case Arch::Teacher: return build_teacher(class_count, input_shape, depth_multiplier, seed);
    }
    throw ConfigError("unknown model arch");
}

// ---------------------------------------------------------------------------
// Size and cost accounting
// ---------------------------------------------------------------------------

int64_t count_params(const Model& model) {
    int64_t total = 0;
    for (const auto& p : model.params()) total += p.size();
    return total;
}

int64_t estimate_flops(const Model& model, ChannelsHW in) {
    const auto shapes = Model::chain_shapes(model.layers(), in);
    int64_t total = 0;
    ChannelsHW cur = in;
    for (size_t i = 0; i < model.layers().size(); ++i) {
        const auto& l = model.layers()[i];
        const ChannelsHW out = shapes[i];
        switch (l.kind) {
        case LayerKind::Conv:
            total += 2ll * l.kernel * l.kernel * l.in_channels * l.out_channels * out.h * out.w;
            break;
        case LayerKind::Linear:
            total += 2ll * l.in_features * l.out_features;
            break;
        case LayerKind::MaxPool:
        case LayerKind::Relu:
            // one comparison per input element
            total += static_cast<int64_t>(cur.c) * (cur.h == 0 ? 1 : cur.h) *
                     (cur.w == 0 ? 1 : cur.w);
            break;
        case LayerKind::Flatten:
        case LayerKind::Dropout:
            break;
        }
        cur = out;
    }
    return total;
}

int64_t ensemble_params(const std::vector<int64_t>& member_params) {
    int64_t total = 0;
    for (int64_t p : member_params) total += p;
    return total;
}

int64_t ensemble_flops(const std::vector<int64_t>& member_flops) {
    if (member_flops.empty()) throw ConfigError("ensemble_flops: empty member list");
    return *std::max_element(member_flops.begin(), member_flops.end());
}

ParamGradPause::ParamGradPause(Model& m) : model_(m) {
    saved_.reserve(m.params().size());
    for (auto& p : m.params()) {
        saved_.push_back(p.requires_grad());
        p.set_requires_grad(false);
    }
}

ParamGradPause::~ParamGradPause() {
    for (size_t i = 0; i < saved_.size(); ++i)
        model_.params()[i].set_requires_grad(saved_[i]);
}

// ---------------------------------------------------------------------------
// Checkpoint format "ALFM": magic, version u32, input/class metadata,
// layer-spec table, then name-prefixed parameter tensors as f32.
// ---------------------------------------------------------------------------

namespace {
constexpr uint32_t kCheckpointVersion = 1;
}

void save_checkpoint(const Model& model, const std::string& path) {
    BinaryWriter w(path);
    w.magic("ALFM");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<uint32_t>(model.class_count()));
    const auto in = model.input_shape();
    w.u32(static_cast<uint32_t>(in.c));
    w.u32(static_cast<uint32_t>(in.h));
    w.u32(static_cast<uint32_t>(in.w));
    w.u32(static_cast<uint32_t>(model.layers().size()));
    for (const auto& l : model.layers()) {
        w.u32(static_cast<uint32_t>(l.kind));
        w.u32(static_cast<uint32_t>(l.in_channels));
        w.u32(static_cast<uint32_t>(l.out_channels));
        w.u32(static_cast<uint32_t>(l.kernel));
        w.u32(static_cast<uint32_t>(l.stride));
        w.u32(static_cast<uint32_t>(l.padding));
        w.u32(static_cast<uint32_t>(l.in_features));
        w.u32(static_cast<uint32_t>(l.out_features));
        w.f32(l.rate);
    }
    w.u32(static_cast<uint32_t>(model.params().size()));
    for (size_t i = 0; i < model.params().size(); ++i) {
        const auto& p = model.params()[i];
        w.str(model.param_names()[i]);
        w.u32(static_cast<uint32_t>(p.shape().size()));
        for (int d : p.shape()) w.u32(static_cast<uint32_t>(d));
        w.f32_array(p.data().data(), static_cast<size_t>(p.size()));
    }
    w.crc();
    w.close();
}

Model load_checkpoint(const std::string& path) {
    BinaryReader r(path);
    r.check_trailing_crc("model checkpoint");
    r.expect_magic("ALFM", "model checkpoint");
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("'" + path + "': unsupported checkpoint version " +
                          std::to_string(version));
    const int class_count = static_cast<int>(r.u32());
    ChannelsHW in{static_cast<int>(r.u32()), static_cast<int>(r.u32()),
                  static_cast<int>(r.u32())};
    const uint32_t n_layers = r.u32();
    std::vector<LayerSpec> layers;
    layers.reserve(n_layers);
    for (uint32_t i = 0; i < n_layers; ++i) {
        LayerSpec l;
        const uint32_t kind = r.u32();
        if (kind > static_cast<uint32_t>(LayerKind::Dropout))
            throw FormatError("'" + path + "': bad layer kind " + std::to_string(kind) +
                              " at byte offset " + std::to_string(r.offset() - 4));
        l.kind = static_cast<LayerKind>(kind);
        l.in_channels = static_cast<int>(r.u32());
        l.out_channels = static_cast<int>(r.u32());
        l.kernel = static_cast<int>(r.u32());
        l.stride = static_cast<int>(r.u32());
        l.padding = static_cast<int>(r.u32());
        l.in_features = static_cast<int>(r.u32());
        l.out_features = static_cast<int>(r.u32());
        l.rate = r.f32();
        layers.push_back(l);
    }
    Model m = build_model(std::move(layers), class_count, in, 0);
    const uint32_t n_params = r.u32();
    if (n_params != m.params().size())
        throw FormatError("'" + path + "': parameter count " + std::to_string(n_params) +
                          " does not match architecture (" + std::to_string(m.params().size()) +
                          ")");
    for (uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        if (name != m.param_names()[i])
            throw FormatError("'" + path + "': parameter '" + name + "' where '" +
                              m.param_names()[i] + "' was expected");
        const uint32_t rank = r.u32();
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());
        Tensor& p = m.params()[i];
        if (shape != p.shape())
            throw FormatError("'" + path + "': parameter '" + name + "' has shape " +
                              shape_str(shape) + ", expected " + shape_str(p.shape()));
        r.f32_array(p.data().data(), static_cast<size_t>(p.size()));
    }
    return m;
}

} // namespace advleaf
