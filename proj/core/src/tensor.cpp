#include "advleaf/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "gemm.hpp"

namespace advleaf {

namespace {

std::atomic<int> g_num_threads{1};

thread_local Tape* t_active_tape = nullptr;
thread_local bool t_guided_backprop = false;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

} // namespace

void set_num_threads(int n) {
    g_num_threads.store(n < 1 ? 1 : n);
}

int num_threads() { return g_num_threads.load(); }

namespace detail {
int gemm_threads() { return num_threads(); }
} // namespace detail

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape) {
    return from_data(shape, std::vector<float>(numel(shape), 0.0f));
}

Tensor Tensor::full(const Shape& shape, float value) {
    return from_data(shape, std::vector<float>(numel(shape), value));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> data) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
    }
    if (numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = shape;
    t.impl_->data = std::move(data);
    return t;
}

Tensor::Impl& Tensor::impl() {
    ensure_defined();
    return *impl_;
}

const Tensor::Impl& Tensor::impl() const {
    ensure_defined();
    return *impl_;
}

void Tensor::ensure_defined() const {
    if (!impl_) throw GraphError("operation on an undefined tensor");
}

const Shape& Tensor::shape() const { return impl().shape; }

int Tensor::dim(int i) const {
    const auto& s = impl().shape;
    if (i < 0 || i >= static_cast<int>(s.size()))
        throw ShapeError("dim index " + std::to_string(i) + " out of rank " +
                         std::to_string(s.size()));
    return s[i];
}

int64_t Tensor::size() const { return static_cast<int64_t>(impl().data.size()); }

std::span<float> Tensor::data() { return impl().data; }
std::span<const float> Tensor::data() const { return impl().data; }

float Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
    impl().requires_grad = value;
    return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
    if (!has_grad()) throw GraphError("grad requested but absent; run backward() first");
    return impl_->grad;
}

std::span<float> Tensor::grad_mut() {
    if (!has_grad()) throw GraphError("grad requested but absent; run backward() first");
    return impl_->grad;
}

void Tensor::zero_grad() {
    auto& im = impl();
    im.grad.assign(im.data.size(), 0.0f);
}

void Tensor::drop_grad() {
    impl().grad.clear();
    impl().grad.shrink_to_fit();
}

void Tensor::accumulate_grad(std::span<const float> g) {
    auto& im = impl();
    if (g.size() != im.data.size())
        throw ShapeError("grad size mismatch: " + std::to_string(g.size()) + " vs " +
                         std::to_string(im.data.size()));
    if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0f);
    float* dst = im.grad.data();
    for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

Tensor Tensor::clone() const {
    const auto& im = impl();
    return from_data(im.shape, im.data);
}

Tensor Tensor::detach() const {
    const auto& im = impl();
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = im.shape;
    t.impl_->data = im.data;
    return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() : prev_(t_active_tape) { t_active_tape = this; }

Tape::~Tape() {
    clear();
    t_active_tape = prev_;
}

void Tape::clear() {
    ops_.clear();
    ++generation_; // invalidates node ids of everything recorded so far
}

Tape* Tape::active() { return t_active_tape; }

bool Tape::tracked(const Tensor& t) {
    if (!t.impl_) return false;
    if (t.impl_->requires_grad) return true;
    Tape* tape = t_active_tape;
    return tape && t.impl_->tape == tape && t.impl_->generation == tape->generation_ &&
           t.impl_->node >= 0;
}

bool Tape::recording(std::initializer_list<const Tensor*> inputs) {
    if (!t_active_tape) return false;
    for (const Tensor* t : inputs)
        if (tracked(*t)) return true;
    return false;
}

void Tape::record(Tensor& output, std::function<void()> backward_rule) {
    Tape* tape = t_active_tape;
    output.impl().tape = tape;
    output.impl().generation = tape->generation_;
    output.impl().node = static_cast<int64_t>(tape->ops_.size());
    tape->ops_.push_back({output, std::move(backward_rule)});
}

void backward(Tape& tape, const Tensor& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    const auto* im = loss.impl_.get();
    if (!im || im->tape != &tape || im->generation != tape.generation_ || im->node < 0)
        throw GraphError("backward: loss is not recorded on this tape");

    // Each pass contributes exactly one unit of seed gradient: intermediate
    // (op output) grads start fresh, leaf grads accumulate across passes.
    for (int64_t i = 0; i <= im->node; ++i)
        tape.ops_[static_cast<size_t>(i)].output.drop_grad();

    const float one = 1.0f;
    const_cast<Tensor&>(loss).accumulate_grad(std::span<const float>(&one, 1));

    for (int64_t i = im->node; i >= 0; --i) {
        auto& op = tape.ops_[static_cast<size_t>(i)];
        if (op.output.has_grad()) op.backward();
    }
}

// ---------------------------------------------------------------------------
// Guided backprop mode
// ---------------------------------------------------------------------------

GuidedBackpropGuard::GuidedBackpropGuard() : prev_(t_guided_backprop) {
    t_guided_backprop = true;
}

GuidedBackpropGuard::~GuidedBackpropGuard() { t_guided_backprop = prev_; }

bool GuidedBackpropGuard::active() { return t_guided_backprop; }

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto out = Tensor::zeros(a.shape());
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
    if (Tape::recording({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        Tape::record(out, [ac, bc, oc]() mutable {
            auto g = oc.grad();
            if (Tape::tracked(ac)) ac.accumulate_grad(g);
            if (Tape::tracked(bc)) bc.accumulate_grad(g);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto out = Tensor::zeros(a.shape());
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] - pb[i];
    if (Tape::recording({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        Tape::record(out, [ac, bc, oc]() mutable {
            auto g = oc.grad();
            if (Tape::tracked(ac)) ac.accumulate_grad(g);
            if (Tape::tracked(bc)) {
                std::vector<float> neg(g.begin(), g.end());
                for (float& v : neg) v = -v;
                bc.accumulate_grad(neg);
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto out = Tensor::zeros(a.shape());
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * pb[i];
    if (Tape::recording({&a, &b})) {
        Tensor ac = a, bc = b, oc = out;
        Tape::record(out, [ac, bc, oc]() mutable {
            auto g = oc.grad();
            if (Tape::tracked(ac)) {
                std::vector<float> da(g.size());
                const float* pb2 = bc.data().data();
                for (size_t i = 0; i < g.size(); ++i) da[i] = g[i] * pb2[i];
                ac.accumulate_grad(da);
            }
            if (Tape::tracked(bc)) {
                std::vector<float> db(g.size());
                const float* pa2 = ac.data().data();
                for (size_t i = 0; i < g.size(); ++i) db[i] = g[i] * pa2[i];
                bc.accumulate_grad(db);
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, float s) {
    auto out = Tensor::zeros(a.shape());
    const float* pa = a.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * s;
    if (Tape::recording({&a})) {
        Tensor ac = a, oc = out;
        Tape::record(out, [ac, oc, s]() mutable {
            auto g = oc.grad();
            std::vector<float> da(g.size());
            for (size_t i = 0; i < g.size(); ++i) da[i] = g[i] * s;
            ac.accumulate_grad(da);
        });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += v;
    auto out = Tensor::scalar(static_cast<float>(acc));
    if (Tape::recording({&a})) {
        Tensor ac = a, oc = out;
        Tape::record(out, [ac, oc]() mutable {
            const float g = oc.grad()[0];
            std::vector<float> da(static_cast<size_t>(ac.size()), g);
            ac.accumulate_grad(da);
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (numel(shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    auto out = Tensor::from_data(shape, std::vector<float>(a.data().begin(), a.data().end()));
    if (Tape::recording({&a})) {
        Tensor ac = a, oc = out;
        Tape::record(out, [ac, oc]() mutable { ac.accumulate_grad(oc.grad()); });
    }
    return out;
}

Tensor select_scalar(const Tensor& a, int64_t flat_index) {
    if (flat_index < 0 || flat_index >= a.size())
        throw IndexError("select_scalar: index " + std::to_string(flat_index) +
                         " out of range for " + std::to_string(a.size()) + " elements");
    auto out = Tensor::scalar(a.data()[static_cast<size_t>(flat_index)]);
    if (Tape::recording({&a})) {
        Tensor ac = a, oc = out;
        Tape::record(out, [ac, oc, flat_index]() mutable {
            std::vector<float> da(static_cast<size_t>(ac.size()), 0.0f);
            da[static_cast<size_t>(flat_index)] = oc.grad()[0];
            ac.accumulate_grad(da);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& x) {
    auto out = Tensor::zeros(x.shape());
    const float* px = x.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < x.size(); ++i) po[i] = px[i] > 0.0f ? px[i] : 0.0f;
    if (Tape::recording({&x})) {
        const bool guided = GuidedBackpropGuard::active();
        Tensor xc = x, oc = out;
        Tape::record(out, [xc, oc, guided]() mutable {
            auto g = oc.grad();
            const float* in = xc.data().data();
            std::vector<float> dx(g.size(), 0.0f);
            if (guided) {
                // guided rule: pass only where input > 0 and grad > 0
                for (size_t i = 0; i < g.size(); ++i)
                    if (in[i] > 0.0f && g[i] > 0.0f) dx[i] = g[i];
            } else {
                for (size_t i = 0; i < g.size(); ++i)
                    if (in[i] > 0.0f) dx[i] = g[i];
            }
            xc.accumulate_grad(dx);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.shape().size() != 2 || weight.shape().size() != 2 || bias.shape().size() != 1)
        throw ShapeError("linear: expected input [N,F], weight [F,G], bias [G]; got " +
                         shape_str(input.shape()) + ", " + shape_str(weight.shape()) + ", " +
                         shape_str(bias.shape()));
    const int64_t n = input.dim(0), f = input.dim(1);
    const int64_t fw = weight.dim(0), g_dim = weight.dim(1);
    if (f != fw || bias.dim(0) != g_dim)
        throw ShapeError("linear: inner dims disagree: input " + shape_str(input.shape()) +
                         ", weight " + shape_str(weight.shape()) + ", bias " +
                         shape_str(bias.shape()));

    auto out = Tensor::zeros({static_cast<int>(n), static_cast<int>(g_dim)});
    float* po = out.data().data();
    const float* pb = bias.data().data();
    for (int64_t i = 0; i < n; ++i)
        std::memcpy(po + i * g_dim, pb, sizeof(float) * static_cast<size_t>(g_dim));
    detail::gemm_nn(po, input.data().data(), weight.data().data(), n, g_dim, f);

    if (Tape::recording({&input, &weight, &bias})) {
        Tensor ic = input, wc = weight, bc = bias, oc = out;
        Tape::record(out, [ic, wc, bc, oc, n, f, g_dim]() mutable {
            auto g = oc.grad();
            if (Tape::tracked(bc)) {
                std::vector<float> db(static_cast<size_t>(g_dim), 0.0f);
                for (int64_t i = 0; i < n; ++i)
                    for (int64_t j = 0; j < g_dim; ++j) db[j] += g[i * g_dim + j];
                bc.accumulate_grad(db);
            }
            if (Tape::tracked(wc)) {
                std::vector<float> dw(static_cast<size_t>(f * g_dim), 0.0f);
                detail::gemm_tn(dw.data(), ic.data().data(), g.data(), n, f, g_dim);
                wc.accumulate_grad(dw);
            }
            if (Tape::tracked(ic)) {
                std::vector<float> wt(static_cast<size_t>(f * g_dim));
                detail::transpose(wc.data().data(), wt.data(), f, g_dim); // -> [G,F]
                std::vector<float> dx(static_cast<size_t>(n * f), 0.0f);
                detail::gemm_nn(dx.data(), g.data(), wt.data(), n, f, g_dim);
                ic.accumulate_grad(dx);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Conv2d (patch flattening + matrix multiply)
// ---------------------------------------------------------------------------

namespace {

void im2col(const float* in, int64_t n, int64_t cin, int64_t h, int64_t w,
            int64_t k, int64_t stride, int64_t pad, int64_t ho, int64_t wo,
            float* col /* [n*ho*wo, cin*k*k] */) {
    const int64_t kdim = cin * k * k;
    for (int64_t b = 0; b < n; ++b) {
        const float* img = in + b * cin * h * w;
        for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
                float* row = col + ((b * ho + oy) * wo + ox) * kdim;
                for (int64_t c = 0; c < cin; ++c) {
                    const float* plane = img + c * h * w;
                    for (int64_t ky = 0; ky < k; ++ky) {
                        const int64_t y = oy * stride + ky - pad;
                        float* dst = row + (c * k + ky) * k;
                        if (y < 0 || y >= h) {
                            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(k));
                            continue;
                        }
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const int64_t x = ox * stride + kx - pad;
                            dst[kx] = (x >= 0 && x < w) ? plane[y * w + x] : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const float* col, int64_t n, int64_t cin, int64_t h, int64_t w,
            int64_t k, int64_t stride, int64_t pad, int64_t ho, int64_t wo,
            float* din /* zero-initialised [n,cin,h,w] */) {
    const int64_t kdim = cin * k * k;
    for (int64_t b = 0; b < n; ++b) {
        float* img = din + b * cin * h * w;
        for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
                const float* row = col + ((b * ho + oy) * wo + ox) * kdim;
                for (int64_t c = 0; c < cin; ++c) {
                    float* plane = img + c * h * w;
                    for (int64_t ky = 0; ky < k; ++ky) {
                        const int64_t y = oy * stride + ky - pad;
                        if (y < 0 || y >= h) continue;
                        const float* src = row + (c * k + ky) * k;
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const int64_t x = ox * stride + kx - pad;
                            if (x >= 0 && x < w) plane[y * w + x] += src[kx];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
    if (input.shape().size() != 4 || weight.shape().size() != 4 || bias.shape().size() != 1)
        throw ShapeError("conv2d: expected input [N,C,H,W], weight [Co,Ci,K,K], bias [Co]; got " +
                         shape_str(input.shape()) + ", " + shape_str(weight.shape()));
    const int64_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int64_t cout = weight.dim(0), cin_w = weight.dim(1), k = weight.dim(2);
    if (weight.dim(3) != k)
        throw ShapeError("conv2d: only square kernels supported, weight " +
                         shape_str(weight.shape()));
    if (cin_w != cin)
        throw ShapeError("conv2d: input channels mismatch: input " + shape_str(input.shape()) +
                         " vs weight " + shape_str(weight.shape()));
    if (bias.dim(0) != cout)
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " vs out channels " +
                         std::to_string(cout));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
    if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
    if (k > h + 2 * padding || k > w + 2 * padding)
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds padded input " +
                         shape_str(input.shape()) + " with padding " + std::to_string(padding));

    const int64_t ho = (h + 2 * padding - k) / stride + 1;
    const int64_t wo = (w + 2 * padding - k) / stride + 1;
    const int64_t rows = n * ho * wo;
    const int64_t kdim = cin * k * k;

    std::vector<float> col(static_cast<size_t>(rows * kdim));
    im2col(input.data().data(), n, cin, h, w, k, stride, padding, ho, wo, col.data());

    std::vector<float> wt(static_cast<size_t>(kdim * cout));
    detail::transpose(weight.data().data(), wt.data(), cout, kdim); // [kdim, cout]

    std::vector<float> outrows(static_cast<size_t>(rows * cout));
    const float* pb = bias.data().data();
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(outrows.data() + r * cout, pb, sizeof(float) * static_cast<size_t>(cout));
    detail::gemm_nn(outrows.data(), col.data(), wt.data(), rows, cout, kdim);

    auto out = Tensor::zeros({static_cast<int>(n), static_cast<int>(cout),
                              static_cast<int>(ho), static_cast<int>(wo)});
    float* po = out.data().data();
    for (int64_t b = 0; b < n; ++b)
        for (int64_t c = 0; c < cout; ++c)
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t x = 0; x < wo; ++x)
                    po[((b * cout + c) * ho + y) * wo + x] =
                        outrows[((b * ho + y) * wo + x) * cout + c];

    if (Tape::recording({&input, &weight, &bias})) {
        Tensor ic = input, wc = weight, bc = bias, oc = out;
        auto saved_col = std::make_shared<std::vector<float>>(std::move(col));
        const int64_t s = stride, p = padding;
        Tape::record(out, [ic, wc, bc, oc, saved_col, n, cin, h, w, cout, k, s, p, ho,
                           wo, rows, kdim]() mutable {
            auto g = oc.grad();
            // [N,Co,Ho,Wo] -> [rows, Co]
            std::vector<float> grows(static_cast<size_t>(rows * cout));
            for (int64_t b = 0; b < n; ++b)
                for (int64_t c = 0; c < cout; ++c)
                    for (int64_t y = 0; y < ho; ++y)
                        for (int64_t x = 0; x < wo; ++x)
                            grows[((b * ho + y) * wo + x) * cout + c] =
                                g[((b * cout + c) * ho + y) * wo + x];
            if (Tape::tracked(bc)) {
                std::vector<float> db(static_cast<size_t>(cout), 0.0f);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t c = 0; c < cout; ++c) db[c] += grows[r * cout + c];
                bc.accumulate_grad(db);
            }
            if (Tape::tracked(wc)) {
                std::vector<float> dw(static_cast<size_t>(cout * kdim), 0.0f);
                detail::gemm_tn(dw.data(), grows.data(), saved_col->data(), rows, cout, kdim);
                wc.accumulate_grad(dw);
            }
            if (Tape::tracked(ic)) {
                std::vector<float> dcol(static_cast<size_t>(rows * kdim), 0.0f);
                detail::gemm_nn(dcol.data(), grows.data(), wc.data().data(), rows, kdim, cout);
                std::vector<float> dx(static_cast<size_t>(n * cin * h * w), 0.0f);
                col2im(dcol.data(), n, cin, h, w, k, s, p, ho, wo, dx.data());
                ic.accumulate_grad(dx);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

Tensor maxpool2d(const Tensor& input, int k, int stride) {
    if (input.shape().size() != 4)
        throw ShapeError("maxpool2d: expected [N,C,H,W], got " + shape_str(input.shape()));
    if (k < 1 || stride < 1) throw ShapeError("maxpool2d: k and stride must be >= 1");
    const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (k > h || k > w)
        throw ShapeError("maxpool2d: window " + std::to_string(k) + " exceeds input " +
                         shape_str(input.shape()));
    const int64_t ho = (h - k) / stride + 1;
    const int64_t wo = (w - k) / stride + 1;

    auto out = Tensor::zeros({static_cast<int>(n), static_cast<int>(c),
                              static_cast<int>(ho), static_cast<int>(wo)});
    std::vector<int64_t> argmax(static_cast<size_t>(out.size()));
    const float* pi = input.data().data();
    float* po = out.data().data();
    int64_t o = 0;
    for (int64_t b = 0; b < n; ++b) {
        for (int64_t ch = 0; ch < c; ++ch) {
            const float* plane = pi + (b * c + ch) * h * w;
            const int64_t base = (b * c + ch) * h * w;
            for (int64_t oy = 0; oy < ho; ++oy) {
                for (int64_t ox = 0; ox < wo; ++ox, ++o) {
                    // scan order is increasing flat index, so ties keep the lowest
                    float best = plane[(oy * stride) * w + ox * stride];
                    int64_t best_idx = (oy * stride) * w + ox * stride;
                    for (int64_t ky = 0; ky < k; ++ky)
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const int64_t idx = (oy * stride + ky) * w + ox * stride + kx;
                            if (plane[idx] > best) {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    po[o] = best;
                    argmax[static_cast<size_t>(o)] = base + best_idx;
                }
            }
        }
    }

    if (Tape::recording({&input})) {
        Tensor ic = input, oc = out;
        auto saved = std::make_shared<std::vector<int64_t>>(std::move(argmax));
        Tape::record(out, [ic, oc, saved]() mutable {
            auto g = oc.grad();
            std::vector<float> dx(static_cast<size_t>(ic.size()), 0.0f);
            for (size_t i = 0; i < g.size(); ++i)
                dx[static_cast<size_t>((*saved)[i])] += g[i];
            ic.accumulate_grad(dx);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Softmax / losses
// ---------------------------------------------------------------------------

namespace {

// Row-stable softmax probabilities of a [rows,k] matrix.
std::vector<float> row_softmax(const float* x, int64_t rows, int64_t k, const char* op) {
    std::vector<float> p(static_cast<size_t>(rows * k));
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = x + r * k;
        float mx = row[0];
        for (int64_t j = 0; j < k; ++j) {
            if (!std::isfinite(row[j]))
                throw NumericError(std::string(op) + ": non-finite input at flat index " +
                                   std::to_string(r * k + j));
            mx = std::max(mx, row[j]);
        }
        double denom = 0.0;
        for (int64_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
        for (int64_t j = 0; j < k; ++j)
            p[static_cast<size_t>(r * k + j)] =
                static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / denom);
    }
    return p;
}

void check_matrix(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw ShapeError(std::string(op) + ": expected [N,K], got " + shape_str(t.shape()));
}

} // namespace

Tensor softmax(const Tensor& logits) {
    check_matrix(logits, "softmax");
    const int64_t n = logits.dim(0), k = logits.dim(1);
    auto p = row_softmax(logits.data().data(), n, k, "softmax");
    auto out = Tensor::from_data(logits.shape(), p);
    if (Tape::recording({&logits})) {
        Tensor lc = logits, oc = out;
        Tape::record(out, [lc, oc, n, k]() mutable {
            auto g = oc.grad();
            const float* pv = oc.data().data();
            std::vector<float> dx(g.size());
            for (int64_t r = 0; r < n; ++r) {
                double dot = 0.0;
                for (int64_t j = 0; j < k; ++j)
                    dot += static_cast<double>(g[r * k + j]) * pv[r * k + j];
                for (int64_t j = 0; j < k; ++j)
                    dx[static_cast<size_t>(r * k + j)] =
                        pv[r * k + j] * (g[r * k + j] - static_cast<float>(dot));
            }
            lc.accumulate_grad(dx);
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    check_matrix(logits, "cross_entropy");
    const int64_t n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != n)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    for (int64_t i = 0; i < n; ++i)
        if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= k)
            throw IndexError("cross_entropy: label " +
                             std::to_string(labels[static_cast<size_t>(i)]) + " at row " +
                             std::to_string(i) + " outside [0," + std::to_string(k) + ")");

    auto p = row_softmax(logits.data().data(), n, k, "cross_entropy");
    double loss = 0.0;
    for (int64_t r = 0; r < n; ++r) {
        const double pr = p[static_cast<size_t>(r * k + labels[static_cast<size_t>(r)])];
        loss -= std::log(std::max(pr, 1e-30));
    }
    loss /= static_cast<double>(n);
    auto out = Tensor::scalar(static_cast<float>(loss));

    if (Tape::recording({&logits})) {
        Tensor lc = logits, oc = out;
        auto saved = std::make_shared<std::vector<float>>(std::move(p));
        auto ylab = std::make_shared<std::vector<int>>(labels);
        Tape::record(out, [lc, oc, saved, ylab, n, k]() mutable {
            const float g = oc.grad()[0];
            std::vector<float> dx(static_cast<size_t>(n * k));
            const float inv_n = 1.0f / static_cast<float>(n);
            for (int64_t r = 0; r < n; ++r)
                for (int64_t j = 0; j < k; ++j) {
                    float v = (*saved)[static_cast<size_t>(r * k + j)];
                    if (j == (*ylab)[static_cast<size_t>(r)]) v -= 1.0f;
                    dx[static_cast<size_t>(r * k + j)] = g * v * inv_n;
                }
            lc.accumulate_grad(dx);
        });
    }
    return out;
}

Tensor kl_divergence(const Tensor& target_logits, const Tensor& logits) {
    check_matrix(target_logits, "kl_divergence");
    check_matrix(logits, "kl_divergence");
    check_same_shape(target_logits, logits, "kl_divergence");
    const int64_t n = logits.dim(0), k = logits.dim(1);

    auto p = row_softmax(target_logits.data().data(), n, k, "kl_divergence");
    auto q = row_softmax(logits.data().data(), n, k, "kl_divergence");
    double total = 0.0;
    for (int64_t r = 0; r < n; ++r)
        for (int64_t j = 0; j < k; ++j) {
            const double pv = p[static_cast<size_t>(r * k + j)];
            if (pv <= 0.0) continue;
            const double qv = std::max<double>(q[static_cast<size_t>(r * k + j)], 1e-30);
            total += pv * (std::log(pv) - std::log(qv));
        }
    total /= static_cast<double>(n);
    auto out = Tensor::scalar(static_cast<float>(total));

    if (Tape::recording({&logits})) {
        Tensor qc = logits, oc = out;
        auto sp = std::make_shared<std::vector<float>>(std::move(p));
        auto sq = std::make_shared<std::vector<float>>(std::move(q));
        Tape::record(out, [qc, oc, sp, sq, n, k]() mutable {
            const float g = oc.grad()[0];
            const float inv_n = 1.0f / static_cast<float>(n);
            std::vector<float> dq(static_cast<size_t>(n * k));
            for (size_t i = 0; i < dq.size(); ++i)
                dq[i] = g * ((*sq)[i] - (*sp)[i]) * inv_n;
            qc.accumulate_grad(dq);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

Tensor dropout(const Tensor& input, float rate, bool training, Rng& rng) {
    if (rate < 0.0f || rate >= 1.0f)
        throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0f) return input;

    const float keep_scale = 1.0f / (1.0f - rate);
    std::vector<uint8_t> mask(static_cast<size_t>(input.size()));
    for (auto& m : mask) m = rng.uniform(0.0f, 1.0f) >= rate ? 1 : 0;

    auto out = Tensor::zeros(input.shape());
    const float* pi = input.data().data();
    float* po = out.data().data();
    for (int64_t i = 0; i < input.size(); ++i)
        po[i] = mask[static_cast<size_t>(i)] ? pi[i] * keep_scale : 0.0f;

    if (Tape::recording({&input})) {
        Tensor ic = input, oc = out;
        auto saved = std::make_shared<std::vector<uint8_t>>(std::move(mask));
        Tape::record(out, [ic, oc, saved, keep_scale]() mutable {
            auto g = oc.grad();
            std::vector<float> dx(g.size());
            for (size_t i = 0; i < g.size(); ++i)
                dx[i] = (*saved)[i] ? g[i] * keep_scale : 0.0f;
            ic.accumulate_grad(dx);
        });
    }
    return out;
}

} // namespace advleaf
