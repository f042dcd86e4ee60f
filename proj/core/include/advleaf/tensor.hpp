#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "advleaf/errors.hpp"
#include "advleaf/rng.hpp"

namespace advleaf {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Dense float32 tensor, row-major. A Tensor is a cheap shared handle: copies
/// alias the same data and grad buffers (clone() makes a deep copy). While a
/// tensor participates in a recorded forward pass its data buffer must not be
/// mutated until the tape is cleared; optimizers update parameters outside
/// any active tape.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, float value);
    static Tensor from_data(const Shape& shape, std::vector<float> data);
    static Tensor scalar(float value) { return from_data({1}, {value}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int dim(int i) const;
    int64_t size() const;

    std::span<float> data();
    std::span<const float> data() const;
    float item() const; ///< value of a single-element tensor

    bool requires_grad() const;
    Tensor& set_requires_grad(bool value);

    bool has_grad() const;
    std::span<const float> grad() const; ///< throws GraphError when absent
    std::span<float> grad_mut();
    void zero_grad();    ///< allocate if needed and fill with zeros
    void drop_grad();    ///< release the grad buffer
    /// Add `g` (same element count) into the grad buffer, allocating on first use.
    void accumulate_grad(std::span<const float> g);

    Tensor clone() const;  ///< deep copy, detached, requires_grad = false
    Tensor detach() const; ///< shares data, detached from any tape

    friend class Tape;
    friend void backward(Tape&, const Tensor&);

private:
    struct Impl {
        Shape shape;
        std::vector<float> data;
        std::vector<float> grad; // empty == absent
        bool requires_grad = false;
        // Tape bookkeeping: which tape/generation recorded this tensor.
        Tape* tape = nullptr;
        uint64_t generation = 0;
        int64_t node = -1;
    };

    std::shared_ptr<Impl> impl_;

    Impl& impl();
    const Impl& impl() const;
    void ensure_defined() const;
};

/// Records the operations of a forward pass in execution order so that
/// backward() can replay their gradient rules in reverse. A tape and the
/// tensors recorded on it are confined to one thread; independent tapes may
/// run in parallel on different threads. Constructing a Tape makes it the
/// active tape for the current thread; destruction (or clear()) invalidates
/// the node ids of every tensor it recorded.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void clear();
    int64_t op_count() const { return static_cast<int64_t>(ops_.size()); }

    static Tape* active();

    // Internal: used by op implementations.
    static bool recording(std::initializer_list<const Tensor*> inputs);
    static void record(Tensor& output, std::function<void()> backward_rule);
    static bool tracked(const Tensor& t); ///< requires_grad or live on the active tape

private:
    struct OpRecord {
        Tensor output;
        std::function<void()> backward;
    };

    std::vector<OpRecord> ops_;
    uint64_t generation_ = 1;
    Tape* prev_ = nullptr;

    friend void backward(Tape&, const Tensor&);
};

/// Run reverse-mode accumulation from a scalar loss recorded on `tape`.
/// Grads accumulate into every tracked tensor reachable from the loss;
/// repeated calls without zero_grad() keep accumulating.
void backward(Tape& tape, const Tensor& loss);

/// While alive, relu() records the guided-backpropagation rule: the backward
/// pass is masked to positions where both the forward input and the incoming
/// gradient are positive.
class GuidedBackpropGuard {
public:
    GuidedBackpropGuard();
    ~GuidedBackpropGuard();
    static bool active();

private:
    bool prev_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Forward is always computed; the backward rule is
// recorded only when a tape is active and an input is tracked.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b); ///< elementwise
Tensor scale(const Tensor& a, float s);
Tensor sum(const Tensor& a); ///< scalar
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor select_scalar(const Tensor& a, int64_t flat_index);

Tensor relu(const Tensor& x);

/// input [N,F] x weight [F,G] + bias [G] -> [N,G]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// input [N,Cin,H,W], weight [Cout,Cin,K,K], bias [Cout] -> [N,Cout,Ho,Wo]
/// with Ho = (H + 2*padding - K)/stride + 1 (floor).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

/// Window max; backward routes the gradient to the argmax position only,
/// ties to the lowest flat index.
Tensor maxpool2d(const Tensor& input, int k, int stride);

/// Row softmax of [N,K] logits, max-subtracted for stability.
Tensor softmax(const Tensor& logits);

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Mean over rows of KL(softmax(target_logits) || softmax(logits)).
/// The target distribution is treated as a constant: gradients flow into
/// `logits` only.
Tensor kl_divergence(const Tensor& target_logits, const Tensor& logits);

/// Training mode zeroes each element with probability `rate` and scales
/// survivors by 1/(1-rate); eval mode returns the input unchanged.
Tensor dropout(const Tensor& input, float rate, bool training, Rng& rng);

// ---------------------------------------------------------------------------
// Worker threads used by the matrix kernels (1 = fully sequential). Results
// are bit-identical for any thread count: each output row is computed by
// exactly one worker in a fixed order.
// ---------------------------------------------------------------------------
void set_num_threads(int n);
int num_threads();

} // namespace advleaf
