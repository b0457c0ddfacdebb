#pragma once

// Dense tensors with tape-based reverse-mode differentiation.
//
// Every op takes the tape as its first argument. When the tape is recording
// and any input requires a gradient, the op appends a backward closure; the
// tape therefore holds operations in execution (topological) order and
// Tape::backward walks it in reverse. Tensors are cheap handles onto shared
// storage; gradients accumulate additively, so fan-out needs no special care.
//
// Instantiated for float (training) and double (gradient verification).

#include "contrail/mask.hpp"

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace contrail::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until first accumulation
    bool requires_grad = false;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};
} // namespace detail

template <class T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<T> values() { return node_->value; }
    std::span<const T> values() const { return node_->value; }
    T item() const;

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
    // Gradient buffer; allocated (zero-filled) on first access.
    std::span<T> grad() { return node_->ensure_grad(); }
    std::span<const T> grad() const { return node_->ensure_grad(); }
    void zero_grad();

    // Deep copy of the values, detached from any tape.
    Tensor clone() const;

    detail::Node<T>* node() const noexcept { return node_.get(); }
    const std::shared_ptr<detail::Node<T>>& handle() const noexcept { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node<T>> node_;
};

template <class T>
class Tape {
public:
    enum class Mode { Record, Inference };

    explicit Tape(Mode mode = Mode::Record) : mode_(mode) {}

    bool recording() const noexcept { return mode_ == Mode::Record; }
    std::size_t size() const noexcept { return ops_.size(); }
    void clear() { ops_.clear(); }

    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

    // Seeds d(loss)/d(loss) = 1 and runs every recorded backward closure in
    // reverse order. Throws NotScalar unless loss holds exactly one element.
    void backward(Tensor<T>& loss);

private:
    Mode mode_;
    std::vector<std::function<void()>> ops_;
};

template <class T>
void backward(Tensor<T>& loss, Tape<T>& tape) {
    tape.backward(loss);
}

struct Conv2dOptions {
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

// Cross-correlation. input [N,Cin,H,W], weight [Cout,Cin/groups,kh,kw],
// bias [Cout] or undefined.
template <class T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, Conv2dOptions options = {});

// No padding. Gradient goes to the first row-major maximum of each window.
template <class T>
Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& input, int kernel, int stride);

// Half-pixel (align-corners-false) bilinear resampling of [N,C,H,W]:
// src = (dst + 0.5) * in / out - 0.5, clamped at 0.
template <class T>
Tensor<T> resize_bilinear(Tape<T>& tape, const Tensor<T>& input, int out_h, int out_w);

template <class T>
Tensor<T> upsample_bilinear(Tape<T>& tape, const Tensor<T>& input, int scale);

// Output cell i averages input rows [floor(i*H/oh), ceil((i+1)*H/oh)).
template <class T>
Tensor<T> adaptive_avg_pool(Tape<T>& tape, const Tensor<T>& input, int out_h, int out_w);

enum class Activation { Relu, Gelu, Sigmoid };

// Gelu uses the tanh approximation 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3))).
template <class T>
Tensor<T> elementwise(Tape<T>& tape, const Tensor<T>& input, Activation kind);

template <class T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& input) { return elementwise(tape, input, Activation::Relu); }
template <class T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& input) { return elementwise(tape, input, Activation::Gelu); }
template <class T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& input) { return elementwise(tape, input, Activation::Sigmoid); }

// Normalizes the C-vector at each (n,h,w) of [N,C,H,W] to zero mean and unit
// (biased) variance, then applies per-channel gain and offset.
template <class T>
Tensor<T> channel_norm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gain,
                       const Tensor<T>& offset, T eps = T(1e-6));

template <class T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& inputs, int axis);

// Max-subtracted softmax along `axis`.
template <class T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& input, int axis);

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& input, T factor);

// Scalar sum of all elements.
template <class T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& input);

struct ClassWeights {
    double background = 1.0;
    double contrail = 10.0;
};

// logits [N,2,H,W]; targets holds N masks of H x W. Returns the scalar
// -(1/M) * sum over pixels of w_y * log softmax(logits)_y with M = N*H*W.
template <class T>
Tensor<T> weighted_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                                 const std::vector<mask::BitMask>& targets, ClassWeights weights);

} // namespace contrail::ad
