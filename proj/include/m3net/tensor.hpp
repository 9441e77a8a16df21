#pragma once

// n-dimensional tensors with reverse-mode automatic differentiation and the
// layer operations the segmentation network needs. Values are contiguous,
// NCHW for image tensors. float for training, double for gradient checking.

#include <algorithm>
#include <atomic>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>

#include "m3net/common.hpp"

namespace m3net {

bool grad_enabled();
void set_grad_enabled(bool on);

// RAII guard that disables graph recording (inference / data plumbing).
struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }
    bool prev_;
};

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // allocated on demand, same length as values
    bool requires_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void()> backprop;  // propagates this->grad into parents

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }
};

inline uint64_t next_node_id() {
    static std::atomic<uint64_t> counter{1};
    return counter.fetch_add(1);
}

template <typename T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

    static Tensor filled(Shape shape, T value) {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<T>>();
        t.node_->shape = std::move(shape);
        t.node_->values.assign(static_cast<size_t>(numel(t.node_->shape)), value);
        t.node_->id = next_node_id();
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values) {
        if (static_cast<int64_t>(values.size()) != numel(shape))
            throw ValidationError("tensor data length " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape));
        Tensor t;
        t.node_ = std::make_shared<TensorNode<T>>();
        t.node_->shape = std::move(shape);
        t.node_->values = std::move(values);
        t.node_->id = next_node_id();
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
        Tensor t = zeros(std::move(shape));
        for (T& v : t.data()) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    size_t rank() const { return node_->shape.size(); }
    int64_t size() const { return numel(node_->shape); }

    std::vector<T>& data() { return node_->values; }
    const std::vector<T>& data() const { return node_->values; }
    std::vector<T>& grad() { return node_->grad; }
    const std::vector<T>& grad() const { return node_->grad; }
    uint64_t id() const { return node_->id; }

    T item() const {
        if (size() != 1) throw ValidationError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->values[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    void zero_grad() {
        if (node_) node_->grad.assign(node_->values.size(), T(0));
    }

    // Same values, detached from the graph.
    Tensor detach() const {
        Tensor t;
        t.node_ = std::make_shared<TensorNode<T>>();
        t.node_->shape = node_->shape;
        t.node_->values = node_->values;
        t.node_->id = next_node_id();
        return t;
    }

    std::shared_ptr<TensorNode<T>> node() const { return node_; }

    // Reverse-mode backward from a scalar. Each node is visited exactly once,
    // in reverse topological order.
    void backward() const {
        if (size() != 1) throw ValidationError("backward() requires a scalar loss, got shape " + shape_str(shape()));
        if (!node_->requires_grad)
            throw ValidationError("backward() on a tensor that is not part of a tracked graph");
        std::vector<TensorNode<T>*> order;
        std::unordered_set<TensorNode<T>*> visited;
        // iterative post-order DFS over parents
        std::vector<std::pair<TensorNode<T>*, size_t>> stack;
        stack.push_back({node_.get(), 0});
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next_child] = stack.back();
            if (next_child < n->parents.size()) {
                TensorNode<T>* p = n->parents[next_child++].get();
                if (p->requires_grad && !visited.count(p)) {
                    visited.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        for (TensorNode<T>* n : order) n->ensure_grad();
        node_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backprop) (*it)->backprop();
    }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
bool track(std::initializer_list<Tensor<T>> inputs) {
    if (!grad_enabled()) return false;
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

template <typename T>
Tensor<T> make_result(Shape shape, bool tracked, std::vector<std::shared_ptr<TensorNode<T>>> parents) {
    Tensor<T> out = Tensor<T>::zeros(std::move(shape));
    if (tracked) {
        out.set_requires_grad(true);
        out.node()->parents = std::move(parents);
    }
    return out;
}

}  // namespace detail

// --- low-level kernels (tensor_ops.cpp) -------------------------------------

namespace kernels {

template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate);

template <typename T>
void im2col(const T* img, int64_t c_in, int64_t h, int64_t w, int64_t kernel, int64_t stride,
            int64_t dilation, int64_t pad, int64_t h_out, int64_t w_out, T* col);

template <typename T>
void col2im(const T* col, int64_t c_in, int64_t h, int64_t w, int64_t kernel, int64_t stride,
            int64_t dilation, int64_t pad, int64_t h_out, int64_t w_out, T* img);

}  // namespace kernels

// --- elementwise / reduction ops --------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// Channel concatenation of NCHW tensors (dim 1).
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

// --- layers -------------------------------------------------------------------

// Cross-correlation with square kernel; weight [Cout,Cin,k,k], bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t stride, int64_t dilation, int64_t padding);

// Elementwise x>0 ? x : slope_c * x with learned per-channel slope [C].
template <typename T>
Tensor<T> prelu(const Tensor<T>& input, const Tensor<T>& slope);

// Per-channel normalization. Train mode uses batch statistics and updates the
// running buffers in place (momentum); eval mode reads the running buffers.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                      T momentum = T(0.1), T eps = T(1e-5));

// align-corners-false bilinear interpolation to an arbitrary target size.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int64_t out_h, int64_t out_w);

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, int64_t factor);

// Mean over a near-equal partition of the input grid into bins x bins cells.
template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& input, int64_t bins);

// Mean softmax cross-entropy over all pixels and batch elements.
// logits [N,K,H,W], target row-major class indices of length N*H*W.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int32_t>& target);

// Softmax probabilities along the class axis (forward only, no graph).
template <typename T>
std::vector<T> softmax_probs(const Tensor<T>& logits);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace m3net
