#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rae/tensor.hpp"

namespace rae {

// One vertex of the dynamic reverse-mode graph. Leaves with requires_grad are
// parameters (or inputs under test); interior nodes carry a backward closure
// that pushes their gradient into their parents.
template <typename T>
struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const BasicTensor<T>&)> backward_fn;

    BasicTensor<T>& ensure_grad() {
        if (grad.numel() != value.numel() || grad.shape() != value.shape()) grad = BasicTensor<T>::zeros(value.shape());
        return grad;
    }
};

// Shared handle to a graph node. Copies alias the node, so constness is
// shallow, as with std::shared_ptr.
template <typename T>
class Var {
   public:
    Var() = default;
    explicit Var(BasicTensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var parameter(BasicTensor<T> value) { return Var(std::move(value), true); }
    static Var constant(BasicTensor<T> value) { return Var(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const BasicTensor<T>& value() const { return node_->value; }
    BasicTensor<T>& mutable_value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }

    bool has_grad() const { return node_->grad.numel() == node_->value.numel() && !node_->grad.empty(); }
    // Gradient buffer; zeros if nothing has been accumulated yet.
    const BasicTensor<T>& grad() const { return node_->ensure_grad(); }
    BasicTensor<T>& mutable_grad() const { return node_->ensure_grad(); }
    void zero_grad() const { node_->grad = BasicTensor<T>(); }

    const std::shared_ptr<Node<T>>& node() const { return node_; }

   private:
    std::shared_ptr<Node<T>> node_;
};

// Runs reverse accumulation from a scalar loss. Gradients add into any
// existing .grad buffers on leaves; call zero_grad between steps.
template <typename T>
void backward(const Var<T>& loss);

// Builds a result node. When no parent requires a gradient the closure is
// dropped and the result is a plain constant (inference mode for free).
template <typename T>
Var<T> make_result(BasicTensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                   std::function<void(const BasicTensor<T>&)> backward_fn);

namespace ad {

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
// x[R x in] * w[in x out] + bias[out]; bias may be undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);

// x[R x C] + table[r mod P] for a table of P rows (positional embeddings).
template <typename T>
Var<T> add_cyclic(const Var<T>& x, const Var<T>& table);
// Each row of c[B x C] repeated `group` times -> [B*group x C].
template <typename T>
Var<T> repeat_rows(const Var<T>& c, std::int64_t group);
// x * (1 + scale[r / group]) + shift[r / group].
template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale, std::int64_t group);
// x + gate[r / group] * y.
template <typename T>
Var<T> gated_add(const Var<T>& x, const Var<T>& gate, const Var<T>& y, std::int64_t group);

// Per-row normalization to zero mean and unit (biased) variance, no affine.
template <typename T>
Var<T> layer_norm(const Var<T>& x, T eps);

template <typename T>
Var<T> gelu(const Var<T>& x);
template <typename T>
Var<T> silu(const Var<T>& x);
template <typename T>
Var<T> tanh(const Var<T>& x);

// Multi-head scaled dot-product self-attention over packed qkv[B*N x 3D].
template <typename T>
Var<T> attention(const Var<T>& qkv, std::int64_t batch, std::int64_t heads);

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> slice_cols(const Var<T>& x, std::int64_t start, std::int64_t count);
// Inserts token[1 x C] in front of every group of `group` rows.
template <typename T>
Var<T> prepend_row(const Var<T>& x, const Var<T>& token, std::int64_t group);
// Keeps rows [start, start+count) of every group of `group` rows.
template <typename T>
Var<T> slice_rows_grouped(const Var<T>& x, std::int64_t group, std::int64_t start, std::int64_t count);
template <typename T>
Var<T> embedding(const Var<T>& table, const std::vector<int>& ids);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);
// mean((pred - target)^2)
template <typename T>
Var<T> mse(const Var<T>& pred, const Var<T>& target);
// mean(|pred - target|)
template <typename T>
Var<T> l1(const Var<T>& pred, const Var<T>& target);

}  // namespace ad

// Plain (untaped) dense product; used by ad::matmul and by non-gradient code.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

// Per-row zero-mean unit-variance normalization without affine parameters.
template <typename T>
BasicTensor<T> layer_norm_no_affine(const BasicTensor<T>& x, T eps);

}  // namespace rae
