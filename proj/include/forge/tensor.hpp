#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every operation result records its parents and a backward closure when
// gradient recording is enabled and at least one input requires a gradient.
// backward() walks the resulting DAG once in reverse topological order.
//
// Tensors are values: operations never modify their inputs. The only
// mutating entry point is BasicTensor::assign(), reserved for leaves
// (parameters) and used by optimizers, initializers and checkpoint loading.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace forge {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  using BackwardFn =
      std::function<void(const Node& self, std::span<const T> grad, std::span<std::vector<T>*>)>;

  Shape shape;
  std::vector<T> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

}  // namespace detail

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const T> data() const { return node_->value; }
  T item() const;
  T at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }
  // Only leaves may toggle gradient tracking.
  void set_requires_grad(bool flag);

  // Overwrite the values of a leaf in place (parameter updates).
  void assign(std::span<const T> values);

  // Leaf copy of the current values, detached from any graph.
  BasicTensor clone() const;

  // Stable identity used to key gradients and optimizer state.
  const void* id() const { return node_.get(); }

  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }
  explicit BasicTensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Gradient recording is on by default; a guard disables it on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Leaf gradients produced by one backward pass.
template <typename T>
class Gradients {
 public:
  // Gradient of `t`, or zeros of its size if `t` was not reachable.
  std::vector<T> of(const BasicTensor<T>& t) const;
  bool contains(const BasicTensor<T>& t) const { return grads_.count(t.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

  void insert(const void* id, std::vector<T> grad) { grads_[id] = std::move(grad); }

 private:
  std::unordered_map<const void*, std::vector<T>> grads_;
};

template <typename T>
Gradients<T> backward(const BasicTensor<T>& loss);

// ---- operations --------------------------------------------------------

// [m×k]·[k×n]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// x[m×k]·wᵀ with w stored [n×k] (output-major, as in a linear layer)
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w);

// Elementwise with trailing-dimension broadcasting: the smaller operand's
// shape must equal the trailing dims of the larger one, or hold one element.
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
// tanh approximation
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps = T(1e-5));

// Mean negative log-likelihood over rows whose mask entry is non-zero.
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                     std::span<const std::size_t> targets,
                                     std::span<const std::uint8_t> loss_mask);

// Inverted dropout. Identity (same tensor) when !training or p == 0.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, bool training, std::mt19937_64& rng);

// Rows of `table` [V×d] selected by ids.
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids);

// Rotary position encoding over [batch*seq × heads*head_dim]; position = row % seq.
template <typename T>
BasicTensor<T> rotary(const BasicTensor<T>& x, std::size_t heads, std::size_t seq,
                      T base = T(10000));

// Causal scaled-dot-product attention over [batch*seq × heads*head_dim] operands.
template <typename T>
BasicTensor<T> causal_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                const BasicTensor<T>& v, std::size_t batch, std::size_t seq,
                                std::size_t heads);

// Columns [begin, end) of a 2-D tensor.
template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t end);

}  // namespace forge
