#include "forge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "forge/errors.hpp"
#include "forge/kernels.hpp"

namespace forge {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
BasicTensor<T> make_leaf(Shape shape, std::vector<T> value, bool requires_grad) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return BasicTensor<T>(std::move(node));
}

// Builds an op result. Parents and the backward closure are kept only when
// some input needs a gradient and recording is on.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> value,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           typename detail::Node<T>::BackwardFn fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto* in : inputs) needs = needs || in->requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto* in : inputs) node->parents.push_back(in->node());
    node->backward = std::move(fn);
  }
  return BasicTensor<T>(std::move(node));
}

void check_defined(bool defined, const char* op) {
  if (!defined) throw ContractError(std::string(op) + ": undefined tensor");
}

template <typename T>
void require_rank2(const BasicTensor<T>& t, const char* op) {
  check_defined(t.defined(), op);
  if (t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_string(t.shape()));
}

// True if `small` equals the trailing dims of `big` or holds one element.
bool broadcastable(const Shape& big, const Shape& small) {
  if (shape_numel(small) == 1) return true;
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ']';
  return out.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- BasicTensor ---------------------------------------------------------

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
  const auto n = shape_numel(shape);
  return make_leaf<T>(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
  if (shape_numel(shape) != data.size())
    throw DimensionError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  return make_leaf<T>(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1)
    throw ContractError("item() on non-scalar tensor " + shape_string(shape()));
  return node_->value[0];
}

template <typename T>
T BasicTensor<T>::at(std::size_t row, std::size_t col) const {
  return node_->value.at(row * node_->shape.back() + col);
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool flag) {
  if (!is_leaf()) throw StateError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = flag;
}

template <typename T>
void BasicTensor<T>::assign(std::span<const T> values) {
  if (!is_leaf()) throw StateError("assign() on a non-leaf tensor");
  if (values.size() != node_->value.size())
    throw DimensionError("assign: " + std::to_string(values.size()) + " values into " +
                         shape_string(node_->shape));
  std::copy(values.begin(), values.end(), node_->value.begin());
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return make_leaf<T>(node_->shape, node_->value, node_->requires_grad);
}

// ---- Gradients / backward -------------------------------------------------

template <typename T>
std::vector<T> Gradients<T>::of(const BasicTensor<T>& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return std::vector<T>(t.numel(), T(0));
  return it->second;
}

template <typename T>
Gradients<T> backward(const BasicTensor<T>& loss) {
  check_defined(loss.defined(), "backward");
  if (loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got " + shape_string(loss.shape()));

  using N = detail::Node<T>;
  Gradients<T> result;
  if (!loss.requires_grad()) return result;

  // Iterative post-order DFS gives a topological order.
  std::vector<N*> order;
  std::unordered_set<N*> seen;
  std::vector<std::pair<N*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      N* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<N*, std::vector<T>> grads;
  grads[loss.node().get()] = std::vector<T>{T(1)};
  std::vector<std::vector<T>*> parent_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    N* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (!node->backward) {
      result.insert(node, std::move(found->second));
      grads.erase(found);
      continue;
    }
    parent_grads.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      N* parent = node->parents[i].get();
      if (!parent->requires_grad) continue;
      auto& buf = grads[parent];
      if (buf.empty()) buf.assign(parent->value.size(), T(0));
      parent_grads[i] = &buf;
    }
    // `grads` may rehash while parents are inserted; look the output up again.
    const std::vector<T> grad_out = std::move(grads[node]);
    grads.erase(node);
    node->backward(*node, grad_out, parent_grads);
  }
  return result;
}

// ---- operations ------------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " · " +
                         shape_string(b.shape()));
  std::vector<T> out(m * n);
  kernels::omp::gemm_nn<T>(a.data(), b.data(), out, m, k, n);
  return make_result<T>({m, n}, std::move(out), {&a, &b},
                        [m, k, n](const detail::Node<T>& self, std::span<const T> g,
                                  std::span<std::vector<T>*> pg) {
                          const auto& av = self.parents[0]->value;
                          const auto& bv = self.parents[1]->value;
                          if (pg[0]) kernels::omp::gemm_nt<T>(g, bv, *pg[0], m, n, k, true);
                          if (pg[1]) kernels::omp::gemm_tn<T>(av, g, *pg[1], k, m, n, true);
                        });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w) {
  require_rank2(x, "linear");
  require_rank2(w, "linear");
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(0);
  if (w.dim(1) != k)
    throw DimensionError("linear: input " + shape_string(x.shape()) +
                         " incompatible with weight " + shape_string(w.shape()));
  std::vector<T> out(m * n);
  kernels::omp::gemm_nt<T>(x.data(), w.data(), out, m, k, n);
  return make_result<T>({m, n}, std::move(out), {&x, &w},
                        [m, k, n](const detail::Node<T>& self, std::span<const T> g,
                                  std::span<std::vector<T>*> pg) {
                          const auto& xv = self.parents[0]->value;
                          const auto& wv = self.parents[1]->value;
                          if (pg[0]) kernels::omp::gemm_nn<T>(g, wv, *pg[0], m, n, k, true);
                          if (pg[1]) kernels::omp::gemm_tn<T>(g, xv, *pg[1], n, m, k, true);
                        });
}

namespace {

enum class Binary { kAdd, kMul };

template <typename T>
BasicTensor<T> binary_op(const BasicTensor<T>& a, const BasicTensor<T>& b, Binary kind,
                         const char* name) {
  check_defined(a.defined() && b.defined(), name);
  // Orient so that `big` carries the result shape.
  const bool a_big = a.numel() >= b.numel();
  const BasicTensor<T>& big = a_big ? a : b;
  const BasicTensor<T>& small = a_big ? b : a;
  if (!broadcastable(big.shape(), small.shape()))
    throw DimensionError(std::string(name) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " are not broadcastable");
  const std::size_t n = big.numel();
  const std::size_t s = small.numel();
  const auto bv = big.data();
  const auto sv = small.data();
  std::vector<T> out(n);
  if (kind == Binary::kAdd) {
    for (std::size_t i = 0; i < n; ++i) out[i] = bv[i] + sv[i % s];
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = bv[i] * sv[i % s];
  }
  const std::size_t big_idx = a_big ? 0 : 1;
  const std::size_t small_idx = 1 - big_idx;
  return make_result<T>(big.shape(), std::move(out), {&a, &b},
                        [kind, n, s, big_idx, small_idx](const detail::Node<T>& self,
                                                         std::span<const T> g,
                                                         std::span<std::vector<T>*> pg) {
                          const auto& bigv = self.parents[big_idx]->value;
                          const auto& smallv = self.parents[small_idx]->value;
                          if (auto* gb = pg[big_idx]) {
                            if (kind == Binary::kAdd)
                              for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i];
                            else
                              for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i] * smallv[i % s];
                          }
                          if (auto* gs = pg[small_idx]) {
                            if (kind == Binary::kAdd)
                              for (std::size_t i = 0; i < n; ++i) (*gs)[i % s] += g[i];
                            else
                              for (std::size_t i = 0; i < n; ++i) (*gs)[i % s] += g[i] * bigv[i];
                          }
                        });
}

template <typename T>
T gelu_value(T x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  const T inner = c * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_derivative(T x) {
  constexpr T c = T(0.7978845608028654);
  const T inner = c * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(inner);
  const T dinner = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * dinner;
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op(a, b, Binary::kAdd, "add");
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary_op(a, b, Binary::kMul, "mul");
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  check_defined(a.defined(), "scale");
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>(a.shape(), std::move(out), {&a},
                        [factor](const detail::Node<T>&, std::span<const T> g,
                                 std::span<std::vector<T>*> pg) {
                          auto& ga = *pg[0];
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                        });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  check_defined(a.defined(), "gelu");
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = gelu_value(av[i]);
  return make_result<T>(a.shape(), std::move(out), {&a},
                        [](const detail::Node<T>& self, std::span<const T> g,
                           std::span<std::vector<T>*> pg) {
                          const auto& x = self.parents[0]->value;
                          auto& ga = *pg[0];
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i] * gelu_derivative(x[i]);
                        });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  check_defined(a.defined(), "sum");
  T total = 0;
  for (T v : a.data()) total += v;
  return make_result<T>({1}, {total}, {&a},
                        [](const detail::Node<T>&, std::span<const T> g,
                           std::span<std::vector<T>*> pg) {
                          for (auto& v : *pg[0]) v += g[0];
                        });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps) {
  check_defined(x.defined() && gain.defined() && bias.defined(), "layer_norm");
  if (!(eps > T(0))) throw ContractError("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d)
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " +
                         shape_string(bias.shape()) + " do not match last axis of " +
                         shape_string(x.shape()));
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  auto stats = std::make_shared<std::vector<T>>(2 * rows);
  std::span<T> mean(stats->data(), rows);
  std::span<T> rstd(stats->data() + rows, rows);
  kernels::omp::layer_norm<T>(x.data(), gain.data(), bias.data(), out, mean, rstd, rows, d, eps);
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [stats, rows, d](const detail::Node<T>& self, std::span<const T> g,
                       std::span<std::vector<T>*> pg) {
        const std::span<const T> mean(stats->data(), rows);
        const std::span<const T> rstd(stats->data() + rows, rows);
        std::span<T> dx = pg[0] ? std::span<T>(*pg[0]) : std::span<T>();
        std::span<T> dg = pg[1] ? std::span<T>(*pg[1]) : std::span<T>();
        std::span<T> db = pg[2] ? std::span<T>(*pg[2]) : std::span<T>();
        kernels::omp::layer_norm_backward<T>(self.parents[0]->value, self.parents[1]->value, mean,
                                             rstd, g, dx, dg, db, rows, d);
      });
}

template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                     std::span<const std::size_t> targets,
                                     std::span<const std::uint8_t> loss_mask) {
  require_rank2(logits, "softmax_cross_entropy");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows || loss_mask.size() != rows)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(loss_mask.size()) +
                         " mask entries for logits " + shape_string(logits.shape()));
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!loss_mask[r]) continue;
    if (targets[r] >= vocab)
      throw RangeError("softmax_cross_entropy: target " + std::to_string(targets[r]) +
                       " outside vocabulary of " + std::to_string(vocab));
    ++count;
  }
  if (count == 0) throw DegenerateInputError("softmax_cross_entropy: every position is masked");

  auto lse = std::make_shared<std::vector<T>>(rows, T(0));
  const double total =
      kernels::omp::cross_entropy<T>(logits.data(), targets, loss_mask, *lse, rows, vocab);
  const T loss = static_cast<T>(total / static_cast<double>(count));
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> mask(loss_mask.begin(), loss_mask.end());
  return make_result<T>(
      {1}, {loss}, {&logits},
      [lse, tgt = std::move(tgt), mask = std::move(mask), rows, vocab, count](
          const detail::Node<T>& self, std::span<const T> g, std::span<std::vector<T>*> pg) {
        const auto& lv = self.parents[0]->value;
        auto& gl = *pg[0];
        const T coef = g[0] / static_cast<T>(count);
#pragma omp parallel for schedule(static) if (rows * vocab > 16384)
        for (std::size_t r = 0; r < rows; ++r) {
          if (!mask[r]) continue;
          const T l = (*lse)[r];
          for (std::size_t j = 0; j < vocab; ++j)
            gl[r * vocab + j] += coef * std::exp(lv[r * vocab + j] - l);
          gl[r * vocab + tgt[r]] -= coef;
        }
      });
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, bool training, std::mt19937_64& rng) {
  check_defined(x.defined(), "dropout");
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: probability must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const T keep_scale = T(1) / static_cast<T>(1.0 - p);
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::bernoulli_distribution keep(1.0 - p);
  for (auto& m : *mask) m = keep(rng) ? keep_scale : T(0);
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
  return make_result<T>(x.shape(), std::move(out), {&x},
                        [mask](const detail::Node<T>&, std::span<const T> g,
                               std::span<std::vector<T>*> pg) {
                          auto& gx = *pg[0];
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
                        });
}

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids) {
  require_rank2(table, "embedding");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw ContractError("embedding: empty id list");
  std::vector<T> out(ids.size() * d);
  const auto tv = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab)
      throw RangeError("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                       std::to_string(vocab));
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d, out.begin() + r * d);
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return make_result<T>({ids.size(), d}, std::move(out), {&table},
                        [idv = std::move(idv), d](const detail::Node<T>&, std::span<const T> g,
                                                  std::span<std::vector<T>*> pg) {
                          auto& gt = *pg[0];
                          for (std::size_t r = 0; r < idv.size(); ++r)
                            for (std::size_t j = 0; j < d; ++j)
                              gt[static_cast<std::size_t>(idv[r]) * d + j] += g[r * d + j];
                        });
}

namespace {

// cos/sin per (position, frequency) for half-split rotary pairs (c, c + half).
template <typename T>
struct RotaryTable {
  std::vector<T> cos, sin;
  std::size_t half = 0;
};

template <typename T>
std::shared_ptr<RotaryTable<T>> rotary_table(std::size_t seq, std::size_t head_dim, T base) {
  auto table = std::make_shared<RotaryTable<T>>();
  table->half = head_dim / 2;
  table->cos.resize(seq * table->half);
  table->sin.resize(seq * table->half);
  for (std::size_t pos = 0; pos < seq; ++pos) {
    for (std::size_t i = 0; i < table->half; ++i) {
      const double inv_freq =
          std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) /
                                                  static_cast<double>(head_dim));
      const double angle = static_cast<double>(pos) * inv_freq;
      table->cos[pos * table->half + i] = static_cast<T>(std::cos(angle));
      table->sin[pos * table->half + i] = static_cast<T>(std::sin(angle));
    }
  }
  return table;
}

}  // namespace

template <typename T>
BasicTensor<T> rotary(const BasicTensor<T>& x, std::size_t heads, std::size_t seq, T base) {
  require_rank2(x, "rotary");
  const std::size_t rows = x.dim(0), width = x.dim(1);
  if (heads == 0 || width % heads != 0 || seq == 0 || rows % seq != 0)
    throw DimensionError("rotary: " + shape_string(x.shape()) + " incompatible with " +
                         std::to_string(heads) + " heads, seq " + std::to_string(seq));
  const std::size_t hd = width / heads;
  if (hd % 2 != 0) throw DimensionError("rotary: head dimension must be even");
  auto table = rotary_table<T>(seq, hd, base);
  const std::size_t half = table->half;
  const auto xv = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t pos = r % seq;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = r * width + h * hd;
      for (std::size_t i = 0; i < half; ++i) {
        const T c = table->cos[pos * half + i], s = table->sin[pos * half + i];
        const T a = xv[off + i], b = xv[off + i + half];
        out[off + i] = a * c - b * s;
        out[off + i + half] = a * s + b * c;
      }
    }
  }
  return make_result<T>(x.shape(), std::move(out), {&x},
                        [table, rows, width, heads, seq, hd](const detail::Node<T>&,
                                                             std::span<const T> g,
                                                             std::span<std::vector<T>*> pg) {
                          auto& gx = *pg[0];
                          const std::size_t half = table->half;
                          for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t pos = r % seq;
                            for (std::size_t h = 0; h < heads; ++h) {
                              const std::size_t off = r * width + h * hd;
                              for (std::size_t i = 0; i < half; ++i) {
                                const T c = table->cos[pos * half + i];
                                const T s = table->sin[pos * half + i];
                                const T ga = g[off + i], gb = g[off + i + half];
                                gx[off + i] += ga * c + gb * s;
                                gx[off + i + half] += -ga * s + gb * c;
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> causal_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                const BasicTensor<T>& v, std::size_t batch, std::size_t seq,
                                std::size_t heads) {
  require_rank2(q, "causal_attention");
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw DimensionError("causal_attention: q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()) +
                         " must agree");
  if (heads == 0 || q.dim(1) % heads != 0 || batch * seq != q.dim(0))
    throw DimensionError("causal_attention: " + shape_string(q.shape()) +
                         " incompatible with batch " + std::to_string(batch) + ", seq " +
                         std::to_string(seq) + ", heads " + std::to_string(heads));
  const kernels::AttentionDims dims{batch, seq, heads, q.dim(1) / heads};
  auto probs = std::make_shared<std::vector<T>>(batch * heads * seq * seq);
  std::vector<T> out(q.numel());
  kernels::omp::attention<T>(q.data(), k.data(), v.data(), out, *probs, dims);
  return make_result<T>(
      q.shape(), std::move(out), {&q, &k, &v},
      [probs, dims](const detail::Node<T>& self, std::span<const T> g,
                    std::span<std::vector<T>*> pg) {
        auto as_span = [](std::vector<T>* p) { return p ? std::span<T>(*p) : std::span<T>(); };
        kernels::omp::attention_backward<T>(self.parents[0]->value, self.parents[1]->value,
                                            self.parents[2]->value, *probs, g, as_span(pg[0]),
                                            as_span(pg[1]), as_span(pg[2]), dims);
      });
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin >= end || end > cols)
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") outside " + shape_string(x.shape()));
  const std::size_t w = end - begin;
  std::vector<T> out(rows * w);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * cols + begin), w,
                out.begin() + static_cast<std::ptrdiff_t>(r * w));
  return make_result<T>({rows, w}, std::move(out), {&x},
                        [rows, cols, begin, w](const detail::Node<T>&, std::span<const T> g,
                                               std::span<std::vector<T>*> pg) {
                          auto& gx = *pg[0];
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < w; ++j)
                              gx[r * cols + begin + j] += g[r * w + j];
                        });
}

// ---- explicit instantiation ------------------------------------------------

#define FORGE_INSTANTIATE(T)                                                                   \
  template class BasicTensor<T>;                                                               \
  template class Gradients<T>;                                                                 \
  template Gradients<T> backward(const BasicTensor<T>&);                                       \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                     \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                          \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                     const BasicTensor<T>&, T);                                \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&,                         \
                                                std::span<const std::size_t>,                  \
                                                std::span<const std::uint8_t>);                \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, bool, std::mt19937_64&);      \
  template BasicTensor<T> embedding(const BasicTensor<T>&, std::span<const std::int32_t>);     \
  template BasicTensor<T> rotary(const BasicTensor<T>&, std::size_t, std::size_t, T);          \
  template BasicTensor<T> causal_attention(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                           const BasicTensor<T>&, std::size_t, std::size_t,    \
                                           std::size_t);                                       \
  template BasicTensor<T> slice_cols(const BasicTensor<T>&, std::size_t, std::size_t);

FORGE_INSTANTIATE(float)
FORGE_INSTANTIATE(double)

#undef FORGE_INSTANTIATE

}  // namespace forge
