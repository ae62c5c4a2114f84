#pragma once

// Dense compute kernels behind the tensor operations.
//
// Two implementations of each kernel are kept side by side:
//   kernels::serial  - plain loop nests, the reference the tests check against
//   kernels::omp     - OpenMP row-parallel versions used by the operations
//
// Every output element of an omp kernel is produced by exactly one thread
// with a fixed accumulation order, so results do not depend on the thread
// count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace forge::kernels {

// Causal multi-head attention over a packed [batch*seq × heads*head_dim] layout.
struct AttentionDims {
  std::size_t batch = 1;
  std::size_t seq = 1;
  std::size_t heads = 1;
  std::size_t head_dim = 1;

  std::size_t width() const { return heads * head_dim; }
  std::size_t rows() const { return batch * seq; }
};

namespace detail {

template <typename T>
void layer_norm_row(const T* x, const T* gain, const T* bias, T* y, T* mean_out, T* rstd_out,
                    std::size_t d, T eps) {
  T mean = 0;
  for (std::size_t j = 0; j < d; ++j) mean += x[j];
  mean /= static_cast<T>(d);
  T var = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const T c = x[j] - mean;
    var += c * c;
  }
  var /= static_cast<T>(d);
  const T rstd = T(1) / std::sqrt(var + eps);
  for (std::size_t j = 0; j < d; ++j) y[j] = (x[j] - mean) * rstd * gain[j] + bias[j];
  *mean_out = mean;
  *rstd_out = rstd;
}

template <typename T>
void layer_norm_row_backward(const T* x, const T* gain, const T* dy, T mean, T rstd, T* dx,
                             std::size_t d) {
  T sum_dxhat = 0;
  T sum_dxhat_xhat = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const T xhat = (x[j] - mean) * rstd;
    const T dxhat = dy[j] * gain[j];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
  }
  const T inv_d = T(1) / static_cast<T>(d);
  for (std::size_t j = 0; j < d; ++j) {
    const T xhat = (x[j] - mean) * rstd;
    const T dxhat = dy[j] * gain[j];
    dx[j] += rstd * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
  }
}

// Negative log-likelihood of one row; writes log-sum-exp for the backward pass.
template <typename T>
double xent_row(const T* logits, std::size_t vocab, std::size_t target, T* lse_out) {
  T max = logits[0];
  for (std::size_t j = 1; j < vocab; ++j) max = std::max(max, logits[j]);
  double sum = 0;
  for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(static_cast<double>(logits[j] - max));
  const double lse = static_cast<double>(max) + std::log(sum);
  *lse_out = static_cast<T>(lse);
  return lse - static_cast<double>(logits[target]);
}

template <typename T>
void attention_head(const T* q, const T* k, const T* v, T* out, T* probs,
                    const AttentionDims& dims, std::size_t b, std::size_t h) {
  const std::size_t width = dims.width();
  const std::size_t seq = dims.seq;
  const std::size_t hd = dims.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const std::size_t col = h * hd;
  for (std::size_t i = 0; i < seq; ++i) {
    const T* qi = q + (b * seq + i) * width + col;
    T* p = probs + ((b * dims.heads + h) * seq + i) * seq;
    T max = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j <= i; ++j) {
      const T* kj = k + (b * seq + j) * width + col;
      T s = 0;
      for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
      s *= scale;
      p[j] = s;
      max = std::max(max, s);
    }
    T sum = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      p[j] = std::exp(p[j] - max);
      sum += p[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j <= i; ++j) p[j] *= inv;
    for (std::size_t j = i + 1; j < seq; ++j) p[j] = 0;
    T* oi = out + (b * seq + i) * width + col;
    for (std::size_t c = 0; c < hd; ++c) oi[c] = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      const T* vj = v + (b * seq + j) * width + col;
      const T pj = p[j];
      for (std::size_t c = 0; c < hd; ++c) oi[c] += pj * vj[c];
    }
  }
}

template <typename T>
void attention_head_backward(const T* q, const T* k, const T* v, const T* probs, const T* dout,
                             T* dq, T* dk, T* dv, const AttentionDims& dims, std::size_t b,
                             std::size_t h) {
  const std::size_t width = dims.width();
  const std::size_t seq = dims.seq;
  const std::size_t hd = dims.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const std::size_t col = h * hd;
  std::vector<T> dp(seq);
  for (std::size_t i = 0; i < seq; ++i) {
    const T* p = probs + ((b * dims.heads + h) * seq + i) * seq;
    const T* doi = dout + (b * seq + i) * width + col;
    T dot = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      const T* vj = v + (b * seq + j) * width + col;
      T s = 0;
      for (std::size_t c = 0; c < hd; ++c) s += doi[c] * vj[c];
      dp[j] = s;
      dot += p[j] * s;
      if (dv != nullptr) {
        T* dvj = dv + (b * seq + j) * width + col;
        for (std::size_t c = 0; c < hd; ++c) dvj[c] += p[j] * doi[c];
      }
    }
    const T* qi = q + (b * seq + i) * width + col;
    T* dqi = dq != nullptr ? dq + (b * seq + i) * width + col : nullptr;
    for (std::size_t j = 0; j <= i; ++j) {
      const T ds = p[j] * (dp[j] - dot) * scale;
      const T* kj = k + (b * seq + j) * width + col;
      if (dqi != nullptr) {
        for (std::size_t c = 0; c < hd; ++c) dqi[c] += ds * kj[c];
      }
      if (dk != nullptr) {
        T* dkj = dk + (b * seq + j) * width + col;
        for (std::size_t c = 0; c < hd; ++c) dkj[c] += ds * qi[c];
      }
    }
  }
}

}  // namespace detail

namespace serial {

// c[m×n] (+)= a[m×k] · b[k×n]
template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

// c[m×n] (+)= a[m×k] · b[n×k]ᵀ
template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

// c[m×n] (+)= a[k×m]ᵀ · b[k×n]
template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

template <typename T>
void layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                std::size_t d, T eps) {
  for (std::size_t r = 0; r < rows; ++r)
    detail::layer_norm_row(&x[r * d], gain.data(), bias.data(), &y[r * d], &mean[r], &rstd[r], d,
                           eps);
}

// dx += ..., dgain += ..., dbias += ... (any of the outputs may be empty)
template <typename T>
void layer_norm_backward(std::span<const T> x, std::span<const T> gain, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx,
                         std::span<T> dgain, std::span<T> dbias, std::size_t rows,
                         std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (!dx.empty())
      detail::layer_norm_row_backward(&x[r * d], gain.data(), &dy[r * d], mean[r], rstd[r],
                                      &dx[r * d], d);
    for (std::size_t j = 0; j < d; ++j) {
      const T xhat = (x[r * d + j] - mean[r]) * rstd[r];
      if (!dgain.empty()) dgain[j] += dy[r * d + j] * xhat;
      if (!dbias.empty()) dbias[j] += dy[r * d + j];
    }
  }
}

// Sum of per-row NLL over rows with mask set; lse receives each row's log-sum-exp.
template <typename T>
double cross_entropy(std::span<const T> logits, std::span<const std::size_t> targets,
                     std::span<const unsigned char> mask, std::span<T> lse, std::size_t rows,
                     std::size_t vocab) {
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    total += detail::xent_row(&logits[r * vocab], vocab, targets[r], &lse[r]);
  }
  return total;
}

template <typename T>
void attention(std::span<const T> q, std::span<const T> k, std::span<const T> v, std::span<T> out,
               std::span<T> probs, const AttentionDims& dims) {
  for (std::size_t b = 0; b < dims.batch; ++b)
    for (std::size_t h = 0; h < dims.heads; ++h)
      detail::attention_head(q.data(), k.data(), v.data(), out.data(), probs.data(), dims, b, h);
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, const AttentionDims& dims) {
  for (std::size_t b = 0; b < dims.batch; ++b)
    for (std::size_t h = 0; h < dims.heads; ++h)
      detail::attention_head_backward(q.data(), k.data(), v.data(), probs.data(), dout.data(),
                                      dq.empty() ? nullptr : dq.data(),
                                      dk.empty() ? nullptr : dk.data(),
                                      dv.empty() ? nullptr : dv.data(), dims, b, h);
}

}  // namespace serial

namespace omp {

template <typename T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false) {
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = pc + i * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = pa[i * k + p];
      const T* bp = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <typename T>
void gemm_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn<T>(a, bt, c, m, k, n, accumulate);
}

template <typename T>
void gemm_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate = false) {
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = pc + i * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T api = pa[p * m + i];
      if (api == T(0)) continue;
      const T* bp = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

template <typename T>
void layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                std::size_t d, T eps) {
#pragma omp parallel for schedule(static) if (rows * d > 16384)
  for (std::size_t r = 0; r < rows; ++r)
    detail::layer_norm_row(&x[r * d], gain.data(), bias.data(), &y[r * d], &mean[r], &rstd[r], d,
                           eps);
}

template <typename T>
void layer_norm_backward(std::span<const T> x, std::span<const T> gain, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx,
                         std::span<T> dgain, std::span<T> dbias, std::size_t rows,
                         std::size_t d) {
  if (!dx.empty()) {
#pragma omp parallel for schedule(static) if (rows * d > 16384)
    for (std::size_t r = 0; r < rows; ++r)
      detail::layer_norm_row_backward(&x[r * d], gain.data(), &dy[r * d], mean[r], rstd[r],
                                      &dx[r * d], d);
  }
  if (dgain.empty() && dbias.empty()) return;
  // Column-parallel reduction keeps the per-column row order fixed.
#pragma omp parallel for schedule(static) if (rows * d > 16384)
  for (std::size_t j = 0; j < d; ++j) {
    T g = 0;
    T bsum = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const T dyv = dy[r * d + j];
      g += dyv * ((x[r * d + j] - mean[r]) * rstd[r]);
      bsum += dyv;
    }
    if (!dgain.empty()) dgain[j] += g;
    if (!dbias.empty()) dbias[j] += bsum;
  }
}

template <typename T>
double cross_entropy(std::span<const T> logits, std::span<const std::size_t> targets,
                     std::span<const unsigned char> mask, std::span<T> lse, std::size_t rows,
                     std::size_t vocab) {
  std::vector<double> per_row(rows, 0.0);
#pragma omp parallel for schedule(static) if (rows * vocab > 16384)
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask[r]) per_row[r] = detail::xent_row(&logits[r * vocab], vocab, targets[r], &lse[r]);
  }
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) total += per_row[r];
  return total;
}

template <typename T>
void attention(std::span<const T> q, std::span<const T> k, std::span<const T> v, std::span<T> out,
               std::span<T> probs, const AttentionDims& dims) {
  const std::size_t units = dims.batch * dims.heads;
#pragma omp parallel for schedule(dynamic) if (units > 1)
  for (std::size_t u = 0; u < units; ++u)
    detail::attention_head(q.data(), k.data(), v.data(), out.data(), probs.data(), dims,
                           u / dims.heads, u % dims.heads);
}

template <typename T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> probs, std::span<const T> dout, std::span<T> dq,
                        std::span<T> dk, std::span<T> dv, const AttentionDims& dims) {
  const std::size_t units = dims.batch * dims.heads;
#pragma omp parallel for schedule(dynamic) if (units > 1)
  for (std::size_t u = 0; u < units; ++u)
    detail::attention_head_backward(q.data(), k.data(), v.data(), probs.data(), dout.data(),
                                    dq.empty() ? nullptr : dq.data(),
                                    dk.empty() ? nullptr : dk.data(),
                                    dv.empty() ? nullptr : dv.data(), dims, u / dims.heads,
                                    u % dims.heads);
}

}  // namespace omp

}  // namespace forge::kernels
