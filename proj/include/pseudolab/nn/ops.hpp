#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pseudolab/common.hpp"
#include "pseudolab/nn/tensor.hpp"

namespace pseudolab::nn {

// ---------------------------------------------------------------------------
// GEMM kernels (row-major, accumulate into C), backed by Eigen.

namespace detail {
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;
}  // namespace detail

/// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B,
                    double* C) {
  using detail::ConstMap;
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  detail::Map(C, M, N).noalias() += ConstMap(A, M, K) * ConstMap(B, K, N);
}

/// C[m x n] += A[m x k] * B[n x k]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B,
                    double* C) {
  using detail::ConstMap;
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  detail::Map(C, M, N).noalias() += ConstMap(A, M, K) * ConstMap(B, N, K).transpose();
}

/// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B,
                    double* C) {
  using detail::ConstMap;
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  detail::Map(C, M, N).noalias() += ConstMap(A, K, M).transpose() * ConstMap(B, K, N);
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string{op} + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> y(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xd[i]);
  return make_result(x.shape(), std::move(y), {x}, [x, df](TensorImpl& self) mutable {
    auto gx = x.grad();
    const auto xd = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xd[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix products

/// [m x k] * [k x n] -> [m x n], or batched [B x m x k] * [B x k x n] -> [B x m x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.rank() == 3 && b.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || batched) ||
      a.shape()[a.rank() - 1] != b.shape()[b.rank() - 2] || (batched && a.dim(0) != b.dim(0))) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t n = b.shape()[b.rank() - 1];
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t t = 0; t < batch; ++t) {
    gemm_nn(m, n, k, a.data().data() + t * m * k, b.data().data() + t * k * n, out.data() + t * m * n);
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return make_result(std::move(shape), std::move(out), {a, b},
                     [a, b, batch, m, n, k](TensorImpl& self) mutable {
                       for (std::size_t t = 0; t < batch; ++t) {
                         const double* g = self.grad.data() + t * m * n;
                         if (a.requires_grad()) {
                           gemm_nt(m, k, n, g, b.data().data() + t * k * n,
                                   a.grad().data() + t * m * k);
                         }
                         if (b.requires_grad()) {
                           gemm_tn(k, n, m, a.data().data() + t * m * k, g,
                                   b.grad().data() + t * k * n);
                         }
                       }
                     });
}

/// Batched [B x m x k] * [B x n x k]^T -> [B x m x n].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t t = 0; t < batch; ++t) {
    gemm_nt(m, n, k, a.data().data() + t * m * k, b.data().data() + t * n * k, out.data() + t * m * n);
  }
  return make_result({batch, m, n}, std::move(out), {a, b},
                     [a, b, batch, m, n, k](TensorImpl& self) mutable {
                       for (std::size_t t = 0; t < batch; ++t) {
                         const double* g = self.grad.data() + t * m * n;
                         if (a.requires_grad()) {
                           gemm_nn(m, k, n, g, b.data().data() + t * n * k, a.grad().data() + t * m * k);
                         }
                         if (b.requires_grad()) {
                           gemm_tn(n, k, m, g, a.data().data() + t * m * k, b.grad().data() + t * n * k);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [a, b](TensorImpl& self) mutable {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto g = t->grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [a, b](TensorImpl& self) mutable {
    if (a.requires_grad()) {
      auto g = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(y), {a, b}, [a, b](TensorImpl& self) mutable {
    if (a.requires_grad()) {
      auto g = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.data()[i];
    }
  });
}

/// x + b where b's shape equals the trailing dimensions of x (bias, positional table).
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  const auto& xs = x.shape();
  const auto& bs = b.shape();
  if (bs.size() > xs.size() || !std::equal(bs.begin(), bs.end(), xs.end() - static_cast<std::ptrdiff_t>(bs.size()))) {
    throw ShapeError("add_bias: " + shape_str(bs) + " is not a suffix of " + shape_str(xs));
  }
  const std::size_t inner = b.numel();
  const std::size_t outer = x.numel() / inner;
  std::vector<double> y(x.data().begin(), x.data().end());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += b.data()[i];
  }
  return make_result(xs, std::move(y), {x, b}, [x, b, outer, inner](TensorImpl& self) mutable {
    if (x.requires_grad()) {
      auto g = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) g[i] += self.grad[o * inner + i];
      }
    }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Activations

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(x, [](double v) { return pseudolab::sigmoid(v); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// Exact GELU: x * Phi(x).
inline Tensor gelu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return 0.5 * v * std::erfc(-v / std::numbers::sqrt2); },
      [](double v, double) {
        const double cdf = 0.5 * std::erfc(-v / std::numbers::sqrt2);
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

inline double softplus_value(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

inline Tensor softplus(const Tensor& x) {
  return detail::unary(x, softplus_value, [](double v, double) { return pseudolab::sigmoid(v); });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::abs(v); },
                       [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double* out = y.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (out[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[j] /= s;
  }
  return make_result(x.shape(), std::move(y), {x}, [x, rows, n](TensorImpl& self) mutable {
    auto gx = x.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yv = self.data.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy[j] * yv[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += yv[j] * (gy[j] - dot);
    }
  });
}

/// Layer normalization over the last axis followed by gamma * xhat + beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t n = x.shape().back();
  if (gamma.numel() != n || beta.numel() != n) {
    throw ShapeError("layer_norm: affine parameters " + shape_str(gamma.shape()) + " do not match " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += in[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (in[j] - mean) * inv_std[r];
      y[r * n + j] = gamma.data()[j] * xhat[r * n + j] + beta.data()[j];
    }
  }
  return make_result(x.shape(), std::move(y), {x, gamma, beta},
                     [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                      n](TensorImpl& self) mutable {
                       std::vector<double> dxhat(n);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* gy = self.grad.data() + r * n;
                         const double* xh = xhat.data() + r * n;
                         if (gamma.requires_grad()) {
                           auto gg = gamma.grad();
                           for (std::size_t j = 0; j < n; ++j) gg[j] += gy[j] * xh[j];
                         }
                         if (beta.requires_grad()) {
                           auto gb = beta.grad();
                           for (std::size_t j = 0; j < n; ++j) gb[j] += gy[j];
                         }
                         if (!x.requires_grad()) continue;
                         double sum_d = 0.0, sum_dx = 0.0;
                         for (std::size_t j = 0; j < n; ++j) {
                           dxhat[j] = gy[j] * gamma.data()[j];
                           sum_d += dxhat[j];
                           sum_dx += dxhat[j] * xh[j];
                         }
                         auto gx = x.grad();
                         const double nn = static_cast<double>(n);
                         for (std::size_t j = 0; j < n; ++j) {
                           gx[r * n + j] += inv_std[r] / nn * (nn * dxhat[j] - sum_d - xh[j] * sum_dx);
                         }
                       }
                     });
}

/// Inverted dropout. Identity when `train` is false or `rate` is 0.
inline Tensor dropout(const Tensor& x, double rate, bool train, std::mt19937_64& rng) {
  if (!train || rate <= 0.0) return x;
  if (rate >= 1.0) throw ArgumentError("dropout rate must be < 1");
  const double keep = 1.0 - rate;
  std::bernoulli_distribution coin(keep);
  std::vector<double> mask(x.numel());
  std::vector<double> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = coin(rng) ? 1.0 / keep : 0.0;
    y[i] = x.data()[i] * mask[i];
  }
  return make_result(x.shape(), std::move(y), {x}, [x, mask = std::move(mask)](TensorImpl& self) mutable {
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> y(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(y), {x}, [x](TensorImpl& self) mutable {
    auto g = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Generic axis permutation: out.shape[i] = x.shape[perm[i]].
inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const auto& s = x.shape();
  if (perm.size() != s.size()) throw ShapeError("permute: rank mismatch for " + shape_str(s));
  const std::size_t r = s.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * s[i];
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = s.at(perm[i]);
  // map[out_flat] = in_flat
  std::vector<std::size_t> map(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < map.size(); ++o) {
    std::size_t in = 0;
    for (std::size_t i = 0; i < r; ++i) in += idx[i] * in_stride[perm[i]];
    map[o] = in;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < os[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> y(x.numel());
  for (std::size_t o = 0; o < y.size(); ++o) y[o] = x.data()[map[o]];
  return make_result(std::move(os), std::move(y), {x}, [x, map = std::move(map)](TensorImpl& self) mutable {
    auto g = x.grad();
    for (std::size_t o = 0; o < map.size(); ++o) g[map[o]] += self.grad[o];
  });
}

namespace detail {
inline void outer_inner(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

/// Sub-range [start, start + length) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& s = x.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 0, inner = 0;
  detail::outer_inner(s, axis, outer, inner);
  const std::size_t full = s[axis];
  Shape os = s;
  os[axis] = length;
  std::vector<double> y(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().data() + (o * full + start) * inner, length * inner, y.data() + o * length * inner);
  }
  return make_result(std::move(os), std::move(y), {x},
                     [x, outer, inner, full, start, length](TensorImpl& self) mutable {
                       auto g = x.grad();
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t i = 0; i < length * inner; ++i) {
                           g[(o * full + start) * inner + i] += self.grad[o * length * inner + i];
                         }
                       }
                     });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const auto& s0 = parts.front().shape();
  if (axis >= s0.size()) throw ShapeError("concat: bad axis for " + shape_str(s0));
  std::size_t total = 0;
  for (const auto& p : parts) {
    auto s = p.shape();
    if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
      }
    }
    total += s[axis];
  }
  std::size_t outer = 0, inner = 0;
  detail::outer_inner(s0, axis, outer, inner);
  Shape os = s0;
  os[axis] = total;
  std::vector<double> y(outer * total * inner);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().data() + o * len * inner, len * inner, y.data() + (o * total + offset) * inner);
    }
    offset += len;
  }
  return make_result(std::move(os), std::move(y), parts,
                     [parts, axis, outer, inner, total](TensorImpl& self) mutable {
                       std::size_t off = 0;
                       for (auto& p : parts) {
                         const std::size_t len = p.shape()[axis];
                         if (p.requires_grad()) {
                           auto g = p.grad();
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t i = 0; i < len * inner; ++i) {
                               g[o * len * inner + i] += self.grad[(o * total + off) * inner + i];
                             }
                           }
                         }
                         off += len;
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [x](TensorImpl& self) mutable {
    auto g = x.grad();
    for (double& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// Mean over the last axis; drops that axis.
inline Tensor mean_last(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Shape os(x.shape().begin(), x.shape().end() - 1);
  if (os.empty()) os = {1};
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) y[r] += x.data()[r * n + j];
    y[r] /= static_cast<double>(n);
  }
  return make_result(std::move(os), std::move(y), {x}, [x, rows, n](TensorImpl& self) mutable {
    auto g = x.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[r] / static_cast<double>(n);
    }
  });
}

// ---------------------------------------------------------------------------
// Losses and attention-specific ops

/// Mean over the batch of -[w y log s(z) + (1 - y) log(1 - s(z))], evaluated as
/// w y softplus(-z) + (1 - y) softplus(z).
inline Tensor weighted_bce(const Tensor& logits, std::span<const double> targets, double pos_weight) {
  if (targets.size() != logits.numel()) {
    throw ShapeError("weighted_bce: " + std::to_string(targets.size()) + " targets for logits of shape " +
                     shape_str(logits.shape()));
  }
  if (!(pos_weight > 0.0)) throw ArgumentError("pos_weight must be positive");
  const std::size_t n = targets.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.data()[i];
    const double y = targets[i];
    total += pos_weight * y * softplus_value(-z) + (1.0 - y) * softplus_value(z);
  }
  std::vector<double> t(targets.begin(), targets.end());
  return make_result({1}, {total / static_cast<double>(n)}, {logits},
                     [logits, t = std::move(t), pos_weight, n](TensorImpl& self) mutable {
                       auto g = logits.grad();
                       const double scale_factor = self.grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double s = pseudolab::sigmoid(logits.data()[i]);
                         g[i] += scale_factor * (pos_weight * t[i] * (s - 1.0) + (1.0 - t[i]) * s);
                       }
                     });
}

/// Row-normalized Gaussian kernel over temporal distance.
/// sigma: [G x L] positive scales, one per (group, query position).
/// Returns P: [G x L x L], P[g,i,j] proportional to exp(-(i - j)^2 / (2 sigma[g,i]^2)).
inline Tensor gaussian_prior(const Tensor& sigma) {
  if (sigma.rank() != 2) throw ShapeError("gaussian_prior: sigma must be [G x L], got " + shape_str(sigma.shape()));
  const std::size_t G = sigma.dim(0), L = sigma.dim(1);
  std::vector<double> p(G * L * L);
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t i = 0; i < L; ++i) {
      const double s = sigma.data()[g * L + i];
      if (!(s > 0.0)) throw NumericError("gaussian_prior: non-positive sigma");
      double* row = p.data() + (g * L + i) * L;
      double total = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        const double d = static_cast<double>(i) - static_cast<double>(j);
        total += (row[j] = std::exp(-d * d / (2.0 * s * s)));
      }
      for (std::size_t j = 0; j < L; ++j) row[j] /= total;
    }
  }
  return make_result({G, L, L}, std::move(p), {sigma}, [sigma, G, L](TensorImpl& self) mutable {
    auto gs = sigma.grad();
    for (std::size_t g = 0; g < G; ++g) {
      for (std::size_t i = 0; i < L; ++i) {
        const double s = sigma.data()[g * L + i];
        const double* row = self.data.data() + (g * L + i) * L;
        const double* gr = self.grad.data() + (g * L + i) * L;
        double dot = 0.0;
        for (std::size_t j = 0; j < L; ++j) dot += gr[j] * row[j];
        double acc = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          const double d = static_cast<double>(i) - static_cast<double>(j);
          acc += row[j] * (gr[j] - dot) * d * d / (s * s * s);
        }
        gs[g * L + i] += acc;
      }
    }
  });
}

inline constexpr double kKlFloor = 1e-12;

/// Mean over rows of KL(P_r || S_r) + KL(S_r || P_r), with probabilities
/// floored at 1e-12 inside the logarithms. P and S are row-stochastic along
/// their last axis.
inline Tensor association_discrepancy(const Tensor& P, const Tensor& S) {
  detail::require_same_shape(P, S, "association_discrepancy");
  const std::size_t n = P.shape().back();
  const std::size_t rows = P.numel() / n;
  double total = 0.0;
  for (std::size_t i = 0; i < P.numel(); ++i) {
    const double p = P.data()[i], s = S.data()[i];
    const double lp = std::log(std::max(p, kKlFloor)), ls = std::log(std::max(s, kKlFloor));
    total += p * (lp - ls) + s * (ls - lp);
  }
  return make_result({1}, {total / static_cast<double>(rows)}, {P, S}, [P, S, rows](TensorImpl& self) mutable {
    const double c = self.grad[0] / static_cast<double>(rows);
    for (int which = 0; which < 2; ++which) {
      const Tensor& a = which == 0 ? P : S;
      const Tensor& b = which == 0 ? S : P;
      if (!a.requires_grad()) continue;
      auto g = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double av = a.data()[i], bv = b.data()[i];
        const double af = std::max(av, kKlFloor), bf = std::max(bv, kKlFloor);
        double d = std::log(af) - std::log(bf);
        if (av > kKlFloor) d += 1.0 - bv / af;
        g[i] += c * d;
      }
    }
  });
}

}  // namespace pseudolab::nn
