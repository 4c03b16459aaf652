// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Differentiable dense ops. Every op computes its forward result eagerly
// and, when a GradTape is active and an input requires grad, records one
// backward closure. Backward closures only touch grad buffers, never data,
// so forward values stay valid after backward.

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "speechface/tensor.hpp"

namespace speechface {

// Additive attention bias matrix; entries are 0 or -infinity. Deliberately
// not a Tensor: Tensor construction rejects non-finite values, and biases
// carry no gradient.
struct AttnBias {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  static AttnBias zeros(std::size_t r, std::size_t c) {
    return AttnBias{r, c, std::vector<double>(r * c, 0.0)};
  }
  double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
  double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }

  // Top-left r x c corner.
  AttnBias crop(std::size_t r, std::size_t c) const {
    if (r > rows || c > cols) throw ShapeError("AttnBias: crop larger than bias");
    AttnBias out = zeros(r, c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) = at(i, j);
    return out;
  }
};

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

inline bool rec(const Tensor& a) {
  return GradTape::active() != nullptr && a.requires_grad;
}
inline bool rec(const Tensor& a, const Tensor& b) {
  return GradTape::active() != nullptr && (a.requires_grad || b.requires_grad);
}
inline bool rec(const Tensor& a, const Tensor& b, const Tensor& c) {
  return GradTape::active() != nullptr &&
         (a.requires_grad || b.requires_grad || c.requires_grad);
}

inline void require_2d(const Tensor& t, const char* who) {
  if (t.rank() != 2) throw ShapeError(std::string(who) + ": expected rank-2 tensor, got " + t.shape_str());
}

// Grad buffers must exist before a tensor is captured by a closure so every
// shallow copy shares the same buffer.
inline void prep(const Tensor& t) {
  if (t.requires_grad) t.ensure_grad();
}

}  // namespace detail

// out = a . b  with a: m x k, b: k x n
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dims disagree " + a.shape_str() + " x " + b.shape_str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const bool rec = detail::rec(a, b);
  Tensor out = Tensor::alloc({m, n}, rec);
  {
    const double* A = a.data->data();
    const double* B = b.data->data();
    double* C = out.data->data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A[i * k + p];
        const double* Brow = B + p * n;
        double* Crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += av * Brow[j];
      }
  }
  if (rec) {
    detail::prep(a);
    detail::prep(b);
    GradTape::active()->record([a, b, out, m, k, n] {
      const double* dC = out.grad->data();
      if (a.requires_grad) {
        double* dA = a.grad->data();
        const double* B = b.data->data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double* dCrow = dC + i * n;
            const double* Brow = B + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += dCrow[j] * Brow[j];
            dA[i * k + p] += s;
          }
      }
      if (b.requires_grad) {
        double* dB = b.grad->data();
        const double* A = a.data->data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* dCrow = dC + i * n;
            double* dBrow = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) dBrow[j] += av * dCrow[j];
          }
      }
    });
  }
  return out;
}

// out = a . b^T  with a: m x k, b: n x k  (row-against-row dot products)
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul_nt");
  detail::require_2d(b, "matmul_nt");
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: inner dims disagree " + a.shape_str() + " x " + b.shape_str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const bool rec = detail::rec(a, b);
  Tensor out = Tensor::alloc({m, n}, rec);
  {
    const double* A = a.data->data();
    const double* B = b.data->data();
    double* C = out.data->data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double* Arow = A + i * k;
        const double* Brow = B + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += Arow[p] * Brow[p];
        C[i * n + j] = s;
      }
  }
  if (rec) {
    detail::prep(a);
    detail::prep(b);
    GradTape::active()->record([a, b, out, m, k, n] {
      const double* dC = out.grad->data();
      if (a.requires_grad) {
        double* dA = a.grad->data();
        const double* B = b.data->data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double d = dC[i * n + j];
            if (d == 0.0) continue;
            const double* Brow = B + j * k;
            double* dArow = dA + i * k;
            for (std::size_t p = 0; p < k; ++p) dArow[p] += d * Brow[p];
          }
      }
      if (b.requires_grad) {
        double* dB = b.grad->data();
        const double* A = a.data->data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double d = dC[i * n + j];
            if (d == 0.0) continue;
            const double* Arow = A + i * k;
            double* dBrow = dB + j * k;
            for (std::size_t p = 0; p < k; ++p) dBrow[p] += d * Arow[p];
          }
      }
    });
  }
  return out;
}

// out = x . W + b  with x: m x din, W: din x dout, b: dout (rank-1).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require_2d(x, "linear");
  detail::require_2d(w, "linear");
  if (b.rank() != 1)
    throw ShapeError("linear: bias must be rank-1, got " + b.shape_str());
  if (x.cols() != w.rows() || w.cols() != b.shape[0])
    throw ShapeError("linear: shape mismatch x" + x.shape_str() + " W" +
                     w.shape_str() + " b" + b.shape_str());
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  const bool rec = detail::rec(x, w, b);
  Tensor out = Tensor::alloc({m, n}, rec);
  {
    const double* X = x.data->data();
    const double* W = w.data->data();
    const double* B = b.data->data();
    double* C = out.data->data();
    for (std::size_t i = 0; i < m; ++i) {
      double* Crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) Crow[j] = B[j];
      for (std::size_t p = 0; p < k; ++p) {
        const double xv = X[i * k + p];
        const double* Wrow = W + p * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += xv * Wrow[j];
      }
    }
  }
  if (rec) {
    detail::prep(x);
    detail::prep(w);
    detail::prep(b);
    GradTape::active()->record([x, w, b, out, m, k, n] {
      const double* dC = out.grad->data();
      if (x.requires_grad) {
        double* dX = x.grad->data();
        const double* W = w.data->data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double* dCrow = dC + i * n;
            const double* Wrow = W + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += dCrow[j] * Wrow[j];
            dX[i * k + p] += s;
          }
      }
      if (w.requires_grad) {
        double* dW = w.grad->data();
        const double* X = x.data->data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double xv = X[i * k + p];
            const double* dCrow = dC + i * n;
            double* dWrow = dW + p * n;
            for (std::size_t j = 0; j < n; ++j) dWrow[j] += xv * dCrow[j];
          }
      }
      if (b.requires_grad) {
        double* dB = b.grad->data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) dB[j] += dC[i * n + j];
      }
    });
  }
  return out;
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(who) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  const bool rec = detail::rec(a, b);
  Tensor out = Tensor::alloc(a.shape, rec);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i)
    (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  if (rec) {
    detail::prep(a);
    detail::prep(b);
    GradTape::active()->record([a, b, out, n] {
      const double* d = out.grad->data();
      if (a.requires_grad) {
        double* da = a.grad->data();
        for (std::size_t i = 0; i < n; ++i) da[i] += d[i];
      }
      if (b.requires_grad) {
        double* db = b.grad->data();
        for (std::size_t i = 0; i < n; ++i) db[i] += d[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  const bool rec = detail::rec(a, b);
  Tensor out = Tensor::alloc(a.shape, rec);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i)
    (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  if (rec) {
    detail::prep(a);
    detail::prep(b);
    GradTape::active()->record([a, b, out, n] {
      const double* d = out.grad->data();
      if (a.requires_grad) {
        double* da = a.grad->data();
        for (std::size_t i = 0; i < n; ++i) da[i] += d[i];
      }
      if (b.requires_grad) {
        double* db = b.grad->data();
        for (std::size_t i = 0; i < n; ++i) db[i] -= d[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& x, double s) {
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc(x.shape, rec);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = s * (*x.data)[i];
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out, s, n] {
      double* dx = x.grad->data();
      const double* d = out.grad->data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += s * d[i];
    });
  }
  return out;
}

// Elementwise max(x, slope * x). slope must lie in (0, 1); the derivative
// at exactly zero takes the slope branch.
inline Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0))
    throw NumericError("leaky_relu: slope must be in (0,1), got " + std::to_string(slope));
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc(x.shape, rec);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = (*x.data)[i];
    (*out.data)[i] = v > 0.0 ? v : slope * v;
  }
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out, slope, n] {
      double* dx = x.grad->data();
      const double* xv = x.data->data();
      const double* d = out.grad->data();
      for (std::size_t i = 0; i < n; ++i)
        dx[i] += (xv[i] > 0.0 ? 1.0 : slope) * d[i];
    });
  }
  return out;
}

// Row-wise softmax with max-subtraction. -inf entries map to exactly 0;
// a row of only -inf is an error.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_2d(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc({m, n}, rec);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data->data() + i * n;
    double* yi = out.data->data() + i * n;
    double mx = kNegInf;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xi[j]);
    if (mx == kNegInf)
      throw NumericError("softmax_rows: row " + std::to_string(i) + " fully masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    for (std::size_t j = 0; j < n; ++j) yi[j] /= sum;
  }
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out, m, n] {
      double* dx = x.grad->data();
      const double* y = out.data->data();
      const double* dy = out.grad->data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* yi = y + i * n;
        const double* dyi = dy + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += yi[j] * dyi[j];
        double* dxi = dx + i * n;
        for (std::size_t j = 0; j < n; ++j) dxi[j] += yi[j] * (dyi[j] - dot);
      }
    });
  }
  return out;
}

// out = x + bias with a constant (possibly -inf) bias matrix.
inline Tensor add_bias(const Tensor& x, const AttnBias& bias) {
  detail::require_2d(x, "add_bias");
  if (x.rows() != bias.rows || x.cols() != bias.cols)
    throw ShapeError("add_bias: bias " + std::to_string(bias.rows) + "x" +
                     std::to_string(bias.cols) + " vs scores " + x.shape_str());
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc(x.shape, rec);
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) (*out.data)[i] = (*x.data)[i] + bias.v[i];
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out, n] {
      double* dx = x.grad->data();
      const double* d = out.grad->data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += d[i];
    });
  }
  return out;
}

// Per-row layer normalization with learned gain/bias (rank-1, length = cols).
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain,
                              const Tensor& bias, double eps = 1e-5) {
  detail::require_2d(x, "layer_norm_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.rank() != 1 || gain.shape[0] != n || bias.rank() != 1 || bias.shape[0] != n)
    throw ShapeError("layer_norm_rows: gain/bias must be rank-1 length " + std::to_string(n));
  const bool rec = detail::rec(x, gain, bias);
  Tensor out = Tensor::alloc({m, n}, rec);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data->data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double c = xi[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    double* yi = out.data->data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xi[j] - mu) * inv;
      xhat[i * n + j] = h;
      yi[j] = (*gain.data)[j] * h + (*bias.data)[j];
    }
  }
  if (rec) {
    detail::prep(x);
    detail::prep(gain);
    detail::prep(bias);
    GradTape::active()->record([x, gain, bias, out, m, n,
                                xhat = std::move(xhat),
                                inv_std = std::move(inv_std)] {
      const double* dy = out.grad->data();
      const double* g = gain.data->data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* dyi = dy + i * n;
        const double* hi = xhat.data() + i * n;
        if (gain.requires_grad || bias.requires_grad) {
          double* dg = gain.requires_grad ? gain.grad->data() : nullptr;
          double* db = bias.requires_grad ? bias.grad->data() : nullptr;
          for (std::size_t j = 0; j < n; ++j) {
            if (dg) dg[j] += dyi[j] * hi[j];
            if (db) db[j] += dyi[j];
          }
        }
        if (x.requires_grad) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = dyi[j] * g[j];
            mean_dh += dh;
            mean_dh_h += dh * hi[j];
          }
          mean_dh /= static_cast<double>(n);
          mean_dh_h /= static_cast<double>(n);
          double* dxi = x.grad->data() + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            const double dh = dyi[j] * g[j];
            dxi[j] += inv_std[i] * (dh - mean_dh - hi[j] * mean_dh_h);
          }
        }
      }
    });
  }
  return out;
}

// Horizontal concatenation of rank-2 tensors with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
    any_grad = any_grad || p.requires_grad;
  }
  const bool rec = GradTape::active() != nullptr && any_grad;
  Tensor out = Tensor::alloc({m, total}, rec);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j)
        out.at(i, off + j) = p.at(i, j);
    off += c;
  }
  if (rec) {
    for (const Tensor& p : parts) detail::prep(p);
    GradTape::active()->record([parts, out, m, total] {
      const double* d = out.grad->data();
      std::size_t off = 0;
      for (const Tensor& p : parts) {
        const std::size_t c = p.cols();
        if (p.requires_grad) {
          double* dp = p.grad->data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j)
              dp[i * c + j] += d[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  detail::require_2d(x, "slice_cols");
  if (c0 >= c1 || c1 > x.cols()) throw ShapeError("slice_cols: bad range");
  const std::size_t m = x.rows(), n = x.cols(), c = c1 - c0;
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc({m, c}, rec);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.at(i, c0 + j);
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out, m, n, c, c0] {
      double* dx = x.grad->data();
      const double* d = out.grad->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j)
          dx[i * n + c0 + j] += d[i * c + j];
    });
  }
  return out;
}

inline Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  detail::require_2d(x, "slice_rows");
  if (r0 >= r1 || r1 > x.rows()) throw ShapeError("slice_rows: bad range");
  const std::size_t n = x.cols(), r = r1 - r0;
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc({r, n}, rec);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(r0 + i, j);
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out, r, n, r0] {
      double* dx = x.grad->data();
      const double* d = out.grad->data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < n; ++j)
          dx[(r0 + i) * n + j] += d[i * n + j];
    });
  }
  return out;
}

// Stacks T tensors of shape 1 x d into T x d.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const std::size_t d = rows[0].cols();
  bool any_grad = false;
  for (const Tensor& r : rows) {
    detail::require_2d(r, "stack_rows");
    if (r.rows() != 1 || r.cols() != d) throw ShapeError("stack_rows: rows must be 1 x d");
    any_grad = any_grad || r.requires_grad;
  }
  const bool rec = GradTape::active() != nullptr && any_grad;
  Tensor out = Tensor::alloc({rows.size(), d}, rec);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = rows[i].at(0, j);
  if (rec) {
    for (const Tensor& r : rows) detail::prep(r);
    GradTape::active()->record([rows, out, d] {
      const double* dout = out.grad->data();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].requires_grad) continue;
        double* dr = rows[i].grad->data();
        for (std::size_t j = 0; j < d; ++j) dr[j] += dout[i * d + j];
      }
    });
  }
  return out;
}

// out = x + c with a constant row broadcast over all rows of x.
inline Tensor add_row_const(const Tensor& x, const std::vector<double>& c) {
  detail::require_2d(x, "add_row_const");
  if (x.cols() != c.size()) throw ShapeError("add_row_const: width mismatch");
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc(x.shape, rec);
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + c[j];
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out] {
      double* dx = x.grad->data();
      const double* d = out.grad->data();
      const std::size_t n = out.numel();
      for (std::size_t i = 0; i < n; ++i) dx[i] += d[i];
    });
  }
  return out;
}

// Column gather: out[:, k] = x[:, cols[k]]. Duplicate indices accumulate
// on the way back.
inline Tensor gather_cols(const Tensor& x, const std::vector<std::size_t>& cols) {
  detail::require_2d(x, "gather_cols");
  for (std::size_t c : cols)
    if (c >= x.cols()) throw ShapeError("gather_cols: index out of range");
  const std::size_t m = x.rows(), n = x.cols(), k = cols.size();
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc({m, k}, rec);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = x.at(i, cols[j]);
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out, cols, m, n, k] {
      double* dx = x.grad->data();
      const double* d = out.grad->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j)
          dx[i * n + cols[j]] += d[i * k + j];
    });
  }
  return out;
}

// Scalar sum of squares.
inline Tensor sum_sq(const Tensor& x) {
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc({1}, rec);
  double s = 0.0;
  for (double v : *x.data) s += v * v;
  (*out.data)[0] = s;
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out] {
      const double d = (*out.grad)[0];
      double* dx = x.grad->data();
      const double* xv = x.data->data();
      const std::size_t n = x.numel();
      for (std::size_t i = 0; i < n; ++i) dx[i] += 2.0 * xv[i] * d;
    });
  }
  return out;
}

// Scalar sum_i w[i] * sum_j x[i,j]^2 with constant row weights.
inline Tensor row_weighted_sum_sq(const Tensor& x, const std::vector<double>& w) {
  detail::require_2d(x, "row_weighted_sum_sq");
  if (w.size() != x.rows())
    throw ShapeError("row_weighted_sum_sq: " + std::to_string(w.size()) +
                     " weights for " + std::to_string(x.rows()) + " rows");
  const std::size_t m = x.rows(), n = x.cols();
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc({1}, rec);
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data->data() + i * n;
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += xi[j] * xi[j];
    s += w[i] * row;
  }
  (*out.data)[0] = s;
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out, w, m, n] {
      const double d = (*out.grad)[0];
      double* dx = x.grad->data();
      const double* xv = x.data->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          dx[i * n + j] += 2.0 * w[i] * xv[i * n + j] * d;
    });
  }
  return out;
}

// Scalar sum of all entries.
inline Tensor sum_all(const Tensor& x) {
  const bool rec = detail::rec(x);
  Tensor out = Tensor::alloc({1}, rec);
  double s = 0.0;
  for (double v : *x.data) s += v;
  (*out.data)[0] = s;
  if (rec) {
    detail::prep(x);
    GradTape::active()->record([x, out] {
      const double d = (*out.grad)[0];
      double* dx = x.grad->data();
      const std::size_t n = x.numel();
      for (std::size_t i = 0; i < n; ++i) dx[i] += d;
    });
  }
  return out;
}

// Writes a 1 x d row into row `idx` of a preallocated buffer tensor. The
// buffer is written in place; this is only sound under the decoder's
// write-once-then-read discipline (each row is written once, and only ops
// recorded after the write read it). Gradient flows back from the buffer
// row to the source row.
inline void append_row(const Tensor& buf, const Tensor& row, std::size_t idx) {
  detail::require_2d(buf, "append_row");
  detail::require_2d(row, "append_row");
  if (row.rows() != 1 || row.cols() != buf.cols())
    throw ShapeError("append_row: row " + row.shape_str() + " vs buffer " + buf.shape_str());
  if (idx >= buf.rows()) throw ShapeError("append_row: index out of range");
  const std::size_t d = buf.cols();
  for (std::size_t j = 0; j < d; ++j)
    (*buf.data)[idx * d + j] = (*row.data)[j];
  if (GradTape::active() && row.requires_grad) {
    if (!buf.requires_grad)
      throw Error("append_row: buffer must require grad when the row does");
    detail::prep(buf);
    detail::prep(row);
    GradTape::active()->record([buf, row, idx, d] {
      const double* db = buf.grad->data() + idx * d;
      double* dr = row.grad->data();
      for (std::size_t j = 0; j < d; ++j) dr[j] += db[j];
    });
  }
}

}  // namespace speechface
