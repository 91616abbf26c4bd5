#pragma once

// Differentiable primitives. Every op takes the tape first; the output is
// recorded with a backward closure only when the tape is recording and some
// input requires a gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qat/tape.hpp"
#include "qat/tensor.hpp"

namespace qat {

namespace detail {

inline void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

// C[M,N] (+)= A[M,K] B[K,N], with A(i,k) = A[i * si + k * sk] so the same
// kernel serves A and A^T. Column blocks keep a slab of B cache-resident and
// four rows of C share each load of B; every C element still sums over k in
// ascending order.
template <typename T>
void gemm_strided(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t si, std::size_t sk, const T* B,
                  T* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, T{0});
  constexpr std::size_t JB = 256;
  for (std::size_t j0 = 0; j0 < N; j0 += JB) {
    const std::size_t jn = std::min(JB, N - j0);
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      T* c0 = C + i * N + j0;
      T* c1 = c0 + N;
      T* c2 = c1 + N;
      T* c3 = c2 + N;
      for (std::size_t k = 0; k < K; ++k) {
        const T* ak = A + k * sk + i * si;
        const T a0 = ak[0], a1 = ak[si], a2 = ak[2 * si], a3 = ak[3 * si];
        const T* b = B + k * N + j0;
        for (std::size_t j = 0; j < jn; ++j) {
          const T bj = b[j];
          c0[j] += a0 * bj;
          c1[j] += a1 * bj;
          c2[j] += a2 * bj;
          c3[j] += a3 * bj;
        }
      }
    }
    for (; i < M; ++i) {
      T* c = C + i * N + j0;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[i * si + k * sk];
        const T* b = B + k * N + j0;
        for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  gemm_strided(M, N, K, A, K, 1, B, C, accumulate);
}

// C[M,N] (+)= A[M,K] B[N,K]^T. Both operands are read along k, so each C
// element is a dot product split over kLanes fixed accumulators (summed in
// lane order at the end). Deterministic, and vectorizes without reassociation.
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  constexpr std::size_t kLanes = 16;
  const std::size_t Kv = K - K % kLanes;
  auto finish = [&](T* c, const T* acc, const T* a, const T* b) {
    T s{0};
    for (std::size_t l = 0; l < kLanes; ++l) s += acc[l];
    for (std::size_t k = Kv; k < K; ++k) s += a[k] * b[k];
    *c = accumulate ? *c + s : s;
  };
  std::size_t i = 0;
  for (; i + 2 <= M; i += 2) {
    const T* a0 = A + i * K;
    const T* a1 = a0 + K;
    std::size_t j = 0;
    for (; j + 2 <= N; j += 2) {
      const T* b0 = B + j * K;
      const T* b1 = b0 + K;
      T s00[kLanes]{}, s01[kLanes]{}, s10[kLanes]{}, s11[kLanes]{};
      for (std::size_t k = 0; k < Kv; k += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) {
          s00[l] += a0[k + l] * b0[k + l];
          s01[l] += a0[k + l] * b1[k + l];
          s10[l] += a1[k + l] * b0[k + l];
          s11[l] += a1[k + l] * b1[k + l];
        }
      }
      finish(C + i * N + j, s00, a0, b0);
      finish(C + i * N + j + 1, s01, a0, b1);
      finish(C + (i + 1) * N + j, s10, a1, b0);
      finish(C + (i + 1) * N + j + 1, s11, a1, b1);
    }
    for (; j < N; ++j) {
      const T* b0 = B + j * K;
      T s0[kLanes]{}, s1[kLanes]{};
      for (std::size_t k = 0; k < Kv; k += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) {
          s0[l] += a0[k + l] * b0[k + l];
          s1[l] += a1[k + l] * b0[k + l];
        }
      finish(C + i * N + j, s0, a0, b0);
      finish(C + (i + 1) * N + j, s1, a1, b0);
    }
  }
  for (; i < M; ++i) {
    const T* a0 = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b0 = B + j * K;
      T s0[kLanes]{};
      for (std::size_t k = 0; k < Kv; k += kLanes)
        for (std::size_t l = 0; l < kLanes; ++l) s0[l] += a0[k + l] * b0[k + l];
      finish(C + i * N + j, s0, a0, b0);
    }
  }
}

// C[M,N] (+)= A^T B with A stored [K,M].
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
  gemm_strided(M, N, K, A, 1, M, B, C, accumulate);
}

struct ConvGeometry {
  std::size_t channels, height, width, kh, kw, stride, pad, out_h, out_w;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
};

// cols row r starts at cols + r * ld; ld defaults to the pixel count.
// Output columns [lo, hi) whose input column ox*stride + k - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t k,
                                                       std::size_t stride, std::size_t pad) {
  std::size_t lo = 0;
  while (lo < out && lo * stride + k < pad) ++lo;
  std::size_t hi = lo;
  while (hi < out && hi * stride + k < pad + in) ++hi;
  return {lo, hi};
}

template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols, std::size_t ld = 0) {
  const std::size_t P = ld ? ld : g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto [ylo, yhi] = valid_range(g.out_h, g.height, ki, g.stride, g.pad);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const auto [xlo, xhi] = valid_range(g.out_w, g.width, kj, g.stride, g.pad);
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          T* r = row + oy * g.out_w;
          if (oy < ylo || oy >= yhi) {
            std::fill(r, r + g.out_w, T{0});
            continue;
          }
          const T* src = x + (c * g.height + oy * g.stride + ki - g.pad) * g.width;
          std::fill(r, r + xlo, T{0});
          for (std::size_t ox = xlo; ox < xhi; ++ox) r[ox] = src[ox * g.stride + kj - g.pad];
          std::fill(r + xhi, r + g.out_w, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* dx, std::size_t ld = 0) {
  const std::size_t P = ld ? ld : g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const auto [ylo, yhi] = valid_range(g.out_h, g.height, ki, g.stride, g.pad);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const auto [xlo, xhi] = valid_range(g.out_w, g.width, kj, g.stride, g.pad);
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * P;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const T* r = row + oy * g.out_w;
          T* dst = dx + (c * g.height + oy * g.stride + ki - g.pad) * g.width;
          for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * g.stride + kj - g.pad] += r[ox];
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] + db[i];
  if (tape.should_record({&a, &b})) {
    out.set_requires_grad(true);
    tape.record("add", out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "mul",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] * db[i];
  if (tape.should_record({&a, &b})) {
    out.set_requires_grad(true);
    tape.record("mul", out, [a, b, out]() mutable {
      auto g = out.grad();
      auto da = a.data();
      auto db = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * db[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * da[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] * c;
  if (tape.should_record({&a})) {
    out.set_requires_grad(true);
    tape.record("scale", out, [a, out, c]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto o = out.data();
  auto da = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = da[i] > T{0} ? da[i] : T{0};
  if (tape.should_record({&a})) {
    out.set_requires_grad(true);
    tape.record("relu", out, [a, out]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      auto da = a.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (da[i] > T{0}) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  T acc{0};
  for (T v : a.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (tape.should_record({&a})) {
    out.set_requires_grad(true);
    tape.record("sum", out, [a, out]() mutable {
      const T g = out.grad()[0];
      for (T& v : a.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& a) {
  detail::require(a.numel() > 0, "mean", "empty tensor");
  T acc{0};
  for (T v : a.data()) acc += v;
  const T inv = T{1} / static_cast<T>(a.numel());
  Tensor<T> out = Tensor<T>::scalar(acc * inv);
  if (tape.should_record({&a})) {
    out.set_requires_grad(true);
    tape.record("mean", out, [a, out, inv]() mutable {
      const T g = out.grad()[0] * inv;
      for (T& v : a.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, Shape shape) {
  detail::require(shape_numel(shape) == a.numel(), "reshape",
                  "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<T> copy(a.data().begin(), a.data().end());
  Tensor<T> out(std::move(shape), std::move(copy));
  if (tape.should_record({&a})) {
    out.set_requires_grad(true);
    tape.record("reshape", out, [a, out]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

// [M,K] x [K,N] -> [M,N]
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul",
                  "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor<T> out(Shape{M, N});
  detail::gemm_nn(M, N, K, a.data().data(), b.data().data(), out.data().data(), false);
  if (tape.should_record({&a, &b})) {
    out.set_requires_grad(true);
    tape.record("matmul", out, [a, b, out, M, N, K]() mutable {
      const T* g = out.grad().data();
      if (a.requires_grad()) detail::gemm_nt(M, K, N, g, b.data().data(), a.grad().data(), true);
      if (b.requires_grad()) detail::gemm_tn(K, N, M, a.data().data(), g, b.grad().data(), true);
    });
  }
  return out;
}

// x[N,in] * W[out,in]^T (+ bias[out]) -> [N,out]
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  detail::require(x.ndim() == 2 && w.ndim() == 2 && x.dim(1) == w.dim(1), "linear",
                  "incompatible shapes x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
  const std::size_t N = x.dim(0), in = x.dim(1), outf = w.dim(0);
  if (bias.defined()) {
    detail::require(bias.numel() == outf, "linear",
                    "bias shape " + shape_str(bias.shape()) + " does not match " + std::to_string(outf) + " outputs");
  }
  Tensor<T> out(Shape{N, outf});
  detail::gemm_nt(N, outf, in, x.data().data(), w.data().data(), out.data().data(), false);
  if (bias.defined()) {
    auto o = out.data();
    auto b = bias.data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < outf; ++j) o[n * outf + j] += b[j];
  }
  if (tape.should_record({&x, &w, &bias})) {
    out.set_requires_grad(true);
    tape.record("linear", out, [x, w, bias, out, N, in, outf]() mutable {
      const T* g = out.grad().data();
      if (x.requires_grad()) detail::gemm_nn(N, in, outf, g, w.data().data(), x.grad().data(), true);
      if (w.requires_grad()) detail::gemm_tn(outf, in, N, g, x.data().data(), w.grad().data(), true);
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t j = 0; j < outf; ++j) gb[j] += g[n * outf + j];
      }
    });
  }
  return out;
}

// x[N,C,H,W] (*) w[O,C,kh,kw] -> [N,O,Ho,Wo]; no bias.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, std::size_t stride = 1, std::size_t pad = 0) {
  detail::require(x.ndim() == 4 && w.ndim() == 4, "conv2d",
                  "expected 4-d input and weight, got x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
  detail::require(x.dim(1) == w.dim(1), "conv2d",
                  "channel mismatch x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
  detail::require(stride >= 1, "conv2d", "stride must be >= 1");
  detail::require(x.dim(2) + 2 * pad >= w.dim(2) && x.dim(3) + 2 * pad >= w.dim(3), "conv2d",
                  "kernel larger than padded input x" + shape_str(x.shape()) + " w" + shape_str(w.shape()));
  detail::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, pad, 0, 0};
  g.out_h = (g.height + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * pad - g.kw) / stride + 1;
  const std::size_t N = x.dim(0), O = w.dim(0), K = g.patch(), P = g.pixels();
  // Samples are processed in chunks so each GEMM has a wide inner dimension.
  const std::size_t chunk = std::max<std::size_t>(1, std::min<std::size_t>(N, 2048 / P));
  Tensor<T> out(Shape{N, O, g.out_h, g.out_w});
  const std::size_t in_size = g.channels * g.height * g.width;
  {
    std::vector<T> cols(K * chunk * P), tmp(O * chunk * P);
    for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
      const std::size_t cnt = std::min(chunk, N - n0), ld = cnt * P;
      for (std::size_t s = 0; s < cnt; ++s)
        detail::im2col(g, x.data().data() + (n0 + s) * in_size, cols.data() + s * P, ld);
      detail::gemm_nn(O, ld, K, w.data().data(), cols.data(), tmp.data(), false);
      T* o = out.data().data() + n0 * O * P;
      for (std::size_t s = 0; s < cnt; ++s)
        for (std::size_t oc = 0; oc < O; ++oc)
          std::copy_n(tmp.data() + oc * ld + s * P, P, o + (s * O + oc) * P);
    }
  }
  if (tape.should_record({&x, &w})) {
    out.set_requires_grad(true);
    tape.record("conv2d", out, [x, w, out, g, N, O, K, P, in_size, chunk]() mutable {
      std::vector<T> cols(K * chunk * P), go(O * chunk * P);
      std::vector<T> dcols(x.requires_grad() ? K * chunk * P : 0);
      const T* gout = out.grad().data();
      for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
        const std::size_t cnt = std::min(chunk, N - n0), ld = cnt * P;
        for (std::size_t s = 0; s < cnt; ++s)
          for (std::size_t oc = 0; oc < O; ++oc)
            std::copy_n(gout + ((n0 + s) * O + oc) * P, P, go.data() + oc * ld + s * P);
        if (w.requires_grad()) {
          for (std::size_t s = 0; s < cnt; ++s)
            detail::im2col(g, x.data().data() + (n0 + s) * in_size, cols.data() + s * P, ld);
          detail::gemm_nt(O, K, ld, go.data(), cols.data(), w.grad().data(), true);
        }
        if (x.requires_grad()) {
          detail::gemm_tn(K, ld, O, w.data().data(), go.data(), dcols.data(), false);
          for (std::size_t s = 0; s < cnt; ++s)
            detail::col2im_add(g, dcols.data() + s * P, x.grad().data() + (n0 + s) * in_size, ld);
        }
      }
    });
  }
  return out;
}

// Running statistics use out = momentum * running + (1 - momentum) * batch.
template <typename T>
struct BatchNormConfig {
  T momentum = T(0.9);
  T eps = T(1e-5);
};

// Normalizes x[N,C,...] per channel. In training mode uses batch statistics
// and updates running_mean / running_var (unbiased variance); otherwise uses
// the running statistics.
template <typename T>
Tensor<T> batch_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     BatchNormConfig<T> cfg = {}) {
  detail::require(x.ndim() >= 2, "batch_norm", "expected at least 2-d input, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1);
  const std::size_t S = x.numel() / (N * C);
  detail::require(gamma.numel() == C && beta.numel() == C && running_mean.numel() == C && running_var.numel() == C,
                  "batch_norm", "parameter size does not match " + std::to_string(C) + " channels");
  const std::size_t M = N * S;
  detail::require(!training || M > 1, "batch_norm", "training mode needs more than one value per channel");

  Tensor<T> out(x.shape());
  std::vector<T> mu(C), invstd(C);
  auto dx = x.data();
  auto o = out.data();
  for (std::size_t c = 0; c < C; ++c) {
    T m, v;
    if (training) {
      T acc{0};
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t s = 0; s < S; ++s) acc += dx[(n * C + c) * S + s];
      m = acc / static_cast<T>(M);
      T var{0};
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t s = 0; s < S; ++s) {
          const T d = dx[(n * C + c) * S + s] - m;
          var += d * d;
        }
      v = var / static_cast<T>(M);
      running_mean[c] = cfg.momentum * running_mean[c] + (T{1} - cfg.momentum) * m;
      running_var[c] = cfg.momentum * running_var[c] +
                       (T{1} - cfg.momentum) * (var / static_cast<T>(M - 1));
    } else {
      m = running_mean[c];
      v = running_var[c];
    }
    mu[c] = m;
    invstd[c] = T{1} / std::sqrt(v + cfg.eps);
    const T ga = gamma[c], be = beta[c];
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = (n * C + c) * S + s;
        o[i] = ga * (dx[i] - m) * invstd[c] + be;
      }
  }

  if (tape.should_record({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    tape.record("batch_norm", out, [x, gamma, beta, out, mu, invstd, training, N, C, S, M]() mutable {
      auto g = out.grad();
      auto dx = x.data();
      for (std::size_t c = 0; c < C; ++c) {
        T sum_g{0}, sum_gx{0};
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t i = (n * C + c) * S + s;
            const T xhat = (dx[i] - mu[c]) * invstd[c];
            sum_g += g[i];
            sum_gx += g[i] * xhat;
          }
        if (gamma.requires_grad()) gamma.grad()[c] += sum_gx;
        if (beta.requires_grad()) beta.grad()[c] += sum_g;
        if (!x.requires_grad()) continue;
        auto gx = x.grad();
        const T ga = gamma[c];
        if (training) {
          // dx = gamma * invstd / M * (M*g - sum(g) - xhat * sum(g*xhat))
          const T k = ga * invstd[c] / static_cast<T>(M);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t i = (n * C + c) * S + s;
              const T xhat = (dx[i] - mu[c]) * invstd[c];
              gx[i] += k * (static_cast<T>(M) * g[i] - sum_g - xhat * sum_gx);
            }
        } else {
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t i = (n * C + c) * S + s;
              gx[i] += g[i] * ga * invstd[c];
            }
        }
      }
    });
  }
  return out;
}

// [N,C,H,W] -> [N,C]
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x) {
  detail::require(x.ndim() == 4, "global_avg_pool", "expected 4-d input, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{N, C});
  auto dx = x.data();
  auto o = out.data();
  const T inv = T{1} / static_cast<T>(S);
  for (std::size_t i = 0; i < N * C; ++i) {
    T acc{0};
    for (std::size_t s = 0; s < S; ++s) acc += dx[i * S + s];
    o[i] = acc * inv;
  }
  if (tape.should_record({&x})) {
    out.set_requires_grad(true);
    tape.record("global_avg_pool", out, [x, out, N, C, S, inv]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < N * C; ++i)
        for (std::size_t s = 0; s < S; ++s) gx[i * S + s] += g[i] * inv;
    });
  }
  return out;
}

// Identity shortcut for a downsampling residual block: keeps every stride-th
// pixel and zero-pads the channel dimension up to out_channels.
template <typename T>
Tensor<T> shortcut_pad(Tape<T>& tape, const Tensor<T>& x, std::size_t stride, std::size_t out_channels) {
  detail::require(x.ndim() == 4 && out_channels >= x.dim(1) && stride >= 1, "shortcut_pad",
                  "bad arguments for input " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
  const std::size_t lead = (out_channels - C) / 2;
  Tensor<T> out(Shape{N, out_channels, Ho, Wo});
  auto dx = x.data();
  auto o = out.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t z = 0; z < Wo; ++z)
          o[((n * out_channels + c + lead) * Ho + y) * Wo + z] = dx[((n * C + c) * H + y * stride) * W + z * stride];
  if (tape.should_record({&x})) {
    out.set_requires_grad(true);
    tape.record("shortcut_pad", out, [x, out, N, C, H, W, Ho, Wo, stride, out_channels, lead]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t z = 0; z < Wo; ++z)
              gx[((n * C + c) * H + y * stride) * W + z * stride] +=
                  g[((n * out_channels + c + lead) * Ho + y) * Wo + z];
    });
  }
  return out;
}

// Mean softmax cross-entropy over the batch. logits [N,C], labels in [0,C).
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  detail::require(logits.ndim() == 2 && logits.dim(0) == labels.size(), "softmax_cross_entropy",
                  "logits " + shape_str(logits.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  std::vector<T> prob(N * C);
  auto z = logits.data();
  T loss{0};
  for (std::size_t n = 0; n < N; ++n) {
    const auto label = labels[n];
    detail::require(label >= 0 && static_cast<std::size_t>(label) < C, "softmax_cross_entropy",
                    "label " + std::to_string(label) + " out of range for " + std::to_string(C) + " classes");
    T mx = z[n * C];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, z[n * C + c]);
    T denom{0};
    for (std::size_t c = 0; c < C; ++c) {
      prob[n * C + c] = std::exp(z[n * C + c] - mx);
      denom += prob[n * C + c];
    }
    for (std::size_t c = 0; c < C; ++c) prob[n * C + c] /= denom;
    loss += -(z[n * C + static_cast<std::size_t>(label)] - mx - std::log(denom));
  }
  Tensor<T> out = Tensor<T>::scalar(loss / static_cast<T>(N));
  if (tape.should_record({&logits})) {
    out.set_requires_grad(true);
    std::vector<std::int32_t> lab(labels.begin(), labels.end());
    tape.record("softmax_cross_entropy", out, [logits, out, prob = std::move(prob), lab = std::move(lab), N, C]() mutable {
      const T g = out.grad()[0] / static_cast<T>(N);
      auto gz = logits.grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T onehot = static_cast<std::size_t>(lab[n]) == c ? T{1} : T{0};
          gz[n * C + c] += g * (prob[n * C + c] - onehot);
        }
    });
  }
  return out;
}

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  auto z = logits.data();
  std::size_t correct = 0;
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (z[n * C + c] > z[n * C + best]) best = c;
    if (static_cast<std::int32_t>(best) == labels[n]) ++correct;
  }
  return correct;
}

}  // namespace qat
