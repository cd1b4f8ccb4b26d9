#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <vector>

#include "sagnet/tensor.hpp"

namespace sagnet {

// ---------------------------------------------------------------------------
// Small row-major GEMM kernels. Sized for desk-scale convnets; the inner loops
// are written so the compiler can vectorize them.
// ---------------------------------------------------------------------------

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
inline void gemm_nn(const T* A, const T* B, T* C, int M, int K, int N) {
  for (int m = 0; m < M; ++m) {
    T* c = C + static_cast<std::size_t>(m) * N;
    const T* a = A + static_cast<std::size_t>(m) * K;
    for (int k = 0; k < K; ++k) {
      const T av = a[k];
      const T* b = B + static_cast<std::size_t>(k) * N;
      for (int n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
inline void gemm_nt(const T* A, const T* B, T* C, int M, int K, int N) {
  for (int m = 0; m < M; ++m) {
    const T* a = A + static_cast<std::size_t>(m) * K;
    for (int n = 0; n < N; ++n) {
      const T* b = B + static_cast<std::size_t>(n) * K;
      T acc = T(0);
      for (int k = 0; k < K; ++k) acc += a[k] * b[k];
      C[static_cast<std::size_t>(m) * N + n] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
inline void gemm_tn(const T* A, const T* B, T* C, int M, int K, int N) {
  for (int k = 0; k < K; ++k) {
    const T* a = A + static_cast<std::size_t>(k) * M;
    const T* b = B + static_cast<std::size_t>(k) * N;
    for (int m = 0; m < M; ++m) {
      const T av = a[m];
      T* c = C + static_cast<std::size_t>(m) * N;
      for (int n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

namespace detail {

template <typename T>
inline void im2col(const T* src, int C, int H, int W, int k, int stride, int pad, int OH, int OW, T* col) {
  const int owh = OH * OW;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + static_cast<std::size_t>((c * k + ki) * k + kj) * owh;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ki;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kj;
            const bool in = iy >= 0 && iy < H && ix >= 0 && ix < W;
            dst[oy * OW + ox] = in ? src[(c * H + iy) * W + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
inline void col2im_acc(const T* col, int C, int H, int W, int k, int stride, int pad, int OH, int OW, T* dst) {
  const int owh = OH * OW;
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + static_cast<std::size_t>((c * k + ki) * k + kj) * owh;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix < 0 || ix >= W) continue;
            dst[(c * H + iy) * W + ix] += src[oy * OW + ox];
          }
        }
      }
    }
  }
}

template <typename T>
inline void require_dims(const Tensor<T>& t, int nd, const char* op, const char* arg) {
  if (t.ndim() != nd) {
    std::ostringstream os;
    os << op << ": " << arg << " must be " << nd << "-D, got shape " << shape_str(t);
    throw ShapeError(os.str());
  }
}

template <typename T>
inline bool wants_tape(Tape<T>* tape, std::initializer_list<const TensorPtr<T>*> inputs) {
  if (tape == nullptr) return false;
  for (const TensorPtr<T>* t : inputs) {
    if ((*t)->requires_grad) return true;
  }
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: cross-correlation of input [N,C,H,W] with kernel [F,C,k,k] plus
// bias [F]; H' = (H + 2p - k)/stride + 1.
// ---------------------------------------------------------------------------
template <typename T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& kernel,
                    const TensorPtr<T>& bias, int stride, int padding) {
  detail::require_dims(*input, 4, "conv2d", "input");
  detail::require_dims(*kernel, 4, "conv2d", "kernel");
  detail::require_dims(*bias, 1, "conv2d", "bias");
  const int N = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
  const int F = kernel->dim(0), KC = kernel->dim(1), k = kernel->dim(2), k2 = kernel->dim(3);
  if (KC != C) {
    std::ostringstream os;
    os << "conv2d: kernel channel dim " << KC << " does not match input channel dim " << C;
    throw ShapeError(os.str());
  }
  if (k != k2) throw ShapeError("conv2d: kernel must be square, got " + shape_str(*kernel));
  if (bias->dim(0) != F) {
    std::ostringstream os;
    os << "conv2d: bias length " << bias->dim(0) << " does not match filter count " << F;
    throw ShapeError(os.str());
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");
  if (padding < 0) throw ShapeError("conv2d: padding must be non-negative");
  if (k > H + 2 * padding) {
    std::ostringstream os;
    os << "conv2d: kernel size " << k << " exceeds padded input height " << H + 2 * padding;
    throw ShapeError(os.str());
  }
  if (k > W + 2 * padding) {
    std::ostringstream os;
    os << "conv2d: kernel size " << k << " exceeds padded input width " << W + 2 * padding;
    throw ShapeError(os.str());
  }
  const int OH = (H + 2 * padding - k) / stride + 1;
  const int OW = (W + 2 * padding - k) / stride + 1;
  const int ckk = C * k * k;
  const int owh = OH * OW;

  auto out = Tensor<T>::create({N, F, OH, OW});
  // Column buffers are kept for the backward pass.
  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * ckk * owh);
  const std::size_t in_plane = static_cast<std::size_t>(C) * H * W;
  const std::size_t out_plane = static_cast<std::size_t>(F) * owh;
  for (int n = 0; n < N; ++n) {
    T* col = cols->data() + static_cast<std::size_t>(n) * ckk * owh;
    detail::im2col(input->data.data() + n * in_plane, C, H, W, k, stride, padding, OH, OW, col);
    T* o = out->data.data() + n * out_plane;
    for (int f = 0; f < F; ++f) {
      std::fill(o + static_cast<std::size_t>(f) * owh, o + static_cast<std::size_t>(f + 1) * owh, bias->data[static_cast<std::size_t>(f)]);
    }
    gemm_nn(kernel->data.data(), col, o, F, ckk, owh);
  }
  check_finite(*out, "conv2d");

  if (detail::wants_tape(tape, {&input, &kernel, &bias})) {
    out->requires_grad = true;
    auto x = input, w = kernel, b = bias, y = out;
    const int cs = stride, cp = padding, ck = k;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      const T* go = y->grad.data();
      if (b->requires_grad) {
        b->ensure_grad();
        for (int n = 0; n < N; ++n) {
          for (int f = 0; f < F; ++f) {
            T acc = T(0);
            const T* g = go + (static_cast<std::size_t>(n) * F + f) * owh;
            for (int i = 0; i < owh; ++i) acc += g[i];
            b->grad[static_cast<std::size_t>(f)] += acc;
          }
        }
      }
      if (w->requires_grad) {
        w->ensure_grad();
        for (int n = 0; n < N; ++n) {
          const T* col = cols->data() + static_cast<std::size_t>(n) * ckk * owh;
          gemm_nt(go + static_cast<std::size_t>(n) * out_plane, col, w->grad.data(), F, owh, ckk);
        }
      }
      if (x->requires_grad) {
        x->ensure_grad();
        std::vector<T> dcol(static_cast<std::size_t>(ckk) * owh);
        for (int n = 0; n < N; ++n) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          gemm_tn(w->data.data(), go + static_cast<std::size_t>(n) * out_plane, dcol.data(), ckk, F, owh);
          detail::col2im_acc(dcol.data(), C, H, W, ck, cs, cp, OH, OW, x->grad.data() + n * in_plane);
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& input) {
  auto out = Tensor<T>::create(input->shape);
  const std::size_t n = input->data.size();
  for (std::size_t i = 0; i < n; ++i) out->data[i] = input->data[i] > T(0) ? input->data[i] : T(0);
  check_finite(*out, "relu");
  if (detail::wants_tape(tape, {&input})) {
    out->requires_grad = true;
    auto x = input, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < x->data.size(); ++i) {
        if (x->data[i] > T(0)) x->grad[i] += y->grad[i];
      }
    });
  }
  return out;
}

// [N,C,H,W] -> [N,C], mean over the spatial extent.
template <typename T>
TensorPtr<T> global_avg_pool(Tape<T>* tape, const TensorPtr<T>& input) {
  detail::require_dims(*input, 4, "global_avg_pool", "input");
  const int N = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
  if (H * W == 0) throw ShapeError("global_avg_pool: zero spatial extent");
  auto out = Tensor<T>::create({N, C});
  const T inv = T(1) / static_cast<T>(H * W);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* p = input->data.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
      T acc = T(0);
      for (int i = 0; i < H * W; ++i) acc += p[i];
      out->data[static_cast<std::size_t>(n) * C + c] = acc * inv;
    }
  }
  check_finite(*out, "global_avg_pool");
  if (detail::wants_tape(tape, {&input})) {
    out->requires_grad = true;
    auto x = input, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      x->ensure_grad();
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          const T g = y->grad[static_cast<std::size_t>(n) * C + c] * inv;
          T* gx = x->grad.data() + (static_cast<std::size_t>(n) * C + c) * H * W;
          for (int i = 0; i < H * W; ++i) gx[i] += g;
        }
      }
    });
  }
  return out;
}

// x [N,I] * weight [O,I]^T + bias [O] -> [N,O]
template <typename T>
TensorPtr<T> linear(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& weight,
                    const TensorPtr<T>& bias) {
  detail::require_dims(*input, 2, "linear", "input");
  detail::require_dims(*weight, 2, "linear", "weight");
  detail::require_dims(*bias, 1, "linear", "bias");
  const int N = input->dim(0), I = input->dim(1);
  const int O = weight->dim(0);
  if (weight->dim(1) != I) {
    std::ostringstream os;
    os << "linear: weight input dim " << weight->dim(1) << " does not match input feature dim " << I;
    throw ShapeError(os.str());
  }
  if (bias->dim(0) != O) {
    std::ostringstream os;
    os << "linear: bias length " << bias->dim(0) << " does not match output dim " << O;
    throw ShapeError(os.str());
  }
  auto out = Tensor<T>::create({N, O});
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) out->data[static_cast<std::size_t>(n) * O + o] = bias->data[static_cast<std::size_t>(o)];
  }
  gemm_nt(input->data.data(), weight->data.data(), out->data.data(), N, I, O);
  check_finite(*out, "linear");
  if (detail::wants_tape(tape, {&input, &weight, &bias})) {
    out->requires_grad = true;
    auto x = input, w = weight, b = bias, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      const T* go = y->grad.data();
      if (b->requires_grad) {
        b->ensure_grad();
        for (int n = 0; n < N; ++n) {
          for (int o = 0; o < O; ++o) b->grad[static_cast<std::size_t>(o)] += go[static_cast<std::size_t>(n) * O + o];
        }
      }
      if (w->requires_grad) {
        w->ensure_grad();
        gemm_tn(go, x->data.data(), w->grad.data(), O, N, I);
      }
      if (x->requires_grad) {
        x->ensure_grad();
        gemm_nn(go, w->data.data(), x->grad.data(), N, O, I);
      }
    });
  }
  return out;
}

// Row-wise log-softmax over the class axis of [N,K].
template <typename T>
TensorPtr<T> log_softmax(Tape<T>* tape, const TensorPtr<T>& input) {
  detail::require_dims(*input, 2, "log_softmax", "input");
  const int N = input->dim(0), K = input->dim(1);
  if (K == 0) throw ShapeError("log_softmax: empty class axis");
  auto out = Tensor<T>::create({N, K});
  for (int n = 0; n < N; ++n) {
    const T* x = input->data.data() + static_cast<std::size_t>(n) * K;
    T* y = out->data.data() + static_cast<std::size_t>(n) * K;
    T m = x[0];
    for (int j = 1; j < K; ++j) m = std::max(m, x[j]);
    T acc = T(0);
    for (int j = 0; j < K; ++j) acc += std::exp(x[j] - m);
    const T lse = m + std::log(acc);
    for (int j = 0; j < K; ++j) y[j] = x[j] - lse;
  }
  check_finite(*out, "log_softmax");
  if (detail::wants_tape(tape, {&input})) {
    out->requires_grad = true;
    auto x = input, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      x->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const T* g = y->grad.data() + static_cast<std::size_t>(n) * K;
        const T* lp = y->data.data() + static_cast<std::size_t>(n) * K;
        T gsum = T(0);
        for (int j = 0; j < K; ++j) gsum += g[j];
        T* gx = x->grad.data() + static_cast<std::size_t>(n) * K;
        for (int j = 0; j < K; ++j) gx[j] += g[j] - std::exp(lp[j]) * gsum;
      }
    });
  }
  return out;
}

// Instance normalization with learnable per-channel scale/shift.
// x [N,C,H,W], gamma [C], beta [C]; statistics are per (sample, channel).
template <typename T>
TensorPtr<T> instance_norm(Tape<T>* tape, const TensorPtr<T>& input, const TensorPtr<T>& gamma,
                           const TensorPtr<T>& beta, T eps) {
  detail::require_dims(*input, 4, "instance_norm", "input");
  const int N = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
  if (gamma->size() != C || beta->size() != C) {
    std::ostringstream os;
    os << "instance_norm: affine parameter length (" << gamma->size() << "," << beta->size()
       << ") does not match channel dim " << C;
    throw ShapeError(os.str());
  }
  const int M = H * W;
  if (M == 0) throw ShapeError("instance_norm: zero spatial extent");
  auto out = Tensor<T>::create({N, C, H, W});
  // xhat kept for backward: (x - mu) / sigma.
  auto xhat = std::make_shared<std::vector<T>>(input->data.size());
  auto inv_sigma = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * C);
  const T invm = T(1) / static_cast<T>(M);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * M;
      const T* x = input->data.data() + base;
      T mu = T(0);
      for (int i = 0; i < M; ++i) mu += x[i];
      mu *= invm;
      T var = T(0);
      for (int i = 0; i < M; ++i) {
        const T d = x[i] - mu;
        var += d * d;
      }
      var *= invm;
      const T isig = T(1) / std::sqrt(var + eps);
      (*inv_sigma)[static_cast<std::size_t>(n) * C + c] = isig;
      const T g = gamma->data[static_cast<std::size_t>(c)];
      const T b = beta->data[static_cast<std::size_t>(c)];
      T* xh = xhat->data() + base;
      T* y = out->data.data() + base;
      for (int i = 0; i < M; ++i) {
        xh[i] = (x[i] - mu) * isig;
        y[i] = g * xh[i] + b;
      }
    }
  }
  check_finite(*out, "instance_norm");
  if (detail::wants_tape(tape, {&input, &gamma, &beta})) {
    out->requires_grad = true;
    auto x = input, gm = gamma, bt = beta, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      const T* go = y->grad.data();
      if (gm->requires_grad) gm->ensure_grad();
      if (bt->requires_grad) bt->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (static_cast<std::size_t>(n) * C + c) * M;
          const T* g = go + base;
          const T* xh = xhat->data() + base;
          if (gm->requires_grad || bt->requires_grad) {
            T dg = T(0), db = T(0);
            for (int i = 0; i < M; ++i) {
              dg += g[i] * xh[i];
              db += g[i];
            }
            if (gm->requires_grad) gm->grad[static_cast<std::size_t>(c)] += dg;
            if (bt->requires_grad) bt->grad[static_cast<std::size_t>(c)] += db;
          }
          if (x->requires_grad) {
            const T gc = gm->data[static_cast<std::size_t>(c)];
            const T isig = (*inv_sigma)[static_cast<std::size_t>(n) * C + c];
            T sum_g = T(0), sum_gx = T(0);
            for (int i = 0; i < M; ++i) {
              sum_g += g[i];
              sum_gx += g[i] * xh[i];
            }
            sum_g *= invm;
            sum_gx *= invm;
            T* gx = x->grad.data() + base;
            for (int i = 0; i < M; ++i) {
              gx[i] += gc * isig * (g[i] - sum_g - xh[i] * sum_gx);
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise / reduction ops used to assemble losses.
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}
}  // namespace detail

template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::require_same_shape(*a, *b, "add");
  auto out = Tensor<T>::create(a->shape);
  for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
  check_finite(*out, "add");
  if (detail::wants_tape(tape, {&a, &b})) {
    out->requires_grad = true;
    auto pa = a, pb = b, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < y->grad.size(); ++i) pa->grad[i] += y->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < y->grad.size(); ++i) pb->grad[i] += y->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> sub(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::require_same_shape(*a, *b, "sub");
  auto out = Tensor<T>::create(a->shape);
  for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
  check_finite(*out, "sub");
  if (detail::wants_tape(tape, {&a, &b})) {
    out->requires_grad = true;
    auto pa = a, pb = b, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < y->grad.size(); ++i) pa->grad[i] += y->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < y->grad.size(); ++i) pb->grad[i] -= y->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  detail::require_same_shape(*a, *b, "mul");
  auto out = Tensor<T>::create(a->shape);
  for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
  check_finite(*out, "mul");
  if (detail::wants_tape(tape, {&a, &b})) {
    out->requires_grad = true;
    auto pa = a, pb = b, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < y->grad.size(); ++i) pa->grad[i] += y->grad[i] * pb->data[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (std::size_t i = 0; i < y->grad.size(); ++i) pb->grad[i] += y->grad[i] * pa->data[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> scale(Tape<T>* tape, const TensorPtr<T>& a, T factor) {
  auto out = Tensor<T>::create(a->shape);
  for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = a->data[i] * factor;
  check_finite(*out, "scale");
  if (detail::wants_tape(tape, {&a})) {
    out->requires_grad = true;
    auto pa = a, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      pa->ensure_grad();
      for (std::size_t i = 0; i < y->grad.size(); ++i) pa->grad[i] += y->grad[i] * factor;
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> exp_elem(Tape<T>* tape, const TensorPtr<T>& a) {
  auto out = Tensor<T>::create(a->shape);
  for (std::size_t i = 0; i < a->data.size(); ++i) out->data[i] = std::exp(a->data[i]);
  check_finite(*out, "exp");
  if (detail::wants_tape(tape, {&a})) {
    out->requires_grad = true;
    auto pa = a, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      pa->ensure_grad();
      for (std::size_t i = 0; i < y->grad.size(); ++i) pa->grad[i] += y->grad[i] * y->data[i];
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> sum_all(Tape<T>* tape, const TensorPtr<T>& a) {
  T acc = T(0);
  for (const T& v : a->data) acc += v;
  auto out = Tensor<T>::scalar(acc);
  check_finite(*out, "sum");
  if (detail::wants_tape(tape, {&a})) {
    out->requires_grad = true;
    auto pa = a, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      pa->ensure_grad();
      const T g = y->grad[0];
      for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
    });
  }
  return out;
}

template <typename T>
TensorPtr<T> mean_all(Tape<T>* tape, const TensorPtr<T>& a) {
  return scale(tape, sum_all(tape, a), T(1) / static_cast<T>(a->size()));
}

// Gather along the batch axis: out[i] = x[perm[i]]. Gradients scatter back,
// so both z and its shuffled partner stay differentiable.
template <typename T>
TensorPtr<T> index_select_batch(Tape<T>* tape, const TensorPtr<T>& input, const std::vector<int>& perm) {
  if (input->ndim() < 1) throw ShapeError("index_select_batch: input must have a batch axis");
  const int N = input->dim(0);
  const std::size_t stride = static_cast<std::size_t>(input->size() / std::max(N, 1));
  std::vector<int> outshape = input->shape;
  outshape[0] = static_cast<int>(perm.size());
  auto out = Tensor<T>::create(outshape);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const int src = perm[i];
    if (src < 0 || src >= N) throw ShapeError("index_select_batch: index out of range");
    std::copy_n(input->data.data() + static_cast<std::size_t>(src) * stride, stride,
                out->data.data() + i * stride);
  }
  if (detail::wants_tape(tape, {&input})) {
    out->requires_grad = true;
    auto x = input, y = out;
    auto idx = perm;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      x->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const T* g = y->grad.data() + i * stride;
        T* gx = x->grad.data() + static_cast<std::size_t>(idx[i]) * stride;
        for (std::size_t j = 0; j < stride; ++j) gx[j] += g[j];
      }
    });
  }
  return out;
}

}  // namespace sagnet
