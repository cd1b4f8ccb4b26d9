#pragma once

#include <cmath>
#include <vector>

#include "sagnet/ops.hpp"
#include "sagnet/rng.hpp"
#include "sagnet/tensor.hpp"

namespace sagnet {

// Per-channel style statistics of a feature map: mu and sigma are [N,D],
// sigma = sqrt(spatial variance + eps_stats) and is therefore strictly
// positive.
template <typename T>
struct StyleStats {
  TensorPtr<T> mu;
  TensorPtr<T> sigma;
};

// Interpolated style between two stat pairs, one weight per batch sample.
template <typename T>
struct RandomizedStyle {
  TensorPtr<T> mu_hat;
  TensorPtr<T> sigma_hat;
  std::vector<T> alpha;
};

namespace detail {
template <typename T>
inline TensorPtr<T> as_batched(const TensorPtr<T>& z, const char* op) {
  if (z->ndim() == 4) return z;
  if (z->ndim() == 3) {
    auto v = std::make_shared<Tensor<T>>(*z);
    v->shape.insert(v->shape.begin(), 1);
    return v;
  }
  throw ShapeError(std::string(op) + ": expected [N,D,H,W] or [D,H,W], got " + shape_str(*z));
}
}  // namespace detail

// Channel-wise mean and standard deviation over the spatial extent, one pair
// of vectors per sample. Differentiable w.r.t. z.
template <typename T>
StyleStats<T> channel_stats(Tape<T>* tape, const TensorPtr<T>& z_in, T eps_stats) {
  if (eps_stats <= T(0)) throw ShapeError("channel_stats: eps_stats must be positive");
  auto z = (z_in->ndim() == 3) ? detail::as_batched(z_in, "channel_stats") : z_in;
  detail::require_dims(*z, 4, "channel_stats", "z");
  const int N = z->dim(0), D = z->dim(1), H = z->dim(2), W = z->dim(3);
  const int M = H * W;
  if (M == 0) throw ShapeError("channel_stats: zero spatial extent");
  auto mu = Tensor<T>::create({N, D});
  auto sigma = Tensor<T>::create({N, D});
  const T invm = T(1) / static_cast<T>(M);
  for (int n = 0; n < N; ++n) {
    for (int d = 0; d < D; ++d) {
      const std::size_t base = (static_cast<std::size_t>(n) * D + d) * M;
      const T* x = z->data.data() + base;
      T m = T(0);
      for (int i = 0; i < M; ++i) m += x[i];
      m *= invm;
      T var = T(0);
      for (int i = 0; i < M; ++i) {
        const T dv = x[i] - m;
        var += dv * dv;
      }
      var *= invm;
      mu->data[static_cast<std::size_t>(n) * D + d] = m;
      sigma->data[static_cast<std::size_t>(n) * D + d] = std::sqrt(var + eps_stats);
    }
  }
  check_finite(*mu, "channel_stats");
  check_finite(*sigma, "channel_stats");
  if (detail::wants_tape(tape, {&z})) {
    mu->requires_grad = true;
    sigma->requires_grad = true;
    auto x = z, pm = mu, ps = sigma;
    tape->record({pm.get(), ps.get()}, [=]() {
      const bool gm = pm->has_grad(), gs = ps->has_grad();
      if (!gm && !gs) return;
      x->ensure_grad();
      for (int n = 0; n < N; ++n) {
        for (int d = 0; d < D; ++d) {
          const std::size_t sidx = static_cast<std::size_t>(n) * D + d;
          const std::size_t base = sidx * M;
          const T gmu = gm ? pm->grad[sidx] : T(0);
          const T gsig = gs ? ps->grad[sidx] : T(0);
          const T m = pm->data[sidx];
          const T s = ps->data[sidx];
          T* gx = x->grad.data() + base;
          const T* xv = x->data.data() + base;
          // d mu / d x = 1/M ; d sigma / d x = (x - mu) / (M * sigma)
          const T c1 = gmu * invm;
          const T c2 = gsig * invm / s;
          for (int i = 0; i < M; ++i) gx[i] += c1 + c2 * (xv[i] - m);
        }
      }
    });
  }
  return {mu, sigma};
}

// Core AdaIN transform with explicit source statistics:
//   out = sigma_t * (z - mu_s) / sigma_s + mu_t
// All stats are [N,D]; z is [N,D,H,W]. Differentiable through every input.
template <typename T>
TensorPtr<T> restyle(Tape<T>* tape, const TensorPtr<T>& z, const TensorPtr<T>& mu_s,
                     const TensorPtr<T>& sigma_s, const TensorPtr<T>& mu_t,
                     const TensorPtr<T>& sigma_t) {
  detail::require_dims(*z, 4, "restyle", "z");
  const int N = z->dim(0), D = z->dim(1), H = z->dim(2), W = z->dim(3);
  const int M = H * W;
  for (const auto& [t, name] : {std::pair{&mu_s, "mu_s"}, {&sigma_s, "sigma_s"}, {&mu_t, "mu_t"}, {&sigma_t, "sigma_t"}}) {
    if ((*t)->ndim() != 2 || (*t)->dim(0) != N || (*t)->dim(1) != D) {
      throw ShapeError(std::string("restyle: ") + name + " must be [N,D]=" + "[" + std::to_string(N) + "," + std::to_string(D) + "], got " + shape_str(**t));
    }
  }
  auto out = Tensor<T>::create({N, D, H, W});
  for (int n = 0; n < N; ++n) {
    for (int d = 0; d < D; ++d) {
      const std::size_t sidx = static_cast<std::size_t>(n) * D + d;
      const std::size_t base = sidx * M;
      const T ms = mu_s->data[sidx], ss = sigma_s->data[sidx];
      const T mt = mu_t->data[sidx], st = sigma_t->data[sidx];
      const T a = st / ss;
      const T* x = z->data.data() + base;
      T* y = out->data.data() + base;
      for (int i = 0; i < M; ++i) y[i] = a * (x[i] - ms) + mt;
    }
  }
  check_finite(*out, "restyle");
  if (detail::wants_tape(tape, {&z, &mu_s, &sigma_s, &mu_t, &sigma_t})) {
    out->requires_grad = true;
    auto x = z, pms = mu_s, pss = sigma_s, pmt = mu_t, pst = sigma_t, y = out;
    tape->record({y.get()}, [=]() {
      if (!y->has_grad()) return;
      for (int n = 0; n < N; ++n) {
        for (int d = 0; d < D; ++d) {
          const std::size_t sidx = static_cast<std::size_t>(n) * D + d;
          const std::size_t base = sidx * M;
          const T ms = pms->data[sidx], ss = pss->data[sidx];
          const T st = pst->data[sidx];
          const T* g = y->grad.data() + base;
          const T* xv = x->data.data() + base;
          T sum_g = T(0), sum_gx = T(0);
          for (int i = 0; i < M; ++i) {
            sum_g += g[i];
            sum_gx += g[i] * (xv[i] - ms);
          }
          if (x->requires_grad) {
            x->ensure_grad();
            const T a = st / ss;
            T* gx = x->grad.data() + base;
            for (int i = 0; i < M; ++i) gx[i] += a * g[i];
          }
          if (pms->requires_grad) {
            pms->ensure_grad();
            pms->grad[sidx] += -(st / ss) * sum_g;
          }
          if (pss->requires_grad) {
            pss->ensure_grad();
            pss->grad[sidx] += -(st / (ss * ss)) * sum_gx;
          }
          if (pmt->requires_grad) {
            pmt->ensure_grad();
            pmt->grad[sidx] += sum_g;
          }
          if (pst->requires_grad) {
            pst->ensure_grad();
            pst->grad[sidx] += sum_gx / ss;
          }
        }
      }
    });
  }
  return out;
}

// AdaIN: re-normalize content to the target statistics.
template <typename T>
TensorPtr<T> adain(Tape<T>* tape, const TensorPtr<T>& content, const StyleStats<T>& target, T eps_stats) {
  auto z = detail::as_batched(content, "adain");
  const auto own = channel_stats(tape, z, eps_stats);
  if (target.mu->size() != own.mu->size()) {
    throw ShapeError("adain: channel count mismatch between content (" + shape_str(*own.mu) +
                     ") and target stats (" + shape_str(*target.mu) + ")");
  }
  return restyle(tape, z, own.mu, own.sigma, target.mu, target.sigma);
}

// Convex interpolation of two style stats with per-sample weights alpha.
template <typename T>
RandomizedStyle<T> interpolate_styles(Tape<T>* tape, const StyleStats<T>& a, const StyleStats<T>& b,
                                      const std::vector<T>& alpha) {
  const int N = a.mu->dim(0), D = a.mu->dim(1);
  if (static_cast<int>(alpha.size()) != N) {
    throw ShapeError("interpolate_styles: alpha length " + std::to_string(alpha.size()) +
                     " does not match batch size " + std::to_string(N));
  }
  for (const T w : alpha) {
    if (!(w >= T(0) && w <= T(1))) throw ShapeError("interpolate_styles: alpha outside [0,1]");
  }
  auto lerp_rows = [&](const TensorPtr<T>& pa, const TensorPtr<T>& pb) {
    detail::require_same_shape(*pa, *pb, "interpolate_styles");
    auto out = Tensor<T>::create({N, D});
    for (int n = 0; n < N; ++n) {
      const T w = alpha[static_cast<std::size_t>(n)];
      for (int d = 0; d < D; ++d) {
        const std::size_t i = static_cast<std::size_t>(n) * D + d;
        out->data[i] = w * pa->data[i] + (T(1) - w) * pb->data[i];
      }
    }
    if (detail::wants_tape(tape, {&pa, &pb})) {
      out->requires_grad = true;
      auto qa = pa, qb = pb, y = out;
      auto w = alpha;
      tape->record({y.get()}, [=]() {
        if (!y->has_grad()) return;
        if (qa->requires_grad) qa->ensure_grad();
        if (qb->requires_grad) qb->ensure_grad();
        for (int n = 0; n < N; ++n) {
          for (int d = 0; d < D; ++d) {
            const std::size_t i = static_cast<std::size_t>(n) * D + d;
            if (qa->requires_grad) qa->grad[i] += w[static_cast<std::size_t>(n)] * y->grad[i];
            if (qb->requires_grad) qb->grad[i] += (T(1) - w[static_cast<std::size_t>(n)]) * y->grad[i];
          }
        }
      });
    }
    return out;
  };
  return {lerp_rows(a.mu, b.mu), lerp_rows(a.sigma, b.sigma), alpha};
}

// SR: replace the style of z with a random interpolation between its own
// style and the style of its partner z'. Differentiable through both.
template <typename T>
TensorPtr<T> style_randomize(Tape<T>* tape, const TensorPtr<T>& z, const TensorPtr<T>& z_prime,
                             const std::vector<T>& alpha, T eps_stats) {
  detail::require_same_shape(*z, *z_prime, "style_randomize");
  const auto s = channel_stats(tape, z, eps_stats);
  const auto sp = channel_stats(tape, z_prime, eps_stats);
  const auto mix = interpolate_styles(tape, s, sp, alpha);
  return restyle(tape, z, s.mu, s.sigma, mix.mu_hat, mix.sigma_hat);
}

// CR: keep the style of z and substitute the normalized spatial content of
// z'. Differentiable through both.
template <typename T>
TensorPtr<T> content_randomize(Tape<T>* tape, const TensorPtr<T>& z, const TensorPtr<T>& z_prime,
                               T eps_stats) {
  detail::require_same_shape(*z, *z_prime, "content_randomize");
  const auto s = channel_stats(tape, z, eps_stats);
  const auto sp = channel_stats(tape, z_prime, eps_stats);
  return restyle(tape, z_prime, sp.mu, sp.sigma, s.mu, s.sigma);
}

template <typename T>
struct ShuffleResult {
  TensorPtr<T> tensor;
  std::vector<int> permutation;
};

// Uniformly random permutation of the batch axis; self-pairing is allowed.
// The permutation is returned for reproducibility.
template <typename T>
ShuffleResult<T> batch_shuffle(Tape<T>* tape, const TensorPtr<T>& z, Rng& rng) {
  if (z->ndim() < 1 || z->dim(0) < 1) throw ShapeError("batch_shuffle: batch axis must be non-empty");
  auto perm = rng.permutation(z->dim(0));
  return {index_select_batch(tape, z, perm), perm};
}

}  // namespace sagnet
