#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "sagnet/network.hpp"
#include "sagnet/stylestats.hpp"

namespace sagnet {

struct TrainConfig {
  double lambda_adv = 0.1;
  double lambda_unl = 0.01;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 64;
  int total_iters = 2000;
  std::uint64_t seed = 0;
  int log_every = 50;
  // Component switches. Full SagNet has both enabled; disabling
  // style_randomization makes the content pathway an identity pass-through;
  // disabling style_pathway leaves G_s untrained and implies no adversarial
  // update; the plain baseline disables both.
  bool style_randomization = true;
  bool style_pathway = true;

  void validate() const {
    if (lambda_adv < 0) throw ShapeError("train config: lambda_adv must be >= 0");
    if (lambda_unl < 0) throw ShapeError("train config: lambda_unl must be >= 0");
    if (batch_size < 1) throw ShapeError("train config: batch_size must be >= 1");
    if (total_iters < 1) throw ShapeError("train config: total_iters must be >= 1");
  }

  bool adversarial_enabled() const { return style_pathway && lambda_adv > 0.0; }
};

// Cosine decay from lr down to lr * 0.5*(1+cos(pi*(T-1)/T)) at the last step.
inline double cosine_lr(double base_lr, int iter, int total_iters) {
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(iter) /
                                         static_cast<double>(total_iters)));
}

template <typename T>
struct Batch {
  TensorPtr<T> images;         // [N,C,H,W]
  TensorPtr<T> labels_onehot;  // [N,K]; empty tensor for unlabeled batches
  std::vector<int> labels;     // empty for unlabeled batches

  int size() const { return images->dim(0); }
};

namespace detail {
template <typename T>
inline void require_one_hot(const Tensor<T>& y, const char* op) {
  require_dims(y, 2, op, "labels");
  const int N = y.dim(0), K = y.dim(1);
  for (int n = 0; n < N; ++n) {
    int ones = 0;
    for (int k = 0; k < K; ++k) {
      const T v = y.data[static_cast<std::size_t>(n) * K + k];
      if (v == T(1)) {
        ++ones;
      } else if (v != T(0)) {
        throw ShapeError(std::string(op) + ": labels row " + std::to_string(n) + " is not one-hot");
      }
    }
    if (ones != 1) throw ShapeError(std::string(op) + ": labels row " + std::to_string(n) + " is not one-hot");
  }
}
}  // namespace detail

// Mean over the batch of -sum_k y_k * logp_k.
template <typename T>
TensorPtr<T> content_loss(Tape<T>* tape, const TensorPtr<T>& logp, const TensorPtr<T>& y_onehot) {
  detail::require_same_shape(*logp, *y_onehot, "content_loss");
  detail::require_one_hot(*y_onehot, "content_loss");
  const int N = logp->dim(0);
  auto picked = mul(tape, logp, y_onehot);
  return scale(tape, sum_all(tape, picked), T(-1) / static_cast<T>(N));
}

// Identical cross-entropy form, applied to the style-biased prediction.
template <typename T>
TensorPtr<T> style_loss(Tape<T>* tape, const TensorPtr<T>& logp, const TensorPtr<T>& y_onehot) {
  detail::require_same_shape(*logp, *y_onehot, "style_loss");
  detail::require_one_hot(*y_onehot, "style_loss");
  const int N = logp->dim(0);
  auto picked = mul(tape, logp, y_onehot);
  return scale(tape, sum_all(tape, picked), T(-1) / static_cast<T>(N));
}

// lambda_adv * mean over the batch of the cross-entropy between the
// style-biased prediction and the uniform distribution:
//   -lambda/(N*K) * sum_{n,k} logp[n,k].
// Minimized exactly when every prediction is uniform, at lambda * ln K.
template <typename T>
TensorPtr<T> adversarial_loss(Tape<T>* tape, const TensorPtr<T>& logp, T lambda_adv) {
  detail::require_dims(*logp, 2, "adversarial_loss", "logp");
  const int N = logp->dim(0), K = logp->dim(1);
  if (K == 0) throw ShapeError("adversarial_loss: empty class axis");
  return scale(tape, sum_all(tape, logp), -lambda_adv / static_cast<T>(N * K));
}

// lambda_unl * mean over samples of the squared distance between the two
// probability vectors (SR pathway vs plain pathway).
template <typename T>
TensorPtr<T> consistency_loss(Tape<T>* tape, const TensorPtr<T>& logp_sr, const TensorPtr<T>& logp_plain,
                              T lambda_unl) {
  detail::require_same_shape(*logp_sr, *logp_plain, "consistency_loss");
  const int N = logp_sr->dim(0);
  auto d = sub(tape, exp_elem(tape, logp_sr), exp_elem(tape, logp_plain));
  return scale(tape, sum_all(tape, mul(tape, d, d)), lambda_unl / static_cast<T>(N));
}

// ---------------------------------------------------------------------------
// SGD with momentum and weight decay:
//   v <- momentum * v + grad + weight_decay * param
//   param <- param - lr * v
// Gradients are left untouched. capture_grads/apply support evaluating the
// gradients of several objectives at the same parameter values and applying
// the updates afterwards in a fixed order.
// ---------------------------------------------------------------------------
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer() = default;
  SgdOptimizer(std::vector<NamedParam<T>> params, T momentum, T weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.resize(params_.size());
    captured_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      velocity_[i].assign(params_[i].tensor->data.size(), T(0));
    }
  }

  const std::vector<NamedParam<T>>& params() const { return params_; }

  // Snapshot current gradients; missing gradients are an error.
  void capture_grads() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].tensor->has_grad()) {
        throw NumericError("sgd: parameter " + params_[i].name + " has no gradient");
      }
      captured_[i] = params_[i].tensor->grad;
    }
    has_captured_ = true;
  }

  void apply(T lr) {
    if (!has_captured_) throw NumericError("sgd: apply called without captured gradients");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      update_param(i, captured_[i], lr);
    }
  }

  // Immediate update from the gradients currently on the parameters.
  void step(T lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].tensor->has_grad()) {
        throw NumericError("sgd: parameter " + params_[i].name + " has no gradient");
      }
      update_param(i, params_[i].tensor->grad, lr);
    }
  }

  double captured_grad_norm() const {
    double acc = 0;
    for (const auto& g : captured_) {
      for (const T v : g) acc += static_cast<double>(v) * static_cast<double>(v);
    }
    return std::sqrt(acc);
  }

 private:
  void update_param(std::size_t i, const std::vector<T>& grad, T lr) {
    auto& p = params_[i].tensor;
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < p->data.size(); ++j) {
      v[j] = momentum_ * v[j] + grad[j] + weight_decay_ * p->data[j];
      p->data[j] -= lr * v[j];
    }
  }

  std::vector<NamedParam<T>> params_;
  std::vector<std::vector<T>> velocity_;
  std::vector<std::vector<T>> captured_;
  T momentum_ = T(0);
  T weight_decay_ = T(0);
  bool has_captured_ = false;
};

// Single-shot update matching the optimizer semantics, for loose parameter
// sets (no persistent velocity).
template <typename T>
void sgd_step(const std::vector<NamedParam<T>>& params, T lr, T momentum, T weight_decay,
              std::vector<std::vector<T>>* velocity = nullptr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor;
    if (!p->has_grad()) throw NumericError("sgd_step: parameter " + params[i].name + " has no gradient");
    for (std::size_t j = 0; j < p->data.size(); ++j) {
      T v = p->grad[j] + weight_decay * p->data[j];
      if (velocity != nullptr) {
        auto& vel = (*velocity)[i];
        vel[j] = momentum * vel[j] + v;
        v = vel[j];
      }
      p->data[j] -= lr * v;
    }
  }
}

struct StepReport {
  int iteration = 0;
  double loss_content = 0;
  double loss_style = 0;
  double loss_adv = 0;
  double loss_unl = 0;
  bool has_style = false;
  bool has_adv = false;
  bool has_unl = false;
  double grad_norm_content = 0;
  double grad_norm_style = 0;
  double grad_norm_adv = 0;
  double grad_norm_unl = 0;
  double lr = 0;
  double batch_accuracy = 0;
};

// Thrown when a loss goes non-finite; carries the diagnostic report.
struct TrainAbort : std::runtime_error {
  StepReport report;
  explicit TrainAbort(const StepReport& r, const std::string& what)
      : std::runtime_error(what), report(r) {}
};

// Which sub-update just finished, for instrumentation.
enum class UpdatePhase { content, style, adversarial, consistency };

// All forward results of one optimization step, shared by the losses.
template <typename T>
struct StepLosses {
  TensorPtr<T> loss_content;
  TensorPtr<T> loss_style;        // null when the style pathway is off
  TensorPtr<T> loss_adv;          // null when the adversarial update is off
  TensorPtr<T> loss_unl;          // null without an unlabeled batch
  TensorPtr<T> logp_content;
  std::vector<int> shuffle_perm;
};

// Builds the Algorithm-1 forward graph on one tape: a single feature pass,
// one in-batch shuffle shared by SR and CR, the SR pathway into G_c and the
// CR pathway into G_s. The CR features are detached before entering G_s for
// the style loss (only G_s may learn from it); the adversarial loss re-runs
// G_s on the live features with its parameters frozen so gradients reach only
// the feature extractor.
template <typename T>
StepLosses<T> build_step_losses(Tape<T>& tape, ModelBundle<T>& model, const Batch<T>& batch,
                                const Batch<T>* unlabeled, const TrainConfig& cfg, Rng& rng) {
  const T eps_stats = static_cast<T>(model.config.eps_stats);
  StepLosses<T> out;

  auto z = forward_features(&tape, model, batch.images);
  const int n = z->dim(0);

  const bool needs_partner = cfg.style_randomization || cfg.style_pathway;
  TensorPtr<T> z_prime;
  if (needs_partner) {
    out.shuffle_perm = rng.permutation(n);
    z_prime = index_select_batch(&tape, z, out.shuffle_perm);
  }

  // Content-biased pathway.
  TensorPtr<T> z_content = z;
  if (cfg.style_randomization) {
    std::vector<T> alpha(static_cast<std::size_t>(n));
    for (auto& a : alpha) a = static_cast<T>(rng.uniform());
    z_content = style_randomize(&tape, z, z_prime, alpha, eps_stats);
  }
  out.logp_content = forward_head(&tape, model.content_head, z_content);
  out.loss_content = content_loss(&tape, out.logp_content, batch.labels_onehot);

  // Style-biased pathway.
  if (cfg.style_pathway) {
    auto z_style = content_randomize(&tape, z, z_prime, eps_stats);
    auto logp_style = forward_head(&tape, model.style_head, z_style->detach());
    out.loss_style = style_loss(&tape, logp_style, batch.labels_onehot);

    if (cfg.lambda_adv > 0.0) {
      // Freeze G_s so the adversarial gradient reaches only G_f.
      auto s_params = model.s_all();
      for (auto& p : s_params) p.tensor->requires_grad = false;
      auto logp_adv = forward_head(&tape, model.style_head, z_style);
      for (auto& p : s_params) p.tensor->requires_grad = true;

      if (unlabeled != nullptr) {
        // The adversarial term extends to unlabeled data: pool both batches.
        auto zu = forward_features(&tape, model, unlabeled->images);
        auto perm_u = rng.permutation(zu->dim(0));
        auto zu_prime = index_select_batch(&tape, zu, perm_u);
        auto zu_style = content_randomize(&tape, zu, zu_prime, eps_stats);
        for (auto& p : s_params) p.tensor->requires_grad = false;
        auto logp_adv_u = forward_head(&tape, model.style_head, zu_style);
        for (auto& p : s_params) p.tensor->requires_grad = true;
        const int n_u = zu->dim(0);
        const T w = static_cast<T>(n) / static_cast<T>(n + n_u);
        const T wu = static_cast<T>(n_u) / static_cast<T>(n + n_u);
        auto l_lab = adversarial_loss(&tape, logp_adv, static_cast<T>(cfg.lambda_adv));
        auto l_unl = adversarial_loss(&tape, logp_adv_u, static_cast<T>(cfg.lambda_adv));
        out.loss_adv = add(&tape, scale(&tape, l_lab, w), scale(&tape, l_unl, wu));
      } else {
        out.loss_adv = adversarial_loss(&tape, logp_adv, static_cast<T>(cfg.lambda_adv));
      }
    }
  }

  // Consistency pathway on unlabeled data: SR prediction vs plain prediction.
  if (unlabeled != nullptr && cfg.lambda_unl > 0.0 && cfg.style_randomization) {
    auto zu = forward_features(&tape, model, unlabeled->images);
    const int n_u = zu->dim(0);
    auto perm = rng.permutation(n_u);
    auto zu_prime = index_select_batch(&tape, zu, perm);
    std::vector<T> alpha(static_cast<std::size_t>(n_u));
    for (auto& a : alpha) a = static_cast<T>(rng.uniform());
    auto zu_sr = style_randomize(&tape, zu, zu_prime, alpha, eps_stats);
    auto logp_sr = forward_head(&tape, model.content_head, zu_sr);
    auto logp_plain = forward_head(&tape, model.content_head, zu);
    out.loss_unl = consistency_loss(&tape, logp_sr, logp_plain, static_cast<T>(cfg.lambda_unl));
  }

  return out;
}

// Runs the optimization schedule. Gradients for every objective are
// evaluated at the step's starting parameters (the feature pass is shared,
// as in the listing), then the updates are applied in order: content-biased
// {G_f, G_c}, style-biased {G_s}, adversarial {affine of G_f}, consistency
// {G_f, G_c}.
template <typename T>
class Trainer {
 public:
  using PhaseObserver = std::function<void(UpdatePhase)>;

  Trainer(ModelBundle<T>& model, const TrainConfig& cfg)
      : model_(&model),
        cfg_(cfg),
        rng_(derive_stream(cfg.seed, "train")),
        opt_content_(concat(model.f_all(), model.c_all()), static_cast<T>(cfg.momentum),
                     static_cast<T>(cfg.weight_decay)),
        opt_style_(model.s_all(), static_cast<T>(cfg.momentum), static_cast<T>(cfg.weight_decay)),
        opt_adv_(model.f_affine(), static_cast<T>(cfg.momentum), static_cast<T>(cfg.weight_decay)),
        opt_unl_(concat(model.f_all(), model.c_all()), static_cast<T>(cfg.momentum),
                 static_cast<T>(cfg.weight_decay)) {
    cfg.validate();
  }

  Rng& rng() { return rng_; }
  int iteration() const { return iter_; }
  double current_lr() const { return cosine_lr(cfg_.lr, iter_, cfg_.total_iters); }

  StepReport step(const Batch<T>& batch, const Batch<T>* unlabeled = nullptr,
                  const PhaseObserver& observer = nullptr) {
    StepReport report;
    report.iteration = iter_;
    report.lr = current_lr();

    Tape<T> tape;
    StepLosses<T> losses;
    try {
      losses = build_step_losses(tape, *model_, batch, unlabeled, cfg_, rng_);
    } catch (const NumericError& e) {
      throw TrainAbort(report, std::string("train_step: aborted at iteration ") +
                                   std::to_string(iter_) + ": " + e.what());
    }
    report.loss_content = static_cast<double>(losses.loss_content->item());
    report.batch_accuracy = batch_accuracy(losses.logp_content, batch.labels);
    if (losses.loss_style) {
      report.has_style = true;
      report.loss_style = static_cast<double>(losses.loss_style->item());
    }
    if (losses.loss_adv) {
      report.has_adv = true;
      report.loss_adv = static_cast<double>(losses.loss_adv->item());
    }
    if (losses.loss_unl) {
      report.has_unl = true;
      report.loss_unl = static_cast<double>(losses.loss_unl->item());
    }
    for (double v : {report.loss_content, report.loss_style, report.loss_adv, report.loss_unl}) {
      if (!std::isfinite(v)) throw TrainAbort(report, "train_step: non-finite loss at iteration " + std::to_string(iter_));
    }

    // Backward each objective at the step-start parameter values.
    zero_all();
    tape.backward(losses.loss_content);
    opt_content_.capture_grads();
    report.grad_norm_content = opt_content_.captured_grad_norm();

    if (losses.loss_style) {
      zero_all();
      tape.backward(losses.loss_style);
      opt_style_.capture_grads();
      report.grad_norm_style = opt_style_.captured_grad_norm();
    }
    if (losses.loss_adv) {
      zero_all();
      tape.backward(losses.loss_adv);
      opt_adv_.capture_grads();
      report.grad_norm_adv = opt_adv_.captured_grad_norm();
    }
    if (losses.loss_unl) {
      zero_all();
      tape.backward(losses.loss_unl);
      opt_unl_.capture_grads();
      report.grad_norm_unl = opt_unl_.captured_grad_norm();
    }

    const T lr = static_cast<T>(report.lr);
    opt_content_.apply(lr);
    if (observer) observer(UpdatePhase::content);
    if (losses.loss_style) {
      opt_style_.apply(lr);
      if (observer) observer(UpdatePhase::style);
    }
    if (losses.loss_adv) {
      opt_adv_.apply(lr);
      if (observer) observer(UpdatePhase::adversarial);
    }
    if (losses.loss_unl) {
      opt_unl_.apply(lr);
      if (observer) observer(UpdatePhase::consistency);
    }

    ++iter_;
    return report;
  }

 private:
  static std::vector<NamedParam<T>> concat(std::vector<NamedParam<T>> a, const std::vector<NamedParam<T>>& b) {
    for (const auto& p : b) a.push_back(p);
    return a;
  }

  static double batch_accuracy(const TensorPtr<T>& logp, const std::vector<int>& labels) {
    if (labels.empty()) return 0;
    const int N = logp->dim(0), K = logp->dim(1);
    int correct = 0;
    for (int nn = 0; nn < N; ++nn) {
      int best = 0;
      const T* row = logp->data.data() + static_cast<std::size_t>(nn) * K;
      for (int k = 1; k < K; ++k) {
        if (row[k] > row[best]) best = k;
      }
      if (best == labels[static_cast<std::size_t>(nn)]) ++correct;
    }
    return static_cast<double>(correct) / N;
  }

  void zero_all() {
    for (auto& p : model_->all_params()) p.tensor->zero_grad();
  }

  ModelBundle<T>* model_;
  TrainConfig cfg_;
  Rng rng_;
  int iter_ = 0;
  SgdOptimizer<T> opt_content_, opt_style_, opt_adv_, opt_unl_;
};

// In-memory sample store consumed by the training loop.
template <typename T>
struct Samples {
  int n = 0, channels = 0, height = 0, width = 0;
  std::vector<T> images;   // n*c*h*w row-major
  std::vector<int> labels;

  Batch<T> gather(const std::vector<int>& idx, int num_classes) const {
    const std::size_t stride = static_cast<std::size_t>(channels) * height * width;
    Batch<T> b;
    b.images = Tensor<T>::create({static_cast<int>(idx.size()), channels, height, width});
    if (!labels.empty()) {
      b.labels_onehot = Tensor<T>::create({static_cast<int>(idx.size()), num_classes});
      b.labels.reserve(idx.size());
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(images.data() + static_cast<std::size_t>(idx[i]) * stride, stride,
                  b.images->data.data() + i * stride);
      if (!labels.empty()) {
        const int y = labels[static_cast<std::size_t>(idx[i])];
        b.labels.push_back(y);
        b.labels_onehot->data[i * static_cast<std::size_t>(num_classes) + y] = T(1);
      }
    }
    return b;
  }
};

struct TrainTrace {
  std::vector<StepReport> reports;  // one per log_every steps plus the final step
};

// Full optimization loop over a labeled sample store, with an optional
// unlabeled store feeding the consistency and unlabeled-adversarial terms.
// The returned deployment network is G_c o G_f, i.e. the bundle itself used
// through inference().
template <typename T>
TrainTrace train(ModelBundle<T>& model, const Samples<T>& data, const TrainConfig& cfg,
                 const Samples<T>* unlabeled = nullptr,
                 const std::function<void(const StepReport&)>& on_report = nullptr) {
  cfg.validate();
  if (data.n == 0) throw ShapeError("train: dataset is empty");
  Trainer<T> trainer(model, cfg);
  TrainTrace trace;
  const int k = model.config.num_classes;
  for (int it = 0; it < cfg.total_iters; ++it) {
    const int bs = std::min(cfg.batch_size, data.n);
    auto idx = trainer.rng().sample_without_replacement(data.n, bs);
    auto batch = data.gather(idx, k);
    std::optional<Batch<T>> ubatch;
    if (unlabeled != nullptr && unlabeled->n > 0) {
      const int ubs = std::min(cfg.batch_size, unlabeled->n);
      auto uidx = trainer.rng().sample_without_replacement(unlabeled->n, ubs);
      ubatch = unlabeled->gather(uidx, k);
    }
    auto report = trainer.step(batch, ubatch ? &*ubatch : nullptr);
    if (it % cfg.log_every == 0 || it == cfg.total_iters - 1) {
      trace.reports.push_back(report);
      if (on_report) on_report(report);
    }
  }
  return trace;
}

}  // namespace sagnet
