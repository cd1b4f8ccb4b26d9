#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sagnet/network.hpp"
#include "sagnet/rng.hpp"
#include "sagnet/synthdata.hpp"

namespace sagnet {

// Texture/shape bias on cue-conflict stimuli. shape_bias is the fraction of
// shape-matching predictions among predictions matching either cue; absent
// when neither cue is ever matched.
struct BiasReport {
  double shape_accuracy = 0;
  double texture_accuracy = 0;
  std::optional<double> shape_bias;
  int n_shape_correct = 0;
  int n_texture_correct = 0;
  int n_neither = 0;
  int n_total = 0;
};

// Proxy A-distance between two feature sets: d_A = 2*(1 - eps) where eps is
// the held-out error of a linear domain discriminator.
struct DiscrepancyReport {
  double d_a = 0;
  double epsilon = 0;
  int n_a = 0;
  int n_b = 0;
  int folds = 0;
  double weight_decay = 0;
};

struct FeatureMatrix {
  int n = 0;
  int dim = 0;
  std::vector<double> data;  // n*dim row-major

  const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * dim; }
};

namespace detail {

// Deterministic argmax with ties broken toward the lowest class index.
template <typename T>
inline int argmax_row(const T* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

template <typename T>
inline TensorPtr<T> images_to_tensor(const ImageSet& set, int begin, int count) {
  auto t = Tensor<T>::create({count, set.channels, set.height, set.width});
  const std::size_t stride = set.image_stride();
  for (int i = 0; i < count; ++i) {
    const float* src = set.image(begin + i);
    T* dst = t->data.data() + static_cast<std::size_t>(i) * stride;
    for (std::size_t j = 0; j < stride; ++j) dst[j] = static_cast<T>(src[j]);
  }
  return t;
}

}  // namespace detail

// Argmax predictions for a whole image set, evaluated in chunks.
template <typename T>
std::vector<int> predict(const ModelBundle<T>& model, const ImageSet& set, int chunk = 128) {
  std::vector<int> preds;
  preds.reserve(static_cast<std::size_t>(set.n));
  const int k = model.config.num_classes;
  for (int begin = 0; begin < set.n; begin += chunk) {
    const int count = std::min(chunk, set.n - begin);
    auto logp = inference(model, detail::images_to_tensor<T>(set, begin, count));
    for (int i = 0; i < count; ++i) {
      preds.push_back(detail::argmax_row(logp->data.data() + static_cast<std::size_t>(i) * k, k));
    }
  }
  return preds;
}

// Aggregate predictions against conflicting content/style labels.
inline BiasReport aggregate_bias(const std::vector<int>& preds, const std::vector<int>& content_labels,
                                 const std::vector<int>& style_labels) {
  if (preds.empty()) throw ShapeError("aggregate_bias: empty stimulus set");
  if (preds.size() != content_labels.size() || preds.size() != style_labels.size()) {
    throw ShapeError("aggregate_bias: label count mismatch");
  }
  BiasReport r;
  r.n_total = static_cast<int>(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (content_labels[i] == style_labels[i]) {
      throw ShapeError("aggregate_bias: stimulus " + std::to_string(i) + " has matching content and style labels");
    }
    if (preds[i] == content_labels[i]) {
      ++r.n_shape_correct;
    } else if (preds[i] == style_labels[i]) {
      ++r.n_texture_correct;
    } else {
      ++r.n_neither;
    }
  }
  r.shape_accuracy = static_cast<double>(r.n_shape_correct) / r.n_total;
  r.texture_accuracy = static_cast<double>(r.n_texture_correct) / r.n_total;
  const int matched = r.n_shape_correct + r.n_texture_correct;
  if (matched > 0) r.shape_bias = static_cast<double>(r.n_shape_correct) / matched;
  return r;
}

// Classify each stimulus prediction as shape-match, texture-match or neither
// and aggregate. Stimuli must carry conflicting content and style labels.
template <typename T>
BiasReport bias_metrics(const ModelBundle<T>& model, const ImageSet& stimuli) {
  if (stimuli.n == 0) throw ShapeError("bias_metrics: empty stimulus set");
  if (stimuli.style_labels.size() != static_cast<std::size_t>(stimuli.n)) {
    throw ShapeError("bias_metrics: stimuli must carry style labels");
  }
  return aggregate_bias(predict(model, stimuli), stimuli.content_labels, stimuli.style_labels);
}

// Pooled activations feeding G_c's final classifier, one row per sample.
template <typename T>
FeatureMatrix penultimate_features(const ModelBundle<T>& model, const ImageSet& set, int chunk = 128) {
  FeatureMatrix out;
  out.n = set.n;
  out.dim = model.config.head_width();
  out.data.reserve(static_cast<std::size_t>(out.n) * out.dim);
  for (int begin = 0; begin < set.n; begin += chunk) {
    const int count = std::min(chunk, set.n - begin);
    TensorPtr<T> penult;
    (void)inference(model, detail::images_to_tensor<T>(set, begin, count), &penult);
    for (const T v : penult->data) out.data.push_back(static_cast<double>(v));
  }
  return out;
}

// Top-1 accuracy against content labels.
template <typename T>
double cross_domain_accuracy(const ModelBundle<T>& model, const ImageSet& set) {
  if (set.n == 0) throw ShapeError("cross_domain_accuracy: empty set");
  const auto preds = predict(model, set);
  int correct = 0;
  for (int i = 0; i < set.n; ++i) {
    if (preds[static_cast<std::size_t>(i)] == set.content_labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / set.n;
}

struct ProbeOptions {
  int folds = 5;
  double weight_decay = 1e-3;
  int iters = 300;
  double lr = 0.5;
  double momentum = 0.9;
};

// Regularized linear domain discriminator trained by gradient descent on a
// logistic objective; eps is the held-out error averaged over 50/50 splits.
DiscrepancyReport proxy_a_distance(const FeatureMatrix& features_a, const FeatureMatrix& features_b,
                                   Rng& rng, const ProbeOptions& opts = {});

// Multi-class variant of the same probe, used by the dataset separability
// checks (domain identity from raw-image channel stats, content identity
// from binarized geometry).
double linear_probe_accuracy(const FeatureMatrix& features, const std::vector<int>& labels,
                             int num_classes, Rng& rng, const ProbeOptions& opts = {});

}  // namespace sagnet
