#include "sagnet/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "sagnet/ops.hpp"
#include "sagnet/training.hpp"

namespace sagnet {

namespace {

// Standardize columns using the training rows only.
void standardize(std::vector<double>& train, std::vector<double>& test, int dim) {
  const int n_train = static_cast<int>(train.size()) / dim;
  const int n_test = static_cast<int>(test.size()) / dim;
  for (int j = 0; j < dim; ++j) {
    double mean = 0;
    for (int i = 0; i < n_train; ++i) mean += train[static_cast<std::size_t>(i) * dim + j];
    mean /= std::max(n_train, 1);
    double var = 0;
    for (int i = 0; i < n_train; ++i) {
      const double d = train[static_cast<std::size_t>(i) * dim + j] - mean;
      var += d * d;
    }
    var /= std::max(n_train, 1);
    const double inv = 1.0 / std::sqrt(var + 1e-8);
    for (int i = 0; i < n_train; ++i) {
      auto& v = train[static_cast<std::size_t>(i) * dim + j];
      v = (v - mean) * inv;
    }
    for (int i = 0; i < n_test; ++i) {
      auto& v = test[static_cast<std::size_t>(i) * dim + j];
      v = (v - mean) * inv;
    }
  }
}

// Multinomial logistic regression by full-batch gradient descent (numcore
// ops); returns held-out error. Zero-initialized, so the probe is exactly
// symmetric under label exchange.
double logistic_holdout_error(const std::vector<double>& train_x, const std::vector<int>& train_y,
                              const std::vector<double>& test_x, const std::vector<int>& test_y, int dim,
                              int num_classes, const ProbeOptions& opts) {
  const int n_train = static_cast<int>(train_y.size());
  const int n_test = static_cast<int>(test_y.size());

  auto x = Tensor<double>::from_data({n_train, dim}, train_x);
  auto y = Tensor<double>::create({n_train, num_classes});
  for (int i = 0; i < n_train; ++i) {
    y->data[static_cast<std::size_t>(i) * num_classes + train_y[static_cast<std::size_t>(i)]] = 1.0;
  }
  auto w = Tensor<double>::create({num_classes, dim}, true);
  auto b = Tensor<double>::create({num_classes}, true);
  std::vector<NamedParam<double>> params = {{"probe.w", w, false}, {"probe.b", b, false}};
  std::vector<std::vector<double>> velocity(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i].tensor->data.size(), 0.0);

  for (int it = 0; it < opts.iters; ++it) {
    Tape<double> tape;
    auto logp = log_softmax(&tape, linear(&tape, x, w, b));
    auto loss = content_loss(&tape, logp, y);
    for (auto& p : params) p.tensor->zero_grad();
    tape.backward(loss);
    sgd_step<double>(params, opts.lr, opts.momentum, opts.weight_decay, &velocity);
  }

  auto tx = Tensor<double>::from_data({n_test, dim}, test_x);
  auto logits = linear<double>(nullptr, tx, w, b);
  int wrong = 0;
  for (int i = 0; i < n_test; ++i) {
    const int pred = detail::argmax_row(logits->data.data() + static_cast<std::size_t>(i) * num_classes,
                                        num_classes);
    if (pred != test_y[static_cast<std::size_t>(i)]) ++wrong;
  }
  return static_cast<double>(wrong) / std::max(n_test, 1);
}

}  // namespace

DiscrepancyReport proxy_a_distance(const FeatureMatrix& features_a, const FeatureMatrix& features_b,
                                   Rng& rng, const ProbeOptions& opts) {
  if (features_a.n == 0 || features_b.n == 0) throw ShapeError("proxy_a_distance: empty feature set");
  if (features_a.dim != features_b.dim) {
    throw ShapeError("proxy_a_distance: feature dimension mismatch " + std::to_string(features_a.dim) +
                     " vs " + std::to_string(features_b.dim));
  }
  const int dim = features_a.dim;
  double eps_sum = 0;
  for (int fold = 0; fold < opts.folds; ++fold) {
    std::vector<double> train_x, test_x;
    std::vector<int> train_y, test_y;
    // 50/50 split per side keeps the pooled folds label-balanced.
    for (int side = 0; side < 2; ++side) {
      const FeatureMatrix& fm = side == 0 ? features_a : features_b;
      auto perm = rng.permutation(fm.n);
      const int half = fm.n / 2;
      for (int i = 0; i < fm.n; ++i) {
        const double* row = fm.row(perm[static_cast<std::size_t>(i)]);
        auto& dst_x = i < half ? train_x : test_x;
        auto& dst_y = i < half ? train_y : test_y;
        dst_x.insert(dst_x.end(), row, row + dim);
        dst_y.push_back(side);
      }
    }
    standardize(train_x, test_x, dim);
    eps_sum += logistic_holdout_error(train_x, train_y, test_x, test_y, dim, 2, opts);
  }
  DiscrepancyReport r;
  r.epsilon = eps_sum / opts.folds;
  r.d_a = 2.0 * (1.0 - r.epsilon);
  r.n_a = features_a.n;
  r.n_b = features_b.n;
  r.folds = opts.folds;
  r.weight_decay = opts.weight_decay;
  return r;
}

double linear_probe_accuracy(const FeatureMatrix& features, const std::vector<int>& labels,
                             int num_classes, Rng& rng, const ProbeOptions& opts) {
  if (features.n == 0) throw ShapeError("linear_probe_accuracy: empty feature set");
  if (static_cast<int>(labels.size()) != features.n) {
    throw ShapeError("linear_probe_accuracy: label count mismatch");
  }
  const int dim = features.dim;
  double acc_sum = 0;
  for (int fold = 0; fold < opts.folds; ++fold) {
    auto perm = rng.permutation(features.n);
    const int half = features.n / 2;
    std::vector<double> train_x, test_x;
    std::vector<int> train_y, test_y;
    for (int i = 0; i < features.n; ++i) {
      const double* row = features.row(perm[static_cast<std::size_t>(i)]);
      auto& dst_x = i < half ? train_x : test_x;
      auto& dst_y = i < half ? train_y : test_y;
      dst_x.insert(dst_x.end(), row, row + dim);
      dst_y.push_back(labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    }
    standardize(train_x, test_x, dim);
    acc_sum += 1.0 - logistic_holdout_error(train_x, train_y, test_x, test_y, dim, num_classes, opts);
  }
  return acc_sum / opts.folds;
}

}  // namespace sagnet
