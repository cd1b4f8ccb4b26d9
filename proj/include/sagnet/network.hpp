#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sagnet/ops.hpp"
#include "sagnet/rng.hpp"
#include "sagnet/tensor.hpp"

namespace sagnet {

// Stage-structured CNN: every stage halves the spatial resolution and holds
// conv -> instance norm (affine) -> relu blocks. The randomization stage is
// the split point: stages 1..randomization_stage form the feature extractor,
// the rest plus pool and classifier form each head.
struct StageCNNConfig {
  int num_stages = 4;
  std::vector<int> channels = {16, 32, 64, 128};
  int blocks_per_stage = 1;
  int num_classes = 7;
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  int randomization_stage = 3;
  double eps_norm = 1e-5;
  double eps_stats = 1e-5;

  void validate() const {
    if (num_stages < 2) throw ShapeError("config: num_stages must be at least 2");
    if (static_cast<int>(channels.size()) != num_stages) {
      throw ShapeError("config: channels list length must equal num_stages");
    }
    if (blocks_per_stage < 1) throw ShapeError("config: blocks_per_stage must be positive");
    if (num_classes < 2) throw ShapeError("config: num_classes must be at least 2");
    if (randomization_stage < 1 || randomization_stage >= num_stages) {
      throw ShapeError("config: randomization_stage must lie in [1, num_stages-1], got " +
                       std::to_string(randomization_stage));
    }
    const int shrink = 1 << num_stages;
    if (in_height % shrink != 0 || in_width % shrink != 0) {
      throw ShapeError("config: input extent must be divisible by 2^num_stages");
    }
  }

  int feature_channels() const { return channels[static_cast<std::size_t>(randomization_stage - 1)]; }
  int feature_extent(int input_extent) const { return input_extent >> randomization_stage; }
  int head_width() const { return channels.back(); }

  bool operator==(const StageCNNConfig&) const = default;
};

template <typename T>
struct NamedParam {
  std::string name;
  TensorPtr<T> tensor;
  bool affine = false;  // per-channel normalization scale/shift
};

template <typename T>
struct ConvBlock {
  TensorPtr<T> weight;  // [F,C,k,k]
  TensorPtr<T> bias;    // [F]
  TensorPtr<T> gamma;   // [F]
  TensorPtr<T> beta;    // [F]
  int stride = 1;
  int padding = 1;
  T eps = T(1e-5);

  TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& x) const {
    auto h = conv2d(tape, x, weight, bias, stride, padding);
    h = instance_norm(tape, h, gamma, beta, eps);
    return relu(tape, h);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    out.push_back({prefix + ".conv.w", weight, false});
    out.push_back({prefix + ".conv.b", bias, false});
    out.push_back({prefix + ".norm.gamma", gamma, true});
    out.push_back({prefix + ".norm.beta", beta, true});
  }
};

// Feature extractor G_f: stages 1..randomization_stage.
template <typename T>
struct FeatureExtractor {
  std::vector<ConvBlock<T>> blocks;

  TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& x) const {
    auto h = x;
    for (const auto& b : blocks) h = b.forward(tape, h);
    return h;
  }
};

// Classifier head (G_c or G_s): remaining stages, global average pool,
// linear classifier, log-softmax.
template <typename T>
struct ClassifierHead {
  std::vector<ConvBlock<T>> blocks;
  TensorPtr<T> fc_weight;  // [K, width]
  TensorPtr<T> fc_bias;    // [K]

  // Returns row-wise log-probabilities. When penultimate is non-null it
  // receives the pooled features feeding the classifier.
  TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& z, TensorPtr<T>* penultimate = nullptr) const {
    auto h = z;
    for (const auto& b : blocks) h = b.forward(tape, h);
    auto pooled = global_avg_pool(tape, h);
    if (penultimate != nullptr) *penultimate = pooled;
    auto logits = linear(tape, pooled, fc_weight, fc_bias);
    return log_softmax(tape, logits);
  }
};

template <typename T>
struct ModelBundle {
  StageCNNConfig config;
  std::uint64_t init_seed = 0;
  FeatureExtractor<T> features;     // G_f
  ClassifierHead<T> content_head;   // G_c
  ClassifierHead<T> style_head;     // G_s

  std::vector<NamedParam<T>> f_all() const {
    std::vector<NamedParam<T>> out;
    for (std::size_t i = 0; i < features.blocks.size(); ++i) {
      features.blocks[i].collect("f.b" + std::to_string(i), out);
    }
    return out;
  }

  std::vector<NamedParam<T>> f_affine() const {
    std::vector<NamedParam<T>> out;
    for (const auto& p : f_all()) {
      if (p.affine) out.push_back(p);
    }
    return out;
  }

  std::vector<NamedParam<T>> c_all() const { return head_params(content_head, "c"); }
  std::vector<NamedParam<T>> s_all() const { return head_params(style_head, "s"); }

  std::vector<NamedParam<T>> all_params() const {
    auto out = f_all();
    for (auto& p : c_all()) out.push_back(p);
    for (auto& p : s_all()) out.push_back(p);
    return out;
  }

  // Deployed-network parameters: G_f plus G_c only.
  std::vector<NamedParam<T>> inference_params() const {
    auto out = f_all();
    for (auto& p : c_all()) out.push_back(p);
    return out;
  }

 private:
  static std::vector<NamedParam<T>> head_params(const ClassifierHead<T>& head, const std::string& tag) {
    std::vector<NamedParam<T>> out;
    for (std::size_t i = 0; i < head.blocks.size(); ++i) {
      head.blocks[i].collect(tag + ".b" + std::to_string(i), out);
    }
    out.push_back({tag + ".fc.w", head.fc_weight, false});
    out.push_back({tag + ".fc.b", head.fc_bias, false});
    return out;
  }
};

namespace detail {

template <typename T>
inline TensorPtr<T> he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  auto t = Tensor<T>::create(std::move(shape), true);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t->data) v = static_cast<T>(rng.normal() * std_dev);
  return t;
}

template <typename T>
inline ConvBlock<T> make_block(int in_ch, int out_ch, int stride, T eps, Rng& rng) {
  ConvBlock<T> b;
  b.weight = he_normal<T>({out_ch, in_ch, 3, 3}, in_ch * 9, rng);
  b.bias = Tensor<T>::create({out_ch}, true);
  b.gamma = Tensor<T>::full({out_ch}, T(1), true);
  b.beta = Tensor<T>::create({out_ch}, true);
  b.stride = stride;
  b.padding = 1;
  b.eps = eps;
  return b;
}

// Blocks for stages [first_stage, last_stage]; the first block of each stage
// downsamples by 2.
template <typename T>
inline std::vector<ConvBlock<T>> make_stages(const StageCNNConfig& cfg, int first_stage, int last_stage,
                                             Rng& rng) {
  std::vector<ConvBlock<T>> blocks;
  const T eps = static_cast<T>(cfg.eps_norm);
  for (int s = first_stage; s <= last_stage; ++s) {
    const int out_ch = cfg.channels[static_cast<std::size_t>(s - 1)];
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      const int in_ch = (b == 0) ? (s == 1 ? cfg.in_channels : cfg.channels[static_cast<std::size_t>(s - 2)]) : out_ch;
      blocks.push_back(make_block<T>(in_ch, out_ch, b == 0 ? 2 : 1, eps, rng));
    }
  }
  return blocks;
}

template <typename T>
inline ClassifierHead<T> make_head(const StageCNNConfig& cfg, Rng& rng) {
  ClassifierHead<T> head;
  head.blocks = make_stages<T>(cfg, cfg.randomization_stage + 1, cfg.num_stages, rng);
  const int width = cfg.head_width();
  head.fc_weight = he_normal<T>({cfg.num_classes, width}, width, rng);
  head.fc_bias = Tensor<T>::create({cfg.num_classes}, true);
  return head;
}

}  // namespace detail

// Deterministic construction: identical seeds give bitwise-identical
// parameters. The style head draws from its own rng stream, so it is an
// independent initialization of the content head's architecture.
template <typename T>
ModelBundle<T> build_model(const StageCNNConfig& config, std::uint64_t seed) {
  config.validate();
  ModelBundle<T> m;
  m.config = config;
  m.init_seed = seed;
  Rng rng_f(derive_stream(seed, "init.features"));
  Rng rng_c(derive_stream(seed, "init.content"));
  Rng rng_s(derive_stream(seed, "init.style"));
  m.features.blocks = detail::make_stages<T>(config, 1, config.randomization_stage, rng_f);
  m.content_head = detail::make_head<T>(config, rng_c);
  m.style_head = detail::make_head<T>(config, rng_s);
  return m;
}

// Feature maps at the randomization-stage boundary.
template <typename T>
TensorPtr<T> forward_features(Tape<T>* tape, const ModelBundle<T>& model, const TensorPtr<T>& x) {
  detail::require_dims(*x, 4, "forward_features", "x");
  if (x->dim(1) != model.config.in_channels || x->dim(2) != model.config.in_height ||
      x->dim(3) != model.config.in_width) {
    throw ShapeError("forward_features: input shape " + shape_str(*x) + " does not match config");
  }
  return model.features.forward(tape, x);
}

template <typename T>
TensorPtr<T> forward_head(Tape<T>* tape, const ClassifierHead<T>& head, const TensorPtr<T>& z,
                          TensorPtr<T>* penultimate = nullptr) {
  return head.forward(tape, z, penultimate);
}

// Test-time network: G_c(G_f(x)) with no randomization, no partner batch and
// no style head involved. Identical cost to the plain baseline CNN.
template <typename T>
TensorPtr<T> inference(const ModelBundle<T>& model, const TensorPtr<T>& x,
                       TensorPtr<T>* penultimate = nullptr) {
  auto z = forward_features<T>(nullptr, model, x);
  return model.content_head.forward(nullptr, z, penultimate);
}

template <typename T>
std::int64_t param_count(const std::vector<NamedParam<T>>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.tensor->size();
  return n;
}

// Multiplications executed per image on the inference path
// (G_f -> G_c -> pool -> classifier). Conv: F*C*k^2 per output element;
// instance norm: squares for the variance plus normalize+scale per element;
// pool: one scale per channel; linear: one per weight.
inline std::int64_t inference_multiplies_per_image(const StageCNNConfig& cfg) {
  cfg.validate();
  std::int64_t total = 0;
  int h = cfg.in_height, w = cfg.in_width;
  int in_ch = cfg.in_channels;
  for (int s = 1; s <= cfg.num_stages; ++s) {
    const int out_ch = cfg.channels[static_cast<std::size_t>(s - 1)];
    h /= 2;
    w /= 2;
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      const int cin = (b == 0) ? in_ch : out_ch;
      total += static_cast<std::int64_t>(out_ch) * cin * 9 * h * w;  // conv
      total += static_cast<std::int64_t>(out_ch) * h * w * 3;        // norm: var + normalize + gamma
    }
    in_ch = out_ch;
  }
  total += cfg.channels.back();                                        // pool scaling
  total += static_cast<std::int64_t>(cfg.channels.back()) * cfg.num_classes;  // classifier
  return total;
}

}  // namespace sagnet
