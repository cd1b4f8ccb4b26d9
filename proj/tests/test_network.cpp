#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <set>

#include "sagnet/checkpoint.hpp"
#include "sagnet/network.hpp"
#include "test_util.hpp"

using namespace sagnet;
using sagnet_test::random_tensor;

namespace {

StageCNNConfig small_config() {
  StageCNNConfig cfg;
  cfg.num_stages = 4;
  cfg.channels = {8, 12, 16, 24};
  cfg.num_classes = 7;
  cfg.in_height = 32;
  cfg.in_width = 32;
  cfg.randomization_stage = 3;
  return cfg;
}

}  // namespace

TEST_CASE("split at stage 3 leaves stages 1-3 in the extractor and stage 4 in the head") {
  auto model = build_model<double>(small_config(), 1);
  CHECK(model.features.blocks.size() == 3);
  CHECK(model.content_head.blocks.size() == 1);
  CHECK(model.style_head.blocks.size() == 1);
}

TEST_CASE("invalid randomization stage is rejected") {
  auto cfg = small_config();
  cfg.randomization_stage = 4;
  CHECK_THROWS_AS(build_model<double>(cfg, 1), ShapeError);
  cfg.randomization_stage = 0;
  CHECK_THROWS_AS(build_model<double>(cfg, 1), ShapeError);
}

TEST_CASE("two builds from the same seed are bitwise identical") {
  auto a = build_model<double>(small_config(), 77);
  auto b = build_model<double>(small_config(), 77);
  auto pa = a.all_params(), pb = b.all_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::memcmp(pa[i].tensor->data.data(), pb[i].tensor->data.data(),
                      pa[i].tensor->data.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("content and style heads have equal parameter counts but distinct values") {
  auto model = build_model<double>(small_config(), 3);
  CHECK(param_count(model.c_all()) == param_count(model.s_all()));
  // independent init streams
  bool any_diff = false;
  auto c = model.c_all(), s = model.s_all();
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i].tensor->data != s[i].tensor->data) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("parameter groups partition and f_affine is exactly the norm scale/shift of G_f") {
  auto model = build_model<double>(small_config(), 9);
  std::set<const void*> seen;
  for (const auto& p : model.all_params()) {
    CHECK(seen.insert(p.tensor.get()).second);  // disjoint groups
  }
  auto affine = model.f_affine();
  CHECK(affine.size() == 2 * model.features.blocks.size());
  for (const auto& p : affine) {
    CHECK(p.tensor->ndim() == 1);  // per-channel shape
    const bool is_norm = p.name.find(".norm.gamma") != std::string::npos ||
                         p.name.find(".norm.beta") != std::string::npos;
    CHECK(is_norm);
    CHECK(p.name.rfind("f.", 0) == 0);
  }
  // f_affine is a subset of f_all
  std::set<const void*> f_set;
  for (const auto& p : model.f_all()) f_set.insert(p.tensor.get());
  for (const auto& p : affine) CHECK(f_set.count(p.tensor.get()) == 1);
}

TEST_CASE("forward_features honors the channel and halving contracts") {
  auto cfg = small_config();
  auto model = build_model<double>(cfg, 5);
  Rng rng(8);
  auto x = random_tensor({2, 3, 32, 32}, rng, 0, 1);
  auto z = forward_features<double>(nullptr, model, x);
  CHECK(z->dim(1) == cfg.channels[2]);
  CHECK(z->dim(2) == 32 / (1 << cfg.randomization_stage));
  CHECK(z->dim(3) == 32 / (1 << cfg.randomization_stage));
  auto z2 = forward_features<double>(nullptr, model, x);
  CHECK(std::memcmp(z->data.data(), z2->data.data(), z->data.size() * sizeof(double)) == 0);
}

TEST_CASE("forward_features rejects inputs that do not match the config") {
  auto model = build_model<double>(small_config(), 5);
  auto bad = Tensor<double>::create({1, 3, 16, 16});
  CHECK_THROWS_AS(forward_features<double>(nullptr, model, bad), ShapeError);
}

TEST_CASE("head outputs are normalized log-probabilities") {
  auto model = build_model<double>(small_config(), 5);
  Rng rng(8);
  auto x = random_tensor({4, 3, 32, 32}, rng, 0, 1);
  auto z = forward_features<double>(nullptr, model, x);
  auto logp = forward_head<double>(nullptr, model.content_head, z);
  REQUIRE(logp->shape == std::vector<int>{4, 7});
  for (int n = 0; n < 4; ++n) {
    double s = 0;
    for (int k = 0; k < 7; ++k) s += std::exp(logp->data[n * 7 + k]);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("a zero-weight classifier head predicts the uniform distribution") {
  auto model = build_model<double>(small_config(), 5);
  std::fill(model.content_head.fc_weight->data.begin(), model.content_head.fc_weight->data.end(), 0.0);
  std::fill(model.content_head.fc_bias->data.begin(), model.content_head.fc_bias->data.end(), 0.0);
  Rng rng(8);
  auto x = random_tensor({2, 3, 32, 32}, rng, 0, 1);
  auto logp = inference(model, x);
  for (double v : logp->data) CHECK(v == doctest::Approx(-std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("inference equals the two-stage composition bitwise and ignores the style head") {
  auto model = build_model<double>(small_config(), 5);
  Rng rng(8);
  auto x = random_tensor({3, 3, 32, 32}, rng, 0, 1);
  auto logp = inference(model, x);
  auto composed = forward_head<double>(nullptr, model.content_head,
                                       forward_features<double>(nullptr, model, x));
  CHECK(std::memcmp(logp->data.data(), composed->data.data(), logp->data.size() * sizeof(double)) == 0);

  // Poison the style head: if inference ever read it, the finite check would
  // throw or the output would change.
  for (auto& p : model.s_all()) {
    std::fill(p.tensor->data.begin(), p.tensor->data.end(),
              std::numeric_limits<double>::quiet_NaN());
  }
  auto logp2 = inference(model, x);
  CHECK(std::memcmp(logp->data.data(), logp2->data.data(), logp->data.size() * sizeof(double)) == 0);
}

TEST_CASE("inference-time cost matches the plain baseline CNN exactly") {
  auto cfg = small_config();
  auto sag = build_model<float>(cfg, 1);
  auto baseline = build_model<float>(cfg, 2);
  CHECK(param_count(sag.inference_params()) == param_count(baseline.inference_params()));
  CHECK(inference_multiplies_per_image(sag.config) == inference_multiplies_per_image(baseline.config));
}

TEST_CASE("checkpoint round-trips bitwise") {
  auto cfg = small_config();
  auto model = build_model<float>(cfg, 31);
  Rng rng(2);
  for (auto& p : model.all_params()) {
    for (auto& v : p.tensor->data) v += static_cast<float>(rng.uniform(-0.01, 0.01));
  }
  const std::string path = "test_checkpoint_roundtrip.sgnet";
  save_checkpoint(path, model, 99);
  auto loaded = load_checkpoint(path);
  CHECK(loaded.train_seed == 99);
  CHECK(loaded.init_seed == 31);
  CHECK(loaded.model.config == cfg);
  auto pa = model.all_params(), pb = loaded.model.all_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::memcmp(pa[i].tensor->data.data(), pb[i].tensor->data.data(),
                      pa[i].tensor->data.size() * sizeof(float)) == 0);
  }
  std::remove(path.c_str());
}
