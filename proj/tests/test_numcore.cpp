#include <doctest.h>

#include <cstring>

#include "sagnet/ops.hpp"
#include "sagnet/training.hpp"
#include "test_util.hpp"

using namespace sagnet;
using sagnet_test::max_grad_rel_err;
using sagnet_test::random_tensor;

TEST_CASE("conv2d sums a field of ones to 9") {
  auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto b = Tensor<double>::create({1});
  auto y = conv2d<double>(nullptr, x, w, b, 1, 0);
  CHECK(y->shape == std::vector<int>{1, 1, 1, 1});
  CHECK(y->data[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d with a unit 1x1 kernel is the identity") {
  Rng rng(5);
  auto x = random_tensor({2, 1, 4, 4}, rng);
  auto w = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  auto b = Tensor<double>::create({1});
  auto y = conv2d<double>(nullptr, x, w, b, 1, 0);
  REQUIRE(y->shape == x->shape);
  for (std::size_t i = 0; i < x->data.size(); ++i) CHECK(y->data[i] == doctest::Approx(x->data[i]));
}

TEST_CASE("conv2d output extent follows the floor formula") {
  auto x = Tensor<double>::create({1, 2, 7, 9});
  auto w = Tensor<double>::create({3, 2, 3, 3});
  auto b = Tensor<double>::create({3});
  auto y = conv2d<double>(nullptr, x, w, b, 2, 1);
  CHECK(y->shape == std::vector<int>{1, 3, 4, 5});
}

TEST_CASE("conv2d rejects mismatched shapes with the offending dimension named") {
  auto x = Tensor<double>::create({1, 3, 8, 8});
  auto w = Tensor<double>::create({4, 2, 3, 3});
  auto b = Tensor<double>::create({4});
  CHECK_THROWS_WITH_AS(conv2d<double>(nullptr, x, w, b, 1, 1),
                       doctest::Contains("channel dim"), ShapeError);
  auto w2 = Tensor<double>::create({4, 3, 9, 9});
  CHECK_THROWS_WITH_AS(conv2d<double>(nullptr, x, w2, b, 1, 0),
                       doctest::Contains("height"), ShapeError);
  auto b2 = Tensor<double>::create({5});
  auto w3 = Tensor<double>::create({4, 3, 3, 3});
  CHECK_THROWS_WITH_AS(conv2d<double>(nullptr, x, w3, b2, 1, 1),
                       doctest::Contains("bias length"), ShapeError);
}

TEST_CASE("conv2d gradient matches central finite differences over 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 3, 5, 5}, rng, -1, 1, true);
    auto w = random_tensor({4, 3, 3, 3}, rng, -1, 1, true);
    auto b = random_tensor({4}, rng, -0.5, 0.5, true);
    Tape<double> tape;
    auto loss = mean_all(&tape, mul(&tape, conv2d(&tape, x, w, b, 1, 1), conv2d(&tape, x, w, b, 1, 1)));
    tape.backward(loss);
    const auto eval = [&]() {
      auto y = conv2d<double>(nullptr, x, w, b, 1, 1);
      double acc = 0;
      for (double v : y->data) acc += v * v;
      return acc / static_cast<double>(y->size());
    };
    CHECK(max_grad_rel_err({x, w, b}, eval) < 1e-4);
  }
}

TEST_CASE("relu clamps negatives") {
  auto x = Tensor<double>::from_data({3}, {-1.0, 0.0, 2.0});
  auto y = relu<double>(nullptr, x);
  CHECK(y->data == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("log_softmax of equal logits is -ln K") {
  auto x = Tensor<double>::full({2, 4}, 0.7);
  auto y = log_softmax<double>(nullptr, x);
  for (double v : y->data) CHECK(v == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("log_softmax rejects an empty class axis") {
  auto x = Tensor<double>::create({2, 0});
  CHECK_THROWS_AS(log_softmax<double>(nullptr, x), ShapeError);
}

TEST_CASE("linear requires 2-D input") {
  auto x = Tensor<double>::create({2, 3, 4});
  auto w = Tensor<double>::create({5, 12});
  auto b = Tensor<double>::create({5});
  CHECK_THROWS_AS(linear<double>(nullptr, x, w, b), ShapeError);
}

TEST_CASE("linear and head ops match finite differences over 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 13 + 1);
    auto x = random_tensor({3, 6}, rng, -1, 1, true);
    auto w = random_tensor({4, 6}, rng, -1, 1, true);
    auto b = random_tensor({4}, rng, -1, 1, true);
    Tape<double> tape;
    auto logp = log_softmax(&tape, linear(&tape, x, w, b));
    auto loss = mean_all(&tape, mul(&tape, logp, logp));
    tape.backward(loss);
    const auto eval = [&]() {
      auto lp = log_softmax<double>(nullptr, linear<double>(nullptr, x, w, b));
      double acc = 0;
      for (double v : lp->data) acc += v * v;
      return acc / static_cast<double>(lp->size());
    };
    CHECK(max_grad_rel_err({x, w, b}, eval) < 1e-4);
  }
}

TEST_CASE("instance_norm and pooling match finite differences over 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 7 + 3);
    auto x = random_tensor({2, 3, 4, 4}, rng, -1, 1, true);
    auto g = random_tensor({3}, rng, 0.5, 1.5, true);
    auto be = random_tensor({3}, rng, -0.5, 0.5, true);
    Tape<double> tape;
    auto h = instance_norm(&tape, x, g, be, 1e-5);
    auto pooled = global_avg_pool(&tape, relu(&tape, h));
    auto loss = mean_all(&tape, mul(&tape, pooled, pooled));
    tape.backward(loss);
    const auto eval = [&]() {
      auto hh = global_avg_pool<double>(nullptr, relu<double>(nullptr, instance_norm<double>(nullptr, x, g, be, 1e-5)));
      double acc = 0;
      for (double v : hh->data) acc += v * v;
      return acc / static_cast<double>(hh->size());
    };
    CHECK(max_grad_rel_err({x, g, be}, eval) < 1e-4);
  }
}

TEST_CASE("elementwise ops match finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed + 40);
    auto a = random_tensor({2, 5}, rng, -1, 1, true);
    auto b = random_tensor({2, 5}, rng, -1, 1, true);
    Tape<double> tape;
    auto y = sub(&tape, exp_elem(&tape, a), mul(&tape, a, b));
    auto loss = scale(&tape, sum_all(&tape, mul(&tape, y, y)), 0.25);
    tape.backward(loss);
    const auto eval = [&]() {
      auto yy = sub<double>(nullptr, exp_elem<double>(nullptr, a), mul<double>(nullptr, a, b));
      double acc = 0;
      for (double v : yy->data) acc += v * v;
      return 0.25 * acc;
    };
    CHECK(max_grad_rel_err({a, b}, eval) < 1e-4);
  }
}

TEST_CASE("index_select_batch routes gradients through the permutation") {
  Rng rng(9);
  auto x = random_tensor({4, 2, 2, 2}, rng, -1, 1, true);
  std::vector<int> perm = {2, 2, 0, 1};
  Tape<double> tape;
  auto y = index_select_batch(&tape, x, perm);
  auto loss = sum_all(&tape, mul(&tape, y, y));
  tape.backward(loss);
  const auto eval = [&]() {
    auto yy = index_select_batch<double>(nullptr, x, perm);
    double acc = 0;
    for (double v : yy->data) acc += v * v;
    return acc;
  };
  CHECK(max_grad_rel_err({x}, eval) < 1e-4);
  // sample 3 never selected: its grad stays zero
  for (int j = 0; j < 8; ++j) CHECK(x->grad[3 * 8 + j] == 0.0);
}

TEST_CASE("backward of sum gives all-ones gradient") {
  auto x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tape<double> tape;
  auto loss = sum_all(&tape, x);
  tape.backward(loss);
  for (double g : x->grad) CHECK(g == 1.0);
}

TEST_CASE("backward of mean of squares on (1,2) gives (1,2)") {
  auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
  Tape<double> tape;
  auto loss = mean_all(&tape, mul(&tape, x, x));
  tape.backward(loss);
  CHECK(x->grad[0] == doctest::Approx(1.0));
  CHECK(x->grad[1] == doctest::Approx(2.0));
}

TEST_CASE("backward rejects a non-scalar loss") {
  auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
  Tape<double> tape;
  auto y = mul(&tape, x, x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("backward rejects a loss that is not on the tape") {
  auto x = Tensor<double>::from_data({1}, {1.0}, true);
  Tape<double> tape;
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("backward accumulates: a second pass doubles gradients") {
  auto x = Tensor<double>::from_data({3}, {1.0, -2.0, 0.5}, true);
  Tape<double> tape;
  auto loss = sum_all(&tape, mul(&tape, x, x));
  tape.backward(loss);
  const auto once = x->grad;
  tape.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(x->grad[i] == doctest::Approx(2.0 * once[i]));
}

TEST_CASE("zero_grad then backward is idempotent and bitwise deterministic") {
  Rng rng(123);
  auto x = random_tensor({3, 4}, rng, -1, 1, true);
  Tape<double> tape;
  auto loss = mean_all(&tape, exp_elem(&tape, mul(&tape, x, x)));
  std::vector<double> first;
  for (int rep = 0; rep < 3; ++rep) {
    x->zero_grad();
    loss->zero_grad();
    tape.backward(loss);
    if (rep == 0) {
      first = x->grad;
    } else {
      CHECK(std::memcmp(first.data(), x->grad.data(), first.size() * sizeof(double)) == 0);
    }
  }
}

TEST_CASE("ops refuse to emit non-finite values") {
  auto x = Tensor<double>::from_data({2}, {1e308, 1e308});
  CHECK_THROWS_AS(add<double>(nullptr, x, x), NumericError);
}

TEST_CASE("sgd_step basic update") {
  auto p = Tensor<double>::from_data({1}, {1.0}, true);
  p->ensure_grad();
  p->grad[0] = 1.0;
  sgd_step<double>({{"p", p, false}}, 0.1, 0.0, 0.0);
  CHECK(p->data[0] == doctest::Approx(0.9));
}

TEST_CASE("sgd momentum recurrence: 1 -> 0.9 -> 0.71") {
  auto p = Tensor<double>::from_data({1}, {1.0}, true);
  std::vector<NamedParam<double>> params = {{"p", p, false}};
  SgdOptimizer<double> opt(params, 0.9, 0.0);
  for (int step = 0; step < 2; ++step) {
    p->ensure_grad();
    p->grad[0] = 1.0;
    opt.step(0.1);
  }
  CHECK(p->data[0] == doctest::Approx(0.71));
}

TEST_CASE("sgd pure weight decay: 1 -> 0.9") {
  auto p = Tensor<double>::from_data({1}, {1.0}, true);
  p->ensure_grad();
  p->grad[0] = 0.0;
  sgd_step<double>({{"p", p, false}}, 1.0, 0.0, 0.1);
  CHECK(p->data[0] == doctest::Approx(0.9));
}

TEST_CASE("sgd requires gradients") {
  auto p = Tensor<double>::from_data({1}, {1.0}, true);
  CHECK_THROWS_AS(sgd_step<double>({{"p", p, false}}, 0.1, 0.0, 0.0), NumericError);
}

TEST_CASE("sgd leaves gradients untouched") {
  auto p = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
  p->ensure_grad();
  p->grad = {0.5, -0.5};
  sgd_step<double>({{"p", p, false}}, 0.1, 0.0, 0.0);
  CHECK(p->grad == std::vector<double>{0.5, -0.5});
}

TEST_CASE("tensor invariants: shape product must match data length") {
  CHECK_THROWS_AS(Tensor<double>::from_data({2, 3}, {1.0, 2.0}), ShapeError);
}
