#include <cmath>
#include <numeric>

#include "doctest.h"
#include "layers.hpp"
#include "support.hpp"

using namespace vib;
using vibtest::naive_affine;
using vibtest::naive_conv;
using vibtest::numeric_gradient;
using vibtest::random_tensor;
using vibtest::relative_error;

TEST_CASE("tensor shape and storage agree") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.features() == 12);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), DimensionError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), DimensionError);
  CHECK(t.reshaped({24}).size() == 24);
}

TEST_CASE("gemm matches a triple loop and ignores exact zero terms bit for bit") {
  RandomSource rng(7);
  for (auto [m, n, k] : {std::array<std::size_t, 3>{1, 1, 1}, {5, 9, 13}, {17, 3, 40}, {8, 16, 7}}) {
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    Tensor c({m, n}, 0.5);
    gemm_accumulate(m, n, k, a.data(), b.data(), c.data());
    double worst = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.5;
        for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
        worst = std::max(worst, std::abs(s - c[i * n + j]));
      }
    CHECK(worst < 1e-12);
  }
  // Zero the middle column of A and drop it: the product must not move at all.
  const std::size_t m = 6, n = 10, k = 9;
  Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
  for (std::size_t i = 0; i < m; ++i) a[i * k + 4] = 0.0;
  Tensor full({m, n}, 0.0), reduced({m, n}, 0.0);
  gemm_accumulate(m, n, k, a.data(), b.data(), full.data());
  std::vector<double> a2, b2;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
      if (p != 4) a2.push_back(a[i * k + p]);
  for (std::size_t p = 0; p < k; ++p)
    if (p != 4) b2.insert(b2.end(), b.data() + p * n, b.data() + (p + 1) * n);
  gemm_accumulate(m, n, k - 1, a2.data(), b2.data(), reduced.data());
  CHECK(max_abs_diff(full, reduced) == 0.0);
}

TEST_CASE("random source replays and splits") {
  RandomSource a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = a.standard_normal();
    CHECK(x == b.standard_normal());
    differs |= x != c.standard_normal();
  }
  CHECK(differs);
  RandomSource parent(5);
  RandomSource child = parent.split();
  CHECK(child.next_u64() != parent.next_u64());
  for (int i = 0; i < 10000; ++i) {
    const double u = a.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(a.below(7) < 7);
  }
  auto perm = a.permutation(50);
  std::sort(perm.begin(), perm.end());
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(perm[i] == i);
}

TEST_CASE("standard normal mean within 4/sqrt(N)") {
  RandomSource rng(2024);
  const std::size_t n = 1'000'000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.standard_normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(s2 / n - 1.0) < 0.01);
}

TEST_CASE("affine forward") {
  auto id = LayerSpec::affine(Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor({2}, 0.0));
  CHECK(affine_forward(Tensor::from({1, 2}, {3, 4}), id) == Tensor::from({1, 2}, {3, 4}));
  auto sum = LayerSpec::affine(Tensor::from({1, 2}, {1, 1}), Tensor::from({1}, {1}));
  CHECK(affine_forward(Tensor::from({1, 2}, {2, 3}), sum) == Tensor::from({1, 1}, {6}));
  RandomSource rng(3);
  auto l = LayerSpec::affine(random_tensor({7, 11}, rng), random_tensor({7}, rng));
  Tensor x = random_tensor({5, 11}, rng);
  CHECK(max_abs_diff(affine_forward(x, l), naive_affine(x, l.weight, l.bias)) < 1e-12);
  CHECK_THROWS_AS(affine_forward(random_tensor({5, 10}, rng), l), DimensionError);
}

TEST_CASE("conv2d forward") {
  auto one = LayerSpec::conv2d(Tensor({1, 1, 1, 1}, 1.0), Tensor({1}, 0.0), {1, 1, 0});
  RandomSource rng(4);
  Tensor img = random_tensor({2, 1, 5, 5}, rng);
  CHECK(conv2d_forward(img, one) == img);
  auto box = LayerSpec::conv2d(Tensor({1, 1, 3, 3}, 1.0), Tensor({1}, 0.0), {3, 1, 0});
  Tensor out = conv2d_forward(Tensor({1, 1, 5, 5}, 1.0), box);
  CHECK(out.shape() == Shape{1, 1, 3, 3});
  for (double v : out.values()) CHECK(v == 9.0);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {2, 1}, {1, 2}}) {
    auto l = LayerSpec::conv2d(random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng), {3, stride, pad});
    Tensor x = random_tensor({2, 3, 7, 6}, rng);
    CHECK(max_abs_diff(conv2d_forward(x, l), naive_conv(x, l.weight, l.bias, stride, pad)) < 1e-12);
  }
  CHECK_THROWS_AS(conv2d_forward(random_tensor({1, 2, 5, 5}, rng), box), DimensionError);
  CHECK_THROWS_AS(conv2d_forward(random_tensor({1, 1, 2, 2}, rng), box), DimensionError);
}

TEST_CASE("relu backward") {
  LayerSpec r = LayerSpec::relu();
  LayerCache c;
  layer_forward(r, Tensor::from({1, 2}, {-1, 1}), true, &c);
  LayerGrads g;
  g.zero_like(r);
  Tensor dx = layer_backward(r, c, Tensor::from({1, 2}, {5, 5}), g);
  CHECK(dx == Tensor::from({1, 2}, {0, 5}));
}

TEST_CASE("affine weight gradient is the outer product") {
  auto l = LayerSpec::affine(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), Tensor({2}, 0.0));
  LayerCache c;
  layer_forward(l, Tensor::from({1, 3}, {1, -2, 3}), true, &c);
  LayerGrads g;
  g.zero_like(l);
  layer_backward(l, c, Tensor::from({1, 2}, {1, 1}), g);
  CHECK(g.weight == Tensor::from({2, 3}, {1, -2, 3, 1, -2, 3}));
  CHECK(g.bias == Tensor::from({2}, {1, 1}));
}

TEST_CASE("backward before forward is a state error") {
  auto l = LayerSpec::affine(Tensor({2, 2}, 1.0), Tensor({2}, 0.0));
  LayerCache c;
  LayerGrads g;
  g.zero_like(l);
  CHECK_THROWS_AS(layer_backward(l, c, Tensor({1, 2}, 1.0), g), StateError);
}

namespace {

// Checks dx and parameter gradients of sum(probe * layer(x)) by central
// differences, at `points` random draws.
void check_layer_gradients(LayerSpec layer, const Shape& in_shape, bool training, std::uint64_t seed,
                           int points = 20, double input_floor = 0.0) {
  RandomSource rng(seed);
  for (int p = 0; p < points; ++p) {
    Tensor x = random_tensor(in_shape, rng);
    if (input_floor > 0.0)
      for (auto& v : x.values())
        if (std::abs(v) < input_floor) v = v < 0 ? -input_floor : input_floor;
    if (layer.kind == LayerKind::max_pool2d) {
      // distinct, well separated values keep the argmax stable under the step
      auto order = rng.permutation(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01 * static_cast<double>(order[i]);
    }
    const Tensor probe = random_tensor(layer.output_shape(in_shape), rng);
    LayerCache cache;
    layer_forward(layer, x, training, &cache);
    LayerGrads g;
    g.zero_like(layer);
    const Tensor dx = layer_backward(layer, cache, probe, g);
    auto objective = [&] { return vibtest::dot(probe, layer_forward(layer, x, training, nullptr)); };
    CHECK(relative_error(dx.values(), numeric_gradient(x.values(), objective)) < 1e-4);
    if (layer.has_parameters()) {
      CHECK(relative_error(g.weight.values(), numeric_gradient(layer.weight.values(), objective)) < 1e-4);
      CHECK(relative_error(g.bias.values(), numeric_gradient(layer.bias.values(), objective)) < 1e-4);
    }
  }
}

}  // namespace

TEST_CASE("finite-difference gradients of every layer kind") {
  RandomSource rng(11);
  SUBCASE("affine") { check_layer_gradients(make_affine(5, 4, rng), {3, 5}, true, 1); }
  SUBCASE("conv2d padded and strided") {
    check_layer_gradients(make_conv2d(2, 3, {3, 2, 1}, rng), {2, 2, 5, 5}, true, 2);
  }
  SUBCASE("conv2d valid") { check_layer_gradients(make_conv2d(2, 2, {2, 1, 0}, rng), {2, 2, 4, 3}, true, 3); }
  SUBCASE("batch norm, training statistics, dense") {
    LayerSpec bn = LayerSpec::batch_norm(4);
    bn.weight = random_tensor({4}, rng);
    bn.bias = random_tensor({4}, rng);
    check_layer_gradients(bn, {6, 4}, true, 4);
  }
  SUBCASE("batch norm, training statistics, channels") {
    LayerSpec bn = LayerSpec::batch_norm(3);
    bn.weight = random_tensor({3}, rng);
    check_layer_gradients(bn, {2, 3, 2, 2}, true, 5);
  }
  SUBCASE("batch norm, running statistics") {
    LayerSpec bn = LayerSpec::batch_norm(4);
    bn.weight = random_tensor({4}, rng);
    bn.bn.running_mean = random_tensor({4}, rng);
    bn.bn.running_var = Tensor::from({4}, {0.5, 1.5, 2.0, 0.1});
    check_layer_gradients(bn, {6, 4}, false, 6);
  }
  SUBCASE("relu away from the kink") { check_layer_gradients(LayerSpec::relu(), {4, 6}, true, 7, 20, 0.05); }
  SUBCASE("max pool") { check_layer_gradients(LayerSpec::max_pool2d(2), {2, 2, 4, 4}, true, 8); }
}

TEST_CASE("batch norm in eval mode is affine in its input") {
  RandomSource rng(12);
  LayerSpec bn = LayerSpec::batch_norm(5);
  bn.weight = random_tensor({5}, rng);
  bn.bias = random_tensor({5}, rng);
  bn.bn.running_mean = random_tensor({5}, rng);
  bn.bn.running_var = Tensor({5}, 2.0);
  const Tensor x = random_tensor({3, 5}, rng), y = random_tensor({3, 5}, rng);
  const double t = 0.3;
  Tensor mixed(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mixed[i] = t * x[i] + (1 - t) * y[i];
  const Tensor fx = layer_forward(bn, x, false, nullptr), fy = layer_forward(bn, y, false, nullptr);
  const Tensor fm = layer_forward(bn, mixed, false, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(fm[i] == doctest::Approx(t * fx[i] + (1 - t) * fy[i]).epsilon(1e-12));
  // a single row gives the same answer as inside a batch: no batch statistics
  const Tensor row = layer_forward(bn, slice_rows(x, 1, 1), false, nullptr);
  for (std::size_t j = 0; j < 5; ++j) CHECK(row[j] == fx[5 + j]);
}

TEST_CASE("batch norm running statistics use the momentum update") {
  LayerSpec bn = LayerSpec::batch_norm(1);
  LayerCache c;
  layer_forward(bn, Tensor::from({4, 1}, {1, 2, 3, 4}), true, &c);
  update_running_stats(bn, c);
  CHECK(bn.bn.running_mean[0] == doctest::Approx(0.1 * 2.5));
  // unbiased batch variance 5/3
  CHECK(bn.bn.running_var[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
  bn.bn.running_var[0] = 0.0;
  CHECK_THROWS_AS(bn.validate(), DomainError);
}

TEST_CASE("layer outputs are bit-reproducible") {
  RandomSource rng(13);
  auto conv = make_conv2d(3, 4, {3, 1, 1}, rng);
  const Tensor x = random_tensor({2, 3, 6, 6}, rng);
  CHECK(conv2d_forward(x, conv) == conv2d_forward(x, conv));
  CHECK(conv2d_forward(x, conv).all_finite());
}
