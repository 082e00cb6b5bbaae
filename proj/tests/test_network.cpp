#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "network.hpp"
#include "support.hpp"

using namespace vib;
using vibtest::numeric_gradient;
using vibtest::random_tensor;
using vibtest::relative_error;

namespace {

std::vector<int> random_labels(std::size_t n, std::size_t classes, RandomSource& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

void randomize_gates(Network& net, RandomSource& rng, double gamma) {
  for (VibGate* g : net.gates()) {
    for (auto& m : g->mu) m = rng.normal(0.0, 1.0);
    for (auto& s : g->log_sigma2) s = rng.uniform(-3.0, 0.0);
    g->gamma = gamma;
  }
}

void randomize_norms(Network& net, RandomSource& rng) {
  for (auto& b : net.blocks)
    for (auto& l : b.layers)
      if (l.kind == LayerKind::batch_norm) {
        for (auto& v : l.weight.values()) v = rng.uniform(0.5, 1.5);
        for (auto& v : l.bias.values()) v = rng.normal(0.0, 0.3);
        for (auto& v : l.bn.running_mean.values()) v = rng.normal(0.0, 0.3);
        for (auto& v : l.bn.running_var.values()) v = rng.uniform(0.5, 2.0);
      }
}

// Full-network gradient check with the noise replayed from a fixed seed.
void check_network_gradients(Network net, const Tensor& x, const std::vector<int>& y, const ForwardOptions& opts,
                             bool include_kl) {
  const std::uint64_t seed = 1234;
  RandomSource r0(seed);
  Targets t{y, nullptr};
  LossAndGrads lg = loss_and_gradients(net, x, t, opts, r0, include_kl);
  auto objective = [&] {
    RandomSource r(seed);
    const Tensor out = forward(net, x, opts, r);
    double total = data_term(net, out, t, nullptr);
    if (include_kl)
      for (double k : kl_terms(net)) total += k;
    return total;
  };
  auto params = param_refs(net);
  auto grads = grad_refs(lg.grads, net);
  REQUIRE(params.size() == grads.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    INFO("parameter " << params[i].name);
    REQUIRE(params[i].value.size() == grads[i].size());
    const auto fd = numeric_gradient(params[i].value, objective);
    CHECK(relative_error(grads[i], fd) < 1e-4);
  }
}

}  // namespace

TEST_CASE("predefined architectures") {
  RandomSource rng(1);
  Network lenet = lenet_300_100(rng);
  CHECK(lenet.original.total_weights() == 266200);
  CHECK(lenet.depth() == 2);
  CHECK(lenet.gates().size() == 3);
  CHECK(predict(lenet, Tensor({3, 784}, 0.1)).shape() == Shape{3, 10});
  Network conv = lenet_5(rng);
  CHECK(predict(conv, Tensor({2, 1, 28, 28}, 0.1)).shape() == Shape{2, 10});
  CHECK(predict(conv, Tensor({2, 784}, 0.1)).shape() == Shape{2, 10});
  CHECK(conv.depth() == 3);
  const std::vector<std::size_t> w{4, 8, 3};
  Network toy = toy_mlp(w, rng);
  CHECK(predict(toy, Tensor({5, 4}, 1.0)).shape() == Shape{5, 3});
  CHECK_THROWS_AS(predict(toy, Tensor({5, 5}, 1.0)), DimensionError);
  CHECK(build_architecture("toy_mlp:4-8-6-3+input_gate+no_bn", rng).name == "toy_mlp:4-8-6-3+input_gate+no_bn");
  CHECK_THROWS_AS(build_architecture("resnet", rng), InputError);
}

TEST_CASE("unit deterministic gates reproduce the plain network bit for bit") {
  RandomSource rng(2);
  const std::vector<std::size_t> w{6, 9, 7, 4};
  Network net = toy_mlp(w, rng, 0.0, true, false);
  for (VibGate* g : net.gates()) *g = VibGate::deterministic(g->width(), g->broadcast);
  const Tensor x = random_tensor({5, 6}, rng);
  // plain chain without any gate
  Tensor h = x;
  for (const auto& b : net.blocks)
    for (const auto& l : b.layers) h = layer_forward(l, h, false, nullptr);
  const Tensor plain = layer_forward(net.head, h, false, nullptr);
  RandomSource r(3);
  CHECK(forward(net, x, ForwardOptions::train(), r) == plain);
  CHECK(predict(net, x) == plain);
}

TEST_CASE("eval forward ignores the seed and train forward replays it") {
  RandomSource rng(4);
  Network net = lenet_300_100(rng);
  const Tensor x = random_tensor({4, 784}, rng);
  RandomSource a(1), b(2);
  CHECK(forward(net, x, ForwardOptions::eval(), a) == forward(net, x, ForwardOptions::eval(), b));
  RandomSource c(9), d(9);
  CHECK(forward(net, x, ForwardOptions::train(), c) == forward(net, x, ForwardOptions::train(), d));
}

TEST_CASE("loss values") {
  RandomSource rng(5);
  const std::vector<std::size_t> w{3, 5, 4, 10};
  Network net = toy_mlp(w, rng, 0.0);
  net.head.weight.fill(0.0);
  net.head.bias.fill(0.0);
  const std::vector<int> y{0, 3, 9};
  LossBreakdown lb = loss(net, random_tensor({3, 3}, rng), {y, nullptr}, ForwardOptions::eval(), rng);
  CHECK(lb.total == doctest::Approx(2.0 * std::log(10.0)).epsilon(1e-12));

  // gamma = 1, mu = sigma, one-hot predictions
  for (VibGate* g : net.gates()) {
    g->gamma = 1.0;
    for (std::size_t j = 0; j < g->width(); ++j) {
      g->mu[j] = 0.3;
      g->log_sigma2[j] = std::log(0.09);
    }
  }
  net.head.bias = Tensor::from({10}, {1e3, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  const std::vector<int> zeros{0, 0, 0};
  lb = loss(net, random_tensor({3, 3}, rng), {zeros, nullptr}, ForwardOptions::eval(), rng);
  CHECK(lb.total == doctest::Approx((5 + 4) * std::log(2.0)).epsilon(1e-12));
  double sum = lb.data_term;
  for (double k : lb.kl_per_layer) sum += k;
  CHECK(lb.total == sum);

  const std::vector<int> bad{0, 10, 0};
  CHECK_THROWS_AS(loss(net, random_tensor({3, 3}, rng), {bad, nullptr}, ForwardOptions::eval(), rng), InputError);
}

TEST_CASE("input gate adds a KL term but not to the depth") {
  RandomSource rng(6);
  const std::vector<std::size_t> w{3, 5, 2};
  Network a = toy_mlp(w, rng, 0.5, false);
  Network b = toy_mlp(w, rng, 0.5, true);
  CHECK(a.depth() == b.depth());
  CHECK(kl_terms(b).size() == kl_terms(a).size() + 1);
  CHECK(kl_terms(b).front() >= 0.0);
  b.count_input_gate_in_depth = true;
  CHECK(b.depth() == a.depth() + 1);
}

TEST_CASE("full-network gradients match finite differences") {
  RandomSource rng(7);
  SUBCASE("4-8-6-3 with batch norm, training mode, KL included") {
    const std::vector<std::size_t> w{4, 8, 6, 3};
    Network net = toy_mlp(w, rng, 0.7, true, true);
    randomize_gates(net, rng, 0.7);
    check_network_gradients(net, random_tensor({5, 4}, rng), random_labels(5, 3, rng), ForwardOptions::train(), true);
  }
  SUBCASE("4-8-6-3 without batch norm, gamma zero") {
    const std::vector<std::size_t> w{4, 8, 6, 3};
    Network net = toy_mlp(w, rng, 0.0, false, false);
    randomize_gates(net, rng, 0.0);
    check_network_gradients(net, random_tensor({5, 4}, rng), random_labels(5, 3, rng), ForwardOptions::train(), false);
  }
  SUBCASE("eval statistics with mean gates") {
    const std::vector<std::size_t> w{4, 8, 6, 3};
    Network net = toy_mlp(w, rng, 0.3, true, true);
    randomize_gates(net, rng, 0.3);
    randomize_norms(net, rng);
    check_network_gradients(net, random_tensor({5, 4}, rng), random_labels(5, 3, rng), ForwardOptions::eval(), true);
  }
  SUBCASE("convolutional blocks with per-channel gates") {
    Network net = tiny_conv(rng, 0.2);
    randomize_gates(net, rng, 0.2);
    check_network_gradients(net, random_tensor({3, 2, 6, 6}, rng), random_labels(3, 3, rng),
                            ForwardOptions::train(), true);
  }
}

TEST_CASE("gaussian head") {
  RandomSource rng(8);
  const std::vector<std::size_t> w{3, 4, 2};
  Network net = toy_mlp(w, rng, 0.0, false, false);
  net.likelihood = Likelihood::gaussian;
  const Tensor x = random_tensor({4, 3}, rng);
  const Tensor out = predict(net, x);
  const double expect = 0.5 * std::log(2.0 * M_PI) * 2.0;  // per sample, zero residual
  CHECK(data_term(net, out, {{}, &out}, nullptr) == doctest::Approx(expect).epsilon(1e-12));
  Tensor target = random_tensor({4, 2}, rng);
  Tensor grad;
  data_term(net, out, {{}, &target}, &grad);
  Tensor o = out;
  auto f = [&] { return data_term(net, o, {{}, &target}, nullptr); };
  CHECK(relative_error(grad.values(), numeric_gradient(o.values(), f)) < 1e-6);
}

TEST_CASE("zero downstream column gives zero data gradient on mu") {
  RandomSource rng(9);
  const std::vector<std::size_t> w{4, 6, 5, 3};
  Network net = toy_mlp(w, rng, 0.0, false, true);
  auto& next = net.blocks[1].layers[0].weight;
  for (std::size_t r = 0; r < next.dim(0); ++r) next.at(r, 2) = 0.0;
  const auto y = random_labels(8, 3, rng);
  LossAndGrads lg = loss_and_gradients(net, random_tensor({8, 4}, rng), {y, nullptr}, ForwardOptions::train(), rng,
                                       false);
  CHECK(lg.grads.gates[0].mu[2] == 0.0);
  CHECK(lg.grads.gates[0].log_sigma2[2] == 0.0);
}

TEST_CASE("gamma zero gives identically zero KL gradients") {
  RandomSource rng(10);
  Network net = lenet_300_100(rng, 0.0);
  NetworkGrads g = zero_grads(net);
  add_kl_gradients(net, g);
  for (auto& s : grad_refs(g, net))
    for (double v : s) CHECK(v == 0.0);
}

TEST_CASE("stale cache is rejected") {
  RandomSource rng(11);
  const std::vector<std::size_t> w{3, 4, 2};
  Network net = toy_mlp(w, rng);
  ForwardCache cache;
  const Tensor out = forward(net, random_tensor({2, 3}, rng), ForwardOptions::train(), rng, &cache);
  ++net.revision;
  CHECK_THROWS_AS(backward(net, cache, out), StateError);
  CHECK_THROWS_AS(backward(net, ForwardCache{}, out), StateError);
}

TEST_CASE("mean network is invariant to rescaling mu against the next layer") {
  RandomSource rng(12);
  const std::vector<std::size_t> w{5, 7, 6, 4};
  Network net = toy_mlp(w, rng, 0.0, false, true);
  randomize_gates(net, rng, 0.0);
  randomize_norms(net, rng);
  const Tensor x = random_tensor({9, 5}, rng);
  const Tensor before = predict(net, x);
  const double c = 2.5;
  for (auto& m : net.blocks[1].gate.mu) m *= c;
  for (auto& v : net.head.weight.values()) v /= c;
  const Tensor after = predict(net, x);
  CHECK(max_abs_diff(before, after) < 1e-10);
}

TEST_CASE("gamma assignment") {
  RandomSource rng(13);
  Network conv = lenet_5(rng);
  assign_gammas(conv, 0.6, true);
  CHECK(conv.blocks[0].gate.gamma == doctest::Approx(0.6 / 12));
  CHECK(conv.blocks[1].gate.gamma == doctest::Approx(0.6 / 4));
  CHECK(conv.blocks[2].gate.gamma == 0.6);
  assign_gammas(conv, 0.6, false);
  CHECK(conv.blocks[0].gate.gamma == 0.6);
}

TEST_CASE("adding a gated layer adds a nonnegative KL term") {
  RandomSource rng(14);
  const std::vector<std::size_t> a{4, 6, 3}, b{4, 6, 5, 3};
  Network small = toy_mlp(a, rng, 0.4), big = toy_mlp(b, rng, 0.4);
  const auto ks = kl_terms(small), kb = kl_terms(big);
  CHECK(kb.size() == ks.size() + 1);
  CHECK(kb.back() >= 0.0);
}
