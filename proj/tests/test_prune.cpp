#include <cmath>

#include "doctest.h"
#include "prune.hpp"
#include "support.hpp"

using namespace vib;
using vibtest::random_tensor;

namespace {

// Spreads log alpha over several decades so any threshold splits the gates.
void spread_alpha(Network& net, RandomSource& rng) {
  for (VibGate* g : net.gates())
    for (std::size_t j = 0; j < g->width(); ++j) {
      g->log_sigma2[j] = 0.0;
      g->mu[j] = std::exp(0.5 * rng.uniform(std::log(1e-4), std::log(1e3))) * (rng.uniform() < 0.5 ? -1 : 1);
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

}  // namespace

TEST_CASE("published architectures reproduce their percentages") {
  const ArchSummary orig = dense_arch("784-300-100-10", true);
  CHECK(orig.total_weights() == 266200);
  CHECK(compute_flops(orig) == 266200);
  const ArchSummary vib = dense_arch("97-71-33-10", true);
  const ArchSummary vd = dense_arch("512-114-72-10", true);
  CHECK(vib.total_weights() == 9560);
  CHECK(vd.total_weights() == 67296);
  CHECK(std::abs(compute_r_w(orig, vib) - 3.59) < 0.01);
  CHECK(std::abs(compute_r_w(orig, vd) - 25.28) < 0.01);
  CHECK(std::abs(compute_r_n(orig, vib) - 16.98) < 0.01);
  CHECK(std::abs(compute_r_n(orig, vd) - 58.95) < 0.01);
  CHECK(compute_r_w(orig, orig) == 100.0);
  CHECK(compute_r_n(orig, orig) == 100.0);
  CHECK_THROWS_AS(compute_r_w(orig, dense_arch("784-10", true)), InputError);
}

TEST_CASE("flop counting rule") {
  LayerCost dense{LayerCost::Kind::dense, 784, 300};
  CHECK(dense.flops() == 235200);
  LayerCost conv{LayerCost::Kind::conv, 1, 6, 5, 24, 24};
  CHECK(conv.flops() == 86400);
  ArchSummary a = dense_arch("784-300-100-10", true);
  CHECK(ArchSummary::parse(a.serialize()) == a);
  ArchSummary c;
  c.layers = {conv, dense};
  c.feature_sizes = {3456};
  c.gated_widths = {6};
  CHECK(ArchSummary::parse(c.serialize()) == c);
}

TEST_CASE("no coordinate below threshold leaves the network unchanged") {
  RandomSource rng(1);
  Network net = lenet_300_100(rng);  // initial alpha is about 100
  auto [pruned, rep] = prune(net, 1e-2);
  CHECK(pruned.summary() == net.summary());
  CHECK(rep.r_w == 100.0);
  CHECK(rep.r_n == 100.0);
  const Tensor x = random_tensor({20, 784}, rng);
  CHECK(predict(pruned, x) == predict(net, x));
}

TEST_CASE("removing exact-zero coordinates is bit-exact") {
  RandomSource rng(2);
  SUBCASE("dense with input gate") {
    const std::vector<std::size_t> w{12, 10, 8, 4};
    Network net = toy_mlp(w, rng, 0.1, true, true);
    randomize_norms(net, rng);
    for (VibGate* g : net.gates())
      for (std::size_t j = 0; j < g->width(); j += 3) g->mu[j] = 0.0;
    auto [pruned, rep] = prune(net, 1e-2);
    CHECK(pruned.input_index.size() == 8);
    const Tensor x = random_tensor({50, 12}, rng);
    CHECK(max_abs_diff(predict(pruned, x), predict(net, x)) == 0.0);
  }
  SUBCASE("convolutional") {
    Network net = lenet_5(rng);
    randomize_norms(net, rng);
    net.blocks[0].gate.mu[3] = 0.0;
    net.blocks[1].gate.mu[10] = 0.0;
    net.blocks[1].gate.mu[11] = 0.0;
    net.blocks[2].gate.mu[0] = 0.0;
    auto [pruned, rep] = prune(net, 1e-2);
    CHECK(pruned.summary().gated_widths == std::vector<std::size_t>{19, 48, 499});
    const Tensor x = random_tensor({4, 1, 28, 28}, rng);
    CHECK(max_abs_diff(predict(pruned, x), predict(net, x)) == 0.0);
  }
}

TEST_CASE("surgery equals zeroing the pruned coordinates") {
  RandomSource rng(3);
  for (double tau : {1e-3, 1e-2, 1.0, 10.0}) {
    const std::vector<std::size_t> w{10, 16, 12, 5};
    Network net = toy_mlp(w, rng, 0.1, true, true);
    randomize_norms(net, rng);
    spread_alpha(net, rng);
    PruneResult r;
    try {
      r = prune(net, tau);
    } catch (const DegenerateArchitecture&) {
      continue;
    }
    const Network zeroed = zero_pruned_coordinates(net, tau);
    const Tensor x = random_tensor({1000, 10}, rng);
    CHECK(max_abs_diff(predict(r.network, x), predict(zeroed, x)) < 1e-12);
  }
  Network conv = tiny_conv(rng);
  randomize_norms(conv, rng);
  conv.blocks[0].gate.mu = {0.5, 1e-4, -2.0};
  auto r = prune(conv, 1e-2);
  const Tensor x = random_tensor({1000, 2, 6, 6}, rng);
  CHECK(max_abs_diff(predict(r.network, x), predict(zero_pruned_coordinates(conv, 1e-2), x)) < 1e-12);
}

TEST_CASE("folding multipliers keeps the outputs") {
  RandomSource rng(4);
  const std::vector<std::size_t> w{10, 16, 12, 5};
  Network net = toy_mlp(w, rng, 0.1, true, true);
  randomize_norms(net, rng);
  spread_alpha(net, rng);
  auto plain = prune(net, 1e-2);
  auto folded = prune(net, 1e-2, {.fold_multipliers = true});
  for (const VibGate* g : folded.network.gates())
    for (double m : g->mu) CHECK(m == 1.0);
  const Tensor x = random_tensor({200, 10}, rng);
  CHECK(max_abs_diff(predict(plain.network, x), predict(folded.network, x)) < 1e-10);
}

TEST_CASE("monotone in the threshold") {
  RandomSource rng(5);
  const std::vector<std::size_t> w{20, 30, 25, 5};
  Network net = toy_mlp(w, rng, 0.1, true, false);
  spread_alpha(net, rng);
  double last_rw = 101.0, last_rn = 101.0;
  std::vector<std::vector<std::size_t>> last;
  for (double tau : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    auto r = prune(net, tau);
    CHECK(r.report.r_w <= last_rw);
    CHECK(r.report.r_n <= last_rn);
    CHECK(r.report.r_w > 0.0);
    if (!last.empty())
      for (std::size_t i = 0; i < last.size(); ++i)
        for (auto j : r.report.survivors[i]) CHECK(std::find(last[i].begin(), last[i].end(), j) != last[i].end());
    last = r.report.survivors;
    last_rw = r.report.r_w;
    last_rn = r.report.r_n;
  }
}

TEST_CASE("emptying a layer is a named error") {
  RandomSource rng(6);
  const std::vector<std::size_t> w{4, 5, 3, 2};
  Network net = toy_mlp(w, rng);
  for (auto& m : net.blocks[1].gate.mu) m = 0.0;
  try {
    prune(net, 1e-2);
    FAIL("expected a degenerate architecture error");
  } catch (const DegenerateArchitecture& e) {
    CHECK(std::string(e.what()).find("block1") != std::string::npos);
  }
  CHECK_THROWS_AS(prune(net, 0.0), DomainError);
}

TEST_CASE("pruning twice composes the input selection") {
  RandomSource rng(7);
  const std::vector<std::size_t> w{8, 6, 3};
  Network net = toy_mlp(w, rng, 0.1, true, false);
  net.input_gate->mu[1] = 0.0;
  auto first = prune(net, 1e-2);
  first.network.input_gate->mu[0] = 0.0;  // original coordinate 0
  first.network.input_gate->mu[2] = 0.0;  // original coordinate 3
  auto second = prune(first.network, 1e-2);
  CHECK(second.network.input_index == std::vector<std::size_t>{2, 4, 5, 6, 7});
  const Tensor x = random_tensor({10, 8}, rng);
  CHECK(max_abs_diff(predict(second.network, x), predict(first.network, x)) == 0.0);
  CHECK(second.report.original_arch == net.original);
}

TEST_CASE("report formats") {
  RandomSource rng(8);
  const std::vector<std::size_t> w{4, 5, 3};
  Network net = toy_mlp(w, rng, 0.1, true, false);
  net.blocks[0].gate.mu[4] = 0.0;
  auto r = prune(net, 1e-2);
  r.report.err_before = 0.0162;
  r.report.err_after = 0.0165;
  CHECK(PruneReport::csv_header() == "tau,r_w,flops,r_n,err_before,err_after,arch");
  const std::string row = r.report.csv_row();
  CHECK(row.substr(row.rfind(',') + 1) == "4-4");
  CHECK(r.report.text().find("4-5 -> 4-4") != std::string::npos);
}
