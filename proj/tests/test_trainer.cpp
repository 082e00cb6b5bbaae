#include <cmath>

#include "doctest.h"
#include "prune.hpp"
#include "support.hpp"
#include "trainer.hpp"

using namespace vib;

namespace {

Network small_net(std::uint64_t seed, bool bn = true) {
  RandomSource rng(seed);
  const std::vector<std::size_t> widths{5, 12, 8, 3};
  return toy_mlp(widths, rng, 0.0, false, bn);
}

TrainConfig quick(std::size_t epochs = 5) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.learning_rate = 1e-2;
  c.seed = 9;
  return c;
}

bool same_parameters(Network& a, Network& b) {
  auto pa = param_refs(a), pb = param_refs(b);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!std::equal(pa[i].value.begin(), pa[i].value.end(), pb[i].value.begin())) return false;
  return true;
}

}  // namespace

TEST_CASE("well separated blobs are learned perfectly") {
  const Dataset train_set = synthetic_blobs(600, 3, 5, 10.0, 1);
  const Dataset test_set = synthetic_blobs(300, 3, 5, 10.0, 2);
  Network net = small_net(3);
  const TrainLog log = train(net, train_set, &test_set, quick(8));
  REQUIRE(log.rows.size() == 8);
  CHECK(log.rows.back().test_error.has_value());
  CHECK(error_rate(net, test_set) == 0.0);
  CHECK(log.rows.back().loss < log.rows.front().loss);
}

TEST_CASE("training is a pure function of the seed") {
  const Dataset d = synthetic_blobs(200, 3, 5, 4.0, 5);
  Network a = small_net(1), b = small_net(1), c = small_net(1);
  TrainConfig cfg = quick(2);
  cfg.gamma_prime = 0.5;
  train(a, d, nullptr, cfg);
  train(b, d, nullptr, cfg);
  CHECK(same_parameters(a, b));
  cfg.seed = 10;
  train(c, d, nullptr, cfg);
  CHECK_FALSE(same_parameters(a, c));
}

TEST_CASE("fine-tuning keeps the architecture and the gates") {
  const Dataset d = synthetic_blobs(200, 3, 5, 4.0, 5);
  Network net = small_net(2);
  TrainConfig cfg = quick(2);
  cfg.gamma_prime = 1.0;
  train(net, d, nullptr, cfg);
  const Network pruned = prune(net, 1e-2).network;

  cfg.epochs = 0;
  Network same = fine_tune(pruned, d, cfg);
  CHECK(same.summary() == pruned.summary());
  Network p_copy = pruned;
  CHECK(same_parameters(same, p_copy));

  cfg.epochs = 2;
  TrainLog log;
  Network tuned = fine_tune(pruned, d, cfg, &log);
  CHECK(tuned.summary() == pruned.summary());
  CHECK(log.rows.size() == 2);
  auto before = pruned.gates();
  auto after = tuned.gates();
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(before[i]->mu == after[i]->mu);
    CHECK(before[i]->gamma == after[i]->gamma);
  }
  for (double k : log.rows.back().kl) CHECK(k == 0.0);
  CHECK_FALSE(same_parameters(tuned, p_copy));
}

TEST_CASE("weight decay only shrinks weight matrices") {
  Network net = small_net(4);
  auto params = param_refs(net);
  std::vector<std::vector<double>> before, zeros;
  for (auto& p : params) {
    before.emplace_back(p.value.begin(), p.value.end());
    zeros.emplace_back(p.value.size(), 0.0);
  }
  std::vector<std::span<double>> grads;
  for (auto& z : zeros) grads.emplace_back(z);
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::sgd_momentum;
  cfg.momentum = 0.0;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  Optimizer opt(cfg, params);
  opt.step(params, grads, 1.0);
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].value.size(); ++j) {
      if (params[i].group == ParamGroup::weight)
        CHECK(params[i].value[j] == doctest::Approx(before[i][j] * (1 - 0.05)));
      else
        CHECK(params[i].value[j] == before[i][j]);
    }
}

TEST_CASE("optimizer steps on a quadratic") {
  std::vector<double> w{1.0, -2.0, 0.5}, g(3);
  std::vector<ParamRef> params{{"w", ParamGroup::weight, std::span<double>(w)}};
  for (const auto kind : {OptimizerKind::sgd_momentum, OptimizerKind::adam}) {
    w = {1.0, -2.0, 0.5};
    TrainConfig cfg;
    cfg.optimizer = kind;
    cfg.learning_rate = 0.1;
    Optimizer opt(cfg, params);
    for (std::size_t i = 0; i < 3; ++i) g[i] = w[i];  // gradient of 0.5 |w|^2
    opt.step(params, {std::span<double>(g)}, 1.0);
    if (kind == OptimizerKind::sgd_momentum) {
      CHECK(w[0] == doctest::Approx(0.9));
      CHECK(w[1] == doctest::Approx(-1.8));
    } else {
      // first Adam step moves every coordinate by lr in the descent direction
      CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-6));
      CHECK(w[1] == doctest::Approx(-1.9).epsilon(1e-6));
      CHECK(w[2] == doctest::Approx(0.4).epsilon(1e-6));
    }
  }
}

TEST_CASE("gate learning rate applies to gate parameters only") {
  std::vector<double> w{1.0}, mu{1.0}, gw{1.0}, gmu{1.0};
  std::vector<ParamRef> params{{"w", ParamGroup::weight, std::span<double>(w)},
                               {"mu", ParamGroup::gate_mu, std::span<double>(mu)}};
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::sgd_momentum;
  cfg.momentum = 0.0;
  cfg.learning_rate = 0.1;
  cfg.gate_learning_rate = 0.01;
  Optimizer opt(cfg, params);
  opt.step(params, {std::span<double>(gw), std::span<double>(gmu)}, 0.5);
  CHECK(w[0] == doctest::Approx(0.95));
  CHECK(mu[0] == doctest::Approx(0.995));
}

TEST_CASE("divergence is reported with a location") {
  const Dataset d = synthetic_blobs(200, 3, 5, 50.0, 5);
  Network net = small_net(6, false);
  TrainConfig cfg = quick(20);
  cfg.optimizer = OptimizerKind::sgd_momentum;
  cfg.learning_rate = 1e4;
  try {
    train(net, d, nullptr, cfg);
    FAIL("expected divergence");
  } catch (const Diverged& e) {
    const std::string msg = e.what();
    CHECK(msg.find("diverged") != std::string::npos);
    CHECK(msg.find(" in ") != std::string::npos);
  }
}

TEST_CASE("invalid settings are rejected by key") {
  TrainConfig cfg;
  cfg.batch_size = 0;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key == "batch_size");
  }
}

TEST_CASE("training log CSV layout") {
  const Dataset d = synthetic_blobs(100, 3, 5, 4.0, 5);
  Network net = small_net(7);
  TrainHooks hooks;
  hooks.mutual_information = [](const Network&, std::size_t epoch) { return 0.5 * static_cast<double>(epoch); };
  const TrainLog log = train(net, d, &d, quick(2), hooks);
  const std::string csv = log.csv();
  CHECK(csv.rfind("epoch,loss,data_term,kl_block0,kl_block1,train_error,test_error,"
                  "survivors_block0,survivors_block1,mutual_information\n",
                  0) == 0);
  CHECK(log.seed == 9);
  CHECK(log.rows[1].mutual_information.value() == 1.0);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 3);
}
