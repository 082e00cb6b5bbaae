#include <cmath>
#include <filesystem>

#include "checkpoint.hpp"
#include "config.hpp"
#include "doctest.h"
#include "prune.hpp"
#include "support.hpp"

using namespace vib;
using vibtest::random_tensor;

namespace {

double largest_gap(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void perturb_norms(Network& net, RandomSource& rng) {
  for (auto& b : net.blocks)
    for (auto& l : b.layers)
      if (l.kind == LayerKind::batch_norm) {
        for (auto& v : l.bn.running_mean.values()) v = rng.normal(0.0, 0.2);
        for (auto& v : l.bn.running_var.values()) v = rng.uniform(0.5, 2.0);
      }
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("vibnet_ckpt_test_" + name);
}

}  // namespace

TEST_CASE("checkpoints reproduce eval outputs to f32 precision") {
  RandomSource rng(12);
  for (const std::string arch : {"lenet_300_100", "lenet_5", "tiny_conv", "toy_mlp:6-9-4+input_gate"}) {
    CAPTURE(arch);
    Network net = build_architecture(arch, rng, 0.3);
    perturb_norms(net, rng);
    const CheckpointMeta meta{42, 7, "blobs 10 10 3 6 2 1"};
    const auto bytes = encode_checkpoint(net, meta);
    CheckpointMeta got;
    const Network back = decode_checkpoint(bytes, &got);
    CHECK(got.seed == 42);
    CHECK(got.epoch == 7);
    CHECK(got.data == meta.data);
    CHECK(back.name == net.name);
    CHECK(back.summary() == net.summary());
    CHECK(back.original == net.original);
    Shape probe_shape{16};
    for (auto d : net.input_shape) probe_shape.push_back(d);
    const Tensor probe = random_tensor(probe_shape, rng);
    CHECK(largest_gap(predict(net, probe), predict(back, probe)) < 1e-5);
    // re-encoding what was loaded is byte-identical
    CHECK(encode_checkpoint(back, got) == bytes);
  }
}

TEST_CASE("pruned networks keep input selection and deterministic gates") {
  RandomSource rng(3);
  const std::vector<std::size_t> widths{8, 6, 5, 3};
  Network net = toy_mlp(widths, rng, 0.5, true);
  net.input_gate->mu[1] = 0.0;
  net.input_gate->mu[4] = 0.0;
  net.blocks[0].gate.mu[2] = 0.0;
  const Network pruned = prune(net, 1e-2).network;
  const auto bytes = encode_checkpoint(pruned, {});
  const Network back = decode_checkpoint(bytes);
  CHECK(back.input_index == pruned.input_index);
  CHECK(back.input_index.size() == 6);
  CHECK(std::isinf(back.blocks[0].gate.log_sigma2[0]));
  CHECK(back.original == pruned.original);
  const Tensor probe = random_tensor({20, 8}, rng);
  CHECK(largest_gap(predict(pruned, probe), predict(back, probe)) < 1e-5);
}

TEST_CASE("checkpoint arrays are named and ordered") {
  RandomSource rng(1);
  const Network net = build_architecture("toy_mlp:4-3-2+input_gate", rng);
  const auto arrays = checkpoint_arrays(encode_checkpoint(net, {}));
  std::vector<std::string> names;
  for (const auto& a : arrays) names.push_back(a.name);
  const std::vector<std::string> expected{"input_gate.mu",
                                          "input_gate.log_sigma2",
                                          "block0.layer0.weight",
                                          "block0.layer0.bias",
                                          "block0.layer1.weight",
                                          "block0.layer1.bias",
                                          "block0.layer1.running_mean",
                                          "block0.layer1.running_var",
                                          "block0.gate.mu",
                                          "block0.gate.log_sigma2",
                                          "head.weight",
                                          "head.bias"};
  CHECK(names == expected);
  CHECK(arrays[2].shape == Shape{3, 4});
  CHECK(arrays[2].values[5] == static_cast<float>(net.blocks[0].layers[0].weight[5]));
}

TEST_CASE("header layout is little-endian and self-describing") {
  RandomSource rng(1);
  const Network net = build_architecture("toy_mlp:4-3-2", rng);
  const auto bytes = encode_checkpoint(net, {0x0102030405060708ULL, 3, "mnist 0 0"});
  REQUIRE(bytes.size() > 10);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "VIBN");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  const std::uint32_t len = bytes[6] | bytes[7] << 8 | bytes[8] << 16 | static_cast<std::uint32_t>(bytes[9]) << 24;
  const std::string topo(bytes.begin() + 10, bytes.begin() + 10 + len);
  CHECK(topo == describe_topology(net, {0, 0, "mnist 0 0"}));
  CHECK(topo.find("block per_neuron") != std::string::npos);
  CHECK(bytes[10 + len] == 0x08);
  CHECK(bytes[10 + len + 7] == 0x01);
}

TEST_CASE("damaged checkpoints are rejected") {
  RandomSource rng(1);
  const auto bytes = encode_checkpoint(build_architecture("toy_mlp:4-3-2", rng), {});
  auto bad = bytes;
  bad[0] ^= 1;
  CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
  bad = bytes;
  bad[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
  bad = bytes;
  bad[10] = 'X';  // corrupt the first directive
  CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
}

TEST_CASE("checkpoint files") {
  RandomSource rng(5);
  const Network net = build_architecture("tiny_conv", rng);
  const auto path = temp_path("file.vibn");
  save_checkpoint(path, net, {1, 2, "mnist 0 0"});
  CheckpointMeta meta;
  const Network back = load_checkpoint(path, &meta);
  CHECK(meta.epoch == 2);
  CHECK(back.summary() == net.summary());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
}
