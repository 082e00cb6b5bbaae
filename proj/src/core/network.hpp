#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gate.hpp"
#include "layers.hpp"
#include "metrics.hpp"

namespace vib {

enum class Likelihood { categorical_softmax, gaussian };

/// f_i followed by its gate: h_i = z_i * f_i(h_{i-1}).
struct Block {
  std::vector<LayerSpec> layers;
  VibGate gate;
};

struct Network {
  std::string name;
  Shape input_shape;                      // per-sample, e.g. {784} or {1, 28, 28}
  std::vector<std::size_t> input_index;   // surviving input coordinates; empty keeps all
  std::optional<VibGate> input_gate;
  std::vector<Block> blocks;
  LayerSpec head;
  Likelihood likelihood = Likelihood::categorical_softmax;
  bool count_input_gate_in_depth = false;
  ArchSummary original;                   // architecture before any pruning
  std::uint64_t revision = 0;             // bumped on every parameter update

  /// L, the weight on the data term.
  std::size_t depth() const;
  /// Per-sample shape entering the first block, after input selection.
  Shape gated_input_shape() const;
  std::size_t full_input_features() const { return shape_product(input_shape); }
  std::size_t output_width() const { return head.weight.dim(0); }
  /// Per-sample output shape of every block.
  std::vector<Shape> block_output_shapes() const;
  ArchSummary summary() const;
  void validate() const;
  /// All gates in order, input gate first.
  std::vector<const VibGate*> gates() const;
  std::vector<VibGate*> gates();
};

struct ForwardOptions {
  GateMode gate_mode = GateMode::eval_mean;
  bool bn_training = false;
  NoiseDraw draw = NoiseDraw::per_example;

  static ForwardOptions train() { return {GateMode::train_sample, true, NoiseDraw::per_example}; }
  static ForwardOptions eval() { return {GateMode::eval_mean, false, NoiseDraw::per_example}; }
};

struct ForwardCache {
  const Network* owner = nullptr;
  std::uint64_t revision = 0;
  bool valid = false;
  Tensor network_input;  // reshaped and selected input
  GateCache input_gate;
  std::vector<std::vector<LayerCache>> layers;
  std::vector<GateCache> gates;
  LayerCache head;
};

/// Reshapes/selects a raw batch into the network's gated input layout.
Tensor prepare_input(const Network& net, const Tensor& x);

Tensor forward(const Network& net, const Tensor& x, const ForwardOptions& opts, RandomSource& rng,
               ForwardCache* cache = nullptr);

/// Output of block `block` after its gate, h_{block+1}.
Tensor forward_to_block(const Network& net, const Tensor& x, std::size_t block, const ForwardOptions& opts,
                        RandomSource& rng);

/// Eval-mode forward; no randomness is consumed.
Tensor predict(const Network& net, const Tensor& x);

struct LossBreakdown {
  std::vector<double> kl_per_layer;  // input gate first when present
  double data_term = 0.0;
  double total = 0.0;
};

/// Labels are used by the softmax head, targets (batch x outputs) by the
/// Gaussian head.
struct Targets {
  std::span<const int> labels;
  const Tensor* values = nullptr;
};

/// Data term L * mean NLL and its gradient w.r.t. the head outputs.
double data_term(const Network& net, const Tensor& outputs, const Targets& targets, Tensor* grad_outputs);

std::vector<double> kl_terms(const Network& net);

LossBreakdown loss(const Network& net, const Tensor& x, const Targets& targets, const ForwardOptions& opts,
                   RandomSource& rng);

struct NetworkGrads {
  std::optional<GateGrads> input_gate;
  std::vector<std::vector<LayerGrads>> layers;
  std::vector<GateGrads> gates;
  LayerGrads head;
};

NetworkGrads zero_grads(const Network& net);

/// Data-path gradients from dL/d(outputs).
NetworkGrads backward(const Network& net, const ForwardCache& cache, const Tensor& grad_outputs);

/// Adds the KL gradient of every gate to `grads`.
void add_kl_gradients(const Network& net, NetworkGrads& grads);

struct LossAndGrads {
  LossBreakdown loss;
  NetworkGrads grads;
  Tensor outputs;
};

LossAndGrads loss_and_gradients(const Network& net, const Tensor& x, const Targets& targets,
                                const ForwardOptions& opts, RandomSource& rng, bool include_kl = true,
                                ForwardCache* cache_out = nullptr);

enum class ParamGroup { weight, bias, norm_scale, norm_shift, gate_mu, gate_log_sigma2 };

struct ParamRef {
  std::string name;
  ParamGroup group;
  std::span<double> value;
};

/// Every learnable array in a fixed order shared with grad_refs().
std::vector<ParamRef> param_refs(Network& net);
std::vector<std::span<double>> grad_refs(NetworkGrads& grads, const Network& net);

/// Sets gamma on every gate: gamma' for dense and input gates, gamma'/S for
/// per-channel gates when `inverse_side_length` (S = feature-map side).
void assign_gammas(Network& net, double gamma_prime, bool inverse_side_length);

// ---- predefined architectures ----------------------------------------------

/// 784-300-100-10, batch norm, input gate.
Network lenet_300_100(RandomSource& rng, double gamma = 0.0);
/// conv(20,5x5)-pool-conv(50,5x5)-pool-fc500-fc10 on 1x28x28, per-channel gates.
Network lenet_5(RandomSource& rng, double gamma = 0.0);
/// Dense MLP over widths {in, hidden..., out}.
Network toy_mlp(std::span<const std::size_t> widths, RandomSource& rng, double gamma = 0.0, bool input_gate = false,
                bool batch_norm = true);
/// conv(3,3x3,pad 1)-bn-relu-pool2 on 2x6x6, per-channel gate, dense head to 3.
Network tiny_conv(RandomSource& rng, double gamma = 0.0);

Network build_architecture(const std::string& name, RandomSource& rng, double gamma = 0.0);

}  // namespace vib
