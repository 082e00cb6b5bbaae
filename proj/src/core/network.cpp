#include "network.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace vib {

std::size_t Network::depth() const {
  return blocks.size() + (count_input_gate_in_depth && input_gate ? 1 : 0);
}

Shape Network::gated_input_shape() const {
  if (input_index.empty()) return input_shape;
  return {input_index.size()};
}

std::vector<Shape> Network::block_output_shapes() const {
  std::vector<Shape> out;
  Shape s = gated_input_shape();
  s.insert(s.begin(), 1);
  for (const auto& b : blocks) {
    for (const auto& l : b.layers) s = l.output_shape(s);
    out.emplace_back(s.begin() + 1, s.end());
  }
  return out;
}

ArchSummary Network::summary() const {
  ArchSummary a;
  Shape s = gated_input_shape();
  s.insert(s.begin(), 1);
  if (input_gate) {
    a.feature_sizes.push_back(shape_product(s));
    a.gated_widths.push_back(input_gate->width());
  }
  auto record = [&](const LayerSpec& l, const Shape& in_shape) {
    const Shape o = l.output_shape(in_shape);
    LayerCost c;
    if (l.kind == LayerKind::affine) {
      c.in = l.weight.dim(1);
      c.out = l.weight.dim(0);
    } else {
      c.kind = LayerCost::Kind::conv;
      c.in = l.weight.dim(1);
      c.out = l.weight.dim(0);
      c.kernel = l.geometry.kernel;
      c.out_h = o[2];
      c.out_w = o[3];
    }
    a.layers.push_back(c);
    return o;
  };
  for (const auto& b : blocks) {
    for (const auto& l : b.layers) {
      if (l.kind == LayerKind::affine || l.kind == LayerKind::conv2d)
        s = record(l, s);
      else
        s = l.output_shape(s);
    }
    a.feature_sizes.push_back(shape_product(s) / s[0]);
    a.gated_widths.push_back(b.gate.width());
  }
  record(head, s);
  return a;
}

void Network::validate() const {
  if (blocks.empty()) throw DimensionError("a network needs at least one gated block");
  if (input_gate) {
    input_gate->validate();
    if (input_gate->width() != shape_product(gated_input_shape()))
      throw DimensionError("input gate width does not match input features");
  }
  for (auto j : input_index)
    if (j >= full_input_features()) throw DimensionError("input index out of range");
  Shape s = gated_input_shape();
  s.insert(s.begin(), 1);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    for (const auto& l : blocks[i].layers) {
      l.validate();
      s = l.output_shape(s);
    }
    blocks[i].gate.validate();
    gate_inner_size(blocks[i].gate, s);
  }
  if (head.kind != LayerKind::affine) throw DimensionError("head must be an affine layer");
  head.validate();
  head.output_shape(s);
}

std::vector<const VibGate*> Network::gates() const {
  std::vector<const VibGate*> g;
  if (input_gate) g.push_back(&*input_gate);
  for (const auto& b : blocks) g.push_back(&b.gate);
  return g;
}

std::vector<VibGate*> Network::gates() {
  std::vector<VibGate*> g;
  if (input_gate) g.push_back(&*input_gate);
  for (auto& b : blocks) g.push_back(&b.gate);
  return g;
}

Tensor prepare_input(const Network& net, const Tensor& x) {
  const std::size_t batch = x.batch();
  const std::size_t feat = x.features();
  Shape target = net.gated_input_shape();
  target.insert(target.begin(), batch);
  if (net.input_index.empty()) {
    if (feat != net.full_input_features())
      throw DimensionError("input has " + std::to_string(feat) + " features, network expects " +
                           std::to_string(net.full_input_features()));
    return x.shape() == target ? x : x.reshaped(target);
  }
  if (feat != net.full_input_features() && feat != net.input_index.size())
    throw DimensionError("input has " + std::to_string(feat) + " features, network expects " +
                         std::to_string(net.full_input_features()));
  if (feat == net.input_index.size()) return x.reshaped(target);
  Tensor sel(target);
  const std::size_t k = net.input_index.size();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < k; ++j) sel[b * k + j] = x[b * feat + net.input_index[j]];
  return sel;
}

Tensor forward(const Network& net, const Tensor& x, const ForwardOptions& opts, RandomSource& rng,
               ForwardCache* cache) {
  Tensor h = prepare_input(net, x);
  if (cache) {
    cache->owner = &net;
    cache->revision = net.revision;
    cache->valid = false;
    cache->network_input = h;
    cache->layers.assign(net.blocks.size(), {});
    cache->gates.assign(net.blocks.size(), {});
    cache->input_gate = {};
  }
  if (net.input_gate)
    h = gate_forward(h, *net.input_gate, opts.gate_mode, rng, opts.draw, cache ? &cache->input_gate : nullptr);
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const Block& b = net.blocks[i];
    if (cache) cache->layers[i].resize(b.layers.size());
    for (std::size_t j = 0; j < b.layers.size(); ++j)
      h = layer_forward(b.layers[j], h, opts.bn_training, cache ? &cache->layers[i][j] : nullptr);
    h = gate_forward(h, b.gate, opts.gate_mode, rng, opts.draw, cache ? &cache->gates[i] : nullptr);
  }
  Tensor out = layer_forward(net.head, h, opts.bn_training, cache ? &cache->head : nullptr);
  if (cache) cache->valid = true;
  return out;
}

Tensor forward_to_block(const Network& net, const Tensor& x, std::size_t block, const ForwardOptions& opts,
                        RandomSource& rng) {
  if (block >= net.blocks.size()) throw DimensionError("block index out of range");
  Tensor h = prepare_input(net, x);
  if (net.input_gate) h = gate_forward(h, *net.input_gate, opts.gate_mode, rng, opts.draw);
  for (std::size_t i = 0; i <= block; ++i) {
    for (const auto& l : net.blocks[i].layers) h = layer_forward(l, h, opts.bn_training, nullptr);
    h = gate_forward(h, net.blocks[i].gate, opts.gate_mode, rng, opts.draw);
  }
  return h;
}

Tensor predict(const Network& net, const Tensor& x) {
  RandomSource unused(0);
  return forward(net, x, ForwardOptions::eval(), unused);
}

double data_term(const Network& net, const Tensor& out, const Targets& targets, Tensor* grad) {
  const std::size_t batch = out.batch(), k = out.features();
  if (batch == 0) throw InputError("empty batch");
  const double L = static_cast<double>(net.depth());
  if (grad) *grad = Tensor(out.shape(), 0.0);
  double nll = 0.0;
  if (net.likelihood == Likelihood::categorical_softmax) {
    if (targets.labels.size() != batch)
      throw InputError("expected " + std::to_string(batch) + " labels, got " + std::to_string(targets.labels.size()));
    for (std::size_t b = 0; b < batch; ++b) {
      const int y = targets.labels[b];
      if (y < 0 || static_cast<std::size_t>(y) >= k)
        throw InputError("label " + std::to_string(y) + " out of range [0," + std::to_string(k) + ")");
      const double* row = out.data() + b * k;
      const double mx = *std::max_element(row, row + k);
      double z = 0.0;
      for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
      const double lse = mx + std::log(z);
      nll += lse - row[y];
      if (grad) {
        for (std::size_t c = 0; c < k; ++c) {
          const double p = std::exp(row[c] - lse);
          (*grad)[b * k + c] = L * (p - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) / static_cast<double>(batch);
        }
      }
    }
  } else {
    if (!targets.values || targets.values->size() != out.size())
      throw InputError("gaussian head needs a target tensor shaped like the outputs");
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double r = out[i] - (*targets.values)[i];
      nll += 0.5 * r * r;
      if (grad) (*grad)[i] = L * r / static_cast<double>(batch);
    }
    nll += 0.5 * log2pi * static_cast<double>(out.size());
  }
  return L * nll / static_cast<double>(batch);
}

std::vector<double> kl_terms(const Network& net) {
  std::vector<double> kl;
  for (const VibGate* g : net.gates()) kl.push_back(kl_penalty(*g).value);
  return kl;
}

LossBreakdown loss(const Network& net, const Tensor& x, const Targets& targets, const ForwardOptions& opts,
                   RandomSource& rng) {
  const Tensor out = forward(net, x, opts, rng);
  LossBreakdown lb;
  lb.kl_per_layer = kl_terms(net);
  lb.data_term = data_term(net, out, targets, nullptr);
  lb.total = lb.data_term;
  for (double k : lb.kl_per_layer) lb.total += k;
  return lb;
}

NetworkGrads zero_grads(const Network& net) {
  NetworkGrads g;
  if (net.input_gate) {
    g.input_gate.emplace();
    g.input_gate->zero(net.input_gate->width());
  }
  g.layers.resize(net.blocks.size());
  g.gates.resize(net.blocks.size());
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    for (const auto& l : net.blocks[i].layers) {
      LayerGrads lg;
      lg.zero_like(l);
      g.layers[i].push_back(std::move(lg));
    }
    g.gates[i].zero(net.blocks[i].gate.width());
  }
  g.head.zero_like(net.head);
  return g;
}

NetworkGrads backward(const Network& net, const ForwardCache& cache, const Tensor& grad_outputs) {
  if (!cache.valid) throw StateError("network backward called before forward");
  if (cache.owner != &net || cache.revision != net.revision)
    throw StateError("stale forward cache: network changed since the forward pass");
  NetworkGrads g = zero_grads(net);
  Tensor d = layer_backward(net.head, cache.head, grad_outputs, g.head);
  for (std::size_t i = net.blocks.size(); i-- > 0;) {
    const Block& b = net.blocks[i];
    d = gate_backward(b.gate, cache.gates[i], d, g.gates[i]);
    for (std::size_t j = b.layers.size(); j-- > 0;) d = layer_backward(b.layers[j], cache.layers[i][j], d, g.layers[i][j]);
  }
  if (net.input_gate) gate_backward(*net.input_gate, cache.input_gate, d, *g.input_gate);
  return g;
}

void add_kl_gradients(const Network& net, NetworkGrads& grads) {
  auto add = [](const VibGate& gate, GateGrads& gg) {
    const KlPenalty k = kl_penalty(gate);
    for (std::size_t j = 0; j < gate.width(); ++j) {
      gg.mu[j] += k.d_mu[j];
      gg.log_sigma2[j] += k.d_log_sigma2[j];
    }
  };
  if (net.input_gate) add(*net.input_gate, *grads.input_gate);
  for (std::size_t i = 0; i < net.blocks.size(); ++i) add(net.blocks[i].gate, grads.gates[i]);
}

LossAndGrads loss_and_gradients(const Network& net, const Tensor& x, const Targets& targets,
                                const ForwardOptions& opts, RandomSource& rng, bool include_kl,
                                ForwardCache* cache_out) {
  ForwardCache local;
  ForwardCache& cache = cache_out ? *cache_out : local;
  LossAndGrads r;
  r.outputs = forward(net, x, opts, rng, &cache);
  Tensor dout;
  r.loss.data_term = data_term(net, r.outputs, targets, &dout);
  r.loss.total = r.loss.data_term;
  r.loss.kl_per_layer = kl_terms(net);
  if (include_kl)
    for (double k : r.loss.kl_per_layer) r.loss.total += k;
  r.grads = backward(net, cache, dout);
  if (include_kl) add_kl_gradients(net, r.grads);
  return r;
}

namespace {

void push_layer(std::vector<ParamRef>& refs, const std::string& prefix, LayerSpec& l) {
  if (!l.has_parameters()) return;
  const bool bn = l.kind == LayerKind::batch_norm;
  refs.push_back({prefix + ".weight", bn ? ParamGroup::norm_scale : ParamGroup::weight, l.weight.values()});
  refs.push_back({prefix + ".bias", bn ? ParamGroup::norm_shift : ParamGroup::bias, l.bias.values()});
}

void push_gate(std::vector<ParamRef>& refs, const std::string& prefix, VibGate& g) {
  refs.push_back({prefix + ".mu", ParamGroup::gate_mu, g.mu});
  refs.push_back({prefix + ".log_sigma2", ParamGroup::gate_log_sigma2, g.log_sigma2});
}

}  // namespace

std::vector<ParamRef> param_refs(Network& net) {
  std::vector<ParamRef> refs;
  if (net.input_gate) push_gate(refs, "input_gate", *net.input_gate);
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    for (std::size_t j = 0; j < net.blocks[i].layers.size(); ++j)
      push_layer(refs, p + ".layer" + std::to_string(j), net.blocks[i].layers[j]);
    push_gate(refs, p + ".gate", net.blocks[i].gate);
  }
  push_layer(refs, "head", net.head);
  return refs;
}

std::vector<std::span<double>> grad_refs(NetworkGrads& g, const Network& net) {
  std::vector<std::span<double>> refs;
  if (net.input_gate) {
    refs.emplace_back(g.input_gate->mu);
    refs.emplace_back(g.input_gate->log_sigma2);
  }
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    for (std::size_t j = 0; j < net.blocks[i].layers.size(); ++j) {
      if (!net.blocks[i].layers[j].has_parameters()) continue;
      refs.push_back(g.layers[i][j].weight.values());
      refs.push_back(g.layers[i][j].bias.values());
    }
    refs.emplace_back(g.gates[i].mu);
    refs.emplace_back(g.gates[i].log_sigma2);
  }
  refs.push_back(g.head.weight.values());
  refs.push_back(g.head.bias.values());
  return refs;
}

void assign_gammas(Network& net, double gamma_prime, bool inverse_side_length) {
  if (net.input_gate) net.input_gate->gamma = gamma_prime;
  const auto shapes = net.block_output_shapes();
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    VibGate& g = net.blocks[i].gate;
    if (inverse_side_length && g.broadcast == GateBroadcast::per_channel)
      g.gamma = gamma_prime / static_cast<double>(shapes[i].at(1));
    else
      g.gamma = gamma_prime;
  }
}

namespace {

Block dense_block(std::size_t in, std::size_t out, bool batch_norm, double gamma, RandomSource& rng) {
  Block b;
  b.layers.push_back(make_affine(in, out, rng));
  if (batch_norm) b.layers.push_back(LayerSpec::batch_norm(out));
  b.layers.push_back(LayerSpec::relu());
  b.gate = VibGate::initial(out, gamma, GateBroadcast::per_neuron, rng);
  return b;
}

Block conv_block(std::size_t in, std::size_t out, ConvGeometry geo, std::size_t pool, double gamma,
                 RandomSource& rng) {
  Block b;
  b.layers.push_back(make_conv2d(in, out, geo, rng));
  b.layers.push_back(LayerSpec::batch_norm(out));
  b.layers.push_back(LayerSpec::relu());
  if (pool > 1) b.layers.push_back(LayerSpec::max_pool2d(pool));
  b.gate = VibGate::initial(out, gamma, GateBroadcast::per_channel, rng);
  return b;
}

void finish(Network& net) {
  net.validate();
  net.original = net.summary();
}

}  // namespace

Network lenet_300_100(RandomSource& rng, double gamma) {
  Network net;
  net.name = "lenet_300_100";
  net.input_shape = {784};
  net.input_gate = VibGate::initial(784, gamma, GateBroadcast::per_neuron, rng);
  net.blocks.push_back(dense_block(784, 300, true, gamma, rng));
  net.blocks.push_back(dense_block(300, 100, true, gamma, rng));
  net.head = make_affine(100, 10, rng, 1.0);
  finish(net);
  return net;
}

Network lenet_5(RandomSource& rng, double gamma) {
  Network net;
  net.name = "lenet_5";
  net.input_shape = {1, 28, 28};
  net.blocks.push_back(conv_block(1, 20, {5, 1, 0}, 2, gamma, rng));
  net.blocks.push_back(conv_block(20, 50, {5, 1, 0}, 2, gamma, rng));
  net.blocks.push_back(dense_block(800, 500, true, gamma, rng));
  net.head = make_affine(500, 10, rng, 1.0);
  finish(net);
  return net;
}

Network toy_mlp(std::span<const std::size_t> widths, RandomSource& rng, double gamma, bool input_gate,
                bool batch_norm) {
  if (widths.size() < 3) throw DimensionError("toy_mlp needs input, at least one hidden, and output widths");
  Network net;
  std::ostringstream name;
  name << "toy_mlp:";
  for (std::size_t i = 0; i < widths.size(); ++i) name << (i ? "-" : "") << widths[i];
  if (input_gate) name << "+input_gate";
  if (!batch_norm) name << "+no_bn";
  net.name = name.str();
  net.input_shape = {widths.front()};
  if (input_gate) net.input_gate = VibGate::initial(widths.front(), gamma, GateBroadcast::per_neuron, rng);
  for (std::size_t i = 0; i + 2 < widths.size(); ++i)
    net.blocks.push_back(dense_block(widths[i], widths[i + 1], batch_norm, gamma, rng));
  net.head = make_affine(widths[widths.size() - 2], widths.back(), rng, 1.0);
  finish(net);
  return net;
}

Network tiny_conv(RandomSource& rng, double gamma) {
  Network net;
  net.name = "tiny_conv";
  net.input_shape = {2, 6, 6};
  net.blocks.push_back(conv_block(2, 3, {3, 1, 1}, 2, gamma, rng));
  net.head = make_affine(27, 3, rng, 1.0);
  finish(net);
  return net;
}

Network build_architecture(const std::string& name, RandomSource& rng, double gamma) {
  if (name == "lenet_300_100") return lenet_300_100(rng, gamma);
  if (name == "lenet_5") return lenet_5(rng, gamma);
  if (name == "tiny_conv") return tiny_conv(rng, gamma);
  if (name.rfind("toy_mlp:", 0) == 0) {
    std::string spec = name.substr(8);
    bool input_gate = false, batch_norm = true;
    for (;;) {
      const auto plus = spec.rfind('+');
      if (plus == std::string::npos) break;
      const std::string opt = spec.substr(plus + 1);
      if (opt == "input_gate")
        input_gate = true;
      else if (opt == "no_bn")
        batch_norm = false;
      else
        throw InputError("unknown toy_mlp option '" + opt + "'");
      spec = spec.substr(0, plus);
    }
    std::vector<std::size_t> widths;
    std::istringstream is(spec);
    std::string tok;
    while (std::getline(is, tok, '-')) {
      if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos || std::stoull(tok) == 0)
        throw InputError("bad toy_mlp width '" + tok + "' in '" + name + "'");
      widths.push_back(std::stoull(tok));
    }
    return toy_mlp(widths, rng, gamma, input_gate, batch_norm);
  }
  throw InputError("unknown architecture '" + name + "'");
}

}  // namespace vib
