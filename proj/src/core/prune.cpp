#include "prune.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace vib {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool is_weight_layer(const LayerSpec& l) { return l.kind == LayerKind::affine || l.kind == LayerKind::conv2d; }

// Keeps slices [j*stride, (j+1)*stride) of `v` for every j in keep.
std::vector<double> keep_slices(const std::vector<double>& v, std::span<const std::size_t> keep, std::size_t stride) {
  std::vector<double> out;
  out.reserve(keep.size() * stride);
  for (auto j : keep) out.insert(out.end(), v.begin() + j * stride, v.begin() + (j + 1) * stride);
  return out;
}

Tensor keep_leading(const Tensor& t, std::span<const std::size_t> keep) {
  Shape s = t.shape();
  const std::size_t stride = t.size() / s[0];
  s[0] = keep.size();
  return Tensor(std::move(s), keep_slices(t.storage(), keep, stride));
}

// Output units of a weight layer, or the channel entries of batch norm.
void drop_outputs(LayerSpec& l, std::span<const std::size_t> keep) {
  l.weight = keep_leading(l.weight, keep);
  l.bias = keep_leading(l.bias, keep);
  if (l.kind == LayerKind::batch_norm) {
    l.bn.running_mean = keep_leading(l.bn.running_mean, keep);
    l.bn.running_var = keep_leading(l.bn.running_var, keep);
  }
}

// Input columns of a weight layer. For a dense layer reading a flattened
// (channels, inner) map, channel j owns columns [j*inner, (j+1)*inner).
void drop_inputs(LayerSpec& l, std::span<const std::size_t> keep, std::size_t inner) {
  const Tensor& w = l.weight;
  const std::size_t rows = w.dim(0);
  const std::size_t row_len = w.size() / rows;
  const std::size_t stride = l.kind == LayerKind::conv2d ? row_len / w.dim(1) : inner;
  std::vector<double> out;
  out.reserve(rows * keep.size() * stride);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = w.data() + r * row_len;
    for (auto j : keep) out.insert(out.end(), row + j * stride, row + (j + 1) * stride);
  }
  Shape s = w.shape();
  s[1] = l.kind == LayerKind::conv2d ? keep.size() : keep.size() * inner;
  l.weight = Tensor(std::move(s), std::move(out));
}

void scale_inputs(LayerSpec& l, std::span<const double> scale, std::size_t inner) {
  Tensor& w = l.weight;
  const std::size_t rows = w.dim(0);
  const std::size_t row_len = w.size() / rows;
  const std::size_t stride = row_len / scale.size();
  if (l.kind == LayerKind::affine && stride != inner) throw DimensionError("fold width mismatch");
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < scale.size(); ++j)
      for (std::size_t i = 0; i < stride; ++i) w[r * row_len + j * stride + i] *= scale[j];
}

// The layer that consumes the output of gate `g` (-1 is the input gate):
// the first weight layer of the next block, or the head.
struct Consumer {
  std::vector<LayerSpec*> channelwise;  // batch norm ahead of the weight layer
  LayerSpec* weight = nullptr;
  bool direct = true;                   // no layer sits between the gate and the weight layer
};

Consumer find_consumer(Network& net, std::ptrdiff_t g) {
  Consumer c;
  const std::size_t next = static_cast<std::size_t>(g + 1);
  if (next >= net.blocks.size()) {
    c.weight = &net.head;
    return c;
  }
  for (auto& l : net.blocks[next].layers) {
    if (is_weight_layer(l)) {
      c.weight = &l;
      return c;
    }
    c.direct = false;
    if (l.kind == LayerKind::batch_norm) c.channelwise.push_back(&l);
  }
  throw DimensionError("block " + std::to_string(next) + " has no weight layer");
}

std::size_t inner_size(const Shape& per_sample) {
  return per_sample.size() <= 1 ? 1 : shape_product(per_sample) / per_sample[0];
}

void check_surviving(const std::vector<std::size_t>& keep, const std::string& layer, std::size_t width, double tau) {
  if (keep.empty()) {
    std::ostringstream os;
    os << "degenerate architecture: pruning at tau=" << tau << " removes all " << width << " units of layer '"
       << layer << "'";
    throw DegenerateArchitecture(os.str());
  }
}

void make_deterministic(VibGate& g) {
  for (auto& s : g.log_sigma2) s = kNegInf;
}

}  // namespace

std::vector<std::size_t> surviving_indices(const VibGate& gate, double tau) {
  const auto a = alpha(gate);
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < a.size(); ++j)
    if (a[j] >= tau) keep.push_back(j);
  return keep;
}

PruneResult prune(const Network& source, double tau, const PruneOptions& opts) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("prune threshold must be positive and finite");
  source.validate();
  PruneResult r;
  Network& net = r.network;
  net = source;
  PruneReport& rep = r.report;
  rep.tau = tau;

  // Decide every layer first so a degenerate layer fails before any surgery.
  std::vector<std::vector<std::size_t>> keep;
  if (net.input_gate) {
    rep.layer_names.push_back("input_gate");
    keep.push_back(surviving_indices(*net.input_gate, tau));
    check_surviving(keep.back(), "input_gate", net.input_gate->width(), tau);
  }
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const std::string name = "block" + std::to_string(i);
    rep.layer_names.push_back(name);
    keep.push_back(surviving_indices(net.blocks[i].gate, tau));
    check_surviving(keep.back(), name, net.blocks[i].gate.width(), tau);
  }
  rep.survivors = keep;

  const auto shapes = source.block_output_shapes();
  std::size_t k = 0;
  if (net.input_gate) {
    const auto& kept = keep[k++];
    Consumer c = find_consumer(net, -1);
    if (kept.size() != net.input_gate->width()) {
      if (c.weight->kind != LayerKind::affine || !c.direct)
        throw DimensionError("input pruning needs a dense first layer");
      std::vector<std::size_t> index;
      for (auto j : kept) index.push_back(net.input_index.empty() ? j : net.input_index[j]);
      net.input_index = std::move(index);
      drop_inputs(*c.weight, kept, 1);
      net.input_gate->erase(kept);
    }
    make_deterministic(*net.input_gate);
    if (opts.fold_multipliers) {
      if (!c.direct) throw DimensionError("cannot fold the input gate across a non-linear layer");
      scale_inputs(*c.weight, net.input_gate->mu, 1);
      net.input_gate->mu.assign(net.input_gate->width(), 1.0);
    }
  }

  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    const auto& kept = keep[k++];
    Block& b = net.blocks[i];
    const std::size_t inner = inner_size(shapes[i]);
    Consumer c = find_consumer(net, static_cast<std::ptrdiff_t>(i));
    if (kept.size() != b.gate.width()) {
      // The last weight layer of the block produces the gated units; every
      // channel-wise layer after it loses the same entries.
      std::size_t last = b.layers.size();
      for (std::size_t j = 0; j < b.layers.size(); ++j)
        if (is_weight_layer(b.layers[j])) last = j;
      if (last == b.layers.size()) throw DimensionError("block " + std::to_string(i) + " has no weight layer");
      for (std::size_t j = last; j < b.layers.size(); ++j)
        if (b.layers[j].has_parameters()) drop_outputs(b.layers[j], kept);
      for (LayerSpec* l : c.channelwise) drop_outputs(*l, kept);
      drop_inputs(*c.weight, kept, inner);
      b.gate.erase(kept);
    }
    make_deterministic(b.gate);
    if (opts.fold_multipliers) {
      if (!c.direct) throw DimensionError("cannot fold block " + std::to_string(i) + " gate across a non-linear layer");
      scale_inputs(*c.weight, b.gate.mu, inner);
      b.gate.mu.assign(b.gate.width(), 1.0);
    }
  }

  ++net.revision;
  net.validate();
  rep.original_arch = source.original;
  rep.pruned_arch = net.summary();
  rep.r_w = compute_r_w(rep.original_arch, rep.pruned_arch);
  rep.flops = compute_flops(rep.pruned_arch);
  rep.r_n = compute_r_n(rep.original_arch, rep.pruned_arch);
  return r;
}

Network zero_pruned_coordinates(const Network& net, double tau) {
  Network out = net;
  for (VibGate* g : out.gates()) {
    const auto a = alpha(*g);
    for (std::size_t j = 0; j < a.size(); ++j)
      if (!(a[j] >= tau)) g->mu[j] = 0.0;
  }
  ++out.revision;
  return out;
}

std::string PruneReport::text() const {
  std::ostringstream os;
  os << std::fixed;
  os << "threshold    " << std::setprecision(6) << std::defaultfloat << tau << '\n' << std::fixed;
  for (std::size_t i = 0; i < layer_names.size(); ++i) {
    os << "layer        " << layer_names[i] << ' ';
    if (i < original_arch.gated_widths.size()) os << original_arch.gated_widths[i] << " -> ";
    os << survivors[i].size() << '\n';
  }
  os << "architecture " << original_arch.width_string() << " -> " << pruned_arch.width_string() << '\n';
  os << "r_w          " << std::setprecision(2) << r_w << " %\n";
  os << "flops        " << flops << '\n';
  os << "r_n          " << std::setprecision(2) << r_n << " %\n";
  if (err_before) os << "error before " << std::setprecision(2) << 100.0 * *err_before << " %\n";
  if (err_after) os << "error after  " << std::setprecision(2) << 100.0 * *err_after << " %\n";
  return os.str();
}

std::string PruneReport::csv_header() { return "tau,r_w,flops,r_n,err_before,err_after,arch"; }

std::string PruneReport::csv_row() const {
  std::ostringstream os;
  os << std::setprecision(10) << tau << ',' << std::fixed << std::setprecision(4) << r_w << ',' << flops << ','
     << r_n << ',';
  if (err_before) os << std::setprecision(6) << *err_before;
  os << ',';
  if (err_after) os << std::setprecision(6) << *err_after;
  os << ',' << arch_string();
  return os.str();
}

}  // namespace vib
