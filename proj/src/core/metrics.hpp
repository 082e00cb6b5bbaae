#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace vib {

/// Weight-bearing layer as seen by the compression metrics.
struct LayerCost {
  enum class Kind { dense, conv };
  Kind kind = Kind::dense;
  std::size_t in = 0;   // input features or channels
  std::size_t out = 0;  // output features or channels
  std::size_t kernel = 1;
  std::size_t out_h = 1;
  std::size_t out_w = 1;

  std::size_t weights() const { return in * out * kernel * kernel; }
  /// One FLOP per multiplication, additions excluded.
  std::size_t flops() const { return weights() * out_h * out_w; }
};

/// Architecture digest: the weight layers in order, and the sizes of every
/// gated feature map (input first when the input is gated).
struct ArchSummary {
  std::vector<LayerCost> layers;
  std::vector<std::size_t> feature_sizes;
  std::vector<std::size_t> gated_widths;  // neurons or channels per gated layer

  /// Compact round-trippable form, e.g. "d784x300,d300x100,d100x10|784,300,100|784,300,100".
  std::string serialize() const;
  static ArchSummary parse(const std::string& text);
  /// Gated widths joined by '-', e.g. "97-71-33".
  std::string width_string() const;
  std::size_t total_weights() const;

  friend bool operator==(const ArchSummary&, const ArchSummary&) = default;
};

inline bool operator==(const LayerCost& a, const LayerCost& b) {
  return a.kind == b.kind && a.in == b.in && a.out == b.out && a.kernel == b.kernel && a.out_h == b.out_h &&
         a.out_w == b.out_w;
}

/// Fully connected chain from a width list such as {784, 300, 100, 10}. The
/// last entry is the output layer; every other entry is a gated layer, except
/// the first when `input_gated` is false.
ArchSummary dense_arch(std::span<const std::size_t> widths, bool input_gated);
/// Same, from "784-300-100-10".
ArchSummary dense_arch(const std::string& widths, bool input_gated);

/// 100 * pruned weights / original weights; biases excluded.
double compute_r_w(const ArchSummary& original, const ArchSummary& pruned);
std::size_t compute_flops(const ArchSummary& arch);
/// 100 * pruned gated feature storage / original gated feature storage.
double compute_r_n(const ArchSummary& original, const ArchSummary& pruned);

}  // namespace vib
