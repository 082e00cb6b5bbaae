#pragma once

#include <string>
#include <vector>

#include "random.hpp"
#include "tensor.hpp"

namespace vib {

enum class LayerKind { affine, conv2d, batch_norm, relu, max_pool2d };

const char* layer_kind_name(LayerKind k);

struct ConvGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// One deterministic primitive of a layer chain f_i. For batch_norm the
/// learnable scale and shift live in `weight` and `bias`.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  Tensor weight;
  Tensor bias;
  ConvGeometry geometry;  // conv2d; max_pool2d uses kernel == stride
  BatchNormState bn;

  static LayerSpec affine(Tensor weight, Tensor bias);
  static LayerSpec conv2d(Tensor weight, Tensor bias, ConvGeometry geometry);
  static LayerSpec batch_norm(std::size_t features);
  static LayerSpec relu();
  static LayerSpec max_pool2d(std::size_t kernel);

  bool has_parameters() const {
    return kind == LayerKind::affine || kind == LayerKind::conv2d || kind == LayerKind::batch_norm;
  }
  /// Output shape for a given input shape (batch dimension included).
  Shape output_shape(const Shape& input) const;
  void validate() const;
};

/// He-normal weights, zero bias.
LayerSpec make_affine(std::size_t in, std::size_t out, RandomSource& rng, double gain = 2.0);
LayerSpec make_conv2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry g, RandomSource& rng);

struct LayerCache {
  bool valid = false;
  bool training = false;
  Tensor input;
  Tensor normalized;                // batch_norm x-hat
  std::vector<double> inv_std;      // batch_norm
  std::vector<double> batch_mean;   // batch_norm, for running-stat updates
  std::vector<double> batch_var;    // batch_norm, biased
  std::vector<std::size_t> argmax;  // max_pool2d
};

struct LayerGrads {
  Tensor weight;
  Tensor bias;
  void zero_like(const LayerSpec& layer);
};

/// Forward pass. `training` selects batch statistics for batch_norm.
/// When `cache` is non-null it receives everything backward needs.
Tensor layer_forward(const LayerSpec& layer, const Tensor& x, bool training, LayerCache* cache);

/// Accumulates parameter gradients into `grads` and returns dL/dx.
Tensor layer_backward(const LayerSpec& layer, const LayerCache& cache, const Tensor& grad_out, LayerGrads& grads);

/// Momentum update of batch-norm running statistics from a training forward.
void update_running_stats(LayerSpec& layer, const LayerCache& cache);

Tensor affine_forward(const Tensor& x, const LayerSpec& layer);
Tensor conv2d_forward(const Tensor& x, const LayerSpec& layer);

}  // namespace vib
