#include "layers.hpp"

#include <algorithm>
#include <cmath>

namespace vib {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::affine: return "affine";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::max_pool2d: return "max_pool2d";
  }
  return "?";
}

LayerSpec LayerSpec::affine(Tensor weight, Tensor bias) {
  LayerSpec l;
  l.kind = LayerKind::affine;
  l.weight = std::move(weight);
  l.bias = std::move(bias);
  l.validate();
  return l;
}

LayerSpec LayerSpec::conv2d(Tensor weight, Tensor bias, ConvGeometry geometry) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.weight = std::move(weight);
  l.bias = std::move(bias);
  l.geometry = geometry;
  l.validate();
  return l;
}

LayerSpec LayerSpec::batch_norm(std::size_t features) {
  LayerSpec l;
  l.kind = LayerKind::batch_norm;
  l.weight = Tensor({features}, 1.0);
  l.bias = Tensor({features}, 0.0);
  l.bn.running_mean = Tensor({features}, 0.0);
  l.bn.running_var = Tensor({features}, 1.0);
  return l;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::max_pool2d(std::size_t kernel) {
  LayerSpec l;
  l.kind = LayerKind::max_pool2d;
  l.geometry = {kernel, kernel, 0};
  return l;
}

void LayerSpec::validate() const {
  switch (kind) {
    case LayerKind::affine:
      if (weight.rank() != 2 || bias.rank() != 1 || bias.dim(0) != weight.dim(0))
        throw DimensionError("affine weight must be (out,in) with bias (out), got " + shape_string(weight.shape()) +
                             " and " + shape_string(bias.shape()));
      break;
    case LayerKind::conv2d:
      if (weight.rank() != 4 || weight.dim(2) != weight.dim(3) || weight.dim(2) != geometry.kernel ||
          bias.rank() != 1 || bias.dim(0) != weight.dim(0) || geometry.stride == 0)
        throw DimensionError("conv weight must be (out,in,k,k) matching the kernel size, got " +
                             shape_string(weight.shape()));
      break;
    case LayerKind::batch_norm: {
      const auto f = weight.size();
      if (bias.size() != f || bn.running_mean.size() != f || bn.running_var.size() != f)
        throw DimensionError("batch_norm parameter sizes disagree");
      for (double v : bn.running_var.values())
        if (!(v > 0.0)) throw DomainError("batch_norm running variance must be strictly positive");
      break;
    }
    case LayerKind::max_pool2d:
      if (geometry.kernel == 0) throw DimensionError("pool kernel must be positive");
      break;
    case LayerKind::relu: break;
  }
}

Shape LayerSpec::output_shape(const Shape& in) const {
  if (in.empty()) throw DimensionError("input needs a batch dimension");
  const std::size_t batch = in[0];
  switch (kind) {
    case LayerKind::affine: {
      std::size_t feat = 1;
      for (std::size_t i = 1; i < in.size(); ++i) feat *= in[i];
      if (feat != weight.dim(1))
        throw DimensionError("affine expects " + std::to_string(weight.dim(1)) + " input features, got " +
                             std::to_string(feat));
      return {batch, weight.dim(0)};
    }
    case LayerKind::conv2d: {
      if (in.size() != 4 || in[1] != weight.dim(1))
        throw DimensionError("conv2d expects (batch," + std::to_string(weight.dim(1)) + ",h,w), got " +
                             shape_string(in));
      const std::size_t k = geometry.kernel, p = geometry.padding, s = geometry.stride;
      if (in[2] + 2 * p < k || in[3] + 2 * p < k)
        throw DimensionError("conv2d kernel " + std::to_string(k) + " larger than padded input " + shape_string(in));
      return {batch, weight.dim(0), (in[2] + 2 * p - k) / s + 1, (in[3] + 2 * p - k) / s + 1};
    }
    case LayerKind::batch_norm: {
      const std::size_t f = in.size() == 4 ? in[1] : shape_product(in) / batch;
      if (f != weight.size())
        throw DimensionError("batch_norm expects " + std::to_string(weight.size()) + " features/channels, got " +
                             shape_string(in));
      return in;
    }
    case LayerKind::relu: return in;
    case LayerKind::max_pool2d: {
      const std::size_t k = geometry.kernel;
      if (in.size() != 4 || in[2] % k != 0 || in[3] % k != 0)
        throw DimensionError("max_pool2d needs (batch,c,h,w) with h,w divisible by " + std::to_string(k) + ", got " +
                             shape_string(in));
      return {batch, in[1], in[2] / k, in[3] / k};
    }
  }
  return in;
}

LayerSpec make_affine(std::size_t in, std::size_t out, RandomSource& rng, double gain) {
  Tensor w({out, in});
  const double sd = std::sqrt(gain / static_cast<double>(in));
  for (auto& v : w.values()) v = sd * rng.standard_normal();
  return LayerSpec::affine(std::move(w), Tensor({out}, 0.0));
}

LayerSpec make_conv2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry g, RandomSource& rng) {
  Tensor w({out_channels, in_channels, g.kernel, g.kernel});
  const double sd = std::sqrt(2.0 / static_cast<double>(in_channels * g.kernel * g.kernel));
  for (auto& v : w.values()) v = sd * rng.standard_normal();
  return LayerSpec::conv2d(std::move(w), Tensor({out_channels}, 0.0), g);
}

void LayerGrads::zero_like(const LayerSpec& layer) {
  if (layer.has_parameters()) {
    weight = Tensor(layer.weight.shape(), 0.0);
    bias = Tensor(layer.bias.shape(), 0.0);
  } else {
    weight = Tensor();
    bias = Tensor();
  }
}

namespace {

// ---- affine ---------------------------------------------------------------

Tensor affine_fwd(const LayerSpec& l, const Tensor& x) {
  const Shape out_shape = l.output_shape(x.shape());
  const std::size_t batch = x.batch(), in = l.weight.dim(1), out = l.weight.dim(0);
  std::vector<double> xt(in * batch);
  transpose(batch, in, x.data(), xt.data());
  std::vector<double> yt(out * batch);
  for (std::size_t o = 0; o < out; ++o) std::fill_n(yt.data() + o * batch, batch, l.bias[o]);
  gemm_accumulate(out, batch, in, l.weight.data(), xt.data(), yt.data());
  Tensor y(out_shape);
  transpose(out, batch, yt.data(), y.data());
  return y;
}

Tensor affine_bwd(const LayerSpec& l, const LayerCache& c, const Tensor& g, LayerGrads& grads) {
  const Tensor& x = c.input;
  const std::size_t batch = x.batch(), in = l.weight.dim(1), out = l.weight.dim(0);
  Tensor dx(x.shape(), 0.0);
  gemm_accumulate(batch, in, out, g.data(), l.weight.data(), dx.data());
  std::vector<double> gt(out * batch);
  transpose(batch, out, g.data(), gt.data());
  gemm_accumulate(out, in, batch, gt.data(), x.data(), grads.weight.data());
  for (std::size_t o = 0; o < out; ++o) {
    double s = 0.0;
    for (std::size_t b = 0; b < batch; ++b) s += gt[o * batch + b];
    grads.bias[o] += s;
  }
  return dx;
}

// ---- conv2d ---------------------------------------------------------------

struct ConvDims {
  std::size_t c_in, h, w, c_out, k, s, p, oh, ow;
  std::size_t ckk() const { return c_in * k * k; }
  std::size_t ohw() const { return oh * ow; }
};

ConvDims conv_dims(const LayerSpec& l, const Shape& in) {
  const Shape out = l.output_shape(in);
  return {in[1], in[2], in[3], l.weight.dim(0), l.geometry.kernel, l.geometry.stride, l.geometry.padding, out[2],
          out[3]};
}

void im2col(const ConvDims& d, const double* img, double* col) {
  for (std::size_t c = 0; c < d.c_in; ++c)
    for (std::size_t ky = 0; ky < d.k; ++ky)
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        double* row = col + ((c * d.k + ky) * d.k + kx) * d.ohw();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * d.s + ky) - static_cast<long>(d.p);
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * d.s + kx) - static_cast<long>(d.p);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(d.h) && ix < static_cast<long>(d.w);
            row[oy * d.ow + ox] = inside ? img[(c * d.h + iy) * d.w + ix] : 0.0;
          }
        }
      }
}

void col2im_add(const ConvDims& d, const double* col, double* img) {
  for (std::size_t c = 0; c < d.c_in; ++c)
    for (std::size_t ky = 0; ky < d.k; ++ky)
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        const double* row = col + ((c * d.k + ky) * d.k + kx) * d.ohw();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * d.s + ky) - static_cast<long>(d.p);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * d.s + kx) - static_cast<long>(d.p);
            if (ix < 0 || ix >= static_cast<long>(d.w)) continue;
            img[(c * d.h + iy) * d.w + ix] += row[oy * d.ow + ox];
          }
        }
      }
}

Tensor conv_fwd(const LayerSpec& l, const Tensor& x) {
  const ConvDims d = conv_dims(l, x.shape());
  Tensor y({x.batch(), d.c_out, d.oh, d.ow});
  std::vector<double> col(d.ckk() * d.ohw());
  for (std::size_t b = 0; b < x.batch(); ++b) {
    im2col(d, x.data() + b * d.c_in * d.h * d.w, col.data());
    double* yb = y.data() + b * d.c_out * d.ohw();
    for (std::size_t o = 0; o < d.c_out; ++o) std::fill_n(yb + o * d.ohw(), d.ohw(), l.bias[o]);
    gemm_accumulate(d.c_out, d.ohw(), d.ckk(), l.weight.data(), col.data(), yb);
  }
  return y;
}

Tensor conv_bwd(const LayerSpec& l, const LayerCache& c, const Tensor& g, LayerGrads& grads) {
  const Tensor& x = c.input;
  const ConvDims d = conv_dims(l, x.shape());
  Tensor dx(x.shape(), 0.0);
  std::vector<double> col(d.ckk() * d.ohw()), colt(d.ckk() * d.ohw()), dcol(d.ckk() * d.ohw());
  std::vector<double> wt(d.ckk() * d.c_out);
  transpose(d.c_out, d.ckk(), l.weight.data(), wt.data());
  for (std::size_t b = 0; b < x.batch(); ++b) {
    const double* gb = g.data() + b * d.c_out * d.ohw();
    im2col(d, x.data() + b * d.c_in * d.h * d.w, col.data());
    transpose(d.ckk(), d.ohw(), col.data(), colt.data());
    gemm_accumulate(d.c_out, d.ckk(), d.ohw(), gb, colt.data(), grads.weight.data());
    std::fill(dcol.begin(), dcol.end(), 0.0);
    gemm_accumulate(d.ckk(), d.ohw(), d.c_out, wt.data(), gb, dcol.data());
    col2im_add(d, dcol.data(), dx.data() + b * d.c_in * d.h * d.w);
    for (std::size_t o = 0; o < d.c_out; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < d.ohw(); ++i) s += gb[o * d.ohw() + i];
      grads.bias[o] += s;
    }
  }
  return dx;
}

// ---- batch norm -------------------------------------------------------------

// Feature f of sample b occupies `inner` consecutive values starting at
// (b * features + f) * inner; inner is the spatial size for 4-d input, else 1.
struct BnLayout {
  std::size_t batch, features, inner;
  std::size_t count() const { return batch * inner; }
};

BnLayout bn_layout(const Tensor& x, std::size_t features) {
  const std::size_t inner = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  return {x.batch(), features, inner};
}

Tensor bn_fwd(const LayerSpec& l, const Tensor& x, bool training, LayerCache* cache) {
  l.output_shape(x.shape());
  const BnLayout L = bn_layout(x, l.weight.size());
  Tensor y(x.shape());
  std::vector<double> mean(L.features), var(L.features), inv_std(L.features);
  for (std::size_t f = 0; f < L.features; ++f) {
    if (training) {
      double s = 0.0;
      for (std::size_t b = 0; b < L.batch; ++b)
        for (std::size_t i = 0; i < L.inner; ++i) s += x[(b * L.features + f) * L.inner + i];
      const double m = s / static_cast<double>(L.count());
      double v = 0.0;
      for (std::size_t b = 0; b < L.batch; ++b)
        for (std::size_t i = 0; i < L.inner; ++i) {
          const double dlt = x[(b * L.features + f) * L.inner + i] - m;
          v += dlt * dlt;
        }
      mean[f] = m;
      var[f] = v / static_cast<double>(L.count());
    } else {
      mean[f] = l.bn.running_mean[f];
      var[f] = l.bn.running_var[f];
    }
    inv_std[f] = 1.0 / std::sqrt(var[f] + l.bn.epsilon);
  }
  Tensor xhat(x.shape());
  for (std::size_t b = 0; b < L.batch; ++b)
    for (std::size_t f = 0; f < L.features; ++f)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t idx = (b * L.features + f) * L.inner + i;
        xhat[idx] = (x[idx] - mean[f]) * inv_std[f];
        y[idx] = l.weight[f] * xhat[idx] + l.bias[f];
      }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
  }
  return y;
}

Tensor bn_bwd(const LayerSpec& l, const LayerCache& c, const Tensor& g, LayerGrads& grads) {
  const BnLayout L = bn_layout(c.input, l.weight.size());
  const Tensor& xhat = c.normalized;
  Tensor dx(c.input.shape());
  const double n = static_cast<double>(L.count());
  for (std::size_t f = 0; f < L.features; ++f) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < L.batch; ++b)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t idx = (b * L.features + f) * L.inner + i;
        sum_g += g[idx];
        sum_gx += g[idx] * xhat[idx];
      }
    grads.weight[f] += sum_gx;
    grads.bias[f] += sum_g;
    const double scale = l.weight[f] * c.inv_std[f];
    for (std::size_t b = 0; b < L.batch; ++b)
      for (std::size_t i = 0; i < L.inner; ++i) {
        const std::size_t idx = (b * L.features + f) * L.inner + i;
        if (c.training)
          dx[idx] = scale * (g[idx] - sum_g / n - xhat[idx] * sum_gx / n);
        else
          dx[idx] = scale * g[idx];
      }
  }
  return dx;
}

// ---- relu / pool ----------------------------------------------------------

Tensor relu_fwd(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_bwd(const LayerCache& c, const Tensor& g) {
  Tensor dx(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) dx[i] = c.input[i] > 0.0 ? g[i] : 0.0;
  return dx;
}

Tensor pool_fwd(const LayerSpec& l, const Tensor& x, LayerCache* cache) {
  const Shape os = l.output_shape(x.shape());
  const std::size_t k = l.geometry.kernel, C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y(os);
  std::vector<std::size_t> arg(y.size());
  for (std::size_t b = 0; b < x.batch(); ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < os[2]; ++oy)
        for (std::size_t ox = 0; ox < os[3]; ++ox) {
          std::size_t best = ((b * C + c) * H + oy * k) * W + ox * k;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t idx = ((b * C + c) * H + oy * k + ky) * W + ox * k + kx;
              if (x[idx] > x[best]) best = idx;
            }
          const std::size_t o = ((b * C + c) * os[2] + oy) * os[3] + ox;
          y[o] = x[best];
          arg[o] = best;
        }
  if (cache) cache->argmax = std::move(arg);
  return y;
}

Tensor pool_bwd(const LayerCache& c, const Tensor& g) {
  Tensor dx(c.input.shape(), 0.0);
  for (std::size_t o = 0; o < g.size(); ++o) dx[c.argmax[o]] += g[o];
  return dx;
}

}  // namespace

Tensor affine_forward(const Tensor& x, const LayerSpec& layer) { return affine_fwd(layer, x); }
Tensor conv2d_forward(const Tensor& x, const LayerSpec& layer) { return conv_fwd(layer, x); }

Tensor layer_forward(const LayerSpec& layer, const Tensor& x, bool training, LayerCache* cache) {
  Tensor y;
  switch (layer.kind) {
    case LayerKind::affine: y = affine_fwd(layer, x); break;
    case LayerKind::conv2d: y = conv_fwd(layer, x); break;
    case LayerKind::batch_norm: y = bn_fwd(layer, x, training, cache); break;
    case LayerKind::relu: y = relu_fwd(x); break;
    case LayerKind::max_pool2d: y = pool_fwd(layer, x, cache); break;
  }
  if (cache) {
    cache->input = x;
    cache->training = training;
    cache->valid = true;
  }
  return y;
}

Tensor layer_backward(const LayerSpec& layer, const LayerCache& cache, const Tensor& grad_out, LayerGrads& grads) {
  if (!cache.valid) throw StateError(std::string("backward called before forward on ") + layer_kind_name(layer.kind));
  if (layer.has_parameters() && (grads.weight.shape() != layer.weight.shape() || grads.bias.shape() != layer.bias.shape()))
    grads.zero_like(layer);
  switch (layer.kind) {
    case LayerKind::affine: return affine_bwd(layer, cache, grad_out, grads);
    case LayerKind::conv2d: return conv_bwd(layer, cache, grad_out, grads);
    case LayerKind::batch_norm: return bn_bwd(layer, cache, grad_out, grads);
    case LayerKind::relu: return relu_bwd(cache, grad_out);
    case LayerKind::max_pool2d: return pool_bwd(cache, grad_out);
  }
  return {};
}

void update_running_stats(LayerSpec& layer, const LayerCache& cache) {
  if (layer.kind != LayerKind::batch_norm || !cache.valid || !cache.training) return;
  const BnLayout L = bn_layout(cache.input, layer.weight.size());
  const double n = static_cast<double>(L.count());
  const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
  const double m = layer.bn.momentum;
  for (std::size_t f = 0; f < L.features; ++f) {
    layer.bn.running_mean[f] = (1.0 - m) * layer.bn.running_mean[f] + m * cache.batch_mean[f];
    layer.bn.running_var[f] = (1.0 - m) * layer.bn.running_var[f] + m * cache.batch_var[f] * unbias;
  }
}

}  // namespace vib
