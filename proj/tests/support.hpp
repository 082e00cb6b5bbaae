// Shared oracles for the unit tests. Everything here is written independently
// of the library kernels: plain loops, no GEMM, no im2col.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "network.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace vibtest {

using vib::Tensor;

inline Tensor random_tensor(vib::Shape shape, vib::RandomSource& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.standard_normal();
  return t;
}

inline Tensor naive_affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t batch = x.dim(0), in = w.dim(1), out = w.dim(0);
  Tensor y({batch, out});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * x[n * in + i];
      y[n * out + o] = s;
    }
  return y;
}

inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::size_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  Tensor y({N, O, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double s = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                s += w[((o * C + c) * K + ky) * K + kx] * x[((n * C + c) * H + iy) * W + ix];
              }
          y[((n * O + o) * OH + oy) * OW + ox] = s;
        }
  return y;
}

/// ||a - b|| / max(||a||, ||b||), or the absolute difference when both are tiny.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale < 1e-10 ? std::sqrt(d) : std::sqrt(d) / scale;
}

/// Central differences of f with respect to every entry of `param`.
inline std::vector<double> numeric_gradient(std::span<double> param, const std::function<double()>& f,
                                            double step = 1e-3) {
  std::vector<double> g(param.size());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double keep = param[i];
    param[i] = keep + step;
    const double up = f();
    param[i] = keep - step;
    const double down = f();
    param[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace vibtest
