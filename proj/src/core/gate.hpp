#pragma once

#include <span>
#include <vector>

#include "random.hpp"
#include "tensor.hpp"

namespace vib {

enum class GateMode { train_sample, eval_mean };
enum class GateBroadcast { per_neuron, per_channel };
enum class NoiseDraw { per_example, per_batch };

// log sigma^2 is clamped to this range wherever it is consumed. The single
// exception is -inf, which denotes an exactly deterministic gate (sigma = 0).
inline constexpr double kLogSigma2Min = -20.0;
inline constexpr double kLogSigma2Max = 5.0;

/// Multiplicative stochastic gate z = mu + eps * sigma applied to f_i(h_{i-1}).
struct VibGate {
  std::vector<double> mu;
  std::vector<double> log_sigma2;
  double gamma = 0.0;
  GateBroadcast broadcast = GateBroadcast::per_neuron;

  std::size_t width() const { return mu.size(); }
  double clamped_log_sigma2(std::size_t j) const;
  double sigma2(std::size_t j) const;
  /// Standard deviation used for sampling; exactly 0 for log_sigma2 = -inf.
  double sigma(std::size_t j) const;
  bool log_sigma2_active(std::size_t j) const;

  /// mu ~ N(1, 0.01^2), sigma^2 = 0.01.
  static VibGate initial(std::size_t width, double gamma, GateBroadcast broadcast, RandomSource& rng);
  /// mu = value, sigma = 0 exactly.
  static VibGate deterministic(std::size_t width, GateBroadcast broadcast, double value = 1.0);

  void validate() const;
  void erase(std::span<const std::size_t> keep);
};

struct GateCache {
  bool valid = false;
  GateMode mode = GateMode::eval_mean;
  Tensor input;
  // Noise per (sample, coordinate); a single row when drawn per batch.
  std::vector<double> eps;
  std::size_t eps_rows = 0;
};

struct GateGrads {
  std::vector<double> mu;
  std::vector<double> log_sigma2;
  void zero(std::size_t width) {
    mu.assign(width, 0.0);
    log_sigma2.assign(width, 0.0);
  }
};

/// Number of values each gate coordinate multiplies per sample (1 for
/// per-neuron gates, h*w for per-channel gates). Throws on width mismatch.
std::size_t gate_inner_size(const VibGate& gate, const Shape& f_shape);

Tensor gate_forward(const Tensor& f_out, const VibGate& gate, GateMode mode, RandomSource& rng,
                    NoiseDraw draw = NoiseDraw::per_example, GateCache* cache = nullptr);

/// Accumulates d/d(mu, log sigma^2) of the data path and returns dL/df.
Tensor gate_backward(const VibGate& gate, const GateCache& cache, const Tensor& grad_out, GateGrads& grads);

struct KlPenalty {
  double value = 0.0;
  std::vector<double> d_mu;
  std::vector<double> d_log_sigma2;
};

/// gamma * sum_j log(1 + alpha_j) with its analytic gradient. Deterministic
/// coordinates contribute nothing.
KlPenalty kl_penalty(const VibGate& gate);

/// alpha_j = mu_j^2 / sigma_j^2; +inf for deterministic coordinates with
/// mu != 0 and 0 when mu == 0.
std::vector<double> alpha(const VibGate& gate);

/// Streaming estimate of psi_j = log E[f_j^2] - E[log f_j^2]. Diagnostic only.
class PsiAccumulator {
 public:
  PsiAccumulator(std::size_t width, GateBroadcast broadcast, double floor = 1e-12);
  void add(const Tensor& f_out);
  std::size_t samples() const { return samples_; }
  std::vector<double> result(std::size_t min_samples = 100) const;

 private:
  std::size_t width_;
  GateBroadcast broadcast_;
  double floor_;
  std::size_t samples_ = 0;
  std::vector<double> sum_sq_;
  std::vector<double> sum_log_sq_;
  std::vector<std::size_t> count_;
};

std::vector<double> psi_diagnostic(std::span<const Tensor> layer_outputs, std::size_t width,
                                   GateBroadcast broadcast = GateBroadcast::per_neuron, double floor = 1e-12);

}  // namespace vib
