#include "gate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vib {

double VibGate::clamped_log_sigma2(std::size_t j) const {
  return std::clamp(log_sigma2[j], kLogSigma2Min, kLogSigma2Max);
}

double VibGate::sigma2(std::size_t j) const { return std::exp(clamped_log_sigma2(j)); }

double VibGate::sigma(std::size_t j) const {
  if (log_sigma2[j] == -std::numeric_limits<double>::infinity()) return 0.0;
  return std::exp(0.5 * clamped_log_sigma2(j));
}

bool VibGate::log_sigma2_active(std::size_t j) const {
  return log_sigma2[j] >= kLogSigma2Min && log_sigma2[j] <= kLogSigma2Max;
}

VibGate VibGate::initial(std::size_t width, double gamma, GateBroadcast broadcast, RandomSource& rng) {
  VibGate g;
  g.mu.resize(width);
  for (auto& m : g.mu) m = rng.normal(1.0, 0.01);
  g.log_sigma2.assign(width, std::log(0.01));
  g.gamma = gamma;
  g.broadcast = broadcast;
  return g;
}

VibGate VibGate::deterministic(std::size_t width, GateBroadcast broadcast, double value) {
  VibGate g;
  g.mu.assign(width, value);
  g.log_sigma2.assign(width, -std::numeric_limits<double>::infinity());
  g.broadcast = broadcast;
  return g;
}

void VibGate::validate() const {
  if (mu.empty() || mu.size() != log_sigma2.size()) throw DimensionError("gate mu/log_sigma2 sizes disagree");
  if (!(gamma >= 0.0)) throw DomainError("gate gamma must be nonnegative");
}

void VibGate::erase(std::span<const std::size_t> keep) {
  std::vector<double> m, s;
  for (auto j : keep) {
    m.push_back(mu.at(j));
    s.push_back(log_sigma2.at(j));
  }
  mu = std::move(m);
  log_sigma2 = std::move(s);
}

std::size_t gate_inner_size(const VibGate& gate, const Shape& s) {
  if (s.size() < 2) throw DimensionError("gate input needs a batch dimension and features");
  if (gate.broadcast == GateBroadcast::per_channel) {
    if (s.size() != 4 || s[1] != gate.width())
      throw DimensionError("per-channel gate of width " + std::to_string(gate.width()) + " cannot gate " +
                           shape_string(s));
    return s[2] * s[3];
  }
  const std::size_t feat = shape_product(s) / s[0];
  if (feat != gate.width())
    throw DimensionError("gate width " + std::to_string(gate.width()) + " does not match " + std::to_string(feat) +
                         " features of " + shape_string(s));
  return 1;
}

Tensor gate_forward(const Tensor& f, const VibGate& gate, GateMode mode, RandomSource& rng, NoiseDraw draw,
                    GateCache* cache) {
  const std::size_t inner = gate_inner_size(gate, f.shape());
  const std::size_t batch = f.batch(), width = gate.width();
  Tensor h(f.shape());
  std::vector<double> eps;
  std::size_t eps_rows = 0;
  if (mode == GateMode::eval_mean) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < width; ++j)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t idx = (b * width + j) * inner + i;
          h[idx] = gate.mu[j] * f[idx];
        }
  } else {
    eps_rows = draw == NoiseDraw::per_batch ? 1 : batch;
    eps.resize(eps_rows * width);
    rng.fill_normal(eps);
    std::vector<double> sig(width);
    for (std::size_t j = 0; j < width; ++j) sig[j] = gate.sigma(j);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* e = eps.data() + (eps_rows == 1 ? 0 : b) * width;
      for (std::size_t j = 0; j < width; ++j) {
        const double z = gate.mu[j] + e[j] * sig[j];
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t idx = (b * width + j) * inner + i;
          h[idx] = z * f[idx];
        }
      }
    }
  }
  if (cache) {
    cache->valid = true;
    cache->mode = mode;
    cache->input = f;
    cache->eps = std::move(eps);
    cache->eps_rows = eps_rows;
  }
  return h;
}

Tensor gate_backward(const VibGate& gate, const GateCache& cache, const Tensor& g, GateGrads& grads) {
  if (!cache.valid) throw StateError("gate backward called before forward");
  const Tensor& f = cache.input;
  const std::size_t inner = gate_inner_size(gate, f.shape());
  const std::size_t batch = f.batch(), width = gate.width();
  if (grads.mu.size() != width) grads.zero(width);
  Tensor df(f.shape());
  const bool sampled = cache.mode == GateMode::train_sample;
  std::vector<double> sig(width), dsig(width);
  for (std::size_t j = 0; j < width; ++j) {
    sig[j] = sampled ? gate.sigma(j) : 0.0;
    dsig[j] = sampled && gate.log_sigma2_active(j) ? 0.5 * sig[j] : 0.0;  // d sigma / d log sigma^2
  }
  for (std::size_t b = 0; b < batch; ++b) {
    const double* e = sampled ? cache.eps.data() + (cache.eps_rows == 1 ? 0 : b) * width : nullptr;
    for (std::size_t j = 0; j < width; ++j) {
      const double ej = sampled ? e[j] : 0.0;
      const double z = gate.mu[j] + ej * sig[j];
      double dz = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = (b * width + j) * inner + i;
        df[idx] = g[idx] * z;
        dz += g[idx] * f[idx];
      }
      grads.mu[j] += dz;
      grads.log_sigma2[j] += dz * ej * dsig[j];
    }
  }
  return df;
}

KlPenalty kl_penalty(const VibGate& gate) {
  KlPenalty k;
  const std::size_t w = gate.width();
  k.d_mu.resize(w);
  k.d_log_sigma2.resize(w);
  for (std::size_t j = 0; j < w; ++j) {
    if (gate.sigma(j) == 0.0) continue;  // deterministic coordinate: no variational term
    const double s2 = gate.sigma2(j);
    const double m2 = gate.mu[j] * gate.mu[j];
    const double a = m2 / s2;
    k.value += gate.gamma * std::log1p(a);
    k.d_mu[j] = gate.gamma * 2.0 * gate.mu[j] / (s2 + m2);
    k.d_log_sigma2[j] = gate.log_sigma2_active(j) ? -gate.gamma * a / (1.0 + a) : 0.0;
  }
  return k;
}

std::vector<double> alpha(const VibGate& gate) {
  std::vector<double> a(gate.width());
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (gate.sigma(j) == 0.0)
      a[j] = gate.mu[j] == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    else
      a[j] = gate.mu[j] * gate.mu[j] / gate.sigma2(j);
  }
  return a;
}

PsiAccumulator::PsiAccumulator(std::size_t width, GateBroadcast broadcast, double floor)
    : width_(width), broadcast_(broadcast), floor_(floor), sum_sq_(width), sum_log_sq_(width), count_(width) {
  if (!(floor > 0.0)) throw DomainError("psi floor must be positive");
}

void PsiAccumulator::add(const Tensor& f) {
  VibGate shape_probe;
  shape_probe.mu.resize(width_);
  shape_probe.broadcast = broadcast_;
  const std::size_t inner = gate_inner_size(shape_probe, f.shape());
  for (std::size_t b = 0; b < f.batch(); ++b)
    for (std::size_t j = 0; j < width_; ++j)
      for (std::size_t i = 0; i < inner; ++i) {
        const double v = f[(b * width_ + j) * inner + i];
        const double sq = v * v;
        sum_sq_[j] += sq;
        sum_log_sq_[j] += std::log(std::max(sq, floor_));
        ++count_[j];
      }
  samples_ += f.batch();
}

std::vector<double> PsiAccumulator::result(std::size_t min_samples) const {
  if (samples_ == 0) throw InputError("psi diagnostic needs at least one layer-output sample");
  if (samples_ < min_samples)
    throw InputError("psi diagnostic needs at least " + std::to_string(min_samples) + " samples, got " +
                     std::to_string(samples_));
  std::vector<double> psi(width_);
  for (std::size_t j = 0; j < width_; ++j) {
    const double n = static_cast<double>(count_[j]);
    psi[j] = std::log(std::max(sum_sq_[j] / n, floor_)) - sum_log_sq_[j] / n;
  }
  return psi;
}

std::vector<double> psi_diagnostic(std::span<const Tensor> outputs, std::size_t width, GateBroadcast broadcast,
                                   double floor) {
  PsiAccumulator acc(width, broadcast, floor);
  for (const auto& t : outputs) acc.add(t);
  return acc.result();
}

}  // namespace vib
