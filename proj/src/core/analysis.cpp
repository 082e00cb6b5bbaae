#include "analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace vib {

double rho(double mu, double omega) {
  if (!(omega > 0.0) || !std::isfinite(omega)) throw DomainError("rho needs omega > 0");
  const double m = std::abs(mu);
  const double r = std::sqrt(mu * mu + 4.0 * omega);
  return 2.0 * m / (m + r) + std::log(2.0 * omega + mu * mu + m * r);
}

double sigma_star(double a, double gamma, double xi) {
  if (!(gamma > 0.0)) throw DomainError("sigma_star needs gamma > 0");
  if (!(xi > 0.0)) throw DomainError("sigma_star needs xi > 0");
  if (!(a >= 0.0)) throw DomainError("sigma_star needs a >= 0");
  return 1.0 / std::sqrt(a / gamma + 1.0 / xi);
}

double xi_star(double mu, double sigma, double mean_f2) {
  if (!(mean_f2 > 0.0)) throw DomainError("xi_star needs E[f^2] > 0");
  if (!std::isfinite(mu) || !std::isfinite(sigma)) throw DomainError("xi_star needs finite mu and sigma");
  return (mu * mu + sigma * sigma) * mean_f2;
}

VarianceProfile variance_profile(double mu, double gamma, double a) {
  if (!(gamma >= 0.0) || !(a >= 0.0)) throw DomainError("variance profile needs gamma >= 0 and a >= 0");
  VarianceProfile p;
  const double m2 = mu * mu;
  if (gamma == 0.0) return p;  // s = 0, no penalty
  if (a == 0.0) {
    p.s = std::numeric_limits<double>::infinity();
    return p;
  }
  if (m2 == 0.0) {
    p.slope = 2.0 * std::sqrt(gamma * a);
    return p;
  }
  const double q = 4.0 * gamma / (a * m2);
  p.s = (2.0 * gamma / a) / (1.0 + std::sqrt(1.0 + q));
  p.penalty = gamma * std::log1p(m2 / p.s) + a * p.s;
  p.slope = 2.0 * gamma * std::abs(mu) / (p.s + m2);
  return p;
}

double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi, double tol,
                               int max_iter) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < max_iter && b - a > tol; ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

double penalty_infimum(double mu, double omega) {
  if (!(omega > 0.0)) throw DomainError("penalty infimum needs omega > 0");
  auto obj = [&](double log_sigma) {
    const double s2 = std::exp(2.0 * log_sigma);
    return std::log1p(mu * mu / s2) + s2 / omega;
  };
  // The objective in log sigma is unimodal; the range covers sigma^2 from
  // e^-80 to well past omega.
  const double hi = 0.5 * std::log(omega) + 10.0;
  const double t = golden_section_minimize(obj, -40.0, hi);
  return std::min(obj(t), obj(-40.0));
}

std::vector<PenaltyGridRow> penalty_grid(const std::vector<double>& mus, const std::vector<double>& omegas) {
  if (mus.empty()) throw InputError("penalty grid needs at least one mu");
  const auto anchor = static_cast<std::size_t>(
      std::min_element(mus.begin(), mus.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }) -
      mus.begin());
  std::vector<PenaltyGridRow> rows;
  for (double w : omegas) {
    const double c = rho(mus[anchor], w) - penalty_infimum(mus[anchor], w);
    for (double m : mus) {
      PenaltyGridRow r{m, w, rho(m, w), penalty_infimum(m, w) + c, 0.0};
      r.diff = r.rho - r.oracle;
      rows.push_back(r);
    }
  }
  return rows;
}

std::string penalty_grid_csv(const std::vector<PenaltyGridRow>& rows) {
  std::ostringstream os;
  os << "mu,omega,rho,oracle,diff\n" << std::setprecision(12);
  for (const auto& r : rows) os << r.mu << ',' << r.omega << ',' << r.rho << ',' << r.oracle << ',' << r.diff << '\n';
  return os.str();
}

// ---- quadratic surrogate ---------------------------------------------------

void SurrogateProblem::validate() const {
  if (a.rank() != 2 || a.dim(1) != b.size()) throw DimensionError("surrogate A must be (rows, dim) with b of size dim");
  if (gamma.size() != b.size()) throw DimensionError("surrogate gamma must have one entry per coordinate");
  for (double g : gamma)
    if (!(g > 0.0)) throw DomainError("surrogate gamma must be positive");
}

SurrogateProblem SurrogateProblem::random(std::size_t dim, std::size_t rank, double gamma, double b_scale,
                                          RandomSource& rng) {
  if (rank == 0 || rank > dim) throw InputError("surrogate rank must be in [1, dim]");
  Tensor u({dim, rank}), v({rank, dim});
  for (auto& x : u.values()) x = rng.standard_normal() / std::sqrt(static_cast<double>(rank));
  for (auto& x : v.values()) x = rng.standard_normal();
  SurrogateProblem p;
  p.a = Tensor({dim, dim}, 0.0);
  gemm_accumulate(dim, dim, rank, u.data(), v.data(), p.a.data());
  // b = A'y keeps the linear term inside the range of A'A, so the quadratic
  // is bounded below and local minima exist.
  std::vector<double> y(dim);
  for (auto& x : y) x = b_scale * rng.standard_normal();
  p.b.assign(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) p.b[j] += p.a.at(i, j) * y[i];
  p.gamma.assign(dim, gamma);
  return p;
}

namespace {

// Q = A'A
std::vector<double> gram(const Tensor& a) {
  const std::size_t rows = a.dim(0), dim = a.dim(1);
  std::vector<double> at(dim * rows), q(dim * dim, 0.0);
  transpose(rows, dim, a.data(), at.data());
  gemm_accumulate(dim, dim, rows, at.data(), a.data(), q.data());
  return q;
}

double quadratic(const std::vector<double>& q, const std::vector<double>& b, const std::vector<double>& mu) {
  const std::size_t n = mu.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double qi = 0.0;
    for (std::size_t j = 0; j < n; ++j) qi += q[i * n + j] * mu[j];
    s += mu[i] * qi + b[i] * mu[i];
  }
  return s;
}

}  // namespace

double surrogate_objective(const SurrogateProblem& p, const std::vector<double>& mu) {
  p.validate();
  const auto q = gram(p.a);
  const std::size_t n = p.dim();
  double s = quadratic(q, p.b, mu) + p.c;
  for (std::size_t j = 0; j < n; ++j) s += variance_profile(mu[j], p.gamma[j], q[j * n + j]).penalty;
  return s;
}

SurrogateResult surrogate_minimize(const SurrogateProblem& p, std::uint64_t init_seed, const SurrogateOptions& opts) {
  p.validate();
  const std::size_t n = p.dim();
  const auto q = gram(p.a);
  std::vector<double> diag(n);
  for (std::size_t j = 0; j < n; ++j) diag[j] = q[j * n + j];

  SurrogateResult r;
  RandomSource rng(init_seed);
  std::vector<double> mu(n);
  for (std::size_t j = 0; j < n; ++j) {
    mu[j] = opts.init_scale * rng.standard_normal();
    if (diag[j] == 0.0) {
      mu[j] = 0.0;
      if (p.b[j] != 0.0) r.unbounded = true;
    }
  }

  auto grad = [&](const std::vector<double>& m) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += q[i * n + j] * m[j];
      g[i] = 2.0 * s + p.b[i];
    }
    return g;
  };

  double step = opts.initial_step;
  std::vector<double> next(n), w(n), d(n);
  for (r.iterations = 0; r.iterations < opts.max_steps; ++r.iterations) {
    const auto g = grad(mu);
    for (std::size_t j = 0; j < n; ++j) w[j] = variance_profile(mu[j], p.gamma[j], diag[j]).slope;
    double change = 0.0;
    for (int tries = 0; tries < 60; ++tries) {
      double sq = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (diag[j] == 0.0) {
          next[j] = 0.0;
        } else {
          const double z = mu[j] - step * g[j];
          const double t = step * w[j];
          next[j] = z > t ? z - t : (z < -t ? z + t : 0.0);
        }
        d[j] = next[j] - mu[j];
        sq += d[j] * d[j];
      }
      // The quadratic part is exact in its second-order expansion, so the
      // sufficient-decrease test reduces to d'Qd <= |d|^2 / (2 step). Testing
      // that directly avoids cancellation between large objective values.
      double curvature = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double qi = 0.0;
        for (std::size_t j = 0; j < n; ++j) qi += q[i * n + j] * d[j];
        curvature += d[i] * qi;
      }
      if (curvature <= sq / (2.0 * step)) {
        change = std::sqrt(sq) / step;
        break;
      }
      step *= 0.5;
    }
    mu.swap(next);
    if (change < opts.tolerance) {
      r.converged = true;
      ++r.iterations;
      break;
    }
  }

  r.mu = mu;
  r.sigma.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto prof = variance_profile(mu[j], p.gamma[j], diag[j]);
    r.sigma[j] = std::sqrt(prof.s);
    if (diag[j] > 0.0 && std::abs(mu[j]) > 1e-6) ++r.nnz;
  }
  r.objective = r.unbounded ? -std::numeric_limits<double>::infinity() : surrogate_objective(p, mu);
  return r;
}

std::vector<SurrogateResult> surrogate_restarts(const SurrogateProblem& p, std::uint64_t seed, std::size_t restarts,
                                                const SurrogateOptions& opts) {
  RandomSource root(seed);
  std::vector<SurrogateResult> out;
  for (std::size_t i = 0; i < restarts; ++i) out.push_back(surrogate_minimize(p, root.next_u64(), opts));
  return out;
}

// ---- mutual information ----------------------------------------------------

double digamma_int(std::size_t n) {
  if (n == 0) throw DomainError("digamma is undefined at 0");
  constexpr double euler_gamma = 0.57721566490153286061;
  double h = 0.0;
  for (std::size_t i = 1; i < n; ++i) h += 1.0 / static_cast<double>(i);
  return h - euler_gamma;
}

namespace {

std::uint64_t content_hash(const Tensor& t) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (double v : t.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = RandomSource::mix(h ^ bits);
  }
  return h;
}

bool has_duplicate_rows(const Tensor& t) {
  const std::size_t n = t.batch(), d = t.features();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto row = [&](std::size_t i) { return t.data() + i * d; };
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return std::lexicographical_compare(row(a), row(a) + d, row(b), row(b) + d); });
  for (std::size_t i = 1; i < n; ++i)
    if (std::equal(row(idx[i - 1]), row(idx[i - 1]) + d, row(idx[i]))) return true;
  return false;
}

Tensor jittered(const Tensor& t) {
  Tensor out = t;
  RandomSource rng(content_hash(t));
  for (auto& v : out.values()) v += rng.uniform(-1e-10, 1e-10);
  return out;
}

}  // namespace

MiEstimate ksg_mutual_information(const Tensor& x_in, const Tensor& y_in, std::size_t k) {
  const std::size_t n = x_in.batch();
  if (y_in.batch() != n) throw DimensionError("x and y need the same number of samples");
  if (k < 1) throw InputError("k must be at least 1");
  if (n <= k) throw InputError("KSG needs more samples than neighbours (n > k)");
  MiEstimate est;
  est.k = k;
  est.n = n;
  Tensor x = x_in, y = y_in;
  if (has_duplicate_rows(x)) {
    x = jittered(x);
    est.jittered = true;
  }
  if (has_duplicate_rows(y)) {
    y = jittered(y);
    est.jittered = true;
  }
  const std::size_t dx = x.features(), dy = y.features();
  std::vector<double> psi(n + 1);
  psi[1] = digamma_int(1);
  for (std::size_t i = 2; i <= n; ++i) psi[i] = psi[i - 1] + 1.0 / static_cast<double>(i - 1);

  std::vector<double> distx(n), disty(n), joint(n - 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data() + i * dx;
    const double* yi = y.data() + i * dy;
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double* xj = x.data() + j * dx;
      const double* yj = y.data() + j * dy;
      double ax = 0.0, ay = 0.0;
      for (std::size_t t = 0; t < dx; ++t) ax = std::max(ax, std::abs(xi[t] - xj[t]));
      for (std::size_t t = 0; t < dy; ++t) ay = std::max(ay, std::abs(yi[t] - yj[t]));
      distx[j] = ax;
      disty[j] = ay;
      if (j != i) joint[m++] = std::max(ax, ay);
    }
    std::nth_element(joint.begin(), joint.begin() + static_cast<std::ptrdiff_t>(k - 1), joint.end());
    const double eps = joint[k - 1];
    std::size_t nx = 0, ny = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      nx += distx[j] < eps;
      ny += disty[j] < eps;
    }
    sum += psi[nx + 1] + psi[ny + 1];
  }
  est.raw = psi[k] + psi[n] - sum / static_cast<double>(n);
  est.value = std::max(0.0, est.raw);
  return est;
}

MiTracker::MiTracker(Tensor inputs, std::size_t k, std::uint64_t seed, std::size_t block)
    : inputs_(std::move(inputs)), k_(k), seed_(seed), block_(block) {
  if (inputs_.batch() < 500) throw InputError("mutual-information tracking needs at least 500 samples");
}

MiTracker MiTracker::from_dataset(const Dataset& data, std::size_t subset, std::uint64_t seed, std::size_t k) {
  if (subset > data.size()) throw InputError("MI subset larger than the dataset");
  RandomSource rng(seed);
  auto order = rng.permutation(data.size());
  order.resize(subset);
  std::sort(order.begin(), order.end());
  return MiTracker(gather_rows(data.images, order), k, rng.next_u64());
}

MiEstimate MiTracker::measure(const Network& net) const {
  RandomSource rng(seed_);
  const ForwardOptions opts{GateMode::train_sample, false, NoiseDraw::per_example};
  const Tensor h = forward_to_block(net, inputs_, block_, opts, rng);
  const Tensor x = inputs_.reshaped({inputs_.batch(), inputs_.features()});
  return ksg_mutual_information(x, h.reshaped({h.batch(), h.features()}), k_);
}

}  // namespace vib
