#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "data.hpp"
#include "network.hpp"

namespace vib {

/// Effective penalty on a gate mean after minimising over its variance:
/// 2|mu| / (|mu| + sqrt(mu^2 + 4 omega)) + log(2 omega + mu^2 + |mu| sqrt(mu^2 + 4 omega)).
double rho(double mu, double omega);

/// Variance-optimal sigma for data-term curvature a: (a/gamma + 1/xi)^(-1/2).
double sigma_star(double a, double gamma, double xi);

/// Prior variance minimising the expected KL: (mu^2 + sigma^2) E[f^2].
double xi_star(double mu, double sigma, double mean_f2);

/// min over sigma^2 = s of gamma log(1 + mu^2/s) + a s, with the minimiser.
struct VarianceProfile {
  double penalty = 0.0;
  double s = 0.0;
  double slope = 0.0;  // d penalty / d|mu|
};
VarianceProfile variance_profile(double mu, double gamma, double a);

/// Golden-section search for a minimiser of a unimodal f on [lo, hi].
double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-12,
                               int max_iter = 500);

/// inf over sigma > 0 of log(1 + mu^2/sigma^2) + sigma^2/omega, by
/// golden-section search over log sigma.
double penalty_infimum(double mu, double omega);

struct PenaltyGridRow {
  double mu, omega, rho, oracle, diff;
};

/// Compares rho with penalty_infimum + c(omega), where c(omega) is fitted at
/// the grid point closest to mu = 0.
std::vector<PenaltyGridRow> penalty_grid(const std::vector<double>& mus, const std::vector<double>& omegas);
std::string penalty_grid_csv(const std::vector<PenaltyGridRow>& rows);

/// Quadratic surrogate of the data term plus the KL penalty:
/// sum_j gamma_j log(1 + mu_j^2/sigma_j^2) + mu' A'A mu + b' mu + sum_j diag(A'A)_j sigma_j^2.
struct SurrogateProblem {
  Tensor a;                   // (rows, dim)
  std::vector<double> b;      // dim
  double c = 0.0;
  std::vector<double> gamma;  // dim, per coordinate

  std::size_t dim() const { return b.size(); }
  void validate() const;
  /// Random problem with A = U V (rank `rank`), b = A'y with y ~ N(0, b_scale^2), gamma constant.
  static SurrogateProblem random(std::size_t dim, std::size_t rank, double gamma, double b_scale, RandomSource& rng);
};

struct SurrogateResult {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::size_t nnz = 0;        // |mu_j| > 1e-6 among coordinates with diag(A'A)_j > 0
  double objective = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  bool unbounded = false;     // some coordinate has zero curvature and nonzero b
};

struct SurrogateOptions {
  double initial_step = 1e-2;
  std::size_t max_steps = 100000;
  double tolerance = 1e-10;   // on the step-normalised update norm
  double init_scale = 1.0;
};

/// Objective value at (mu, sigma) with the variance minimised out.
double surrogate_objective(const SurrogateProblem& p, const std::vector<double>& mu);

/// One local minimisation from a random start. The concave penalty is
/// majorised by its tangent in |mu| at every step, giving a weighted l1
/// proximal-gradient step with backtracking on the quadratic part.
SurrogateResult surrogate_minimize(const SurrogateProblem& p, std::uint64_t init_seed,
                                   const SurrogateOptions& opts = {});

/// `restarts` independent starts seeded from `seed`.
std::vector<SurrogateResult> surrogate_restarts(const SurrogateProblem& p, std::uint64_t seed, std::size_t restarts = 20,
                                                const SurrogateOptions& opts = {});

struct MiEstimate {
  double value = 0.0;  // clipped below at 0
  double raw = 0.0;
  std::size_t k = 0;
  std::size_t n = 0;
  bool jittered = false;
};

/// Kraskov-Stoegbauer-Grassberger estimator (algorithm 1, max-norm). Rows of
/// x and y are paired samples. Exact duplicate rows are broken by uniform
/// jitter of magnitude 1e-10 seeded from the data, so the estimate is a pure
/// function of its inputs and symmetric in (x, y).
MiEstimate ksg_mutual_information(const Tensor& x, const Tensor& y, std::size_t k = 5);

/// Digamma at a positive integer.
double digamma_int(std::size_t n);

/// Per-epoch I(h_1; x) on a fixed subset: one stochastic gate sample per input,
/// batch norm in inference mode, the same estimation seed at every call.
class MiTracker {
 public:
  MiTracker(Tensor inputs, std::size_t k = 5, std::uint64_t seed = 0, std::size_t block = 0);
  static MiTracker from_dataset(const Dataset& data, std::size_t subset, std::uint64_t seed, std::size_t k = 5);
  MiEstimate measure(const Network& net) const;
  double operator()(const Network& net, std::size_t /*epoch*/) const { return measure(net).value; }

 private:
  Tensor inputs_;
  std::size_t k_;
  std::uint64_t seed_;
  std::size_t block_;
};

}  // namespace vib
