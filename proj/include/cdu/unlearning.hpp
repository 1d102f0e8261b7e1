#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cdu/data.hpp"
#include "cdu/mlp.hpp"
#include "cdu/training.hpp"

namespace cdu {

struct UnlearnConfig {
  double lambda = 1.0;      // local convex coefficient
  double H = 10.0;          // Hessian scale bound, ||grad^2 l + lambda I|| <= H
  std::size_t s = 1000;     // LiSSA recursion count
  double C = 10.0;          // parameter-norm bound
  double L = 1.0;           // gradient Lipschitz constant
  double M = 1.0;           // Hessian Lipschitz constant
  double lambda_min = 0.0;  // smallest Hessian eigenvalue
  double rho = 0.05;        // failure probability of the stochastic bound
  double G = 0.0;           // residual-gradient floor
  std::size_t hessian_batch_size = 16;
  /// Power-iteration steps used for the advisory lambda/H checks; 0 skips them.
  std::size_t diagnostic_iters = 20;

  /// Throws InvalidArgument on hard violations and returns advisory warnings.
  std::vector<std::string> validate() const;
};

struct Budget {
  double epsilon;
  double delta;

  Budget(double eps, double del);
};

enum class Mechanism : std::uint8_t { kClassic = 0, kAnalytic = 1 };
std::string to_string(Mechanism m);
Mechanism parse_mechanism(const std::string& s);

// Bounds on ||w_tilde - w_tilde*|| ------------------------------------------

/// 2C(MC + lambda) / (lambda + lambda_min)
double bound_basic(const UnlearnConfig& cfg);
/// bound_basic + (32 sqrt(ln(d/rho)) / (lambda + lambda_min) + 1/8) L C
double bound_efficient(const UnlearnConfig& cfg, std::size_t d);
/// (2C(MC + lambda) + G) / (lambda + lambda_min)
///   + (16 sqrt(ln(d/rho)) / (lambda + lambda_min) + 1/16) (2LC + G)
double bound_practical(const UnlearnConfig& cfg, std::size_t d, double G);
/// 2 M C^2 / K for K-strongly convex objectives.
double bound_convex(double M, double C, double K);

// Gaussian mechanism ---------------------------------------------------------

/// (Delta / eps) sqrt(2 ln(1.25 / delta))
double sigma_classic(double delta_bound, const Budget& budget);

/// Phi(D/2s - eps s/D) - e^eps Phi(-D/2s - eps s/D) - delta. The mechanism
/// is (eps, delta)-indistinguishable at noise s iff this is <= 0.
double analytic_residual(double sigma, double delta_bound, const Budget& budget);

/// Smallest sigma with analytic_residual <= 0, by bisection on
/// [0, max(sigma_classic, Delta/eps)] to relative tolerance 1e-9.
double sigma_analytic(double delta_bound, const Budget& budget);

double calibrate_sigma(double delta_bound, const Budget& budget, Mechanism m);

/// Smallest epsilon certified by noise sigma at the given delta.
double implied_epsilon(double sigma, double delta_bound, double delta, Mechanism m);

Budget group_budget(const Budget& budget, std::size_t k);

// Inverse-Hessian-vector products --------------------------------------------

/// hvp_j(j, u) returns H_j u for the j-th Hessian draw (without lambda).
using IndexedHvp = std::function<Vec64(std::size_t, const Vec64&)>;

/// P_0 = v; P_j = v + (I - (H_j + lambda I)/H) P_{j-1}; returns P_s / H.
Vec64 lissa_apply(const IndexedHvp& hvp_j, const Vec64& v, std::size_t s, double lambda,
                  double H);

/// LiSSA with H_j the Hessian of the mean loss over batches[j - 1].
Vec64 lissa_apply(const MlpSpec& spec, const ParamVector& w, const Dataset& data,
                  const std::vector<std::vector<std::size_t>>& batches, const Vec64& v,
                  double lambda, double H);

/// w* + n_u/(n - n_u) * lissa(grad L(w*, D_u)) with s Hessian batches drawn
/// from D_r using `rng`.
ParamVector newton_estimate(const TrainedModel& w_star, const Dataset& data,
                            const SplitPlan& split, const UnlearnConfig& cfg, SeededRng& rng);

/// w* - (grad^2 L(w*, D_r) + lambda I)^{-1} grad L(w*, D_r) by a dense solve.
ParamVector newton_estimate_exact(const TrainedModel& w_star, const Dataset& data,
                                  const SplitPlan& split, double lambda,
                                  std::size_t oracle_limit = kDefaultOracleLimit);

// Certified results ----------------------------------------------------------

struct BoundTerms {
  double basic = 0.0;
  double efficient = 0.0;
  double practical = 0.0;
  double G = 0.0;
  std::size_t d = 0;
};

struct Diagnostics {
  /// Power-iteration estimate of ||grad^2 L(w*, D_r)||; negative when skipped.
  double hessian_norm_estimate = -1.0;
  bool lambda_exceeds_hessian_norm = false;
  /// Largest estimate of ||grad^2 l + lambda I|| over sampled Hessian batches.
  double scaled_hessian_norm_estimate = -1.0;
  bool H_valid = false;
  std::vector<std::string> warnings;
};

struct SequentialStep {
  std::size_t step = 0;
  std::size_t request_size = 0;
  std::size_t cumulative_unlearned = 0;
  /// ||grad L(w_{i-1}, D_{r_i})||
  double grad_norm = 0.0;
  /// ||grad L(w_i, D_{r_i})|| after the step
  double residual_after = 0.0;
  double G_used = 0.0;
  double delta_bound = 0.0;
  /// Test micro-F1 of the noiseless iterate; negative when not evaluated.
  double test_f1 = -1.0;
};

struct CertifiedResult {
  CertifiedResult(ParamVector estimate, ParamVector noisy)
      : w_tilde(std::move(estimate)), w_minus(std::move(noisy)) {}

  ParamVector w_tilde;
  ParamVector w_minus;
  BoundTerms bounds;
  double delta_bound = 0.0;
  double sigma = 0.0;
  bool sigma_overridden = false;
  Budget budget{1.0, 0.5};
  /// Budget stated on the certificate (k * eps under group privacy).
  Budget certified_budget{1.0, 0.5};
  Mechanism mechanism = Mechanism::kClassic;
  std::uint64_t root_seed = 0;
  std::string noise_label;
  std::string hessian_label;
  std::size_t n = 0;
  std::size_t n_unlearned = 0;
  double update_ratio = 0.0;  // n_u / (n - n_u)
  bool boundary_flag = false; // n_u = n - 1
  bool sequential = false;
  bool group_privacy = false;
  std::vector<SequentialStep> trace;
  /// Test micro-F1 of w* before any request; negative when not evaluated.
  double initial_test_f1 = -1.0;
  Diagnostics diagnostics;
  double seconds_estimate = 0.0;
  double seconds_noise = 0.0;
};

/// w_minus = w_tilde + N(0, sigma^2 I) drawn from rng.
ParamVector add_noise(const ParamVector& w_tilde, double sigma, SeededRng& rng);

struct CertifyOptions {
  Mechanism mechanism = Mechanism::kClassic;
  std::optional<double> sigma_override;
};

/// Calibrates sigma (unless overridden) and draws w_minus from the "noise"
/// child of rng. Fills the noise, budget and bound fields of the result.
CertifiedResult certify(const ParamVector& w_tilde, double delta_bound, const Budget& budget,
                        const CertifyOptions& opts, const SeededRng& rng);

/// Single-batch unlearning: Hessian batches from the "hessian" child of rng, Newton estimate,
/// practical bound with G = max(cfg.G, model residual), calibration, noise
/// from the "noise" child of rng.
CertifiedResult unlearn_single(const TrainedModel& w_star, const Dataset& data,
                               const SplitPlan& split, const UnlearnConfig& cfg,
                               const Budget& budget, const CertifyOptions& opts,
                               const SeededRng& rng);

/// Sequential unlearning: one full-retained-gradient LiSSA step per request, noise once at
/// the end. `test` (optional) is used for the per-step utility column.
CertifiedResult unlearn_sequential(const TrainedModel& w_star, const Dataset& data,
                                   const std::vector<std::vector<std::size_t>>& requests,
                                   const UnlearnConfig& cfg, const Budget& budget,
                                   const CertifyOptions& opts, bool group_privacy,
                                   const SeededRng& rng, const Dataset* test = nullptr);

/// Throws InvalidArgument naming the first offending request pair, an
/// out-of-range index, or an exhausted retained set.
void validate_requests(std::size_t n, const std::vector<std::vector<std::size_t>>& requests);

Diagnostics run_diagnostics(const TrainedModel& w_star, const Dataset& data,
                            const std::vector<std::size_t>& retained,
                            const std::vector<std::vector<std::size_t>>& batches,
                            const UnlearnConfig& cfg, const SeededRng& rng);

}  // namespace cdu
