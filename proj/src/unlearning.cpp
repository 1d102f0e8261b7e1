#include "cdu/unlearning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <set>

#include "cdu/errors.hpp"

namespace cdu {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void require_convexified(const UnlearnConfig& cfg) {
  if (!(cfg.lambda + cfg.lambda_min > 0)) {
    throw InvalidArgument("lambda + lambda_min must be positive (got " +
                          std::to_string(cfg.lambda + cfg.lambda_min) + ")");
  }
}

double log_sqrt_term(std::size_t d, double rho) {
  require(d >= 1, "model dimension must be positive");
  require(rho > 0 && rho < 1, "rho must lie in (0, 1)");
  return std::sqrt(std::log(static_cast<double>(d) / rho));
}

// log Phi(x), accurate where Phi(x) underflows.
double log_normal_cdf(double x) {
  if (x > -37.0) return std::log(std_normal_cdf(x));
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

}  // namespace

std::vector<std::string> UnlearnConfig::validate() const {
  require(std::isfinite(lambda) && lambda > 0, "lambda must be positive");
  require(std::isfinite(H) && H > 0, "H must be positive");
  require(s >= 1, "s must be a positive integer");
  require(std::isfinite(C) && C > 0, "C must be positive");
  require(std::isfinite(L) && L >= 0, "L must be nonnegative");
  require(std::isfinite(M) && M >= 0, "M must be nonnegative");
  require(std::isfinite(lambda_min), "lambda_min must be finite");
  require(rho > 0 && rho < 1, "rho must lie in (0, 1)");
  require(std::isfinite(G) && G >= 0, "G must be nonnegative");
  require(hessian_batch_size >= 1, "hessian_batch_size must be positive");
  require_convexified(*this);
  std::vector<std::string> warnings;
  if (H < lambda) {
    warnings.push_back("H < lambda: ||grad^2 l + lambda I|| <= H cannot hold");
  }
  return warnings;
}

Budget::Budget(double eps, double del) : epsilon(eps), delta(del) {
  require(std::isfinite(eps) && eps > 0, "budget epsilon must be positive");
  require(del > 0 && del < 1, "budget delta must lie in (0, 1)");
}

std::string to_string(Mechanism m) { return m == Mechanism::kClassic ? "classic" : "analytic"; }

Mechanism parse_mechanism(const std::string& s) {
  if (s == "classic") return Mechanism::kClassic;
  if (s == "analytic") return Mechanism::kAnalytic;
  throw InvalidArgument("unknown mechanism '" + s + "' (expected classic or analytic)");
}

double bound_basic(const UnlearnConfig& cfg) {
  require_convexified(cfg);
  return 2.0 * cfg.C * (cfg.M * cfg.C + cfg.lambda) / (cfg.lambda + cfg.lambda_min);
}

double bound_efficient(const UnlearnConfig& cfg, std::size_t d) {
  const double base = bound_basic(cfg);
  const double k = cfg.lambda + cfg.lambda_min;
  return base + (32.0 * log_sqrt_term(d, cfg.rho) / k + 0.125) * cfg.L * cfg.C;
}

double bound_practical(const UnlearnConfig& cfg, std::size_t d, double G) {
  require_convexified(cfg);
  require(std::isfinite(G) && G >= 0, "G must be nonnegative");
  const double k = cfg.lambda + cfg.lambda_min;
  const double newton = (2.0 * cfg.C * (cfg.M * cfg.C + cfg.lambda) + G) / k;
  const double lissa = (16.0 * log_sqrt_term(d, cfg.rho) / k + 0.0625) * (2.0 * cfg.L * cfg.C + G);
  return newton + lissa;
}

double bound_convex(double M, double C, double K) {
  require(K > 0, "bound_convex: K must be positive");
  return 2.0 * M * C * C / K;
}

double sigma_classic(double delta_bound, const Budget& budget) {
  require(delta_bound >= 0 && std::isfinite(delta_bound), "Delta must be nonnegative");
  return delta_bound / budget.epsilon * std::sqrt(2.0 * std::log(1.25 / budget.delta));
}

double analytic_residual(double sigma, double delta_bound, const Budget& budget) {
  const double a = delta_bound / (2.0 * sigma);
  const double b = budget.epsilon * sigma / delta_bound;
  const double first = std_normal_cdf(a - b);
  const double second = std::exp(budget.epsilon + log_normal_cdf(-a - b));
  return first - second - budget.delta;
}

double sigma_analytic(double delta_bound, const Budget& budget) {
  require(delta_bound > 0 && std::isfinite(delta_bound), "sigma_analytic: Delta must be positive");
  double lo = 0.0;
  double hi = std::max(sigma_classic(delta_bound, budget), delta_bound / budget.epsilon);
  const double initial_hi = hi;
  int expansions = 0;
  while (analytic_residual(hi, delta_bound, budget) > 0) {
    if (++expansions > 64) {
      throw NumericalFailure("sigma_analytic: no sigma in [0, " + std::to_string(hi) +
                             "] satisfies the condition (initial upper " +
                             std::to_string(initial_hi) + ")");
    }
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 400 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (analytic_residual(mid, delta_bound, budget) <= 0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

double calibrate_sigma(double delta_bound, const Budget& budget, Mechanism m) {
  if (delta_bound == 0.0) return 0.0;
  return m == Mechanism::kClassic ? sigma_classic(delta_bound, budget)
                                  : sigma_analytic(delta_bound, budget);
}

double implied_epsilon(double sigma, double delta_bound, double delta, Mechanism m) {
  require(sigma > 0, "implied_epsilon: sigma must be positive");
  require(delta > 0 && delta < 1, "implied_epsilon: delta must lie in (0, 1)");
  const double classic = delta_bound / sigma * std::sqrt(2.0 * std::log(1.25 / delta));
  if (m == Mechanism::kClassic || delta_bound == 0.0) return classic;
  auto holds = [&](double eps) {
    return analytic_residual(sigma, delta_bound, Budget(eps, delta)) <= 0;
  };
  double lo = 0.0;
  double hi = std::max(classic, 1e-12);
  while (!holds(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw NumericalFailure("implied_epsilon: no epsilon found");
  }
  for (int it = 0; it < 400 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (holds(mid)) hi = mid; else lo = mid;
  }
  return hi;
}

Budget group_budget(const Budget& budget, std::size_t k) {
  require(k >= 1, "group_budget: k must be positive");
  return Budget(static_cast<double>(k) * budget.epsilon, budget.delta);
}

Vec64 lissa_apply(const IndexedHvp& hvp_j, const Vec64& v, std::size_t s, double lambda,
                  double H) {
  require(H > 0, "lissa_apply: H must be positive");
  Vec64 p = v;
  const double inv_h = 1.0 / H;
  for (std::size_t j = 1; j <= s; ++j) {
    const Vec64 hp = hvp_j(j, p);
    require(hp.size() == p.size(), "lissa_apply: hvp returned wrong dimension");
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] = v[k] + p[k] - (hp[k] + lambda * p[k]) * inv_h;
    }
    if (!all_finite(p)) {
      throw NumericalFailure("lissa_apply: nonfinite iterate at step " + std::to_string(j) +
                             " (H too small for the Hessian draws?)");
    }
  }
  for (double& x : p) x *= inv_h;
  return p;
}

Vec64 lissa_apply(const MlpSpec& spec, const ParamVector& w, const Dataset& data,
                  const std::vector<std::vector<std::size_t>>& batches, const Vec64& v,
                  double lambda, double H) {
  require(v.size() == spec.param_dim(), "lissa_apply: |v| does not match d");
  return lissa_apply(
      [&](std::size_t j, const Vec64& u) {
        return hvp(spec, w, Batch{&data, batches[j - 1]}, u);
      },
      v, batches.size(), lambda, H);
}

ParamVector newton_estimate(const TrainedModel& w_star, const Dataset& data,
                            const SplitPlan& split, const UnlearnConfig& cfg, SeededRng& rng) {
  cfg.validate();
  const auto batches = hessian_batch_stream(split, cfg.hessian_batch_size, cfg.s, rng);
  const Vec64 g_u = grad(w_star.spec, w_star.w, Batch::of(data, split.unlearn));
  const Vec64 p = lissa_apply(w_star.spec, w_star.w, data, batches, g_u, cfg.lambda, cfg.H);
  const double ratio = static_cast<double>(split.unlearn.size()) /
                       static_cast<double>(split.retained.size());
  Vec64 w = w_star.w.values();
  axpy(ratio, p, w);
  return ParamVector(w_star.spec, std::move(w));
}

ParamVector newton_estimate_exact(const TrainedModel& w_star, const Dataset& data,
                                  const SplitPlan& split, double lambda,
                                  std::size_t oracle_limit) {
  require(std::isfinite(lambda) && lambda >= 0, "newton_estimate_exact: lambda must be >= 0");
  const Batch retained = Batch::of(data, split.retained);
  Mat64 A = full_hessian(w_star.spec, w_star.w, retained, oracle_limit);
  A.diagonal().array() += lambda;
  const Vec64 g = grad(w_star.spec, w_star.w, retained);
  Eigen::FullPivLU<Mat64> lu(A);
  if (!lu.isInvertible()) {
    throw NumericalFailure("newton_estimate_exact: Hessian + lambda I is singular");
  }
  const Eigen::VectorXd step = lu.solve(as_eigen(g));
  Vec64 w = w_star.w.values();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step(static_cast<Eigen::Index>(i));
  if (!all_finite(w)) throw NumericalFailure("newton_estimate_exact: nonfinite solution");
  return ParamVector(w_star.spec, std::move(w));
}

ParamVector add_noise(const ParamVector& w_tilde, double sigma, SeededRng& rng) {
  const Vec64 y = sample_gaussian_vector(w_tilde.size(), sigma, rng);
  return ParamVector(w_tilde.fingerprint(), add(w_tilde.values(), y));
}

CertifiedResult certify(const ParamVector& w_tilde, double delta_bound, const Budget& budget,
                        const CertifyOptions& opts, const SeededRng& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  CertifiedResult r(w_tilde, w_tilde);
  r.delta_bound = delta_bound;
  r.budget = budget;
  r.certified_budget = budget;
  r.mechanism = opts.mechanism;
  if (opts.sigma_override) {
    require(std::isfinite(*opts.sigma_override) && *opts.sigma_override >= 0,
            "sigma override must be nonnegative");
    r.sigma = *opts.sigma_override;
    r.sigma_overridden = true;
  } else {
    r.sigma = calibrate_sigma(delta_bound, budget, opts.mechanism);
  }
  SeededRng noise = rng.child("noise");
  r.root_seed = rng.seed();
  r.noise_label = noise.label();
  r.w_minus = add_noise(w_tilde, r.sigma, noise);
  r.seconds_noise = seconds_since(t0);
  return r;
}

Diagnostics run_diagnostics(const TrainedModel& w_star, const Dataset& data,
                            const std::vector<std::size_t>& retained,
                            const std::vector<std::vector<std::size_t>>& batches,
                            const UnlearnConfig& cfg, const SeededRng& rng) {
  Diagnostics diag;
  diag.warnings = cfg.validate();
  if (cfg.diagnostic_iters == 0) return diag;
  const auto& spec = w_star.spec;
  const std::size_t d = spec.param_dim();
  SeededRng prng = rng.child("diagnostics");
  const Batch all{&data, retained};
  diag.hessian_norm_estimate = power_iteration_opnorm(
      [&](const Vec64& u) { return hvp(spec, w_star.w, all, u); }, d, cfg.diagnostic_iters,
      prng);
  diag.lambda_exceeds_hessian_norm = cfg.lambda > diag.hessian_norm_estimate;
  if (!diag.lambda_exceeds_hessian_norm) {
    diag.warnings.push_back("lambda does not exceed the estimated Hessian norm " +
                            std::to_string(diag.hessian_norm_estimate));
  }
  const std::size_t probes = std::min<std::size_t>(5, batches.size());
  double worst = 0.0;
  for (std::size_t j = 0; j < probes; ++j) {
    const Batch b{&data, batches[j]};
    const double est = power_iteration_opnorm(
        [&](const Vec64& u) {
          Vec64 out = hvp(spec, w_star.w, b, u);
          axpy(cfg.lambda, u, out);
          return out;
        },
        d, cfg.diagnostic_iters, prng);
    worst = std::max(worst, est);
  }
  diag.scaled_hessian_norm_estimate = worst;
  diag.H_valid = worst <= cfg.H;
  if (!diag.H_valid) {
    diag.warnings.push_back("sampled ||grad^2 l + lambda I|| estimate " + std::to_string(worst) +
                            " exceeds H");
  }
  return diag;
}

CertifiedResult unlearn_single(const TrainedModel& w_star, const Dataset& data,
                               const SplitPlan& split, const UnlearnConfig& cfg,
                               const Budget& budget, const CertifyOptions& opts,
                               const SeededRng& rng) {
  cfg.validate();
  require(split.unlearn.size() + split.retained.size() == data.size(),
          "unlearn_single: split does not cover the dataset");
  const auto t0 = std::chrono::steady_clock::now();
  SeededRng hess = rng.child("hessian");
  const std::string hess_label = hess.label();
  ParamVector w_tilde = [&] {
    try {
      return newton_estimate(w_star, data, split, cfg, hess);
    } catch (const NumericalFailure& e) {
      throw NumericalFailure(std::string("newton estimate: ") + e.what());
    }
  }();
  const double t_est = seconds_since(t0);

  const std::size_t d = w_star.spec.param_dim();
  BoundTerms bounds;
  bounds.d = d;
  bounds.G = std::max(cfg.G, w_star.residual_grad_norm);
  bounds.basic = bound_basic(cfg);
  bounds.efficient = bound_efficient(cfg, d);
  bounds.practical = bound_practical(cfg, d, bounds.G);

  CertifiedResult r = certify(w_tilde, bounds.practical, budget, opts, rng);
  r.bounds = bounds;
  r.hessian_label = hess_label;
  r.seconds_estimate = t_est;
  r.n = data.size();
  r.n_unlearned = split.unlearn.size();
  r.update_ratio = static_cast<double>(split.unlearn.size()) /
                   static_cast<double>(split.retained.size());
  r.boundary_flag = split.retained.size() == 1;
  if (cfg.diagnostic_iters > 0) {
    SeededRng replay(rng.seed(), hess_label);
    const auto batches = hessian_batch_stream(split, cfg.hessian_batch_size,
                                              std::min<std::size_t>(cfg.s, 5), replay);
    r.diagnostics = run_diagnostics(w_star, data, split.retained, batches, cfg, rng);
  } else {
    r.diagnostics.warnings = cfg.validate();
  }
  return r;
}

void validate_requests(std::size_t n, const std::vector<std::vector<std::size_t>>& requests) {
  std::vector<int> owner(n, -1);
  std::size_t removed = 0;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    require(!requests[i].empty(), "request " + std::to_string(i) + " is empty");
    for (std::size_t idx : requests[i]) {
      require(idx < n, "request " + std::to_string(i) + " index " + std::to_string(idx) +
                           " out of range [0, " + std::to_string(n) + ")");
      if (owner[idx] >= 0) {
        throw InvalidArgument("requests " + std::to_string(owner[idx]) + " and " +
                              std::to_string(i) + " overlap at index " + std::to_string(idx));
      }
      owner[idx] = static_cast<int>(i);
      ++removed;
    }
  }
  require(removed < n, "requests remove every training sample");
}

CertifiedResult unlearn_sequential(const TrainedModel& w_star, const Dataset& data,
                                   const std::vector<std::vector<std::size_t>>& requests,
                                   const UnlearnConfig& cfg, const Budget& budget,
                                   const CertifyOptions& opts, bool group_privacy,
                                   const SeededRng& rng, const Dataset* test) {
  cfg.validate();
  validate_requests(data.size(), requests);
  const auto t0 = std::chrono::steady_clock::now();
  const auto& spec = w_star.spec;
  const std::size_t d = spec.param_dim();
  const bool eval_test = test != nullptr && spec.loss == LossKind::kSoftmaxCrossEntropy;

  std::vector<bool> removed(data.size(), false);
  std::size_t cumulative = 0;
  double G = std::max(cfg.G, w_star.residual_grad_norm);
  Vec64 w = w_star.w.values();
  SeededRng hess = rng.child("hessian");
  std::vector<SequentialStep> trace;

  for (std::size_t i = 0; i < requests.size(); ++i) {
    for (std::size_t idx : requests[i]) removed[idx] = true;
    cumulative += requests[i].size();
    std::vector<std::size_t> retained;
    retained.reserve(data.size() - cumulative);
    for (std::size_t k = 0; k < data.size(); ++k)
      if (!removed[k]) retained.push_back(k);

    const ParamVector wp(spec, w);
    const Batch r_batch{&data, retained};
    const Vec64 g = grad(spec, wp, r_batch);
    SeededRng step_rng = hess.child("step" + std::to_string(i + 1));
    const auto batches = hessian_batch_stream(retained, cfg.hessian_batch_size, cfg.s, step_rng);
    Vec64 p;
    try {
      p = lissa_apply(spec, wp, data, batches, g, cfg.lambda, cfg.H);
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("sequential step " + std::to_string(i + 1) + ": " + e.what());
    }
    axpy(-1.0, p, w);
    const ParamVector wn(spec, w);

    SequentialStep st;
    st.step = i + 1;
    st.request_size = requests[i].size();
    st.cumulative_unlearned = cumulative;
    st.grad_norm = norm2(g);
    st.residual_after = norm2(grad(spec, wn, r_batch));
    G = std::max(G, st.residual_after);
    st.G_used = G;
    st.delta_bound = bound_practical(cfg, d, G);
    if (eval_test) st.test_f1 = predict_metrics(spec, wn, Batch::all(*test)).micro_f1;
    trace.push_back(st);
  }
  const double t_est = seconds_since(t0);

  BoundTerms bounds;
  bounds.d = d;
  bounds.G = G;
  bounds.basic = bound_basic(cfg);
  bounds.efficient = bound_efficient(cfg, d);
  bounds.practical = bound_practical(cfg, d, G);

  CertifiedResult r = certify(ParamVector(spec, w), bounds.practical, budget, opts, rng);
  r.bounds = bounds;
  r.hessian_label = hess.label();
  r.seconds_estimate = t_est;
  r.sequential = true;
  r.group_privacy = group_privacy;
  if (group_privacy && !requests.empty()) r.certified_budget = group_budget(budget, requests.size());
  r.n = data.size();
  r.n_unlearned = cumulative;
  r.update_ratio = static_cast<double>(cumulative) / static_cast<double>(data.size() - cumulative);
  r.boundary_flag = data.size() - cumulative == 1;
  r.trace = std::move(trace);
  r.diagnostics.warnings = cfg.validate();
  if (eval_test) r.initial_test_f1 = predict_metrics(spec, w_star.w, Batch::all(*test)).micro_f1;
  return r;
}

}  // namespace cdu
