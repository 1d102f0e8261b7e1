#include "cdu/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "cdu/errors.hpp"

namespace cdu {

double approximation_error(const ParamVector& a, const ParamVector& b) {
  if (a.fingerprint() != b.fingerprint()) {
    throw InvalidArgument("approximation_error: parameter vectors belong to different specs");
  }
  return distance2(a.values(), b.values());
}

UtilityReport utility_report(const MlpSpec& spec, const ParamVector& w, const Dataset& data,
                             const SplitPlan& split, const Dataset& test) {
  require(!split.unlearn.empty() && !split.retained.empty() && test.size() > 0,
          "utility_report: empty subset");
  UtilityReport r;
  r.f1_unlearn = predict_metrics(spec, w, Batch::of(data, split.unlearn)).micro_f1;
  r.f1_retain = predict_metrics(spec, w, Batch::of(data, split.retained)).micro_f1;
  r.f1_test = predict_metrics(spec, w, Batch::all(test)).micro_f1;
  r.train_hash = data.content_hash();
  r.test_hash = test.content_hash();
  r.split_hash = split.hash();
  return r;
}

std::optional<std::size_t> relearn_time(const MlpSpec& spec, const ParamVector& w,
                                        const Dataset& data, const SplitPlan& split,
                                        double threshold, const TrainConfig& cfg,
                                        std::size_t max_epochs) {
  require(threshold >= 0 && !std::isnan(threshold), "relearn_time: threshold must be nonnegative");
  const Dataset forget = data.subset(split.unlearn, data.source() + "#unlearn");
  if (loss(spec, w, Batch::all(forget)) <= threshold) return 0;
  PgdTrainer trainer(spec, forget, cfg, w);
  for (std::size_t e = 1; e <= max_epochs; ++e) {
    if (trainer.run_epoch() <= threshold) return e;
  }
  return std::nullopt;
}

ModelPair train_pair(const ExperimentSetup& setup, double C) {
  TrainConfig cfg = setup.train_cfg;
  cfg.C = C;
  return {train_pgd(setup.spec, setup.train, cfg),
          retrain_oracle(setup.spec, setup.train, setup.split, cfg)};
}

UnlearnConfig with_lambda(const UnlearnConfig& base, double lambda) {
  UnlearnConfig cfg = base;
  cfg.lambda = lambda;
  cfg.H = base.H + (lambda - base.lambda);
  return cfg;
}

std::vector<AblationRow> ablation_lambda(const ExperimentSetup& setup,
                                         const std::vector<double>& lambdas,
                                         const ModelPair& constrained,
                                         const ModelPair& unconstrained) {
  require(!lambdas.empty(), "ablation_lambda: empty lambda grid");
  const std::size_t d = setup.spec.param_dim();
  std::vector<AblationRow> rows;
  for (double lambda : lambdas) {
    UnlearnConfig cfg = with_lambda(setup.unlearn_cfg, lambda);
    cfg.C = constrained.original.C;
    const double G = std::max(cfg.G, constrained.original.residual_grad_norm);

    SeededRng rng_c(setup.seed, "ablation/hessian");
    const ParamVector wc = newton_estimate(constrained.original, setup.train, setup.split, cfg, rng_c);
    SeededRng rng_u(setup.seed, "ablation/hessian");
    const ParamVector wu =
        newton_estimate(unconstrained.original, setup.train, setup.split, cfg, rng_u);

    rows.push_back({lambda, cfg.H, bound_practical(cfg, d, G),
                    approximation_error(wc, constrained.retrained.w),
                    approximation_error(wu, unconstrained.retrained.w)});
  }
  return rows;
}

std::vector<AblationRow> ablation_lambda(const ExperimentSetup& setup,
                                         const std::vector<double>& lambdas) {
  return ablation_lambda(setup, lambdas, train_pair(setup, setup.train_cfg.C),
                         train_pair(setup, setup.unconstrained_C));
}

std::vector<SweepRow> budget_sweep(const ExperimentSetup& setup, const TrainedModel& original,
                                   const std::vector<double>& lambdas,
                                   const std::vector<double>& epsilons,
                                   const SweepOptions& opts) {
  require(!lambdas.empty() && !epsilons.empty(), "budget_sweep: empty grid");
  require(std::is_sorted(epsilons.begin(), epsilons.end()),
          "budget_sweep: epsilon grid must be ascending");
  require(opts.reps >= 1, "budget_sweep: need at least one noise repetition");
  const std::size_t d = setup.spec.param_dim();
  const Batch test = Batch::all(setup.test);

  std::vector<Vec64> noise;
  for (std::size_t r = 0; r < opts.reps; ++r) {
    SeededRng rng(setup.seed, "sweep/rep" + std::to_string(r));
    noise.push_back(sample_gaussian_vector(d, 1.0, rng));
  }

  std::vector<SweepRow> rows;
  for (double lambda : lambdas) {
    UnlearnConfig cfg = with_lambda(setup.unlearn_cfg, lambda);
    cfg.C = original.C;
    SeededRng hess(setup.seed, "sweep/hessian");
    const ParamVector w_tilde = newton_estimate(original, setup.train, setup.split, cfg, hess);
    const double G = std::max(cfg.G, original.residual_grad_norm);
    const double bound = bound_practical(cfg, d, G);
    for (double eps : epsilons) {
      const Budget budget(eps, opts.delta);
      const double sigma = calibrate_sigma(bound, budget, opts.mechanism);
      for (std::size_t r = 0; r < opts.reps; ++r) {
        Vec64 w = w_tilde.values();
        axpy(sigma, noise[r], w);
        const double f1 = predict_metrics(setup.spec, ParamVector(setup.spec, std::move(w)), test)
                              .micro_f1;
        rows.push_back({lambda, eps, opts.delta, r, bound, sigma, f1});
      }
    }
  }
  return rows;
}

std::vector<SweepPoint> sweep_means(const std::vector<SweepRow>& rows) {
  std::vector<SweepPoint> out;
  std::vector<std::size_t> counts;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SweepPoint& p) {
      return p.lambda == r.lambda && p.epsilon == r.epsilon;
    });
    if (it == out.end()) {
      out.push_back({r.lambda, r.epsilon, 0.0});
      counts.push_back(0);
      it = out.end() - 1;
    }
    const auto k = static_cast<std::size_t>(it - out.begin());
    it->mean_f1 += r.test_f1;
    ++counts[k];
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].mean_f1 /= static_cast<double>(counts[k]);
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_rank_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman: need two equal-length series");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

std::ostringstream csv_stream() {
  std::ostringstream out;
  out.precision(17);
  return out;
}

}  // namespace

std::string sequential_trace_csv(const CertifiedResult& result) {
  if (!result.sequential) {
    throw InvalidArgument("sequential_trace: result was not produced by sequential unlearning");
  }
  auto out = csv_stream();
  out << "step,request_size,cumulative_unlearned,grad_norm,residual_after,G,delta_bound,test_f1\n";
  for (const auto& s : result.trace) {
    out << s.step << "," << s.request_size << "," << s.cumulative_unlearned << "," << s.grad_norm
        << "," << s.residual_after << "," << s.G_used << "," << s.delta_bound << ",";
    if (s.test_f1 >= 0) out << s.test_f1;
    out << "\n";
  }
  return out.str();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  auto out = csv_stream();
  out << "lambda,H,err_bound,approx_err,approx_err_unconstrained\n";
  for (const auto& r : rows) {
    out << r.lambda << "," << r.H << "," << r.err_bound << "," << r.approx_err << ","
        << r.approx_err_unconstrained << "\n";
  }
  return out.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  auto out = csv_stream();
  out << "lambda,epsilon,delta,rep,delta_bound,sigma,test_f1\n";
  for (const auto& r : rows) {
    out << r.lambda << "," << r.epsilon << "," << r.delta << "," << r.rep << "," << r.delta_bound
        << "," << r.sigma << "," << r.test_f1 << "\n";
  }
  return out.str();
}

std::string utility_csv(const std::vector<std::pair<std::string, UtilityReport>>& rows) {
  auto out = csv_stream();
  out << "model,f1_unlearn,f1_retain,f1_test,train_hash,test_hash,split_hash\n";
  for (const auto& [name, r] : rows) {
    out << name << "," << r.f1_unlearn << "," << r.f1_retain << "," << r.f1_test << ","
        << hex64(r.train_hash) << "," << hex64(r.test_hash) << "," << hex64(r.split_hash) << "\n";
  }
  return out.str();
}

}  // namespace cdu
