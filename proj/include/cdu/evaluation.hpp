#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cdu/data.hpp"
#include "cdu/mlp.hpp"
#include "cdu/training.hpp"
#include "cdu/unlearning.hpp"

namespace cdu {

/// ||a - b||_2; both vectors must carry the same spec fingerprint.
double approximation_error(const ParamVector& a, const ParamVector& b);

struct UtilityReport {
  double f1_unlearn = 0.0;
  double f1_retain = 0.0;
  double f1_test = 0.0;
  std::uint64_t train_hash = 0;
  std::uint64_t test_hash = 0;
  std::uint64_t split_hash = 0;
};

UtilityReport utility_report(const MlpSpec& spec, const ParamVector& w, const Dataset& data,
                             const SplitPlan& split, const Dataset& test);

/// Fine-tunes on D_u alone, starting from w, and returns the first epoch at
/// which loss(D_u) <= threshold (0 if it already holds), or nullopt if
/// max_epochs pass without reaching it.
std::optional<std::size_t> relearn_time(const MlpSpec& spec, const ParamVector& w,
                                        const Dataset& data, const SplitPlan& split,
                                        double threshold, const TrainConfig& cfg,
                                        std::size_t max_epochs);

/// Everything one desk-scale experiment needs.
struct ExperimentSetup {
  MlpSpec spec;
  Dataset train;
  Dataset test;
  SplitPlan split;
  TrainConfig train_cfg;
  UnlearnConfig unlearn_cfg;
  std::uint64_t seed = 0;
  /// Norm bound used for the "without constraint" runs.
  double unconstrained_C = 1e12;
};

struct ModelPair {
  TrainedModel original;
  TrainedModel retrained;
};

/// Trains w* on D and the retrain oracle on D_r with parameter bound C.
ModelPair train_pair(const ExperimentSetup& setup, double C);

/// Unlearning config for coefficient lambda. H moves with lambda so that the
/// loss-Hessian part of the scale bound (base.H - base.lambda) stays fixed.
UnlearnConfig with_lambda(const UnlearnConfig& base, double lambda);

struct AblationRow {
  double lambda = 0.0;
  double H = 0.0;
  double err_bound = 0.0;
  double approx_err = 0.0;
  double approx_err_unconstrained = 0.0;
};

/// One row per lambda. Both pairs are reused across rows and every row draws
/// the same Hessian-batch stream.
std::vector<AblationRow> ablation_lambda(const ExperimentSetup& setup,
                                         const std::vector<double>& lambdas,
                                         const ModelPair& constrained,
                                         const ModelPair& unconstrained);
std::vector<AblationRow> ablation_lambda(const ExperimentSetup& setup,
                                         const std::vector<double>& lambdas);

struct SweepRow {
  double lambda = 0.0;
  double epsilon = 0.0;
  double delta = 0.0;
  std::size_t rep = 0;
  double delta_bound = 0.0;
  double sigma = 0.0;
  double test_f1 = 0.0;
};

struct SweepOptions {
  double delta = 0.1;
  std::size_t reps = 3;
  Mechanism mechanism = Mechanism::kClassic;
};

/// For each lambda: one Newton estimate, then for each epsilon and noise
/// repetition r the test micro-F1 of w_tilde + sigma * Z_r. Z_r comes from the
/// stream "sweep/rep<r>" and is shared across epsilons and lambdas.
std::vector<SweepRow> budget_sweep(const ExperimentSetup& setup, const TrainedModel& original,
                                   const std::vector<double>& lambdas,
                                   const std::vector<double>& epsilons,
                                   const SweepOptions& opts);

/// Mean test F1 per (lambda, epsilon), in input order.
struct SweepPoint {
  double lambda;
  double epsilon;
  double mean_f1;
};
std::vector<SweepPoint> sweep_means(const std::vector<SweepRow>& rows);

double spearman_rank_correlation(const std::vector<double>& x, const std::vector<double>& y);

// CSV emitters ---------------------------------------------------------------

std::string sequential_trace_csv(const CertifiedResult& result);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string utility_csv(const std::vector<std::pair<std::string, UtilityReport>>& rows);

}  // namespace cdu
