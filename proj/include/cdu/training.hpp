#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdu/data.hpp"
#include "cdu/mlp.hpp"

namespace cdu {

enum class Optimizer : std::uint8_t { kPgdMomentum = 0, kPgdPlain = 1 };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& s);

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 50;
  std::size_t batch_size = 128;
  double weight_decay = 5e-4;
  double C = 10.0;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kPgdMomentum;
  double momentum = 0.9;

  /// Throws InvalidArgument on a violated field invariant.
  void validate() const;
};

struct TrainedModel {
  MlpSpec spec;
  ParamVector w;
  /// ||grad L(w, D)|| over the training data, evaluated at the returned w.
  double residual_grad_norm = 0.0;
  /// Full-batch loss at initialization followed by one entry per epoch.
  std::vector<double> loss_trace;
  double C = 0.0;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::uint64_t dataset_hash = 0;
};

/// Minibatch projected gradient descent. Every step is
///   g = grad(w, batch) + weight_decay * w
///   v = momentum * v + g      (v = g for plain PGD)
///   w = project(w - lr * v, C)
/// Batches are a fresh permutation of the data each epoch.
class PgdTrainer {
 public:
  PgdTrainer(const MlpSpec& spec, const Dataset& data, const TrainConfig& cfg,
             const ParamVector& init);

  /// Runs one epoch and returns the full-batch loss at its end.
  double run_epoch();
  const ParamVector& params() const { return w_; }
  std::size_t epochs_done() const { return epoch_; }

 private:
  const MlpSpec& spec_;
  const Dataset& data_;
  TrainConfig cfg_;
  ParamVector w_;
  Vec64 velocity_;
  SeededRng batch_rng_;
  std::size_t epoch_ = 0;
};

/// Initializes from the "init" stream of cfg.seed and trains for cfg.epochs.
TrainedModel train_pgd(const MlpSpec& spec, const Dataset& data, const TrainConfig& cfg);

/// Same as train_pgd but starting from the given parameters.
TrainedModel train_pgd_from(const MlpSpec& spec, const Dataset& data, const TrainConfig& cfg,
                            const ParamVector& init);

/// Trains on the retained rows of `split` only, from the same initialization
/// as train_pgd(spec, data, cfg). residual_grad_norm is measured on D_r.
TrainedModel retrain_oracle(const MlpSpec& spec, const Dataset& data, const SplitPlan& split,
                            const TrainConfig& cfg);

/// Wraps externally obtained parameters (e.g. a closed-form solution) and
/// records their residual gradient on `data`.
TrainedModel wrap_model(const MlpSpec& spec, const Dataset& data, ParamVector w, double C);

// Checkpoints ----------------------------------------------------------------
//
// Binary layout (little-endian):
//   "CUW1" | u16 version | u16 layer count | u32 dim per layer |
//   u8 activation | u8 loss | f64 x d
// The JSON sidecar at <path>.json holds C, residual_grad_norm, seed,
// dataset_hash (hex) and epochs.

inline constexpr std::uint16_t kCheckpointVersion = 1;

void write_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel read_checkpoint(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

/// Hash of the checkpoint's binary payload (spec plus parameter bits).
std::uint64_t params_hash(const MlpSpec& spec, const ParamVector& w);

/// Recomputes the residual gradient norm on `data` and throws IntegrityError
/// if the dataset hash or the stored norm (tolerance 1e-10) disagree.
void verify_model(const TrainedModel& model, const Dataset& data);

void write_loss_trace(const TrainedModel& model, const std::filesystem::path& path);

}  // namespace cdu
