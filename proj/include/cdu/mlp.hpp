#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cdu/data.hpp"
#include "cdu/numerics.hpp"

namespace cdu {

enum class Activation : std::uint8_t { kTanh = 0, kSoftplus = 1 };
enum class LossKind : std::uint8_t { kSoftmaxCrossEntropy = 0, kSquaredError = 1 };

std::string to_string(Activation a);
std::string to_string(LossKind l);
Activation parse_activation(const std::string& s);
LossKind parse_loss(const std::string& s);

/// Fully connected network: layer_dims = {input, hidden..., output}. Hidden
/// layers apply the activation; the output layer is linear and feeds the loss.
///
/// Per-sample losses:
///   softmax cross-entropy  l = logsumexp(z) - z_y
///   squared error          l = 1/2 ||z - t||^2   (t = target row, or one-hot label)
struct MlpSpec {
  std::vector<std::size_t> layer_dims;
  Activation activation = Activation::kTanh;
  LossKind loss = LossKind::kSoftmaxCrossEntropy;

  MlpSpec() = default;
  MlpSpec(std::vector<std::size_t> dims, Activation act, LossKind l);

  std::size_t num_layers() const { return layer_dims.size() - 1; }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  /// d = sum over layers of (fan_in + 1) * fan_out.
  std::size_t param_dim() const;
  std::uint64_t fingerprint() const;

  /// Offset of layer l's weight block (row-major fan_out x fan_in) in the flat
  /// parameter vector; its bias block follows immediately.
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;
};

/// Flattened parameters tagged with the fingerprint of the spec they belong to.
class ParamVector {
 public:
  ParamVector(const MlpSpec& spec, Vec64 values);
  ParamVector(std::uint64_t fingerprint, Vec64 values);

  std::size_t size() const { return values_.size(); }
  std::uint64_t fingerprint() const { return fingerprint_; }
  const Vec64& values() const { return values_; }
  std::span<const double> span() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  std::uint64_t fingerprint_;
  Vec64 values_;
};

/// Per-layer views used by unflatten/flatten.
struct LayerParams {
  std::vector<double> weights;  // fan_out x fan_in, row-major
  std::vector<double> bias;     // fan_out
};
std::vector<LayerParams> unflatten(const MlpSpec& spec, const ParamVector& w);
ParamVector flatten(const MlpSpec& spec, const std::vector<LayerParams>& layers);

/// Glorot-uniform weights, zero biases.
ParamVector init_params(const MlpSpec& spec, SeededRng& rng);

/// A set of rows of a dataset. Holds a non-owning pointer: the dataset must
/// outlive the batch.
struct Batch {
  const Dataset* data = nullptr;
  std::vector<std::size_t> rows;

  static Batch all(const Dataset& d);
  static Batch of(const Dataset& d, std::vector<std::size_t> rows);
  std::size_t size() const { return rows.size(); }
};

enum class ExecPolicy { kParallel, kSerial };

/// Mean loss over the batch, (1/n) sum_x l(w, x).
double loss(const MlpSpec& spec, const ParamVector& w, const Batch& batch,
            ExecPolicy policy = ExecPolicy::kParallel);

/// Exact gradient of the mean loss (reverse mode).
Vec64 grad(const MlpSpec& spec, const ParamVector& w, const Batch& batch,
           ExecPolicy policy = ExecPolicy::kParallel);

struct LossGrad {
  double loss;
  Vec64 grad;
};
LossGrad loss_and_grad(const MlpSpec& spec, const ParamVector& w, const Batch& batch,
                       ExecPolicy policy = ExecPolicy::kParallel);

/// Exact Hessian-vector product of the mean loss (forward-over-reverse R-op).
Vec64 hvp(const MlpSpec& spec, const ParamVector& w, const Batch& batch,
          std::span<const double> v, ExecPolicy policy = ExecPolicy::kParallel);

inline constexpr std::size_t kDefaultOracleLimit = 2000;

/// Dense Hessian assembled column by column from hvp(e_j).
Mat64 full_hessian(const MlpSpec& spec, const ParamVector& w, const Batch& batch,
                   std::size_t oracle_limit = kDefaultOracleLimit);

/// Output-layer values for one sample.
Vec64 forward(const MlpSpec& spec, const ParamVector& w, const double* x);

struct Metrics {
  double accuracy;
  /// Micro-averaged F1 over classes. For single-label classification micro
  /// precision, recall and F1 all coincide with accuracy.
  double micro_f1;
};
Metrics predict_metrics(const MlpSpec& spec, const ParamVector& w, const Batch& batch);

void check_compatible(const MlpSpec& spec, const ParamVector& w, const Batch& batch);

/// Serial textbook implementations: a single running accumulator over
/// samples. Kept as the reference the blocked kernels are tested and
/// benchmarked against.
namespace reference {
double loss(const MlpSpec& spec, const ParamVector& w, const Batch& batch);
Vec64 grad(const MlpSpec& spec, const ParamVector& w, const Batch& batch);
Vec64 hvp(const MlpSpec& spec, const ParamVector& w, const Batch& batch,
          std::span<const double> v);
}  // namespace reference

}  // namespace cdu
