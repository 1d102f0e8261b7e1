#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdu/rng.hpp"

namespace cdu {

/// Immutable training/test data. Features are row-major with `dim` columns.
/// `targets` is optional: when present (n x target_dim, row-major) it supplies
/// real regression targets for the squared-error loss; otherwise squared error
/// uses one-hot labels.
class Dataset {
 public:
  Dataset(std::vector<double> features, std::size_t dim, std::vector<int> labels,
          int num_classes, std::string source,
          std::vector<double> targets = {}, std::size_t target_dim = 0);

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }
  int num_classes() const { return num_classes_; }
  const std::string& source() const { return source_; }
  std::uint64_t content_hash() const { return hash_; }

  const double* row(std::size_t i) const { return features_.data() + i * dim_; }
  int label(std::size_t i) const { return labels_[i]; }
  bool has_targets() const { return target_dim_ > 0; }
  std::size_t target_dim() const { return target_dim_; }
  const double* target(std::size_t i) const { return targets_.data() + i * target_dim_; }

  const std::vector<double>& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<double>& targets() const { return targets_; }

  /// New dataset made of the given rows, in the given order.
  Dataset subset(const std::vector<std::size_t>& rows, std::string source) const;

 private:
  std::vector<double> features_;
  std::size_t dim_;
  std::vector<int> labels_;
  int num_classes_;
  std::string source_;
  std::vector<double> targets_;
  std::size_t target_dim_;
  std::uint64_t hash_;
};

/// MNIST IDX pair (images magic 0x00000803, labels 0x00000801). Pixels are
/// scaled to [0, 1]. `limit` truncates to the first `limit` samples.
Dataset load_mnist_idx(const std::filesystem::path& images,
                       const std::filesystem::path& labels,
                       std::optional<std::size_t> limit = std::nullopt);

/// Numeric CSV with a header row. The named column holds integer class labels;
/// every other column becomes a feature, in header order.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column);
void write_csv(const Dataset& data, const std::filesystem::path& path,
               const std::string& label_column = "label");

/// Gaussian clusters (unit variance) centred on scaled simplex-like vertices,
/// then min-max scaled to [0, 1] per feature. Labels are balanced (i mod k).
Dataset synth_blobs(std::size_t n, std::size_t dim, int classes, double separation,
                    std::uint64_t seed);

struct TrainTest {
  Dataset train;
  Dataset test;
};

/// Splits off the last n_test rows as a test set.
TrainTest split_train_test(const Dataset& data, std::size_t n_test);

/// Unlearned (D_u) and retained (D_r) index sets; both sorted.
struct SplitPlan {
  std::vector<std::size_t> unlearn;
  std::vector<std::size_t> retained;
  std::uint64_t seed = 0;

  std::uint64_t hash() const;
};

/// Uniform random subset of size n_u without replacement.
SplitPlan make_split(std::size_t n, std::size_t n_u, std::uint64_t seed);
SplitPlan make_split(const Dataset& data, std::size_t n_u, std::uint64_t seed);

/// Builds a plan from explicit unlearn indices (validated, sorted, deduplicated
/// check is strict: duplicates are rejected).
SplitPlan split_from_indices(std::size_t n, std::vector<std::size_t> unlearn,
                             std::uint64_t seed = 0);

/// s minibatches drawn i.i.d. from the retained rows of `plan`. Each batch is a
/// uniform subset (without replacement inside the batch) of size
/// min(batch_size, |D_r|), so batch_size >= |D_r| yields the full retained set.
std::vector<std::vector<std::size_t>> hessian_batch_stream(
    const std::vector<std::size_t>& retained, std::size_t batch_size, std::size_t s,
    SeededRng& rng);
std::vector<std::vector<std::size_t>> hessian_batch_stream(const SplitPlan& plan,
                                                           std::size_t batch_size,
                                                           std::size_t s, SeededRng& rng);

}  // namespace cdu
