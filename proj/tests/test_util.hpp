#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "cdu/data.hpp"
#include "cdu/mlp.hpp"
#include "cdu/numerics.hpp"

namespace testutil {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cdu_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline cdu::Vec64 random_vec(std::size_t d, double scale, cdu::SeededRng& rng) {
  cdu::Vec64 v(d);
  for (auto& x : v) x = scale * (2.0 * rng.uniform() - 1.0);
  return v;
}

/// Linear regression data: x ~ U[0,1]^dim, t = x.beta + b0 + noise * N(0,1).
inline cdu::Dataset regression_data(std::size_t n, std::size_t dim, double noise,
                                    std::uint64_t seed) {
  cdu::SeededRng rng(seed, "regression");
  std::vector<double> x(n * dim), t(n);
  std::vector<double> beta(dim);
  for (std::size_t j = 0; j < dim; ++j) beta[j] = 1.0 + 0.5 * static_cast<double>(j);
  for (std::size_t i = 0; i < n; ++i) {
    double y = 0.3;
    for (std::size_t j = 0; j < dim; ++j) {
      x[i * dim + j] = rng.uniform();
      y += beta[j] * x[i * dim + j];
    }
    t[i] = y + noise * rng.normal();
  }
  return cdu::Dataset(std::move(x), dim, std::vector<int>(n, 0), 1, "regression", std::move(t), 1);
}

/// Least-squares minimizer of mean 1/2 (w.x + b - t)^2 over the given rows,
/// via the normal equations on the augmented design [x, 1]. Returned in the
/// MLP layout (weights then bias).
inline cdu::Vec64 least_squares(const cdu::Dataset& data, const std::vector<std::size_t>& rows,
                                double ridge = 0.0) {
  const std::size_t k = data.dim() + 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  for (std::size_t r : rows) {
    Eigen::VectorXd xt(static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < data.dim(); ++j) xt(static_cast<Eigen::Index>(j)) = data.row(r)[j];
    xt(static_cast<Eigen::Index>(k - 1)) = 1.0;
    A += xt * xt.transpose();
    rhs += xt * data.target(r)[0];
  }
  A /= static_cast<double>(rows.size());
  rhs /= static_cast<double>(rows.size());
  A.diagonal().array() += ridge;
  const Eigen::VectorXd w = A.ldlt().solve(rhs);
  return cdu::Vec64(w.data(), w.data() + w.size());
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

inline double rel_err(const cdu::Vec64& a, const cdu::Vec64& b) {
  return cdu::distance2(a, b) / std::max(cdu::norm2(b), 1e-300);
}

}  // namespace testutil
