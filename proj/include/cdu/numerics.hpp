#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cdu/rng.hpp"

namespace cdu {

/// Dense real vector. All reductions over it go through pairwise_sum so the
/// summation order is fixed and results are bit-identical across runs.
using Vec64 = std::vector<double>;

/// Dense real matrix, used only at oracle scale (full Hessians, solves).
using Mat64 = Eigen::MatrixXd;

using LinearOperator = std::function<Vec64(const Vec64&)>;

/// Pairwise (cascade) summation with a fixed split: blocks of up to 8 are
/// summed left to right, larger ranges are halved at n/2.
double pairwise_sum(std::span<const double> xs);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double distance2(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> a);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vec64 scaled(std::span<const double> x, double alpha);
Vec64 add(std::span<const double> a, std::span<const double> b);
Vec64 sub(std::span<const double> a, std::span<const double> b);

/// dim i.i.d. N(0, sigma^2) draws. sigma = 0 yields the zero vector without
/// consuming the stream.
Vec64 sample_gaussian_vector(std::size_t dim, double sigma, SeededRng& rng);

/// Euclidean projection onto {w : ||w||_2 <= C}. The returned vector's
/// computed norm never exceeds C.
Vec64 project_to_l2_ball(std::span<const double> w, double C);

/// Standard normal CDF via erfc.
double std_normal_cdf(double x);

/// Power iteration on a symmetric operator. Returns ||A v|| for the final unit
/// iterate v, which is a lower estimate of the spectral norm.
double power_iteration_opnorm(const LinearOperator& matvec, std::size_t dim,
                              std::size_t iters, SeededRng& rng);

Eigen::Map<const Eigen::VectorXd> as_eigen(std::span<const double> v);
Vec64 from_eigen(const Eigen::VectorXd& v);

}  // namespace cdu
