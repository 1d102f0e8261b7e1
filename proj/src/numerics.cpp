#include "cdu/numerics.hpp"

#include <cmath>
#include <numbers>

#include "cdu/errors.hpp"

namespace cdu {

namespace {

constexpr std::size_t kPairwiseLeaf = 8;

template <class Term>
double pairwise(std::size_t lo, std::size_t hi, const Term& term) {
  const std::size_t n = hi - lo;
  if (n <= kPairwiseLeaf) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    return s;
  }
  const std::size_t mid = lo + n / 2;
  return pairwise(lo, mid, term) + pairwise(mid, hi, term);
}

void check_same_size(std::span<const double> a, std::span<const double> b,
                     const char* op) {
  if (a.size() != b.size()) {
    throw InvalidArgument(std::string(op) + ": dimension mismatch (" +
                          std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
}

}  // namespace

double pairwise_sum(std::span<const double> xs) {
  return pairwise(0, xs.size(), [&](std::size_t i) { return xs[i]; });
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_same_size(a, b, "dot");
  return pairwise(0, a.size(), [&](std::size_t i) { return a[i] * b[i]; });
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double distance2(std::span<const double> a, std::span<const double> b) {
  check_same_size(a, b, "distance2");
  return std::sqrt(pairwise(0, a.size(), [&](std::size_t i) {
    const double d = a[i] - b[i];
    return d * d;
  }));
}

bool all_finite(std::span<const double> a) {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same_size(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vec64 scaled(std::span<const double> x, double alpha) {
  Vec64 out(x.begin(), x.end());
  for (double& v : out) v *= alpha;
  return out;
}

Vec64 add(std::span<const double> a, std::span<const double> b) {
  check_same_size(a, b, "add");
  Vec64 out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Vec64 sub(std::span<const double> a, std::span<const double> b) {
  check_same_size(a, b, "sub");
  Vec64 out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Vec64 sample_gaussian_vector(std::size_t dim, double sigma, SeededRng& rng) {
  require(dim > 0, "sample_gaussian_vector: dim must be positive");
  require(sigma >= 0.0 && std::isfinite(sigma),
          "sample_gaussian_vector: sigma must be finite and nonnegative");
  Vec64 out(dim, 0.0);
  if (sigma == 0.0) return out;
  for (double& v : out) v = sigma * rng.normal();
  return out;
}

Vec64 project_to_l2_ball(std::span<const double> w, double C) {
  require(C > 0.0, "project_to_l2_ball: C must be positive");
  require(all_finite(w), "project_to_l2_ball: nonfinite input");
  const double nrm = norm2(w);
  Vec64 out(w.begin(), w.end());
  if (nrm <= C) return out;
  double scale = C / nrm;
  for (;;) {
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] * scale;
    if (norm2(out) <= C) return out;
    scale = std::nextafter(scale, 0.0);
  }
}

double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double power_iteration_opnorm(const LinearOperator& matvec, std::size_t dim,
                              std::size_t iters, SeededRng& rng) {
  require(dim > 0, "power_iteration_opnorm: dim must be positive");
  require(iters > 0, "power_iteration_opnorm: iters must be positive");
  Vec64 v = sample_gaussian_vector(dim, 1.0, rng);
  double nv = norm2(v);
  for (double& x : v) x /= nv;
  double estimate = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    Vec64 av = matvec(v);
    if (av.size() != dim) {
      throw InvalidArgument("power_iteration_opnorm: operator changed dimension");
    }
    if (!all_finite(av)) {
      throw NumericalFailure("power_iteration_opnorm: operator returned nonfinite values at iteration " +
                             std::to_string(it));
    }
    estimate = norm2(av);
    if (estimate == 0.0) return 0.0;
    for (std::size_t i = 0; i < dim; ++i) v[i] = av[i] / estimate;
  }
  return estimate;
}

Eigen::Map<const Eigen::VectorXd> as_eigen(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(),
                                           static_cast<Eigen::Index>(v.size()));
}

Vec64 from_eigen(const Eigen::VectorXd& v) { return Vec64(v.data(), v.data() + v.size()); }

}  // namespace cdu
