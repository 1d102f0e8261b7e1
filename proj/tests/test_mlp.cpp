#include <doctest.h>

#include <cmath>

#include "cdu/errors.hpp"
#include "cdu/mlp.hpp"
#include "test_util.hpp"

using namespace cdu;
using testutil::rel_err;

namespace {

Vec64 fd_grad(const MlpSpec& spec, const Vec64& w, const Batch& b, double h) {
  Vec64 g(w.size());
  Vec64 wp = w, wm = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    wp[i] = w[i] + h;
    wm[i] = w[i] - h;
    g[i] = (loss(spec, ParamVector(spec, wp), b) - loss(spec, ParamVector(spec, wm), b)) / (2 * h);
    wp[i] = wm[i] = w[i];
  }
  return g;
}

Vec64 fd_hvp(const MlpSpec& spec, const Vec64& w, const Batch& b, const Vec64& v, double eps) {
  Vec64 wp = w, wm = w;
  axpy(eps, v, wp);
  axpy(-eps, v, wm);
  return scaled(sub(grad(spec, ParamVector(spec, wp), b), grad(spec, ParamVector(spec, wm), b)),
                1.0 / (2 * eps));
}

}  // namespace

TEST_CASE("spec dimensions and layout") {
  MlpSpec s({4, 3, 2}, Activation::kTanh, LossKind::kSoftmaxCrossEntropy);
  CHECK(s.param_dim() == (4 + 1) * 3 + (3 + 1) * 2);
  CHECK(s.weight_offset(1) == 0);
  CHECK(s.bias_offset(1) == 12);
  CHECK(s.weight_offset(2) == 15);
  CHECK_THROWS_AS(MlpSpec({4}, Activation::kTanh, LossKind::kSquaredError), InvalidArgument);
  SeededRng r(1, "init");
  const auto w = init_params(s, r);
  CHECK(flatten(s, unflatten(s, w)).values() == w.values());
  CHECK_THROWS_AS(ParamVector(s, Vec64(5, 0.0)), InvalidArgument);
}

TEST_CASE("loss closed forms") {
  SUBCASE("squared error of zero net on zero targets") {
    MlpSpec s({3, 2}, Activation::kTanh, LossKind::kSquaredError);
    Dataset d(std::vector<double>(12, 0.25), 3, {0, 0, 0, 0}, 1, "zeros", std::vector<double>(8, 0.0), 2);
    CHECK(loss(s, ParamVector(s, Vec64(s.param_dim(), 0.0)), Batch::all(d)) == 0.0);
  }
  SUBCASE("uniform logits give ln k") {
    MlpSpec s({3, 4, 5}, Activation::kSoftplus, LossKind::kSoftmaxCrossEntropy);
    const auto d = synth_blobs(20, 3, 5, 1.0, 1);
    CHECK(loss(s, ParamVector(s, Vec64(s.param_dim(), 0.0)), Batch::all(d)) ==
          doctest::Approx(std::log(5.0)).epsilon(1e-14));
  }
}

TEST_CASE("averaging identities for loss and grad") {
  MlpSpec s({5, 6, 3}, Activation::kTanh, LossKind::kSoftmaxCrossEntropy);
  const auto d = synth_blobs(60, 5, 3, 2.0, 8);
  SeededRng r(2, "init");
  const auto w = init_params(s, r);
  const auto plan = make_split(d, 9, 4);
  const double n = 60, nu = 9;
  const double lhs = loss(s, w, Batch::all(d));
  const double rhs = nu / n * loss(s, w, Batch::of(d, plan.unlearn)) +
                     (n - nu) / n * loss(s, w, Batch::of(d, plan.retained));
  CHECK(std::abs(lhs - rhs) <= 1e-12);
  const auto g = grad(s, w, Batch::all(d));
  const auto gu = grad(s, w, Batch::of(d, plan.unlearn));
  const auto gr = grad(s, w, Batch::of(d, plan.retained));
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i] - (nu / n * gu[i] + (n - nu) / n * gr[i])) <= 1e-12);
}

TEST_CASE("grad and hvp against finite differences") {
  for (auto act : {Activation::kTanh, Activation::kSoftplus}) {
    for (auto lk : {LossKind::kSoftmaxCrossEntropy, LossKind::kSquaredError}) {
      MlpSpec s({4, 5, 3, 3}, act, lk);
      const auto d = synth_blobs(25, 4, 3, 2.0, 13);
      SeededRng r(3, "fd");
      for (int trial = 0; trial < 5; ++trial) {
        const Vec64 w = testutil::random_vec(s.param_dim(), 0.8, r);
        const Vec64 v = testutil::random_vec(s.param_dim(), 1.0, r);
        const Batch b = Batch::all(d);
        const auto g = grad(s, ParamVector(s, w), b);
        CHECK(rel_err(g, fd_grad(s, w, b, 1e-5)) <= 1e-5);
        const auto hv = hvp(s, ParamVector(s, w), b, v);
        CHECK(rel_err(hv, fd_hvp(s, w, b, v, 1e-4)) <= 1e-4);
      }
    }
  }
}

TEST_CASE("hvp linearity and zero direction") {
  MlpSpec s({4, 6, 3}, Activation::kTanh, LossKind::kSoftmaxCrossEntropy);
  const auto d = synth_blobs(30, 4, 3, 2.0, 2);
  SeededRng r(4, "lin");
  const ParamVector w(s, testutil::random_vec(s.param_dim(), 0.5, r));
  const Vec64 u = testutil::random_vec(s.param_dim(), 1.0, r);
  const Vec64 v = testutil::random_vec(s.param_dim(), 1.0, r);
  const Batch b = Batch::all(d);
  const auto lhs = hvp(s, w, b, add(scaled(u, 2.5), scaled(v, -0.75)));
  const auto rhs = add(scaled(hvp(s, w, b, u), 2.5), scaled(hvp(s, w, b, v), -0.75));
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - rhs[i]) <= 1e-10);
  for (double x : hvp(s, w, b, Vec64(s.param_dim(), 0.0))) CHECK(x == 0.0);
  CHECK_THROWS_AS(hvp(s, w, b, Vec64(3, 1.0)), InvalidArgument);
}

TEST_CASE("quadratic model has the design Gram matrix as Hessian") {
  const auto d = testutil::regression_data(40, 3, 0.1, 5);
  MlpSpec s({3, 1}, Activation::kTanh, LossKind::kSquaredError);
  SeededRng r(5, "q");
  const ParamVector w(s, testutil::random_vec(4, 1.0, r));
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(4, 4);
  for (std::size_t i = 0; i < d.size(); ++i) {
    Eigen::Vector4d x(d.row(i)[0], d.row(i)[1], d.row(i)[2], 1.0);
    A += x * x.transpose() / 40.0;
  }
  const Mat64 H = full_hessian(s, w, Batch::all(d));
  CHECK((H - A).cwiseAbs().maxCoeff() <= 1e-13);
  const Vec64 v{0.3, -1.0, 2.0, 0.5};
  const auto hv = hvp(s, w, Batch::all(d), v);
  const Eigen::VectorXd av = A * as_eigen(v);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(hv[i] - av(i)) <= 1e-13);
}

TEST_CASE("full_hessian symmetry, column assembly and capability limit") {
  MlpSpec s({4, 5, 3}, Activation::kSoftplus, LossKind::kSoftmaxCrossEntropy);
  const auto d = synth_blobs(30, 4, 3, 2.0, 6);
  SeededRng r(6, "fh");
  const ParamVector w(s, testutil::random_vec(s.param_dim(), 0.7, r));
  const Batch b = Batch::all(d);
  const Mat64 H = full_hessian(s, w, b);
  CHECK((H - H.transpose()).cwiseAbs().maxCoeff() <= 1e-8 * H.norm());
  for (int k = 0; k < 10; ++k) {
    const Vec64 v = testutil::random_vec(s.param_dim(), 1.0, r);
    const Eigen::VectorXd hv = H * as_eigen(v);
    const auto direct = hvp(s, w, b, v);
    for (std::size_t i = 0; i < direct.size(); ++i) CHECK(std::abs(direct[i] - hv(static_cast<Eigen::Index>(i))) <= 1e-10);
  }
  CHECK_THROWS_AS(full_hessian(s, w, b, 10), CapabilityExceeded);
  Eigen::SelfAdjointEigenSolver<Mat64> es(0.5 * (H + H.transpose()));
  CHECK(es.info() == Eigen::Success);
}

TEST_CASE("softplus squared-error Hessian has finite spectral norm") {
  MlpSpec s({3, 6, 2}, Activation::kSoftplus, LossKind::kSquaredError);
  const auto d = synth_blobs(40, 3, 2, 3.0, 7);
  SeededRng r(7, "sp");
  const ParamVector w(s, testutil::random_vec(s.param_dim(), 0.5, r));
  const double nrm = power_iteration_opnorm(
      [&](const Vec64& v) { return hvp(s, w, Batch::all(d), v); }, s.param_dim(), 50, r);
  CHECK(std::isfinite(nrm));
  CHECK(nrm > 0);
}

TEST_CASE("blocked kernels are policy-invariant and match the reference") {
  MlpSpec s({6, 8, 4}, Activation::kTanh, LossKind::kSoftmaxCrossEntropy);
  const auto d = synth_blobs(333, 6, 4, 2.0, 9);
  SeededRng r(8, "par");
  const ParamVector w(s, testutil::random_vec(s.param_dim(), 0.5, r));
  const Vec64 v = testutil::random_vec(s.param_dim(), 1.0, r);
  const Batch b = Batch::all(d);
  CHECK(grad(s, w, b, ExecPolicy::kParallel) == grad(s, w, b, ExecPolicy::kSerial));
  CHECK(hvp(s, w, b, v, ExecPolicy::kParallel) == hvp(s, w, b, v, ExecPolicy::kSerial));
  CHECK(loss(s, w, b, ExecPolicy::kParallel) == loss(s, w, b, ExecPolicy::kSerial));
  CHECK(rel_err(grad(s, w, b), reference::grad(s, w, b)) <= 1e-13);
  CHECK(rel_err(hvp(s, w, b, v), reference::hvp(s, w, b, v)) <= 1e-13);
  CHECK(std::abs(loss(s, w, b) - reference::loss(s, w, b)) <= 1e-13);
}

TEST_CASE("shape checks") {
  MlpSpec s({3, 2}, Activation::kTanh, LossKind::kSoftmaxCrossEntropy);
  const auto d = synth_blobs(10, 4, 2, 1.0, 1);
  const ParamVector w(s, Vec64(s.param_dim(), 0.1));
  CHECK_THROWS_AS(loss(s, w, Batch::all(d)), InvalidArgument);
  const auto d3 = synth_blobs(10, 3, 2, 1.0, 1);
  CHECK_THROWS_AS(loss(s, w, Batch{&d3, {}}), InvalidArgument);
  CHECK_THROWS_AS(Batch::of(d3, {11}), InvalidArgument);
}

TEST_CASE("predict_metrics") {
  // Two features, logits z = (x0, x1): the prediction is the larger feature.
  MlpSpec s({2, 2}, Activation::kTanh, LossKind::kSoftmaxCrossEntropy);
  const ParamVector ident(s, Vec64{1, 0, 0, 1, 0, 0});
  Dataset d({0.9, 0.1, 0.2, 0.8, 0.7, 0.3, 0.1, 0.6, 0.6, 0.4, 0.2, 0.9}, 2, {0, 1, 0, 1, 1, 0}, 2, "toy");
  // Hand count: predictions 0,1,0,1,0,1 vs labels 0,1,0,1,1,0 -> 4 correct.
  auto m = predict_metrics(s, ident, Batch::all(d));
  CHECK(m.accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(m.micro_f1 == doctest::Approx(4.0 / 6.0));
  m = predict_metrics(s, ident, Batch::of(d, {0, 1, 2, 3}));
  CHECK(m.accuracy == 1.0);
  CHECK(m.micro_f1 == 1.0);
  const ParamVector constant(s, Vec64{0, 0, 0, 0, 1, 0});
  CHECK(predict_metrics(s, constant, Batch::of(d, {0, 1, 2, 3})).micro_f1 == 0.5);
  MlpSpec reg({2, 1}, Activation::kTanh, LossKind::kSquaredError);
  CHECK_THROWS_AS(predict_metrics(reg, ParamVector(reg, Vec64(3, 0.0)), Batch::all(d)), InvalidArgument);
}
