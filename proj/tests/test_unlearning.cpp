#include <doctest.h>

#include <cmath>

#include "cdu/errors.hpp"
#include "cdu/manifest.hpp"
#include "cdu/unlearning.hpp"
#include "test_util.hpp"

using namespace cdu;

namespace {

IndexedHvp diag_hvp(Vec64 diag) {
  return [diag](std::size_t, const Vec64& u) {
    Vec64 o(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) o[i] = diag[i] * u[i];
    return o;
  };
}

UnlearnConfig reference_cfg() {
  UnlearnConfig c;
  c.C = 10;
  c.M = 1;
  c.L = 1;
  c.lambda = 1000;
  c.lambda_min = 0;
  c.rho = 0.05;
  return c;
}

struct Quadratic {
  Dataset data;
  MlpSpec spec{{3, 1}, Activation::kTanh, LossKind::kSquaredError};
  TrainedModel w_star;
};

// Linear least squares with w* the exact full-data minimizer.
Quadratic quadratic(std::size_t n, std::uint64_t seed) {
  auto data = testutil::regression_data(n, 3, 0.3, seed);
  MlpSpec spec({3, 1}, Activation::kTanh, LossKind::kSquaredError);
  auto w = testutil::least_squares(data, testutil::all_rows(n));
  auto model = wrap_model(spec, data, ParamVector(spec, w), 20.0);
  return {std::move(data), spec, std::move(model)};
}

}  // namespace

TEST_CASE("lissa on a diagonal operator") {
  const Vec64 v{1, 1};
  const auto h = diag_hvp({1, 3});
  const auto p10 = lissa_apply(h, v, 10, 1.0, 5.0);
  CHECK(std::abs(p10[0] - 0.2 * (1 - std::pow(0.6, 11)) / 0.4) <= 1e-12);
  CHECK(std::abs(p10[0] - 0.498186) <= 1e-6);
  CHECK(std::abs(p10[1] - 0.2 * (1 - std::pow(0.2, 11)) / 0.8) <= 1e-12);
  const auto big = lissa_apply(h, v, 200, 1.0, 5.0);
  CHECK(big[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(big[1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(lissa_apply(h, Vec64{0, 0}, 10, 1.0, 5.0) == Vec64{0, 0});
  CHECK(lissa_apply(h, v, 0, 1.0, 5.0) == Vec64{0.2, 0.2});
  CHECK_THROWS_AS(lissa_apply(diag_hvp({1, 300}), v, 2000, 1.0, 5.0), NumericalFailure);
}

TEST_CASE("bound arithmetic") {
  UnlearnConfig c = reference_cfg();
  c.lambda = 1;
  CHECK(bound_basic(c) == doctest::Approx(220.0).epsilon(1e-15));
  c.lambda = 1e4;
  CHECK(std::abs(bound_basic(c) - 2 * c.C) < 2 * c.C * c.M * c.C / 1e4 + 1e-12);
  c = reference_cfg();
  const double root = std::sqrt(std::log(100 / 0.05));
  const double eff = 2 * 10.0 * (10.0 + 1000) / 1000 + (32 * root / 1000 + 0.125) * 10;
  CHECK(std::abs(bound_efficient(c, 100) - eff) <= 1e-9);
  CHECK(std::abs(bound_practical(c, 100, 0.0) - bound_efficient(c, 100)) <= 1e-12);
  const double prac1 = (20200.0 + 1) / 1000 + (16 * root / 1000 + 1.0 / 16) * 21;
  CHECK(std::abs(bound_practical(c, 100, 1.0) - prac1) <= 1e-9);
  UnlearnConfig z = c;
  z.L = 0;
  z.M = 0;
  CHECK(bound_practical(z, 100, 0.0) == doctest::Approx(2 * 10.0 * 1000 / 1000));
  CHECK(bound_efficient(z, 100) == bound_basic(z));
  UnlearnConfig zc = c;
  zc.C = 0;
  CHECK(bound_basic(zc) == 0.0);
  UnlearnConfig rho2 = c;
  rho2.rho = 0.2;
  CHECK(bound_efficient(rho2, 100) < bound_efficient(c, 100));
  UnlearnConfig bad = c;
  bad.lambda = 0;
  CHECK_THROWS_AS(bound_basic(bad), InvalidArgument);
  CHECK(bound_convex(1, 10, 1) == 200.0);
  CHECK(bound_convex(0, 10, 1) == 0.0);
  CHECK_THROWS_AS(bound_convex(1, 10, 0), InvalidArgument);
  for (double lam : {0.5, 1.0, 10.0}) {
    UnlearnConfig k = c;
    k.lambda = lam;
    CHECK(bound_convex(k.M, k.C, lam + k.lambda_min) <= bound_basic(k));
  }
}

TEST_CASE("bound monotonicity on grids") {
  UnlearnConfig c = reference_cfg();
  double prev_b = 1e300, prev_p = 1e300;
  for (int i = 0; i < 20; ++i) {
    c.lambda = std::pow(10.0, -1 + 0.25 * i);
    CHECK(bound_basic(c) <= prev_b);
    CHECK(bound_practical(c, 500, 0.3) <= prev_p);
    prev_b = bound_basic(c);
    prev_p = bound_practical(c, 500, 0.3);
  }
  c = reference_cfg();
  prev_b = prev_p = -1;
  for (int i = 0; i < 20; ++i) {
    c.C = 0.5 + i;
    CHECK(bound_basic(c) >= prev_b);
    CHECK(bound_practical(c, 500, 0.3) >= prev_p);
    prev_b = bound_basic(c);
    prev_p = bound_practical(c, 500, 0.3);
  }
  c = reference_cfg();
  prev_p = -1;
  for (int i = 0; i < 20; ++i) {
    CHECK(bound_practical(c, 500, 0.1 * i) >= prev_p);
    prev_p = bound_practical(c, 500, 0.1 * i);
  }
}

TEST_CASE("noise calibration") {
  const Budget b(0.5, 0.05);
  CHECK(std::abs(sigma_classic(1.0, b) - 2 * std::sqrt(2 * std::log(25.0))) <= 1e-12);
  CHECK(sigma_classic(0.0, b) == 0.0);
  CHECK(sigma_classic(2.0, b) == doctest::Approx(2 * sigma_classic(1.0, b)).epsilon(1e-15));
  CHECK_THROWS_AS(Budget(0.0, 0.1), InvalidArgument);
  CHECK_THROWS_AS(Budget(1.0, 1.0), InvalidArgument);

  CHECK(analytic_residual(sigma_classic(1.0, b), 1.0, b) < 0);
  const double sa = sigma_analytic(1.0, b);
  CHECK(sa < sigma_classic(1.0, b));
  CHECK(analytic_residual(sa, 1.0, b) <= 0);
  CHECK(analytic_residual(sa * (1 - 1e-6), 1.0, b) > 0);
  CHECK(std::abs(analytic_residual(sa, 1.0, b)) <= 1e-9);
  CHECK(analytic_residual(1e9, 1.0, b) <= 0);
  CHECK_THROWS_AS(sigma_analytic(0.0, b), InvalidArgument);

  for (double eps : {0.1, 0.5, 1.0, 3.0, 10.0}) {
    for (double del : {1e-6, 1e-4, 1e-2, 0.1, 0.3}) {
      for (double D : {0.1, 1.0, 10.0}) {
        const Budget bb(eps, del);
        const double s = sigma_analytic(D, bb);
        if (eps < 1) CHECK(s <= sigma_classic(D, bb));
        CHECK(std::abs(analytic_residual(s, D, bb)) <= 1e-9);
        CHECK(implied_epsilon(s, D, del, Mechanism::kAnalytic) == doctest::Approx(eps).epsilon(1e-6));
      }
    }
  }
  CHECK(implied_epsilon(sigma_classic(2.0, b), 2.0, 0.05, Mechanism::kClassic) == doctest::Approx(0.5));
  CHECK(group_budget(Budget(0.5, 0.1), 3).epsilon == 1.5);
  CHECK(group_budget(Budget(0.5, 0.1), 3).delta == 0.1);
  CHECK(group_budget(Budget(0.5, 0.1), 1).epsilon == 0.5);
  CHECK(group_budget(b, 4).epsilon < group_budget(b, 5).epsilon);
}

TEST_CASE("certify") {
  MlpSpec s({3, 1}, Activation::kTanh, LossKind::kSquaredError);
  const ParamVector w(s, Vec64{1, 2, 3, 4});
  const SeededRng rng(5, "unlearn");
  const auto zero = certify(w, 0.0, Budget(1, 0.1), {}, rng);
  CHECK(zero.sigma == 0.0);
  CHECK(zero.w_minus.values() == w.values());
  const auto a = certify(w, 1.0, Budget(1, 0.1), {}, rng);
  const auto b = certify(w, 1.0, Budget(1, 0.1), {}, rng);
  CHECK(a.w_minus.values() == b.w_minus.values());
  CHECK(a.sigma == sigma_classic(1.0, Budget(1, 0.1)));

  MlpSpec big({9999, 1}, Activation::kTanh, LossKind::kSquaredError);
  const ParamVector wb(big, Vec64(10000, 0.5));
  const auto r = certify(wb, 1.0, Budget(1, 0.1), {}, rng);
  double chi = 0;
  for (std::size_t i = 0; i < 10000; ++i) {
    const double z = (r.w_minus[i] - r.w_tilde[i]) / r.sigma;
    chi += z * z;
  }
  // Wilson-Hilferty: (chi/k)^(1/3) ~ N(1 - 2/(9k), 2/(9k)); 99.9% two-sided z = 3.2905.
  const double k = 10000, m = 1 - 2 / (9 * k), sd = std::sqrt(2 / (9 * k));
  const double lo = k * std::pow(m - 3.2905 * sd, 3), hi = k * std::pow(m + 3.2905 * sd, 3);
  CHECK(chi >= lo);
  CHECK(chi <= hi);
}

TEST_CASE("newton estimates on least squares") {
  auto q = quadratic(120, 3);
  const auto split = make_split(q.data, 6, 2);
  SUBCASE("exact mode with lambda 0 recovers the retained minimizer") {
    const auto w = newton_estimate_exact(q.w_star, q.data, split, 0.0);
    CHECK(distance2(w.values(), testutil::least_squares(q.data, split.retained)) <= 1e-10);
  }
  SUBCASE("huge lambda barely moves") {
    const auto w = newton_estimate_exact(q.w_star, q.data, split, 1e12);
    CHECK(distance2(w.values(), q.w_star.w.values()) <= 1e-10);
  }
  SUBCASE("stationary on the retained set means no move") {
    const auto wr = testutil::least_squares(q.data, split.retained);
    const auto m = wrap_model(q.spec, q.data, ParamVector(q.spec, wr), 20.0);
    CHECK(distance2(newton_estimate_exact(m, q.data, split, 0.5).values(), wr) <= 1e-12);
  }
  SUBCASE("lissa converges to the exact solve") {
    UnlearnConfig c;
    c.lambda = 0.01;
    c.H = 3.0;
    c.s = 3000;
    c.hessian_batch_size = 10000;
    SeededRng rng(1, "h");
    const auto approx = newton_estimate(q.w_star, q.data, split, c, rng);
    const auto exact = newton_estimate_exact(q.w_star, q.data, split, 0.01);
    CHECK(testutil::rel_err(approx.values(), exact.values()) <= 1e-8);
  }
  SUBCASE("singular system") {
    std::vector<double> x;
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) {
      x.insert(x.end(), {0.1 * i, 0.1 * i, 0.1 * i});
      t.push_back(i);
    }
    Dataset d(x, 3, std::vector<int>(10, 0), 1, "dup", t, 1);
    const auto m = wrap_model(q.spec, d, ParamVector(q.spec, Vec64{1, 1, 1, 0}), 20.0);
    CHECK_THROWS_AS(newton_estimate_exact(m, d, make_split(d, 2, 1), 0.0), NumericalFailure);
  }
}

TEST_CASE("zero unlearned gradient leaves w* unchanged") {
  MlpSpec s({2, 1}, Activation::kTanh, LossKind::kSquaredError);
  std::vector<double> x, t;
  SeededRng r(2, "fit");
  for (int i = 0; i < 20; ++i) {
    const double a = r.uniform(), b = r.uniform();
    x.insert(x.end(), {a, b});
    t.push_back(2 * a - b + 0.5);
  }
  Dataset d(x, 2, std::vector<int>(20, 0), 1, "exact", t, 1);
  const auto m = wrap_model(s, d, ParamVector(s, Vec64{2, -1, 0.5}), 10.0);
  UnlearnConfig c;
  c.s = 50;
  SeededRng rng(1, "h");
  const auto w = newton_estimate(m, d, make_split(d, 3, 4), c, rng);
  CHECK(w.values() == m.w.values());
}

TEST_CASE("leave-one-out of a duplicated sample") {
  auto base = testutil::regression_data(60, 3, 0.3, 9);
  std::vector<double> x = base.features(), t = base.targets();
  x.insert(x.end(), base.row(7), base.row(7) + 3);
  t.push_back(base.target(7)[0]);
  Dataset d(x, 3, std::vector<int>(61, 0), 1, "dup", t, 1);
  MlpSpec s({3, 1}, Activation::kTanh, LossKind::kSquaredError);
  const auto m = wrap_model(s, d, ParamVector(s, testutil::least_squares(d, testutil::all_rows(61))), 20.0);
  const auto split = split_from_indices(61, {60});
  UnlearnConfig c;
  c.lambda = 1e-6;
  c.H = 3.0;
  c.s = 20000;
  c.hessian_batch_size = 1000;
  SeededRng rng(1, "h");
  const auto w = newton_estimate(m, d, split, c, rng);
  CHECK(distance2(w.values(), testutil::least_squares(d, split.retained)) <= 1e-4);
}

TEST_CASE("unlearn_single end to end on a quadratic") {
  auto q = quadratic(200, 4);
  const auto split = make_split(q.data, 4, 1);
  UnlearnConfig c;
  c.lambda = 0.05;
  c.H = 3.0;
  c.s = 500;
  c.C = 20.0;
  c.M = 0;
  const SeededRng rng(7, kUnlearnRootLabel);
  const auto r = unlearn_single(q.w_star, q.data, split, c, Budget(1.0, 0.1), {}, rng);
  const auto retrained = testutil::least_squares(q.data, split.retained);
  CHECK(distance2(r.w_tilde.values(), retrained) <= r.delta_bound);
  CHECK(r.delta_bound == r.bounds.practical);
  const auto r2 = unlearn_single(q.w_star, q.data, split, c, Budget(2.0, 0.1), {}, rng);
  CHECK(r2.sigma == doctest::Approx(r.sigma / 2).epsilon(1e-15));
  CHECK(r2.w_tilde.values() == r.w_tilde.values());

  std::vector<std::size_t> most = testutil::all_rows(199);
  const auto edge = unlearn_single(q.w_star, q.data, split_from_indices(200, most), c, Budget(1, 0.1), {}, rng);
  CHECK(edge.boundary_flag);
  CHECK(edge.update_ratio == 199.0);

  CertifyOptions over;
  over.sigma_override = 0.25;
  const auto o = unlearn_single(q.w_star, q.data, split, c, Budget(1.0, 0.1), over, rng);
  CHECK(o.sigma == 0.25);
  CHECK(o.sigma_overridden);
}

TEST_CASE("sequential unlearning") {
  auto q = quadratic(100, 6);
  UnlearnConfig c;
  c.lambda = 0.05;
  c.H = 3.0;
  c.s = 300;
  c.C = 20.0;
  c.hessian_batch_size = 1000;
  const SeededRng rng(3, kUnlearnRootLabel);
  const Budget b(0.5, 0.1);
  const std::vector<std::size_t> req{3, 17, 42, 80};
  SUBCASE("k = 1 at a stationary point matches single-batch unlearning") {
    const auto seq = unlearn_sequential(q.w_star, q.data, {req}, c, b, {}, false, rng);
    const auto single = unlearn_single(q.w_star, q.data, split_from_indices(100, req), c, b, {}, rng);
    CHECK(distance2(seq.w_tilde.values(), single.w_tilde.values()) <= 1e-8);
    CHECK(seq.trace.size() == 1);
  }
  SUBCASE("no requests is a no-op estimate with noise") {
    const auto r = unlearn_sequential(q.w_star, q.data, {}, c, b, {}, false, rng);
    CHECK(r.w_tilde.values() == q.w_star.w.values());
    CHECK(r.w_minus.values() != q.w_star.w.values());
    CHECK(r.delta_bound > 0);
  }
  SUBCASE("overlap and range errors") {
    try {
      unlearn_sequential(q.w_star, q.data, {{1, 2}, {5}, {2, 9}}, c, b, {}, false, rng);
      FAIL("expected overlap error");
    } catch (const InvalidArgument& e) {
      CHECK(std::string(e.what()).find("requests 0 and 2") != std::string::npos);
    }
    CHECK_THROWS_AS(unlearn_sequential(q.w_star, q.data, {{100}}, c, b, {}, false, rng), InvalidArgument);
  }
  SUBCASE("group privacy scales epsilon by k") {
    std::vector<std::vector<std::size_t>> reqs;
    for (std::size_t i = 0; i < 10; ++i) reqs.push_back({i, i + 50});
    const auto r = unlearn_sequential(q.w_star, q.data, reqs, c, b, {}, true, rng);
    CHECK(r.certified_budget.epsilon == doctest::Approx(5.0));
    CHECK(r.trace.size() == 10);
    CHECK(r.n_unlearned == 20);
    const auto post_hoc = unlearn_sequential(q.w_star, q.data, reqs, c, b, {}, false, rng);
    CHECK(post_hoc.certified_budget.epsilon == 0.5);
  }
}

TEST_CASE("certificate manifests replay bit-identically") {
  auto q = quadratic(80, 8);
  const auto split = make_split(q.data, 4, 3);
  UnlearnConfig c;
  c.lambda = 0.1;
  c.H = 3.0;
  c.s = 100;
  c.C = 20.0;
  const SeededRng rng(99, kUnlearnRootLabel);
  for (auto mech : {Mechanism::kClassic, Mechanism::kAnalytic}) {
    CertifyOptions opts;
    opts.mechanism = mech;
    const auto r = unlearn_single(q.w_star, q.data, split, c, Budget(1.0, 0.05), opts, rng);
    CertificateContext ctx;
    ctx.command = "unlearn";
    ctx.checkpoint_hash = params_hash(q.spec, q.w_star.w);
    ctx.dataset_hash = q.data.content_hash();
    ctx.requests = {split.unlearn};
    ctx.cfg = c;
    const Json m = certificate_manifest(r, q.spec, ctx);
    const Json parsed = Json::parse(m.dump());
    const auto again = replay_certificate(parsed, q.w_star, q.data, nullptr);
    CHECK(replay_matches(parsed, again, q.spec));
    CHECK(again.w_minus.values() == r.w_minus.values());
    CHECK_THROWS_AS(replay_certificate(parsed, q.w_star, testutil::regression_data(80, 3, 0.3, 9), nullptr),
                    IntegrityError);
  }
}
