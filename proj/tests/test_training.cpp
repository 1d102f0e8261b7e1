#include <doctest.h>

#include <fstream>

#include "cdu/errors.hpp"
#include "cdu/io.hpp"
#include "cdu/training.hpp"
#include "test_util.hpp"

using namespace cdu;

namespace {

// y = 2x on x symmetric around zero, so the optimal bias is 0 under any
// norm bound and the constrained optimum is (min(2, C), 0).
Dataset line_data() {
  std::vector<double> x, t;
  for (int i = -10; i <= 10; ++i) {
    x.push_back(i / 10.0);
    t.push_back(2.0 * i / 10.0);
  }
  const std::size_t n = x.size();
  return Dataset(std::move(x), 1, std::vector<int>(n, 0), 1, "line", std::move(t), 1);
}

TrainConfig line_cfg(double C) {
  TrainConfig c;
  c.learning_rate = 0.1;
  c.epochs = 400;
  c.batch_size = 21;
  c.weight_decay = 0.0;
  c.C = C;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("pgd solves 1-d least squares") {
  MlpSpec s({1, 1}, Activation::kTanh, LossKind::kSquaredError);
  const auto d = line_data();
  const auto free = train_pgd(s, d, line_cfg(10.0));
  CHECK(std::abs(free.w[0] - 2.0) <= 1e-3);
  CHECK(std::abs(free.w[1]) <= 1e-3);
  const auto ball = train_pgd(s, d, line_cfg(1.0));
  CHECK(std::abs(ball.w[0] - 1.0) <= 1e-3);
  CHECK(norm2(ball.w.values()) <= 1.0);
}

TEST_CASE("pgd invariants") {
  MlpSpec s({5, 8, 3}, Activation::kTanh, LossKind::kSoftmaxCrossEntropy);
  const auto d = synth_blobs(200, 5, 3, 3.0, 1);
  TrainConfig c;
  c.epochs = 10;
  c.batch_size = 32;
  c.C = 2.0;
  c.learning_rate = 0.1;
  c.seed = 11;
  const auto m = train_pgd(s, d, c);
  CHECK(norm2(m.w.values()) <= 2.0);
  CHECK(m.loss_trace.size() == 11);
  CHECK(m.loss_trace.back() <= m.loss_trace.front());
  CHECK(m.residual_grad_norm == norm2(grad(s, m.w, Batch::all(d))));
  const auto again = train_pgd(s, d, c);
  CHECK(again.w.values() == m.w.values());

  PgdTrainer t(s, d, c, [&] { SeededRng r(11, "init"); return init_params(s, r); }());
  for (int e = 0; e < 5; ++e) {
    t.run_epoch();
    CHECK(norm2(t.params().values()) <= 2.0);
  }

  c.epochs = 0;
  const auto zero = train_pgd(s, d, c);
  SeededRng r(11, "init");
  CHECK(zero.w.values() == project_to_l2_ball(init_params(s, r).values(), 2.0));
}

TEST_CASE("divergence is reported with its epoch") {
  MlpSpec s({1, 1}, Activation::kTanh, LossKind::kSquaredError);
  auto c = line_cfg(1e300);
  c.learning_rate = 1e6;
  c.batch_size = 3;
  try {
    train_pgd(s, line_data(), c);
    FAIL("expected divergence");
  } catch (const NumericalFailure& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("retrain oracle") {
  MlpSpec s({4, 6, 3}, Activation::kTanh, LossKind::kSoftmaxCrossEntropy);
  const auto d = synth_blobs(90, 4, 3, 3.0, 2);
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 16;
  c.C = 5.0;
  c.seed = 4;
  SplitPlan full;
  full.retained = testutil::all_rows(d.size());
  CHECK(retrain_oracle(s, d, full, c).w.values() == train_pgd(s, d, c).w.values());

  const auto reg = testutil::regression_data(80, 2, 0.2, 3);
  MlpSpec q({2, 1}, Activation::kTanh, LossKind::kSquaredError);
  const auto plan = make_split(reg, 8, 5);
  TrainConfig qc;
  qc.learning_rate = 0.5;
  qc.epochs = 3000;
  qc.batch_size = 1000;
  qc.weight_decay = 0.0;
  qc.C = 50.0;
  qc.seed = 1;
  const auto m = retrain_oracle(q, reg, plan, qc);
  const auto exact = testutil::least_squares(reg, plan.retained);
  CHECK(distance2(m.w.values(), exact) <= 1e-6);
  CHECK(m.residual_grad_norm <= 1e-8);
}

TEST_CASE("checkpoint round trip and integrity") {
  MlpSpec s({3, 4, 2}, Activation::kSoftplus, LossKind::kSoftmaxCrossEntropy);
  const auto d = synth_blobs(40, 3, 2, 3.0, 1);
  TrainConfig c;
  c.epochs = 3;
  c.C = 3.0;
  c.seed = 8;
  const auto m = train_pgd(s, d, c);
  const auto dir = testutil::temp_dir("ckpt");
  write_checkpoint(m, dir / "m.cuw");
  const auto back = read_checkpoint(dir / "m.cuw");
  CHECK(back.w.values() == m.w.values());
  CHECK(back.spec.layer_dims == s.layer_dims);
  CHECK(back.spec.activation == s.activation);
  CHECK(back.residual_grad_norm == m.residual_grad_norm);
  CHECK(back.dataset_hash == d.content_hash());
  verify_model(back, d);
  CHECK_THROWS_AS(verify_model(back, synth_blobs(40, 3, 2, 3.0, 2)), IntegrityError);

  const std::string bytes = read_file(dir / "m.cuw");
  CHECK(bytes.size() == 4 + 2 + 2 + 3 * 4 + 2 + s.param_dim() * 8);
  write_checkpoint(train_pgd(s, d, c), dir / "m2.cuw");
  CHECK(read_file(dir / "m2.cuw") == bytes);

  std::string bad = bytes;
  bad[0] = 'X';
  write_file_atomic(dir / "bad.cuw", bad);
  CHECK_THROWS_AS(read_checkpoint(dir / "bad.cuw"), FormatError);
  write_file_atomic(dir / "short.cuw", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(dir / "short.cuw"), FormatError);

  write_loss_trace(m, dir / "trace.csv");
  CHECK(read_file(dir / "trace.csv").rfind("epoch,loss\n0,", 0) == 0);
}
