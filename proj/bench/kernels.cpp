// Throughput of the blocked kernels under the serial and parallel execution
// policies, next to the single-accumulator reference implementations.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include "cdu/data.hpp"
#include "cdu/mlp.hpp"
#include "cdu/rng.hpp"

namespace {

struct Fixture {
  cdu::MlpSpec spec{{64, 64, 10}, cdu::Activation::kTanh, cdu::LossKind::kSoftmaxCrossEntropy};
  cdu::Dataset data;
  cdu::ParamVector w;
  cdu::Vec64 v;

  explicit Fixture(std::size_t n) : data(cdu::synth_blobs(n, 64, 10, 2.0, 1)), w(make_w()), v(make_v()) {}

  cdu::ParamVector make_w() const {
    cdu::SeededRng rng(2, "bench/init");
    return cdu::init_params(spec, rng);
  }
  cdu::Vec64 make_v() const {
    cdu::SeededRng rng(3, "bench/v");
    cdu::Vec64 out(spec.param_dim());
    for (auto& x : out) x = rng.normal();
    return out;
  }
};

const Fixture& fixture(std::size_t n) {
  static const Fixture small(256), large(4096);
  return n <= 256 ? small : large;
}

enum class Impl { kSerial, kParallel, kReference };

void BM_grad(benchmark::State& state, Impl impl) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  const auto batch = cdu::Batch::all(f.data);
  for (auto _ : state) {
    cdu::Vec64 g;
    switch (impl) {
      case Impl::kSerial: g = cdu::grad(f.spec, f.w, batch, cdu::ExecPolicy::kSerial); break;
      case Impl::kParallel: g = cdu::grad(f.spec, f.w, batch, cdu::ExecPolicy::kParallel); break;
      case Impl::kReference: g = cdu::reference::grad(f.spec, f.w, batch); break;
    }
    benchmark::DoNotOptimize(g.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}

void BM_hvp(benchmark::State& state, Impl impl) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  const auto batch = cdu::Batch::all(f.data);
  for (auto _ : state) {
    cdu::Vec64 h;
    switch (impl) {
      case Impl::kSerial: h = cdu::hvp(f.spec, f.w, batch, f.v, cdu::ExecPolicy::kSerial); break;
      case Impl::kParallel: h = cdu::hvp(f.spec, f.w, batch, f.v, cdu::ExecPolicy::kParallel); break;
      case Impl::kReference: h = cdu::reference::hvp(f.spec, f.w, batch, f.v); break;
    }
    benchmark::DoNotOptimize(h.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}

}  // namespace

BENCHMARK_CAPTURE(BM_grad, serial, Impl::kSerial)->Arg(256)->Arg(4096);
BENCHMARK_CAPTURE(BM_grad, parallel, Impl::kParallel)->Arg(256)->Arg(4096);
BENCHMARK_CAPTURE(BM_grad, reference, Impl::kReference)->Arg(256)->Arg(4096);
BENCHMARK_CAPTURE(BM_hvp, serial, Impl::kSerial)->Arg(256)->Arg(4096);
BENCHMARK_CAPTURE(BM_hvp, parallel, Impl::kParallel)->Arg(256)->Arg(4096);
BENCHMARK_CAPTURE(BM_hvp, reference, Impl::kReference)->Arg(256)->Arg(4096);

BENCHMARK_MAIN();
