#include "cdu/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "cdu/errors.hpp"

namespace cdu {

std::string to_string(Activation a) {
  return a == Activation::kTanh ? "tanh" : "softplus";
}

std::string to_string(LossKind l) {
  return l == LossKind::kSoftmaxCrossEntropy ? "softmax-cross-entropy" : "mean-squared-error";
}

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "softplus") return Activation::kSoftplus;
  throw InvalidArgument("unknown activation '" + s + "' (expected tanh or softplus)");
}

LossKind parse_loss(const std::string& s) {
  if (s == "softmax-cross-entropy" || s == "cross-entropy") return LossKind::kSoftmaxCrossEntropy;
  if (s == "mean-squared-error" || s == "mse") return LossKind::kSquaredError;
  throw InvalidArgument("unknown loss '" + s +
                        "' (expected softmax-cross-entropy or mean-squared-error)");
}

MlpSpec::MlpSpec(std::vector<std::size_t> dims, Activation act, LossKind l)
    : layer_dims(std::move(dims)), activation(act), loss(l) {
  require(layer_dims.size() >= 2, "MlpSpec: need at least input and output dims");
  for (auto d : layer_dims) require(d >= 1, "MlpSpec: layer dims must be positive");
}

std::size_t MlpSpec::param_dim() const {
  std::size_t d = 0;
  for (std::size_t l = 1; l < layer_dims.size(); ++l) {
    d += (layer_dims[l - 1] + 1) * layer_dims[l];
  }
  return d;
}

std::uint64_t MlpSpec::fingerprint() const {
  Fnv1a h;
  h.u64(layer_dims.size());
  for (auto d : layer_dims) h.u64(d);
  h.u64(static_cast<std::uint64_t>(activation)).u64(static_cast<std::uint64_t>(loss));
  return h.digest();
}

std::size_t MlpSpec::weight_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 1; l < layer; ++l) off += (layer_dims[l - 1] + 1) * layer_dims[l];
  return off;
}

std::size_t MlpSpec::bias_offset(std::size_t layer) const {
  return weight_offset(layer) + layer_dims[layer - 1] * layer_dims[layer];
}

ParamVector::ParamVector(const MlpSpec& spec, Vec64 values)
    : ParamVector(spec.fingerprint(), std::move(values)) {
  require(values_.size() == spec.param_dim(),
          "ParamVector: length " + std::to_string(values_.size()) +
              " does not match spec dimension " + std::to_string(spec.param_dim()));
}

ParamVector::ParamVector(std::uint64_t fingerprint, Vec64 values)
    : fingerprint_(fingerprint), values_(std::move(values)) {
  require(!values_.empty(), "ParamVector: empty");
  require(all_finite(values_), "ParamVector: nonfinite entry");
}

std::vector<LayerParams> unflatten(const MlpSpec& spec, const ParamVector& w) {
  require(w.fingerprint() == spec.fingerprint(), "unflatten: spec fingerprint mismatch");
  std::vector<LayerParams> layers;
  for (std::size_t l = 1; l <= spec.num_layers(); ++l) {
    const auto wo = static_cast<std::ptrdiff_t>(spec.weight_offset(l));
    const auto bo = static_cast<std::ptrdiff_t>(spec.bias_offset(l));
    const auto fo = static_cast<std::ptrdiff_t>(spec.layer_dims[l]);
    const auto& v = w.values();
    layers.push_back({std::vector<double>(v.begin() + wo, v.begin() + bo),
                      std::vector<double>(v.begin() + bo, v.begin() + bo + fo)});
  }
  return layers;
}

ParamVector flatten(const MlpSpec& spec, const std::vector<LayerParams>& layers) {
  require(layers.size() == spec.num_layers(), "flatten: layer count mismatch");
  Vec64 v;
  v.reserve(spec.param_dim());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require(layers[l].weights.size() == spec.layer_dims[l] * spec.layer_dims[l + 1] &&
                layers[l].bias.size() == spec.layer_dims[l + 1],
            "flatten: layer shape mismatch");
    v.insert(v.end(), layers[l].weights.begin(), layers[l].weights.end());
    v.insert(v.end(), layers[l].bias.begin(), layers[l].bias.end());
  }
  return ParamVector(spec, std::move(v));
}

ParamVector init_params(const MlpSpec& spec, SeededRng& rng) {
  Vec64 v(spec.param_dim(), 0.0);
  for (std::size_t l = 1; l <= spec.num_layers(); ++l) {
    const std::size_t fi = spec.layer_dims[l - 1], fo = spec.layer_dims[l];
    const double a = std::sqrt(6.0 / static_cast<double>(fi + fo));
    const std::size_t off = spec.weight_offset(l);
    for (std::size_t k = 0; k < fi * fo; ++k) v[off + k] = a * (2.0 * rng.uniform() - 1.0);
  }
  return ParamVector(spec, std::move(v));
}

Batch Batch::all(const Dataset& d) {
  Batch b;
  b.data = &d;
  b.rows.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) b.rows[i] = i;
  return b;
}

Batch Batch::of(const Dataset& d, std::vector<std::size_t> rows) {
  for (auto r : rows) require(r < d.size(), "Batch: row index out of range");
  return Batch{&d, std::move(rows)};
}

void check_compatible(const MlpSpec& spec, const ParamVector& w, const Batch& batch) {
  if (batch.data == nullptr || batch.rows.empty()) {
    throw InvalidArgument("batch must be nonempty");
  }
  if (w.fingerprint() != spec.fingerprint() || w.size() != spec.param_dim()) {
    throw InvalidArgument("parameter vector does not belong to this model spec");
  }
  if (batch.data->dim() != spec.input_dim()) {
    throw InvalidArgument("batch feature width " + std::to_string(batch.data->dim()) +
                          " does not match model input dim " +
                          std::to_string(spec.input_dim()));
  }
  if (spec.loss == LossKind::kSoftmaxCrossEntropy &&
      static_cast<std::size_t>(batch.data->num_classes()) > spec.output_dim()) {
    throw InvalidArgument("dataset has more classes than model outputs");
  }
  if (spec.loss == LossKind::kSquaredError) {
    const std::size_t tdim = batch.data->has_targets()
                                 ? batch.data->target_dim()
                                 : static_cast<std::size_t>(batch.data->num_classes());
    if (tdim != spec.output_dim()) {
      throw InvalidArgument("regression target width does not match model output dim");
    }
  }
}

namespace {

double activate(Activation a, double z) {
  if (a == Activation::kTanh) return std::tanh(z);
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double activate_d1(Activation a, double z) {
  if (a == Activation::kTanh) {
    const double t = std::tanh(z);
    return 1.0 - t * t;
  }
  return sigmoid(z);
}

double activate_d2(Activation a, double z) {
  if (a == Activation::kTanh) {
    const double t = std::tanh(z);
    return -2.0 * t * (1.0 - t * t);
  }
  const double s = sigmoid(z);
  return s * (1.0 - s);
}

// Forward, reverse and forward-over-reverse passes for a single sample.
// Buffers are indexed by layer 0..L; layer 0 holds the input.
class SampleTape {
 public:
  explicit SampleTape(const MlpSpec& spec) : spec_(spec), L_(spec.num_layers()) {
    z_.resize(L_ + 1);
    a_.resize(L_ + 1);
    d_.resize(L_ + 1);
    back_.resize(L_ + 1);
    rz_.resize(L_ + 1);
    ra_.resize(L_ + 1);
    rd_.resize(L_ + 1);
    rback_.resize(L_ + 1);
    for (std::size_t l = 0; l <= L_; ++l) {
      const std::size_t n = spec.layer_dims[l];
      z_[l].assign(n, 0.0);
      a_[l].assign(n, 0.0);
      d_[l].assign(n, 0.0);
      back_[l].assign(n, 0.0);
      rz_[l].assign(n, 0.0);
      ra_[l].assign(n, 0.0);
      rd_[l].assign(n, 0.0);
      rback_[l].assign(n, 0.0);
    }
    target_.assign(spec.output_dim(), 0.0);
  }

  void forward(const double* w, const double* x) {
    std::copy(x, x + spec_.input_dim(), a_[0].begin());
    for (std::size_t l = 1; l <= L_; ++l) {
      const std::size_t fi = spec_.layer_dims[l - 1], fo = spec_.layer_dims[l];
      const double* W = w + spec_.weight_offset(l);
      const double* b = W + fi * fo;
      const auto& in = a_[l - 1];
      for (std::size_t o = 0; o < fo; ++o) {
        double acc = b[o];
        const double* row = W + o * fi;
        for (std::size_t i = 0; i < fi; ++i) acc += row[i] * in[i];
        z_[l][o] = acc;
        a_[l][o] = (l < L_) ? activate(spec_.activation, acc) : acc;
      }
    }
  }

  const std::vector<double>& output() const { return z_[L_]; }

  // Loss of the current forward pass and its gradient w.r.t. the logits
  // (stored in d_[L]).
  double output_loss(const Dataset& data, std::size_t row) {
    const auto& z = z_[L_];
    auto& delta = d_[L_];
    const std::size_t k = z.size();
    if (spec_.loss == LossKind::kSoftmaxCrossEntropy) {
      const int y = data.label(row);
      const double m = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c] - m);
      const double lse = m + std::log(s);
      for (std::size_t c = 0; c < k; ++c) delta[c] = std::exp(z[c] - lse);
      prob_ = delta;
      delta[static_cast<std::size_t>(y)] -= 1.0;
      return lse - z[static_cast<std::size_t>(y)];
    }
    if (data.has_targets()) {
      std::copy(data.target(row), data.target(row) + k, target_.begin());
    } else {
      std::fill(target_.begin(), target_.end(), 0.0);
      target_[static_cast<std::size_t>(data.label(row))] = 1.0;
    }
    double l = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      delta[c] = z[c] - target_[c];
      l += delta[c] * delta[c];
    }
    return 0.5 * l;
  }

  // Propagates d_[L] down to every layer's pre-activation delta.
  void backprop_deltas(const double* w) {
    for (std::size_t l = L_; l >= 2; --l) {
      const std::size_t fi = spec_.layer_dims[l - 1], fo = spec_.layer_dims[l];
      const double* W = w + spec_.weight_offset(l);
      auto& back = back_[l - 1];
      std::fill(back.begin(), back.end(), 0.0);
      for (std::size_t o = 0; o < fo; ++o) {
        const double dlo = d_[l][o];
        const double* row = W + o * fi;
        for (std::size_t i = 0; i < fi; ++i) back[i] += row[i] * dlo;
      }
      for (std::size_t i = 0; i < fi; ++i) {
        d_[l - 1][i] = activate_d1(spec_.activation, z_[l - 1][i]) * back[i];
      }
    }
  }

  void accumulate_grad(double* g) const {
    for (std::size_t l = 1; l <= L_; ++l) {
      const std::size_t fi = spec_.layer_dims[l - 1], fo = spec_.layer_dims[l];
      double* gW = g + spec_.weight_offset(l);
      double* gb = gW + fi * fo;
      const auto& in = a_[l - 1];
      for (std::size_t o = 0; o < fo; ++o) {
        const double dlo = d_[l][o];
        double* row = gW + o * fi;
        for (std::size_t i = 0; i < fi; ++i) row[i] += dlo * in[i];
        gb[o] += dlo;
      }
    }
  }

  // Requires forward, output_loss and backprop_deltas for the same sample.
  void accumulate_hvp(const double* w, const double* v, double* out) {
    std::fill(ra_[0].begin(), ra_[0].end(), 0.0);
    for (std::size_t l = 1; l <= L_; ++l) {
      const std::size_t fi = spec_.layer_dims[l - 1], fo = spec_.layer_dims[l];
      const double* W = w + spec_.weight_offset(l);
      const double* V = v + spec_.weight_offset(l);
      const double* c = V + fi * fo;
      const auto& in = a_[l - 1];
      const auto& rin = ra_[l - 1];
      for (std::size_t o = 0; o < fo; ++o) {
        double acc = c[o];
        const double* wrow = W + o * fi;
        const double* vrow = V + o * fi;
        for (std::size_t i = 0; i < fi; ++i) acc += vrow[i] * in[i] + wrow[i] * rin[i];
        rz_[l][o] = acc;
        ra_[l][o] = (l < L_) ? activate_d1(spec_.activation, z_[l][o]) * acc : acc;
      }
    }
    auto& rdl = rd_[L_];
    const auto& rzl = rz_[L_];
    if (spec_.loss == LossKind::kSoftmaxCrossEntropy) {
      double pr = 0.0;
      for (std::size_t c = 0; c < rzl.size(); ++c) pr += prob_[c] * rzl[c];
      for (std::size_t c = 0; c < rzl.size(); ++c) rdl[c] = prob_[c] * (rzl[c] - pr);
    } else {
      rdl = rzl;
    }
    for (std::size_t l = L_; l >= 1; --l) {
      const std::size_t fi = spec_.layer_dims[l - 1], fo = spec_.layer_dims[l];
      const double* W = w + spec_.weight_offset(l);
      const double* V = v + spec_.weight_offset(l);
      double* oW = out + spec_.weight_offset(l);
      double* ob = oW + fi * fo;
      const auto& in = a_[l - 1];
      const auto& rin = ra_[l - 1];
      for (std::size_t o = 0; o < fo; ++o) {
        const double dlo = d_[l][o], rdlo = rd_[l][o];
        double* row = oW + o * fi;
        for (std::size_t i = 0; i < fi; ++i) row[i] += rdlo * in[i] + dlo * rin[i];
        ob[o] += rdlo;
      }
      if (l == 1) break;
      auto& rback = rback_[l - 1];
      std::fill(rback.begin(), rback.end(), 0.0);
      for (std::size_t o = 0; o < fo; ++o) {
        const double dlo = d_[l][o], rdlo = rd_[l][o];
        const double* wrow = W + o * fi;
        const double* vrow = V + o * fi;
        for (std::size_t i = 0; i < fi; ++i) rback[i] += vrow[i] * dlo + wrow[i] * rdlo;
      }
      for (std::size_t i = 0; i < fi; ++i) {
        const double zi = z_[l - 1][i];
        rd_[l - 1][i] = activate_d2(spec_.activation, zi) * rz_[l - 1][i] * back_[l - 1][i] +
                        activate_d1(spec_.activation, zi) * rback[i];
      }
    }
  }

 private:
  const MlpSpec& spec_;
  std::size_t L_;
  std::vector<std::vector<double>> z_, a_, d_, back_, rz_, ra_, rd_, rback_;
  std::vector<double> prob_, target_;
};

// Samples are grouped into fixed-size blocks whose size depends only on the
// batch size. Each block is accumulated left to right into its own partial,
// and partials are combined by a fixed binary tree. The result is therefore
// bit-identical for any thread count and for the serial policy.
struct BlockLayout {
  std::size_t block;
  std::size_t count;
};

BlockLayout block_layout(std::size_t n) {
  constexpr std::size_t kMinBlock = 16;
  constexpr std::size_t kMaxBlocks = 64;
  const std::size_t block = std::max(kMinBlock, (n + kMaxBlocks - 1) / kMaxBlocks);
  return {block, (n + block - 1) / block};
}

template <class PerSample>
Vec64 reduce_samples(const MlpSpec& spec, const Batch& batch, std::size_t width,
                     ExecPolicy policy, PerSample&& per_sample) {
  const std::size_t n = batch.rows.size();
  const auto [block, count] = block_layout(n);
  std::vector<double> partial(count * width, 0.0);
  auto run_block = [&](std::size_t b, SampleTape& tape) {
    double* acc = partial.data() + b * width;
    const std::size_t end = std::min(n, (b + 1) * block);
    for (std::size_t i = b * block; i < end; ++i) per_sample(tape, batch.rows[i], acc);
  };
  if (policy == ExecPolicy::kParallel) {
#pragma omp parallel
    {
      SampleTape tape(spec);
#pragma omp for schedule(static)
      for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(count); ++b) {
        run_block(static_cast<std::size_t>(b), tape);
      }
    }
  } else {
    SampleTape tape(spec);
    for (std::size_t b = 0; b < count; ++b) run_block(b, tape);
  }
  for (std::size_t stride = 1; stride < count; stride *= 2) {
    for (std::size_t b = 0; b + stride < count; b += 2 * stride) {
      double* dst = partial.data() + b * width;
      const double* src = partial.data() + (b + stride) * width;
      for (std::size_t k = 0; k < width; ++k) dst[k] += src[k];
    }
  }
  Vec64 out(partial.begin(), partial.begin() + static_cast<std::ptrdiff_t>(width));
  const double inv = 1.0 / static_cast<double>(n);
  for (double& x : out) x *= inv;
  return out;
}

void check_finite(std::span<const double> v, const char* what) {
  if (!all_finite(v)) throw NumericalFailure(std::string(what) + ": nonfinite result");
}

}  // namespace

double loss(const MlpSpec& spec, const ParamVector& w, const Batch& batch, ExecPolicy policy) {
  check_compatible(spec, w, batch);
  const double* wp = w.values().data();
  const Dataset& data = *batch.data;
  const Vec64 out = reduce_samples(spec, batch, 1, policy,
                                   [&](SampleTape& t, std::size_t row, double* acc) {
                                     t.forward(wp, data.row(row));
                                     acc[0] += t.output_loss(data, row);
                                   });
  check_finite(out, "loss");
  return out[0];
}

LossGrad loss_and_grad(const MlpSpec& spec, const ParamVector& w, const Batch& batch,
                       ExecPolicy policy) {
  check_compatible(spec, w, batch);
  const double* wp = w.values().data();
  const Dataset& data = *batch.data;
  const std::size_t d = spec.param_dim();
  Vec64 out = reduce_samples(spec, batch, d + 1, policy,
                             [&](SampleTape& t, std::size_t row, double* acc) {
                               t.forward(wp, data.row(row));
                               acc[d] += t.output_loss(data, row);
                               t.backprop_deltas(wp);
                               t.accumulate_grad(acc);
                             });
  check_finite(out, "grad");
  const double l = out.back();
  out.pop_back();
  return {l, std::move(out)};
}

Vec64 grad(const MlpSpec& spec, const ParamVector& w, const Batch& batch, ExecPolicy policy) {
  return loss_and_grad(spec, w, batch, policy).grad;
}

Vec64 hvp(const MlpSpec& spec, const ParamVector& w, const Batch& batch,
          std::span<const double> v, ExecPolicy policy) {
  check_compatible(spec, w, batch);
  if (v.size() != spec.param_dim()) {
    throw InvalidArgument("hvp: direction has length " + std::to_string(v.size()) +
                          ", expected " + std::to_string(spec.param_dim()));
  }
  const double* wp = w.values().data();
  const double* vp = v.data();
  const Dataset& data = *batch.data;
  Vec64 out = reduce_samples(spec, batch, spec.param_dim(), policy,
                             [&](SampleTape& t, std::size_t row, double* acc) {
                               t.forward(wp, data.row(row));
                               t.output_loss(data, row);
                               t.backprop_deltas(wp);
                               t.accumulate_hvp(wp, vp, acc);
                             });
  check_finite(out, "hvp");
  return out;
}

Mat64 full_hessian(const MlpSpec& spec, const ParamVector& w, const Batch& batch,
                   std::size_t oracle_limit) {
  const std::size_t d = spec.param_dim();
  if (d > oracle_limit) {
    throw CapabilityExceeded("full_hessian: d=" + std::to_string(d) +
                             " exceeds oracle limit " + std::to_string(oracle_limit));
  }
  Mat64 H(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  Vec64 e(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    e[j] = 1.0;
    const Vec64 col = hvp(spec, w, batch, e);
    e[j] = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
    }
  }
  return H;
}

Vec64 forward(const MlpSpec& spec, const ParamVector& w, const double* x) {
  SampleTape t(spec);
  t.forward(w.values().data(), x);
  return t.output();
}

Metrics predict_metrics(const MlpSpec& spec, const ParamVector& w, const Batch& batch) {
  if (spec.loss != LossKind::kSoftmaxCrossEntropy) {
    throw InvalidArgument("predict_metrics: requires a classification loss");
  }
  check_compatible(spec, w, batch);
  SampleTape t(spec);
  const Dataset& data = *batch.data;
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t row : batch.rows) {
    t.forward(w.values().data(), data.row(row));
    const auto& z = t.output();
    const auto pred = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    if (pred == data.label(row)) {
      ++tp;
    } else {
      ++fp;  // counted against the predicted class
      ++fn;  // and missed for the true class
    }
  }
  const double n = static_cast<double>(batch.rows.size());
  const double f1 = 2.0 * static_cast<double>(tp) /
                    (2.0 * static_cast<double>(tp) + static_cast<double>(fp + fn));
  return {static_cast<double>(tp) / n, f1};
}

namespace reference {

double loss(const MlpSpec& spec, const ParamVector& w, const Batch& batch) {
  check_compatible(spec, w, batch);
  SampleTape t(spec);
  double acc = 0.0;
  for (std::size_t row : batch.rows) {
    t.forward(w.values().data(), batch.data->row(row));
    acc += t.output_loss(*batch.data, row);
  }
  return acc / static_cast<double>(batch.rows.size());
}

Vec64 grad(const MlpSpec& spec, const ParamVector& w, const Batch& batch) {
  check_compatible(spec, w, batch);
  SampleTape t(spec);
  Vec64 g(spec.param_dim(), 0.0);
  for (std::size_t row : batch.rows) {
    t.forward(w.values().data(), batch.data->row(row));
    t.output_loss(*batch.data, row);
    t.backprop_deltas(w.values().data());
    t.accumulate_grad(g.data());
  }
  for (double& x : g) x /= static_cast<double>(batch.rows.size());
  return g;
}

Vec64 hvp(const MlpSpec& spec, const ParamVector& w, const Batch& batch,
          std::span<const double> v) {
  check_compatible(spec, w, batch);
  require(v.size() == spec.param_dim(), "reference::hvp: dimension mismatch");
  SampleTape t(spec);
  Vec64 out(spec.param_dim(), 0.0);
  for (std::size_t row : batch.rows) {
    t.forward(w.values().data(), batch.data->row(row));
    t.output_loss(*batch.data, row);
    t.backprop_deltas(w.values().data());
    t.accumulate_hvp(w.values().data(), v.data(), out.data());
  }
  for (double& x : out) x /= static_cast<double>(batch.rows.size());
  return out;
}

}  // namespace reference

}  // namespace cdu
