#include "cdu/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cdu/errors.hpp"
#include "cdu/io.hpp"

namespace cdu {

std::string to_string(Optimizer o) {
  return o == Optimizer::kPgdMomentum ? "pgd-momentum" : "pgd-plain";
}

Optimizer parse_optimizer(const std::string& s) {
  if (s == "pgd-momentum") return Optimizer::kPgdMomentum;
  if (s == "pgd-plain") return Optimizer::kPgdPlain;
  throw InvalidArgument("unknown optimizer '" + s + "' (expected pgd-momentum or pgd-plain)");
}

void TrainConfig::validate() const {
  require(std::isfinite(learning_rate) && learning_rate > 0, "learning_rate must be positive");
  require(batch_size >= 1, "batch_size must be positive");
  require(std::isfinite(weight_decay) && weight_decay >= 0, "weight_decay must be nonnegative");
  require(std::isfinite(C) && C > 0, "C must be positive and finite");
  require(momentum >= 0 && momentum < 1, "momentum must lie in [0, 1)");
}

PgdTrainer::PgdTrainer(const MlpSpec& spec, const Dataset& data, const TrainConfig& cfg,
                       const ParamVector& init)
    : spec_(spec),
      data_(data),
      cfg_(cfg),
      w_(spec, project_to_l2_ball(init.values(), cfg.C)),
      velocity_(spec.param_dim(), 0.0),
      batch_rng_(SeededRng(cfg.seed, "batching")) {
  cfg_.validate();
  require(init.fingerprint() == spec.fingerprint(), "PgdTrainer: init does not match spec");
}

double PgdTrainer::run_epoch() {
  const std::size_t n = data_.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[batch_rng_.uniform_index(i)]);
  }
  const double mu = cfg_.optimizer == Optimizer::kPgdMomentum ? cfg_.momentum : 0.0;
  Vec64 w = w_.values();
  for (std::size_t start = 0; start < n; start += cfg_.batch_size) {
    const std::size_t end = std::min(n, start + cfg_.batch_size);
    Batch b{&data_, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(end))};
    Vec64 g;
    try {
      g = grad(spec_, ParamVector(spec_.fingerprint(), w), b);
    } catch (const NumericalFailure&) {
      throw NumericalFailure("training diverged in epoch " + std::to_string(epoch_ + 1));
    }
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] + cfg_.weight_decay * w[k];
      velocity_[k] = mu * velocity_[k] + gk;
      w[k] -= cfg_.learning_rate * velocity_[k];
    }
    if (!all_finite(w)) {
      throw NumericalFailure("training diverged in epoch " + std::to_string(epoch_ + 1));
    }
    w = project_to_l2_ball(w, cfg_.C);
  }
  w_ = ParamVector(spec_, std::move(w));
  ++epoch_;
  const double l = loss(spec_, w_, Batch::all(data_));
  if (!std::isfinite(l)) {
    throw NumericalFailure("training diverged in epoch " + std::to_string(epoch_));
  }
  return l;
}

TrainedModel train_pgd_from(const MlpSpec& spec, const Dataset& data, const TrainConfig& cfg,
                            const ParamVector& init) {
  cfg.validate();
  PgdTrainer trainer(spec, data, cfg, init);
  const Batch all = Batch::all(data);
  TrainedModel m{spec, trainer.params(), 0.0, {}, cfg.C, cfg.seed, cfg.epochs,
                 data.content_hash()};
  m.loss_trace.push_back(loss(spec, trainer.params(), all));
  for (std::size_t e = 0; e < cfg.epochs; ++e) m.loss_trace.push_back(trainer.run_epoch());
  m.w = trainer.params();
  m.residual_grad_norm = norm2(grad(spec, m.w, all));
  return m;
}

TrainedModel train_pgd(const MlpSpec& spec, const Dataset& data, const TrainConfig& cfg) {
  SeededRng init_rng(cfg.seed, "init");
  return train_pgd_from(spec, data, cfg, init_params(spec, init_rng));
}

TrainedModel retrain_oracle(const MlpSpec& spec, const Dataset& data, const SplitPlan& split,
                            const TrainConfig& cfg) {
  require(!split.retained.empty(), "retrain_oracle: empty retained set");
  require(split.retained.back() < data.size(), "retrain_oracle: split does not fit dataset");
  const Dataset retained = data.subset(split.retained, data.source() + "#retained");
  return train_pgd(spec, retained, cfg);
}

TrainedModel wrap_model(const MlpSpec& spec, const Dataset& data, ParamVector w, double C) {
  require(std::isfinite(C) && C > 0, "wrap_model: C must be positive");
  TrainedModel m{spec, std::move(w), 0.0, {}, C, 0, 0, data.content_hash()};
  const Batch all = Batch::all(data);
  m.residual_grad_norm = norm2(grad(spec, m.w, all));
  m.loss_trace.push_back(loss(spec, m.w, all));
  return m;
}

namespace {

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

template <class T>
T get_le(const std::string& in, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > in.size()) throw FormatError(path + ": truncated checkpoint");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return v;
}

std::string encode_checkpoint(const MlpSpec& spec, const ParamVector& w) {
  std::string out = "CUW1";
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(spec.layer_dims.size()));
  for (auto d : spec.layer_dims) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(spec.activation));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(spec.loss));
  for (double x : w.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

std::uint64_t params_hash(const MlpSpec& spec, const ParamVector& w) {
  return fnv1a64(encode_checkpoint(spec, w));
}

void write_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(model.spec, model.w));
  nlohmann::ordered_json side;
  side["C"] = model.C;
  side["residual_grad_norm"] = model.residual_grad_norm;
  side["seed"] = model.seed;
  side["dataset_hash"] = hex64(model.dataset_hash);
  side["epochs"] = model.epochs;
  side["params_hash"] = hex64(params_hash(model.spec, model.w));
  side["loss_trace"] = model.loss_trace;
  write_file_atomic(sidecar_path(path), side.dump(2) + "\n");
}

TrainedModel read_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = path.string();
  if (bytes.size() < 4 || bytes.compare(0, 4, "CUW1") != 0) {
    throw FormatError(where + ": bad magic (expected CUW1)");
  }
  std::size_t pos = 4;
  const auto version = get_le<std::uint16_t>(bytes, pos, where);
  if (version != kCheckpointVersion) {
    throw FormatError(where + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto layers = get_le<std::uint16_t>(bytes, pos, where);
  if (layers < 2) throw FormatError(where + ": fewer than two layer dims");
  std::vector<std::size_t> dims;
  for (std::uint16_t i = 0; i < layers; ++i) dims.push_back(get_le<std::uint32_t>(bytes, pos, where));
  const auto act = get_le<std::uint8_t>(bytes, pos, where);
  const auto lk = get_le<std::uint8_t>(bytes, pos, where);
  if (act > 1 || lk > 1) throw FormatError(where + ": unknown activation/loss code");
  MlpSpec spec;
  try {
    spec = MlpSpec(dims, static_cast<Activation>(act), static_cast<LossKind>(lk));
  } catch (const InvalidArgument& e) {
    throw FormatError(where + ": " + e.what());
  }
  const std::size_t d = spec.param_dim();
  if (bytes.size() - pos != d * 8) {
    throw FormatError(where + ": payload holds " + std::to_string((bytes.size() - pos) / 8) +
                      " values, spec needs " + std::to_string(d));
  }
  Vec64 values(d);
  for (auto& x : values) x = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos, where));
  if (!all_finite(values)) throw FormatError(where + ": nonfinite parameter");

  const auto side_path = sidecar_path(path);
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_file(side_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side_path.string() + ": " + e.what());
  }
  TrainedModel m{spec, ParamVector(spec, std::move(values)), 0.0, {}, 0.0, 0, 0, 0};
  try {
    m.C = side.at("C").get<double>();
    m.residual_grad_norm = side.at("residual_grad_norm").get<double>();
    m.seed = side.at("seed").get<std::uint64_t>();
    m.epochs = side.at("epochs").get<std::size_t>();
    m.dataset_hash = std::stoull(side.at("dataset_hash").get<std::string>(), nullptr, 16);
    if (side.contains("loss_trace")) m.loss_trace = side["loss_trace"].get<std::vector<double>>();
  } catch (const std::exception& e) {
    throw FormatError(side_path.string() + ": " + e.what());
  }
  if (side.contains("params_hash") &&
      side["params_hash"].get<std::string>() != hex64(params_hash(m.spec, m.w))) {
    throw IntegrityError(where + ": parameters do not match sidecar params_hash");
  }
  return m;
}

void verify_model(const TrainedModel& model, const Dataset& data) {
  if (model.dataset_hash != data.content_hash()) {
    throw IntegrityError("dataset hash " + hex64(data.content_hash()) +
                         " does not match checkpoint's " + hex64(model.dataset_hash));
  }
  const double g = norm2(grad(model.spec, model.w, Batch::all(data)));
  if (std::abs(g - model.residual_grad_norm) > 1e-10 * std::max(1.0, g)) {
    throw IntegrityError("recomputed residual gradient norm " + std::to_string(g) +
                         " differs from stored " + std::to_string(model.residual_grad_norm));
  }
}

void write_loss_trace(const TrainedModel& model, const std::filesystem::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < model.loss_trace.size(); ++e) {
    out << e << "," << model.loss_trace[e] << "\n";
  }
  write_file_atomic(path, out.str());
}

}  // namespace cdu
