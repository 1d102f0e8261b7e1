#include "cdu/config.hpp"

#include <cmath>
#include <set>

#include "cdu/errors.hpp"
#include "cdu/io.hpp"

namespace cdu {

namespace {

// Reads fields of one JSON object, remembering which keys were consumed so
// that leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string pointer) : j_(j), ptr_(std::move(pointer)) {
    if (!j_.is_object()) throw SchemaError(ptr_.empty() ? "/" : ptr_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  std::string at(const std::string& key) const { return ptr_ + "/" + key; }

  const Json& sub(const std::string& key) {
    if (!has(key)) throw SchemaError(at(key), "required field missing");
    return j_.at(key);
  }

  double number(const std::string& key, double fallback, bool required = false) {
    if (!has(key)) {
      if (required) throw SchemaError(at(key), "required field missing");
      return fallback;
    }
    const Json& v = j_.at(key);
    if (!v.is_number()) throw SchemaError(at(key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw SchemaError(at(key), "must be finite");
    return x;
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback, bool required = false) {
    if (!has(key)) {
      if (required) throw SchemaError(at(key), "required field missing");
      return fallback;
    }
    const Json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      throw SchemaError(at(key), "expected a nonnegative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::string text(const std::string& key, const std::string& fallback, bool required = false) {
    if (!has(key)) {
      if (required) throw SchemaError(at(key), "required field missing");
      return fallback;
    }
    const Json& v = j_.at(key);
    if (!v.is_string()) throw SchemaError(at(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_array() || v.empty()) throw SchemaError(at(key), "expected a nonempty array");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw SchemaError(at(key) + "/" + std::to_string(i), "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }

  template <class Fn>
  auto parsed(const std::string& key, Fn&& fn) {
    try {
      return fn();
    } catch (const SchemaError&) {
      throw;
    } catch (const InvalidArgument& e) {
      throw SchemaError(at(key), e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw SchemaError(at(it.key()), "unknown field");
    }
  }

 private:
  const Json& j_;
  std::string ptr_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& pointer, const std::string& what) {
  if (!ok) throw SchemaError(pointer, what);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

MlpSpec parse_model(const Json& j, const std::string& ptr) {
  ObjectReader r(j, ptr);
  const Json& dims = r.sub("layer_dims");
  check(dims.is_array() && dims.size() >= 2, r.at("layer_dims"), "expected at least two dims");
  std::vector<std::size_t> d;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    check(dims[i].is_number_unsigned() && dims[i].get<std::uint64_t>() >= 1,
          r.at("layer_dims") + "/" + std::to_string(i), "expected a positive integer");
    d.push_back(dims[i].get<std::size_t>());
  }
  const std::string act = r.text("activation", "tanh");
  const std::string loss = r.text("loss", "softmax-cross-entropy");
  MlpSpec spec(d, r.parsed("activation", [&] { return parse_activation(act); }),
               r.parsed("loss", [&] { return parse_loss(loss); }));
  r.finish();
  return spec;
}

TrainConfig parse_train(const Json& j, const std::string& ptr) {
  ObjectReader r(j, ptr);
  TrainConfig c;
  c.learning_rate = r.number("learning_rate", c.learning_rate);
  check(c.learning_rate > 0, r.at("learning_rate"), "must be positive");
  c.epochs = r.count("epochs", c.epochs);
  c.batch_size = r.count("batch_size", c.batch_size);
  check(c.batch_size >= 1, r.at("batch_size"), "must be positive");
  c.weight_decay = r.number("weight_decay", c.weight_decay);
  check(c.weight_decay >= 0, r.at("weight_decay"), "must be nonnegative");
  c.C = r.number("C", 0.0, true);
  check(c.C > 0, r.at("C"), "must be positive");
  c.seed = r.count("seed", c.seed);
  const std::string opt = r.text("optimizer", to_string(c.optimizer));
  c.optimizer = r.parsed("optimizer", [&] { return parse_optimizer(opt); });
  c.momentum = r.number("momentum", c.momentum);
  check(c.momentum >= 0 && c.momentum < 1, r.at("momentum"), "must lie in [0, 1)");
  r.finish();
  return c;
}

EvalConfig parse_eval(const Json& j, const std::string& ptr) {
  ObjectReader r(j, ptr);
  EvalConfig c;
  c.lambdas = r.numbers("lambdas", c.lambdas);
  c.epsilons = r.numbers("epsilons", c.epsilons);
  c.sweep_lambdas = r.numbers("sweep_lambdas", c.sweep_lambdas);
  c.delta = r.number("delta", c.delta);
  check(c.delta > 0 && c.delta < 1, r.at("delta"), "must lie in (0, 1)");
  c.noise_reps = r.count("noise_reps", c.noise_reps);
  check(c.noise_reps >= 1, r.at("noise_reps"), "must be positive");
  c.unconstrained_C = r.number("unconstrained_C", c.unconstrained_C);
  check(c.unconstrained_C > 0, r.at("unconstrained_C"), "must be positive");
  c.relearn_threshold_factor = r.number("relearn_threshold_factor", c.relearn_threshold_factor);
  check(c.relearn_threshold_factor > 0, r.at("relearn_threshold_factor"), "must be positive");
  if (r.has("relearn_threshold")) {
    c.relearn_threshold = r.number("relearn_threshold", 0.0);
    check(*c.relearn_threshold >= 0, r.at("relearn_threshold"), "must be nonnegative");
  }
  c.relearn_max_epochs = r.count("relearn_max_epochs", c.relearn_max_epochs);
  r.finish();
  return c;
}

}  // namespace

DataSource parse_data_source(const Json& j, const std::string& ptr,
                             const std::filesystem::path& base_dir) {
  ObjectReader r(j, ptr);
  DataSource d;
  d.kind = r.text("kind", "", true);
  d.n_test = r.count("n_test", d.n_test);
  if (d.kind == "synth_blobs") {
    d.n = r.count("n", d.n);
    d.dim = r.count("dim", d.dim);
    check(d.dim >= 1, r.at("dim"), "must be positive");
    d.classes = static_cast<int>(r.count("classes", static_cast<std::uint64_t>(d.classes)));
    check(d.classes >= 2, r.at("classes"), "need at least two classes");
    d.separation = r.number("separation", d.separation);
    d.seed = r.count("seed", d.seed);
  } else if (d.kind == "csv") {
    d.path = resolve(base_dir, r.text("path", "", true));
    d.label_column = r.text("label_column", d.label_column);
  } else if (d.kind == "mnist") {
    d.images = resolve(base_dir, r.text("images", "", true));
    d.labels = resolve(base_dir, r.text("labels", "", true));
    d.limit = r.count("limit", 0);
  } else {
    throw SchemaError(r.at("kind"), "expected synth_blobs, csv or mnist");
  }
  r.finish();
  return d;
}

UnlearnConfig parse_unlearn_config(const Json& j, const std::string& ptr,
                                   const UnlearnConfig& defaults) {
  ObjectReader r(j, ptr);
  UnlearnConfig c = defaults;
  c.lambda = r.number("lambda", c.lambda);
  c.H = r.number("H", c.H);
  c.s = r.count("s", c.s);
  c.C = r.number("C", c.C);
  c.L = r.number("L", c.L);
  c.M = r.number("M", c.M);
  c.lambda_min = r.number("lambda_min", c.lambda_min);
  c.rho = r.number("rho", c.rho);
  c.G = r.number("G", c.G);
  c.hessian_batch_size = r.count("hessian_batch_size", c.hessian_batch_size);
  c.diagnostic_iters = r.count("diagnostic_iters", c.diagnostic_iters);
  r.finish();
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw SchemaError(ptr.empty() ? "/" : ptr, e.what());
  }
  return c;
}

ExperimentConfig parse_experiment_config(const Json& doc, const std::filesystem::path& base_dir) {
  ObjectReader r(doc, "");
  ExperimentConfig c;
  c.data = parse_data_source(r.sub("data"), "/data", base_dir);
  c.model = parse_model(r.sub("model"), "/model");
  c.train = parse_train(r.sub("train"), "/train");
  c.unlearn.C = c.train.C;
  if (r.has("unlearn")) c.unlearn = parse_unlearn_config(doc.at("unlearn"), "/unlearn", c.unlearn);
  if (r.has("split")) {
    ObjectReader s(doc.at("split"), "/split");
    c.n_u = s.count("n_u", c.n_u);
    check(c.n_u >= 1, "/split/n_u", "must be positive");
    c.split_seed = s.count("seed", c.split_seed);
    s.finish();
  }
  if (r.has("evaluation")) c.eval = parse_eval(doc.at("evaluation"), "/evaluation");
  r.finish();
  if (c.data.kind == "synth_blobs") {
    check(c.model.input_dim() == c.data.dim, "/model/layer_dims/0",
          "input dim does not match /data/dim");
  }
  if (c.unlearn.C != c.train.C) {
    throw SchemaError("/unlearn/C", "must equal /train/C (the bound the model was trained under)");
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  Json doc;
  try {
    doc = Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("", path.string() + " is not valid JSON: " + e.what());
  }
  return parse_experiment_config(doc, path.parent_path());
}

Json to_json(const DataSource& d) {
  Json j;
  j["kind"] = d.kind;
  if (d.kind == "synth_blobs") {
    j["n"] = d.n;
    j["dim"] = d.dim;
    j["classes"] = d.classes;
    j["separation"] = d.separation;
    j["seed"] = d.seed;
  } else if (d.kind == "csv") {
    j["path"] = d.path.string();
    j["label_column"] = d.label_column;
  } else {
    j["images"] = d.images.string();
    j["labels"] = d.labels.string();
    j["limit"] = d.limit;
  }
  j["n_test"] = d.n_test;
  return j;
}

Json to_json(const MlpSpec& s) {
  Json j;
  j["layer_dims"] = s.layer_dims;
  j["activation"] = to_string(s.activation);
  j["loss"] = to_string(s.loss);
  return j;
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["weight_decay"] = c.weight_decay;
  j["C"] = c.C;
  j["seed"] = c.seed;
  j["optimizer"] = to_string(c.optimizer);
  j["momentum"] = c.momentum;
  return j;
}

Json to_json(const UnlearnConfig& c) {
  Json j;
  j["lambda"] = c.lambda;
  j["H"] = c.H;
  j["s"] = c.s;
  j["C"] = c.C;
  j["L"] = c.L;
  j["M"] = c.M;
  j["lambda_min"] = c.lambda_min;
  j["rho"] = c.rho;
  j["G"] = c.G;
  j["hessian_batch_size"] = c.hessian_batch_size;
  j["diagnostic_iters"] = c.diagnostic_iters;
  return j;
}

Json to_json(const EvalConfig& c) {
  Json j;
  j["lambdas"] = c.lambdas;
  j["epsilons"] = c.epsilons;
  j["sweep_lambdas"] = c.sweep_lambdas;
  j["delta"] = c.delta;
  j["noise_reps"] = c.noise_reps;
  j["unconstrained_C"] = c.unconstrained_C;
  j["relearn_threshold_factor"] = c.relearn_threshold_factor;
  if (c.relearn_threshold) j["relearn_threshold"] = *c.relearn_threshold;
  j["relearn_max_epochs"] = c.relearn_max_epochs;
  return j;
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  j["data"] = to_json(c.data);
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["unlearn"] = to_json(c.unlearn);
  j["split"] = {{"n_u", c.n_u}, {"seed", c.split_seed}};
  j["evaluation"] = to_json(c.eval);
  return j;
}

TrainTest load_data(const DataSource& source) {
  Dataset all = [&] {
    if (source.kind == "synth_blobs") {
      return synth_blobs(source.n, source.dim, source.classes, source.separation, source.seed);
    }
    if (source.kind == "csv") return load_csv(source.path, source.label_column);
    if (source.kind == "mnist") {
      return load_mnist_idx(source.images, source.labels,
                            source.limit ? std::optional<std::size_t>(source.limit) : std::nullopt);
    }
    throw InvalidArgument("unknown data kind '" + source.kind + "'");
  }();
  return split_train_test(all, source.n_test);
}

}  // namespace cdu
