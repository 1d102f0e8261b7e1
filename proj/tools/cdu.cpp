// cdu: command-line front end for training, certified unlearning and the
// evaluation harness. Every invocation writes a run manifest into --out-dir,
// whether it succeeds or fails.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdu/config.hpp"
#include "cdu/errors.hpp"
#include "cdu/evaluation.hpp"
#include "cdu/io.hpp"
#include "cdu/manifest.hpp"
#include "cdu/training.hpp"
#include "cdu/unlearning.hpp"

namespace fs = std::filesystem;
using namespace cdu;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kIntegrity = 3, kNumerical = 4 };

struct Args {
  std::string config;
  std::string checkpoint;
  std::string split;
  std::string requests;
  std::string manifest;
  double eps = 1.0;
  double delta = 1e-5;
  std::string mechanism = "classic";
  std::optional<double> sigma_override;
  bool group_privacy = false;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "cdu-out";

  Json to_json() const {
    Json j;
    j["config"] = config;
    j["checkpoint"] = checkpoint;
    j["split"] = split;
    j["requests"] = requests;
    j["manifest"] = manifest;
    j["budget_eps"] = eps;
    j["budget_delta"] = delta;
    j["mechanism"] = mechanism;
    j["sigma_override"] = sigma_override ? Json(*sigma_override) : Json(nullptr);
    j["group_privacy"] = group_privacy;
    j["seed"] = seed ? Json(*seed) : Json(nullptr);
    j["out_dir"] = out_dir;
    return j;
  }

  static Args from_json(const Json& j) {
    Args a;
    a.config = j.at("config");
    a.checkpoint = j.at("checkpoint");
    a.split = j.at("split");
    a.requests = j.at("requests");
    a.manifest = j.at("manifest");
    a.eps = j.at("budget_eps");
    a.delta = j.at("budget_delta");
    a.mechanism = j.at("mechanism");
    if (!j.at("sigma_override").is_null()) a.sigma_override = j.at("sigma_override").get<double>();
    a.group_privacy = j.at("group_privacy");
    if (!j.at("seed").is_null()) a.seed = j.at("seed").get<std::uint64_t>();
    a.out_dir = j.at("out_dir");
    return a;
  }
};

std::uint64_t file_hash(const fs::path& p) { return fnv1a64(read_file(p)); }

// Collects everything the run manifest records and times named stages.
class Run {
 public:
  Run(std::string command, const Args& args)
      : command_(std::move(command)), args_(args), id_(run_id({{"command", command_}, {"args", args.to_json()}})) {
    m_["kind"] = "run";
    m_["toolkit_version"] = kToolkitVersion;
    m_["command"] = command_;
    m_["run_id"] = id_;
    m_["args"] = args.to_json();
    m_["config"] = nullptr;
    m_["inputs"] = Json::object();
    m_["outputs"] = Json::object();
    m_["seeds"] = Json::object();
    m_["stages"] = Json::object();
  }

  const Args& args() const { return args_; }
  const std::string& stage_name() const { return stage_; }

  fs::path out(const std::string& stem, const std::string& ext) const {
    return fs::path(args_.out_dir) / (command_ + "-" + id_ + "-" + stem + ext);
  }

  template <typename F>
  auto stage(const std::string& name, F&& fn) {
    stage_ = name;
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record_time(name, t0);
    } else {
      auto r = fn();
      record_time(name, t0);
      return r;
    }
  }

  void input(const std::string& role, const fs::path& p) {
    m_["inputs"][role] = {{"path", p.string()}, {"hash", hex64(file_hash(p))}};
  }
  void input_hash(const std::string& role, std::uint64_t h) { m_["inputs"][role] = {{"hash", hex64(h)}}; }

  // Deterministic outputs carry a content hash so a rerun can be compared byte for byte.
  void output(const std::string& role, const fs::path& p, bool deterministic = true) {
    Json o{{"path", p.string()}};
    if (deterministic) o["hash"] = hex64(file_hash(p));
    m_["outputs"][role] = o;
  }

  void write(const std::string& role, const fs::path& p, const std::string& contents, bool deterministic = true) {
    write_file_atomic(p, contents);
    output(role, p, deterministic);
  }

  void seed(const std::string& name, std::uint64_t v) { m_["seeds"][name] = v; }
  void config(const ExperimentConfig& c) { m_["config"] = to_json(c); }
  Json& extra() { return m_["results"]; }

  fs::path finish(int code, const std::string& error_kind = "", const std::string& message = "") {
    m_["status"] = code == kOk ? "ok" : "error";
    m_["exit_code"] = code;
    if (code != kOk) m_["error"] = {{"stage", stage_}, {"kind", error_kind}, {"message", message}};
    const fs::path p = fs::path(args_.out_dir) / (command_ + "-" + id_ + ".manifest.json");
    write_file_atomic(p, m_.dump(2) + "\n");
    return p;
  }

 private:
  void record_time(const std::string& name, std::chrono::steady_clock::time_point t0) {
    m_["stages"][name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  std::string command_;
  Args args_;
  std::string id_;
  std::string stage_ = "start";
  Json m_;
};

struct Loaded {
  ExperimentConfig cfg;
  TrainTest data;
};

Loaded load(Run& run) {
  const Args& a = run.args();
  if (a.config.empty()) throw InvalidArgument("--config is required");
  ExperimentConfig cfg = run.stage("load_config", [&] {
    run.input("config", a.config);
    return load_experiment_config(a.config);
  });
  run.config(cfg);
  TrainTest data = run.stage("load_data", [&] { return load_data(cfg.data); });
  Loaded l{std::move(cfg), std::move(data)};
  run.input_hash("train_data", l.data.train.content_hash());
  run.input_hash("test_data", l.data.test.content_hash());
  return l;
}

TrainedModel load_checkpoint(Run& run, const Dataset* verify_against) {
  const Args& a = run.args();
  if (a.checkpoint.empty()) throw InvalidArgument("--checkpoint is required");
  return run.stage("load_checkpoint", [&] {
    if (!fs::exists(a.checkpoint)) throw IntegrityError("checkpoint not found: " + a.checkpoint);
    run.input("checkpoint", a.checkpoint);
    TrainedModel m = read_checkpoint(a.checkpoint);
    if (verify_against) verify_model(m, *verify_against);
    return m;
  });
}

SplitPlan read_split(Run& run, std::size_t n) {
  const Args& a = run.args();
  if (a.split.empty()) throw InvalidArgument("--split is required");
  return run.stage("load_split", [&] {
    if (!fs::exists(a.split)) throw IntegrityError("split file not found: " + a.split);
    run.input("split", a.split);
    Json j;
    try {
      j = Json::parse(read_file(a.split));
    } catch (const Json::parse_error& e) {
      throw FormatError(std::string("split file is not valid JSON: ") + e.what());
    }
    if (!j.contains("n") || !j.contains("unlearn")) throw FormatError("split file needs fields n and unlearn");
    if (j.at("n").get<std::size_t>() != n)
      throw IntegrityError("split file was made for " + std::to_string(j.at("n").get<std::size_t>()) +
                           " rows, dataset has " + std::to_string(n));
    return split_from_indices(n, j.at("unlearn").get<std::vector<std::size_t>>(), j.value("seed", 0ULL));
  });
}

std::vector<std::vector<std::size_t>> read_requests(Run& run) {
  const Args& a = run.args();
  if (a.requests.empty()) throw InvalidArgument("--requests is required");
  return run.stage("load_requests", [&] {
    if (!fs::exists(a.requests)) throw IntegrityError("requests file not found: " + a.requests);
    run.input("requests", a.requests);
    const std::string text = read_file(a.requests);
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return std::vector<std::vector<std::size_t>>{};
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw FormatError(std::string("requests file is not valid JSON: ") + e.what());
    }
    if (j.is_object()) j = j.at("requests");
    return j.get<std::vector<std::vector<std::size_t>>>();
  });
}

std::uint64_t root_seed(const Args& a, const ExperimentConfig& cfg) { return a.seed.value_or(cfg.train.seed); }

Budget budget_of(const Args& a) { return Budget(a.eps, a.delta); }

CertifyOptions certify_options(const Args& a) {
  CertifyOptions o;
  o.mechanism = parse_mechanism(a.mechanism);
  o.sigma_override = a.sigma_override;
  return o;
}

void report(Run& run, const CertifiedResult& r) {
  run.extra() = {{"delta_bound", r.delta_bound},
                 {"sigma", r.sigma},
                 {"epsilon", r.certified_budget.epsilon},
                 {"delta", r.certified_budget.delta},
                 {"mechanism", to_string(r.mechanism)},
                 {"n_unlearned", r.n_unlearned}};
}

// Commands -------------------------------------------------------------------

void cmd_train(Run& run) {
  auto l = load(run);
  if (run.args().seed) l.cfg.train.seed = *run.args().seed;
  run.seed("train", l.cfg.train.seed);
  const TrainedModel m = run.stage("train", [&] { return train_pgd(l.cfg.model, l.data.train, l.cfg.train); });
  run.stage("write", [&] {
    const fs::path ckpt = run.out("model", ".cuw");
    write_checkpoint(m, ckpt);
    run.output("checkpoint", ckpt);
    run.output("sidecar", sidecar_path(ckpt));
    const fs::path trace = run.out("loss", ".csv");
    write_loss_trace(m, trace);
    run.output("loss_trace", trace);
  });
  run.extra() = {{"residual_grad_norm", m.residual_grad_norm}, {"final_loss", m.loss_trace.back()}};
  if (m.spec.loss == LossKind::kSoftmaxCrossEntropy) {
    run.extra()["train_f1"] = predict_metrics(m.spec, m.w, Batch::all(l.data.train)).micro_f1;
    run.extra()["test_f1"] = predict_metrics(m.spec, m.w, Batch::all(l.data.test)).micro_f1;
  }
}

void cmd_split(Run& run) {
  auto l = load(run);
  const std::uint64_t seed = run.args().seed.value_or(l.cfg.split_seed);
  run.seed("split", seed);
  const SplitPlan plan = make_split(l.data.train, l.cfg.n_u, seed);
  run.stage("write", [&] {
    const Json j{{"n", l.data.train.size()}, {"seed", seed}, {"unlearn", plan.unlearn}};
    run.write("split", run.out("split", ".json"), j.dump() + "\n");
  });
}

CertificateContext context(Run& run, const Loaded& l, const TrainedModel& m, const std::string& command) {
  CertificateContext ctx;
  ctx.command = command;
  ctx.config = to_json(l.cfg);
  ctx.checkpoint_path = run.args().checkpoint;
  ctx.checkpoint_hash = params_hash(m.spec, m.w);
  ctx.dataset_hash = l.data.train.content_hash();
  ctx.test_hash = l.data.test.content_hash();
  ctx.cfg = l.cfg.unlearn;
  return ctx;
}

void write_certified(Run& run, const Loaded& l, const TrainedModel& m, const CertifiedResult& r,
                     const CertificateContext& ctx, const std::vector<std::size_t>& retained) {
  run.stage("write", [&] {
    const Dataset kept = l.data.train.subset(retained, l.data.train.source() + "/retained");
    const fs::path ckpt = run.out("certified", ".cuw");
    write_checkpoint(wrap_model(m.spec, kept, r.w_minus, m.C), ckpt);
    run.output("checkpoint", ckpt);
    run.output("sidecar", sidecar_path(ckpt));
    run.write("certificate", run.out("certificate", ".json"), certificate_manifest(r, m.spec, ctx).dump(2) + "\n",
              false);
  });
  report(run, r);
}

void cmd_unlearn(Run& run) {
  const auto l = load(run);
  const TrainedModel m = load_checkpoint(run, &l.data.train);
  const SplitPlan split = read_split(run, l.data.train.size());
  const std::uint64_t seed = root_seed(run.args(), l.cfg);
  run.seed("unlearn", seed);
  const CertifiedResult r = run.stage("unlearn", [&] {
    return unlearn_single(m, l.data.train, split, l.cfg.unlearn, budget_of(run.args()), certify_options(run.args()),
                          SeededRng(seed, kUnlearnRootLabel));
  });
  CertificateContext ctx = context(run, l, m, "unlearn");
  ctx.requests = {split.unlearn};
  write_certified(run, l, m, r, ctx, split.retained);
}

void cmd_sequential(Run& run) {
  const auto l = load(run);
  const TrainedModel m = load_checkpoint(run, &l.data.train);
  const auto requests = read_requests(run);
  const std::uint64_t seed = root_seed(run.args(), l.cfg);
  run.seed("unlearn", seed);
  const CertifiedResult r = run.stage("unlearn", [&] {
    return unlearn_sequential(m, l.data.train, requests, l.cfg.unlearn, budget_of(run.args()),
                              certify_options(run.args()), run.args().group_privacy,
                              SeededRng(seed, kUnlearnRootLabel), &l.data.test);
  });
  CertificateContext ctx = context(run, l, m, "sequential");
  ctx.requests = requests;
  std::vector<bool> removed(l.data.train.size(), false);
  for (const auto& q : requests)
    for (std::size_t i : q) removed[i] = true;
  std::vector<std::size_t> retained;
  for (std::size_t i = 0; i < removed.size(); ++i)
    if (!removed[i]) retained.push_back(i);
  write_certified(run, l, m, r, ctx, retained);
  run.write("trace", run.out("trace", ".csv"), sequential_trace_csv(r));
}

void cmd_evaluate(Run& run) {
  const auto l = load(run);
  const TrainedModel m = load_checkpoint(run, nullptr);
  const auto& d = l.data;
  std::string csv;
  if (run.args().split.empty()) {
    csv = "model,f1_train,f1_test\n" + run.args().checkpoint + "," +
          std::to_string(predict_metrics(m.spec, m.w, Batch::all(d.train)).micro_f1) + "," +
          std::to_string(predict_metrics(m.spec, m.w, Batch::all(d.test)).micro_f1) + "\n";
  } else {
    const SplitPlan split = read_split(run, d.train.size());
    const auto rep = utility_report(m.spec, m.w, d.train, split, d.test);
    csv = utility_csv({{run.args().checkpoint, rep}});
    const double threshold = l.cfg.eval.relearn_threshold.value_or(
        l.cfg.eval.relearn_threshold_factor * loss(m.spec, m.w, Batch::of(d.train, split.retained)));
    std::string relearn = "seed,threshold,epochs\n";
    run.stage("relearn", [&] {
      for (std::size_t r = 0; r < l.cfg.eval.noise_reps; ++r) {
        TrainConfig tc = l.cfg.train;
        tc.seed = root_seed(run.args(), l.cfg) + r;
        const auto e = relearn_time(m.spec, m.w, d.train, split, threshold, tc, l.cfg.eval.relearn_max_epochs);
        relearn += std::to_string(tc.seed) + "," + std::to_string(threshold) + "," +
                   (e ? std::to_string(*e) : std::string("none")) + "\n";
      }
    });
    run.write("relearn", run.out("relearn", ".csv"), relearn);
  }
  run.write("utility", run.out("utility", ".csv"), csv);
}

ExperimentSetup setup_of(Run& run, const Loaded& l) {
  SplitPlan split = run.args().split.empty()
                        ? make_split(l.data.train, l.cfg.n_u, l.cfg.split_seed)
                        : read_split(run, l.data.train.size());
  ExperimentSetup s{l.cfg.model, l.data.train, l.data.test, std::move(split), l.cfg.train, l.cfg.unlearn,
                    root_seed(run.args(), l.cfg)};
  s.unconstrained_C = l.cfg.eval.unconstrained_C;
  run.seed("experiment", s.seed);
  return s;
}

void cmd_ablate(Run& run) {
  const auto l = load(run);
  const auto setup = setup_of(run, l);
  const auto rows = run.stage("ablate", [&] { return ablation_lambda(setup, l.cfg.eval.lambdas); });
  run.write("ablation", run.out("ablation", ".csv"), ablation_csv(rows));
}

void cmd_sweep(Run& run) {
  const auto l = load(run);
  const auto setup = setup_of(run, l);
  const TrainedModel m = run.args().checkpoint.empty()
                             ? run.stage("train", [&] { return train_pgd(setup.spec, setup.train, setup.train_cfg); })
                             : load_checkpoint(run, &l.data.train);
  SweepOptions o;
  o.delta = l.cfg.eval.delta;
  o.reps = l.cfg.eval.noise_reps;
  o.mechanism = parse_mechanism(run.args().mechanism);
  const auto rows =
      run.stage("sweep", [&] { return budget_sweep(setup, m, l.cfg.eval.sweep_lambdas, l.cfg.eval.epsilons, o); });
  run.write("sweep", run.out("sweep", ".csv"), sweep_csv(rows));
}

int dispatch(const std::string& command, const Args& args, fs::path* manifest_out);

void cmd_replay(Run& run) {
  const Args& a = run.args();
  if (a.manifest.empty()) throw InvalidArgument("--manifest is required");
  const Json m = run.stage("load_manifest", [&] {
    if (!fs::exists(a.manifest)) throw IntegrityError("manifest not found: " + a.manifest);
    run.input("manifest", a.manifest);
    try {
      return Json::parse(read_file(a.manifest));
    } catch (const Json::parse_error& e) {
      throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
    }
  });
  const std::string kind = m.value("kind", "");
  if (kind == "certificate") {
    const auto cfg = parse_experiment_config(m.at("config"));
    const auto data = run.stage("load_data", [&] { return load_data(cfg.data); });
    const std::string ckpt = a.checkpoint.empty() ? m.at("inputs").at("checkpoint").get<std::string>() : a.checkpoint;
    if (!fs::exists(ckpt)) throw IntegrityError("checkpoint not found: " + ckpt);
    const TrainedModel model = read_checkpoint(ckpt);
    const auto r = run.stage("replay", [&] { return replay_certificate(m, model, data.train, &data.test); });
    if (!replay_matches(m, r, model.spec)) throw IntegrityError("replayed w_minus differs from the certificate");
    run.extra() = {{"matches", true}, {"w_minus_hash", hex64(params_hash(model.spec, r.w_minus))}};
    return;
  }
  if (kind != "run") throw FormatError("manifest kind must be run or certificate");
  if (m.at("status") != "ok") throw InvalidArgument("only successful runs can be replayed");
  Args again = Args::from_json(m.at("args"));
  again.out_dir = a.out_dir;
  fs::path replayed;
  const int code = run.stage("rerun", [&] { return dispatch(m.at("command"), again, &replayed); });
  if (code != kOk) throw IntegrityError("rerun failed with exit code " + std::to_string(code));
  const Json r = Json::parse(read_file(replayed));
  Json compared = Json::array();
  for (const auto& [role, o] : m.at("outputs").items()) {
    if (!o.contains("hash")) continue;
    const auto& other = r.at("outputs").at(role);
    if (other.at("hash") != o.at("hash"))
      throw IntegrityError("output " + role + " differs: " + o.at("hash").get<std::string>() + " vs " +
                           other.at("hash").get<std::string>());
    compared.push_back(role);
  }
  run.extra() = {{"matches", true}, {"compared", compared}, {"replay_manifest", replayed.string()}};
}

const std::map<std::string, std::function<void(Run&)>>& commands() {
  static const std::map<std::string, std::function<void(Run&)>> table{
      {"train", cmd_train},       {"split", cmd_split},   {"unlearn", cmd_unlearn}, {"sequential", cmd_sequential},
      {"evaluate", cmd_evaluate}, {"ablate", cmd_ablate}, {"sweep", cmd_sweep},     {"replay", cmd_replay}};
  return table;
}

int dispatch(const std::string& command, const Args& args, fs::path* manifest_out) {
  Run run(command, args);
  int code = kOk;
  std::string kind, message;
  try {
    commands().at(command)(run);
  } catch (const SchemaError& e) {
    code = kUsage, kind = "schema", message = e.what();
  } catch (const InvalidArgument& e) {
    code = kUsage, kind = "invalid-argument", message = e.what();
  } catch (const CapabilityExceeded& e) {
    code = kUsage, kind = "capability-exceeded", message = e.what();
  } catch (const IntegrityError& e) {
    code = kIntegrity, kind = "integrity", message = e.what();
  } catch (const FormatError& e) {
    code = kIntegrity, kind = "format", message = e.what();
  } catch (const NumericalFailure& e) {
    code = kNumerical, kind = "numerical-failure", message = e.what();
  } catch (const Json::exception& e) {
    code = kUsage, kind = "invalid-argument", message = e.what();
  }
  fs::path written;
  try {
    written = run.finish(code, kind, message);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cdu: could not write run manifest: %s\n", e.what());
  }
  if (manifest_out) *manifest_out = written;
  if (code != kOk) {
    std::fprintf(stderr, "cdu %s: %s error in stage %s: %s\n", command.c_str(), kind.c_str(),
                 run.stage_name().c_str(), message.c_str());
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified unlearning toolkit for small MLPs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolkitVersion);
  Args args;

  const std::map<std::string, std::string> about{
      {"train", "train a model with projected gradient descent"},
      {"split", "draw a random unlearning split"},
      {"unlearn", "single-batch certified unlearning"},
      {"sequential", "sequential certified unlearning over a list of requests"},
      {"evaluate", "utility and relearn-time report for a checkpoint"},
      {"ablate", "approximation error and bound across the lambda grid"},
      {"sweep", "test F1 across privacy budgets"},
      {"replay", "re-run a run manifest or certificate and compare outputs"}};
  for (const auto& [name, text] : about) {
    auto* sub = app.add_subcommand(name, text);
    sub->add_option("--config", args.config, "experiment config (JSON)");
    sub->add_option("--checkpoint", args.checkpoint, "CUW1 checkpoint");
    sub->add_option("--split", args.split, "split file (JSON with n and unlearn)");
    sub->add_option("--requests", args.requests, "sequential requests file (JSON array of index arrays)");
    sub->add_option("--manifest", args.manifest, "run manifest or certificate to replay");
    sub->add_option("--budget-eps", args.eps, "privacy budget epsilon")->check(CLI::PositiveNumber);
    sub->add_option("--budget-delta", args.delta, "privacy budget delta")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--mechanism", args.mechanism, "noise calibration")
        ->check(CLI::IsMember({"classic", "analytic"}));
    sub->add_option("--sigma-override", args.sigma_override, "fixed noise scale")->check(CLI::NonNegativeNumber);
    sub->add_flag("--group-privacy", args.group_privacy, "certify k requests at k * epsilon");
    sub->add_option("--seed", args.seed, "root seed");
    sub->add_option("--out-dir", args.out_dir, "output directory")->capture_default_str();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  fs::path manifest;
  const int code = dispatch(command, args, &manifest);
  if (code == kOk) std::cout << manifest.string() << "\n";
  return code;
}
