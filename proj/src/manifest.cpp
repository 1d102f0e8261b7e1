#include "cdu/manifest.hpp"

#include "cdu/errors.hpp"
#include "cdu/training.hpp"

namespace cdu {

namespace {

Json budget_json(const Budget& b) { return {{"epsilon", b.epsilon}, {"delta", b.delta}}; }

std::uint64_t parse_hex(const Json& j, const std::string& what) {
  try {
    return std::stoull(j.get<std::string>(), nullptr, 16);
  } catch (const std::exception&) {
    throw FormatError("manifest: malformed hash field " + what);
  }
}

}  // namespace

Json certificate_manifest(const CertifiedResult& r, const MlpSpec& spec,
                          const CertificateContext& ctx) {
  Json m;
  m["kind"] = "certificate";
  m["toolkit_version"] = kToolkitVersion;
  m["command"] = ctx.command;
  m["mode"] = r.sequential ? "sequential" : "single";
  m["config"] = ctx.config;
  m["inputs"] = {{"checkpoint", ctx.checkpoint_path},
                 {"checkpoint_params_hash", hex64(ctx.checkpoint_hash)},
                 {"dataset_hash", hex64(ctx.dataset_hash)},
                 {"test_hash", hex64(ctx.test_hash)}};
  if (r.sequential) {
    m["requests"] = ctx.requests;
  } else {
    const std::vector<std::size_t> u = ctx.requests.empty() ? std::vector<std::size_t>{}
                                                            : ctx.requests.front();
    m["split"] = {{"unlearn", u}};
  }
  m["unlearn"] = to_json(ctx.cfg);
  m["budget"] = budget_json(r.budget);
  m["certified_budget"] = budget_json(r.certified_budget);
  m["group_privacy"] = r.group_privacy;
  m["mechanism"] = to_string(r.mechanism);
  m["sigma"] = r.sigma;
  m["sigma_override"] = r.sigma_overridden ? Json(r.sigma) : Json(nullptr);
  if (r.sigma_overridden && r.sigma > 0) {
    Json implied = Json::array();
    for (double del : ctx.override_deltas) {
      implied.push_back({{"delta", del},
                         {"epsilon_classic",
                          implied_epsilon(r.sigma, r.delta_bound, del, Mechanism::kClassic)},
                         {"epsilon_analytic",
                          r.delta_bound > 0
                              ? implied_epsilon(r.sigma, r.delta_bound, del, Mechanism::kAnalytic)
                              : 0.0}});
    }
    m["implied_budgets"] = implied;
  }
  m["delta_bound"] = r.delta_bound;
  m["bounds"] = {{"basic", r.bounds.basic},
                 {"efficient", r.bounds.efficient},
                 {"practical", r.bounds.practical},
                 {"G", r.bounds.G},
                 {"d", r.bounds.d}};
  m["seeds"] = {{"root", r.root_seed},
                {"root_label", kUnlearnRootLabel},
                {"hessian_label", r.hessian_label},
                {"noise_label", r.noise_label}};
  m["n"] = r.n;
  m["n_unlearned"] = r.n_unlearned;
  m["b"] = r.n_unlearned;
  m["update_ratio"] = r.update_ratio;
  m["boundary_flag"] = r.boundary_flag;
  m["diagnostics"] = {{"hessian_norm_estimate", r.diagnostics.hessian_norm_estimate},
                      {"lambda_exceeds_hessian_norm", r.diagnostics.lambda_exceeds_hessian_norm},
                      {"scaled_hessian_norm_estimate", r.diagnostics.scaled_hessian_norm_estimate},
                      {"H_valid", r.diagnostics.H_valid},
                      {"warnings", r.diagnostics.warnings}};
  if (r.sequential) {
    Json trace = Json::array();
    for (const auto& s : r.trace) {
      trace.push_back({{"step", s.step},
                       {"request_size", s.request_size},
                       {"cumulative_unlearned", s.cumulative_unlearned},
                       {"grad_norm", s.grad_norm},
                       {"residual_after", s.residual_after},
                       {"G", s.G_used},
                       {"delta_bound", s.delta_bound},
                       {"test_f1", s.test_f1}});
    }
    m["trace"] = trace;
    m["initial_test_f1"] = r.initial_test_f1;
  }
  m["timing_seconds"] = {{"estimate", r.seconds_estimate}, {"noise", r.seconds_noise}};
  m["outputs"] = {{"w_tilde_hash", hex64(params_hash(spec, r.w_tilde))},
                  {"w_minus_hash", hex64(params_hash(spec, r.w_minus))}};
  return m;
}

CertifiedResult replay_certificate(const Json& manifest, const TrainedModel& model,
                                   const Dataset& train, const Dataset* test) {
  try {
    if (manifest.at("kind") != "certificate") throw FormatError("manifest: not a certificate");
    const Json& in = manifest.at("inputs");
    if (parse_hex(in.at("dataset_hash"), "dataset_hash") != train.content_hash()) {
      throw IntegrityError("replay: training data hash differs from the manifest");
    }
    if (parse_hex(in.at("checkpoint_params_hash"), "checkpoint_params_hash") !=
        params_hash(model.spec, model.w)) {
      throw IntegrityError("replay: checkpoint parameters differ from the manifest");
    }
    const UnlearnConfig cfg = parse_unlearn_config(manifest.at("unlearn"), "/unlearn");
    const Json& b = manifest.at("budget");
    const Budget budget(b.at("epsilon").get<double>(), b.at("delta").get<double>());
    CertifyOptions opts;
    opts.mechanism = parse_mechanism(manifest.at("mechanism").get<std::string>());
    if (!manifest.at("sigma_override").is_null()) {
      opts.sigma_override = manifest.at("sigma_override").get<double>();
    }
    const Json& seeds = manifest.at("seeds");
    const SeededRng rng(seeds.at("root").get<std::uint64_t>(),
                        seeds.at("root_label").get<std::string>());
    if (manifest.at("mode") == "sequential") {
      const auto requests = manifest.at("requests").get<std::vector<std::vector<std::size_t>>>();
      const bool with_test = test != nullptr && manifest.contains("initial_test_f1") &&
                             manifest.at("initial_test_f1").get<double>() >= 0;
      return unlearn_sequential(model, train, requests, cfg, budget, opts,
                                manifest.at("group_privacy").get<bool>(), rng,
                                with_test ? test : nullptr);
    }
    auto unlearn = manifest.at("split").at("unlearn").get<std::vector<std::size_t>>();
    const SplitPlan split = split_from_indices(train.size(), std::move(unlearn));
    return unlearn_single(model, train, split, cfg, budget, opts, rng);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

bool replay_matches(const Json& manifest, const CertifiedResult& replayed, const MlpSpec& spec) {
  return manifest.at("outputs").at("w_minus_hash").get<std::string>() ==
         hex64(params_hash(spec, replayed.w_minus));
}

std::string run_id(const Json& identity) { return hex64(fnv1a64(identity.dump())).substr(0, 12); }

}  // namespace cdu
