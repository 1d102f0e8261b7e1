#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdu/config.hpp"
#include "cdu/unlearning.hpp"

namespace cdu {

inline constexpr const char* kToolkitVersion = "1.0.0";
inline constexpr const char* kUnlearnRootLabel = "unlearn";

/// Inputs that, together with a CertifiedResult, make up a certificate.
struct CertificateContext {
  std::string command;
  Json config;  // experiment config snapshot
  std::string checkpoint_path;
  std::uint64_t checkpoint_hash = 0;
  std::uint64_t dataset_hash = 0;
  std::uint64_t test_hash = 0;
  /// One entry for single-batch unlearning (D_u), k entries for sequential.
  std::vector<std::vector<std::size_t>> requests;
  UnlearnConfig cfg;
  std::vector<double> override_deltas{1e-5, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.5};
};

Json certificate_manifest(const CertifiedResult& r, const MlpSpec& spec,
                          const CertificateContext& ctx);

/// Re-runs the unlearning procedure recorded in `manifest` on the given
/// model and data. Throws IntegrityError if their hashes differ from the
/// recorded ones.
CertifiedResult replay_certificate(const Json& manifest, const TrainedModel& model,
                                   const Dataset& train, const Dataset* test);

/// True iff the replayed w_minus hashes to the manifest's recorded value.
bool replay_matches(const Json& manifest, const CertifiedResult& replayed,
                    const MlpSpec& spec);

/// Short identifier of a run: FNV-1a over the compact dump of `identity`.
std::string run_id(const Json& identity);

}  // namespace cdu
