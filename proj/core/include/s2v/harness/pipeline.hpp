#pragma once

#include "s2v/harness/config.hpp"
#include "s2v/harness/dataset.hpp"

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace s2v::harness {

enum class Method { kBaselineMi, kLoftrRansac, kLoftrDwp, kLoftrDwpMi };

inline constexpr std::array<Method, 4> kAllMethods{Method::kBaselineMi, Method::kLoftrRansac, Method::kLoftrDwp,
                                                   Method::kLoftrDwpMi};

std::string_view method_tag(Method m);
/// Column heading used in the statistics table.
std::string_view method_label(Method m);
/// Throws ValidationError for tags outside the closed set.
Method parse_method(std::string_view tag);

/// Failure sentinel written into records of crashed cases.
inline constexpr PoseError kFailureError{180.0, 1e6, false, false};

struct CaseRecord {
  int case_id = 0;
  Method method = Method::kLoftrDwp;
  PoseError error;
  double runtime_s = 0.0;
  int match_count = 0;
  bool failed = false;
  std::string failure;
  RigidPose pose;
};

/// Intermediate products of one case, kept when requested.
struct CaseArtifacts {
  std::optional<ConfidenceMatrix> confidence;
  std::optional<MatchSet> hard_matches;
  std::optional<MatchSet> soft_matches;
  std::optional<RansacResult> ransac;
  std::optional<MiResult> mi_baseline;
  std::optional<MiResult> mi_dwp;
};

struct CaseInput {
  int case_id = 0;
  const Volume3D* volume = nullptr;
  const Frame2D* frame = nullptr;
  RigidPose gt;
};

class Pipeline {
 public:
  /// Loads or seeds network weights. Throws ValidationError on inconsistent settings.
  explicit Pipeline(Config cfg);

  const Config& config() const { return cfg_; }

  /// Runs the requested methods on one case, sharing stages between them. Stage failures are
  /// captured in the records; nothing is thrown for them.
  std::vector<CaseRecord> run(const CaseInput& in, std::span<const Method> methods,
                              CaseArtifacts* artifacts = nullptr) const;

  CaseRecord run_case(const CaseInput& in, Method method) const;

 private:
  struct Coarse;
  Coarse coarse_stage(const CaseInput& in) const;

  Config cfg_;
  ExtractorWeights us_weights_;
  ExtractorWeights ct_weights_;
  AttentionWeights attention_;
};

/// Calls fn(i) for i in [0, n) on up to `threads` workers (0: hardware concurrency).
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

/// Runs every case of a dataset with the given methods. Records are ordered by case, then by
/// the order of `methods`.
std::vector<CaseRecord> evaluate_dataset(const Dataset& ds, const Pipeline& pipeline, std::span<const Method> methods);

// Records CSV: case_id,method,rotation_deg,translation_mm,success_15,success_5,match_count,failed
void write_records_csv(const std::filesystem::path& path, std::span<const CaseRecord> records, bool with_runtime = false);
std::vector<CaseRecord> read_records_csv(const std::filesystem::path& path);

}  // namespace s2v::harness
