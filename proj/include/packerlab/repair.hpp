#pragma once

#include <map>
#include <string>
#include <vector>

#include "vendor_json.hpp"

#include "packerlab/corpus.hpp"
#include "packerlab/diagnostics.hpp"
#include "packerlab/oracle.hpp"
#include "packerlab/rules.hpp"
#include "packerlab/signature.hpp"

namespace packerlab {

enum class RepairKind { SIGNATURE_FIX, HEURISTIC_FIX, UNPACKER_FIX };

const char* repair_kind_name(RepairKind k);

// The paper's qualitative cutoffs made numeric; every value configurable.
struct FixThresholds {
  double faulty_accuracy_max = 0.1;
  std::uint64_t min_support = 3;
  double donor_accuracy_min = 0.9;
  double target_family_recall_min = 50.0;  // percent
};

struct SignatureRef {
  std::string db;
  std::string label;
  std::string pattern_digest;
};

struct PlannedRemoval {
  SignatureRef ref;
  std::string rationale;
};

struct PlannedAddition {
  Signature sig;
  std::string rationale;
};

struct RepairPlan {
  RepairKind kind = RepairKind::SIGNATURE_FIX;
  std::string oracle_run_id;
  std::string target_db;
  std::vector<PlannedRemoval> removals;
  std::vector<PlannedAddition> additions;

  nlohmann::json to_json() const;
  static RepairPlan from_json(const nlohmann::json& j);
};

// Signature scores bound to the oracle run that produced them.
struct ScoredDb {
  std::string oracle_run_id;
  std::string db_name;
  std::vector<SignatureScore> scores;
};

// removals: support >= min_support and accuracy <= faulty_accuracy_max.
// additions: donor signatures at donor accuracy for families whose
// post-removal recall in the target falls below the floor.
RepairPlan plan_signature_fix(const SignatureDb& target, const ScoredDb& target_scores,
                              const std::vector<std::pair<const SignatureDb*, const ScoredDb*>>& donors,
                              const std::map<std::string, std::uint64_t>& family_counts,
                              const FixThresholds& th);

// Pure transformation; strict mode raises StalePlan when a removal no longer
// resolves or an addition already exists.
SignatureDb apply_signature_fix(const SignatureDb& db, const RepairPlan& plan,
                                bool idempotent = false);

// Target ruleset plus foreign rules that clear the recall floor on a family
// where the target currently misses it. Original members are never removed.
RuleSet plan_heuristic_fix(const RuleSet& target, const RuleProfile& target_profile,
                           const std::vector<RuleProfile>& candidates,
                           const std::vector<std::string>& families, const FixThresholds& th);

// Detection logic extracted from an unpacker, attachable as an extra
// ANY-combined family/packedness source.
struct DetectorModule {
  std::string id;
  std::string family;
  SignatureDb signatures;  // may be empty
  std::vector<RuleId> rules;  // may be empty

  std::optional<std::string> predict_family(const PeImage& img, const RuleConfig& cfg) const;
  bool packedness(const PeImage& img, const RuleConfig& cfg) const;

  nlohmann::json to_json() const;
  static DetectorModule from_json(const nlohmann::json& j);
};

DetectorModule build_unpacker_detector(const UnpackerSpec& spec, const SignatureDb& signatures,
                                       const std::vector<RuleId>& rules);

// Authored detection data for the mock unpackers (stub signature + marker).
SignatureDb mock_detector_signatures(MockId id);

}  // namespace packerlab
