#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vendor_json.hpp"

#include "packerlab/bytes.hpp"
#include "packerlab/normalizer.hpp"
#include "packerlab/pe_model.hpp"

namespace packerlab {

enum class UnpackerKind { GENERIC, CUSTOM, MOCK };

const char* unpacker_kind_name(UnpackerKind k);

struct UnpackerSpec {
  std::string id;
  std::vector<std::string> families;  // canonical; empty iff GENERIC
  UnpackerKind kind = UnpackerKind::CUSTOM;
  std::string invocation;  // command with {in}/{out}, or an internal mock id
  double timeout_s = 30.0;

  bool covers(const std::string& family) const;
};

// Registry line format: id<TAB>kind<TAB>families(comma list or -)<TAB>command<TAB>timeout
std::vector<UnpackerSpec> load_registry(const std::string& text, const FamilyAliasTable& aliases);

enum class ContractOutcome { CONFIRMED, VIOLATED, NO_UNPACKER, TIMEOUT, CRASH };

const char* contract_outcome_name(ContractOutcome o);

// "Analyzable program content", operationalized: valid-PE and size-ratio are
// gates, entropy-drop and import-growth are evidence votes.
struct ValidationPolicy {
  bool require_valid_pe = true;
  double min_entropy_drop = 0.5;
  int min_import_growth = 1;
  double min_size_ratio = 0.5;
  bool use_entropy_drop = true;
  bool use_import_growth = true;
  bool use_size_ratio = true;
  int min_evidence = 1;

  void validate() const;  // quorum must be satisfiable
};

struct ValidationResult {
  bool pass = false;
  bool valid_pe = false;
  double entropy_before = 0.0, entropy_after = 0.0;
  std::int64_t imports_before = 0, imports_after = 0;
  std::uint64_t size_before = 0, size_after = 0;
  bool entropy_drop_ok = false, import_growth_ok = false, size_ratio_ok = false;

  nlohmann::json to_json() const;
};

struct ContractVerdict {
  std::string sample_id;
  std::string predicted_family;
  std::string unpacker_id;
  ContractOutcome outcome = ContractOutcome::NO_UNPACKER;
  std::optional<ValidationResult> validation;

  nlohmann::json to_json() const;
};

enum class OracleProvenance { LABEL_GUIDED, EXHAUSTIVE, PLANTED };

const char* provenance_name(OracleProvenance p);

struct OracleLabel {
  std::string sample_id;
  std::string family;  // canonical family, "NOT_PACKED" or "UNKNOWN_PACKED"
  OracleProvenance provenance = OracleProvenance::EXHAUSTIVE;
  std::optional<std::string> confirming_unpacker;  // family-attributing confirmations only
  std::optional<std::string> generic_confirmer;

  bool packed() const { return family != "NOT_PACKED"; }
  nlohmann::json to_json() const;
  static OracleLabel from_json(const nlohmann::json& j);
};

struct HarnessConfig {
  std::filesystem::path scratch_dir;  // per-(sample, unpacker) subdirs are created here
  std::size_t max_unpackers_per_sample = 128;
};

ValidationResult validate_unpacked(const PeImage& original, ByteSpan recovered,
                                   const ValidationPolicy& policy);

ContractVerdict run_contract(const std::string& sample_id, ByteSpan sample,
                             const std::string& predicted_family,
                             const std::vector<UnpackerSpec>& registry,
                             const ValidationPolicy& policy, const HarnessConfig& harness);

// Phase 1: label-guided contracts for the predicted families (caller order).
// Phase 2: remaining CUSTOM/MOCK unpackers in registry order, then GENERIC.
OracleLabel derive_oracle_label(const std::string& sample_id, ByteSpan sample,
                                const std::vector<std::string>& predictions,
                                const std::vector<UnpackerSpec>& registry,
                                const ValidationPolicy& policy, const HarnessConfig& harness,
                                const std::string& default_label = "NOT_PACKED",
                                std::vector<ContractVerdict>* verdict_log = nullptr);

// Frozen oracle run; diagnostics and repair check run ids against it.
struct OracleSnapshot {
  std::string run_id;  // content digest of the labels
  std::map<std::string, OracleLabel> labels;  // sample id -> label

  void finalize();  // computes run_id
  nlohmann::json to_json() const;
  static OracleSnapshot from_json(const nlohmann::json& j);

  std::map<std::string, std::uint64_t> family_counts() const;  // canonical families only
};

}  // namespace packerlab
