#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vendor_json.hpp"

#include "packerlab/corpus.hpp"
#include "packerlab/diagnostics.hpp"
#include "packerlab/entropy.hpp"
#include "packerlab/normalizer.hpp"
#include "packerlab/oracle.hpp"
#include "packerlab/repair.hpp"
#include "packerlab/rules.hpp"
#include "packerlab/signature.hpp"

namespace packerlab {

// Everything a pipeline run needs, resolved from the config file plus flag
// overrides. Paths are validated at load time.
struct SuiteConfig {
  std::filesystem::path corpus;
  std::filesystem::path registry;
  std::filesystem::path target_db;
  std::vector<std::filesystem::path> donor_dbs;
  std::filesystem::path alias_table;    // empty = builtin
  std::filesystem::path section_table;  // empty = builtin
  std::filesystem::path marker_table;   // empty = builtin
  std::filesystem::path store = "results.jsonl";
  std::filesystem::path oracle_snapshot;  // default: <store dir>/oracle.json
  std::filesystem::path diagnose_out;     // default: <store dir>/diagnose.json
  std::filesystem::path scratch;          // default: <store dir>/scratch
  std::filesystem::path detector_modules;  // optional detectors.json to attach
  int workers = 0;  // 0 = hardware concurrency
  std::uint64_t seed = 0;
  EntropyConfig entropy;
  ValidationPolicy validation;
  FixThresholds fix;
  std::string heuristic_target = "readpe(heur1)";
  std::size_t ep_window = 64;

  static SuiteConfig from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir);
  void resolve_defaults();
};

struct ScanResult {
  std::string sample_id;
  std::string parse_status;  // OK | NOT_PE | TRUNCATED
  UnifiedRecord record;
  std::vector<RuleLogEntry> rule_log;
  std::map<std::string, std::vector<SigMatchLogEntry>> sig_log;  // db name -> entries
  std::vector<std::string> predictions;  // sorted unique canonical families
};

struct DiagnoseOutput {
  std::string oracle_run_id;
  std::map<std::string, std::uint64_t> family_counts;
  std::vector<ReportRow> family_rows;      // per (tool, family)
  std::vector<ReportRow> packedness_rows;  // per packedness strategy
  std::vector<ReportRow> rule_rows;        // per cataloged rule
  std::map<std::string, std::vector<SignatureScore>> sig_scores;  // db name -> scores
  std::vector<RuleProfile> rule_profiles;
  std::uint64_t parse_failures = 0;

  nlohmann::json to_json() const;
  static DiagnoseOutput from_json(const nlohmann::json& j);
};

class ToolSuite {
 public:
  static ToolSuite load(const SuiteConfig& cfg);

  ScanResult scan_sample(const std::string& sample_id, ByteSpan bytes) const;

  // Scans every OK sample in the corpus directory (worker pool sized by cfg).
  std::vector<ScanResult> scan_corpus() const;

  OracleSnapshot run_oracle(const std::vector<ScanResult>& scans,
                            std::vector<ContractVerdict>* verdicts = nullptr) const;

  DiagnoseOutput diagnose(const std::vector<ScanResult>& scans,
                          const OracleSnapshot& snapshot) const;

  RepairPlan plan_signature_repair(const DiagnoseOutput& diag) const;
  RuleSet plan_heuristic_repair(const DiagnoseOutput& diag) const;
  std::vector<DetectorModule> plan_unpacker_repair() const;

  const SuiteConfig& config() const { return cfg_; }
  const FamilyAliasTable& aliases() const { return aliases_; }
  const RuleConfig& rule_config() const { return rule_cfg_; }
  const SignatureDb& target_db() const { return target_db_; }
  const std::vector<SignatureDb>& donor_dbs() const { return donor_dbs_; }
  const std::vector<UnpackerSpec>& registry() const { return registry_; }
  const std::vector<DetectorModule>& modules() const { return modules_; }

  // Raw file bytes for a sample id recorded during scan_corpus.
  const std::map<std::string, std::string>& sample_paths() const { return sample_paths_; }

 private:
  SuiteConfig cfg_;
  FamilyAliasTable aliases_;
  RuleConfig rule_cfg_;
  SignatureDb target_db_;
  std::vector<SignatureDb> donor_dbs_;
  std::vector<UnpackerSpec> registry_;
  std::vector<DetectorModule> modules_;
  mutable std::map<std::string, std::string> sample_paths_;  // sha -> first path
};

// Deterministic run id for store records: digest of config + seed + store size.
std::string compute_run_id(const nlohmann::json& config_json, std::uint64_t seed,
                           std::size_t store_lines);

}  // namespace packerlab
