#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vendor_json.hpp"

#include "packerlab/normalizer.hpp"
#include "packerlab/oracle.hpp"
#include "packerlab/rules.hpp"
#include "packerlab/signature.hpp"

namespace packerlab {

// Percentages; counts retained at full precision.
struct Metrics {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double fpr = 0.0;
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  static Metrics from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn,
                             std::uint64_t tn);
  nlohmann::json to_json() const;
};

// F1 from already-rounded percentage inputs (the published-table arithmetic).
double f1_from_percent(double recall_pct, double precision_pct);

// One-vs-rest family confusion. UNKNOWN_PACKED oracle samples are excluded
// from family-level denominators; the exclusion count is reported separately.
Metrics score_family(const std::map<std::string, std::optional<std::string>>& predictions,
                     const std::map<std::string, OracleLabel>& oracle, const std::string& family,
                     std::uint64_t* excluded = nullptr);

// Binary packedness confusion; packed = (oracle family != NOT_PACKED).
Metrics score_packedness(const std::map<std::string, bool>& verdicts,
                         const std::map<std::string, OracleLabel>& oracle);

struct FamilyTally {
  std::uint64_t matches = 0;
  std::uint64_t correct = 0;
  std::vector<std::string> correct_samples;  // dedup'd; feeds repair's recall union
};

struct SignatureScore {
  std::size_t sig_index = 0;
  std::string label;
  std::string family;  // canonicalized from the label
  std::uint64_t matches = 0;  // distinct samples matched
  std::uint64_t correct = 0;
  double accuracy = 0.0;  // correct/matches when matches > 0
  std::map<std::string, FamilyTally> per_family;  // keyed by oracle family

  nlohmann::json to_json() const;
  static SignatureScore from_json(const nlohmann::json& j);
};

struct SigMatchLogEntry {
  std::string sample_id;
  std::size_t sig_index;
};

std::vector<SignatureScore> score_signatures(const SignatureDb& db,
                                             const std::vector<SigMatchLogEntry>& match_log,
                                             const std::map<std::string, OracleLabel>& oracle,
                                             const FamilyAliasTable& aliases);

struct RuleLogEntry {
  RuleId rule;
  std::string sample_id;
  bool fired = false;
};

struct RuleFamilyStat {
  std::uint64_t count = 0;  // oracle samples of this class
  std::uint64_t fired = 0;
  double recall = 0.0;
  double precision = 0.0;  // fired-on-class / fired-anywhere
};

struct RuleProfile {
  RuleId rule;
  std::map<std::string, RuleFamilyStat> per_family;  // all oracle classes incl. NOT_PACKED
  Metrics aggregate;  // binary packedness

  nlohmann::json to_json() const;
  static RuleProfile from_json(const nlohmann::json& j);
};

std::vector<RuleProfile> profile_rules(const std::vector<RuleLogEntry>& log,
                                       const std::map<std::string, OracleLabel>& oracle);

// Report rows, ordered by recall (descending) by default.
struct ReportRow {
  std::string tool;
  std::string family;  // "(packed)" for packedness rows
  Metrics metrics;
};

void sort_rows_by_recall(std::vector<ReportRow>& rows);
std::string report_csv(const std::vector<ReportRow>& rows);  // Tool,Family,Recall,Prec.,F1,FPR
nlohmann::json report_json(const std::vector<ReportRow>& rows);

}  // namespace packerlab
