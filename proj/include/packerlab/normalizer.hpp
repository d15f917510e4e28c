#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vendor_json.hpp"

namespace packerlab {

struct CanonicalLabel {
  std::string family;  // canonical family or the literal "UNKNOWN"
  std::optional<std::string> version;
  std::string raw;
};

enum class AliasKind { PREFIX, SUBSTR, REGEX };

struct AliasRule {
  AliasKind kind;
  std::string pattern;
  std::string family;
};

// Ordered alias rules; the first hit wins. prefix/substr match
// case-insensitively, regex rules match as written.
struct FamilyAliasTable {
  std::vector<AliasRule> rules;

  static FamilyAliasTable builtin();
  static FamilyAliasTable load(const std::string& text);
  std::string serialize() const;
};

// The evaluated families plus the synthetic mock families.
const std::vector<std::string>& canonical_families();

CanonicalLabel canonicalize_label(const std::string& raw, const FamilyAliasTable& table);

enum class ToolRole { PACKEDNESS, FAMILY };

struct ToolOutput {
  std::string tool;
  ToolRole role;
  nlohmann::json payload;
};

struct ToolResult {
  std::optional<bool> heur;
  std::optional<std::string> signature_match;  // canonical family
  nlohmann::json raw;
};

struct UnifiedRecord {
  std::string sample_id;
  std::map<std::string, ToolResult> tools;
};

UnifiedRecord unify(const std::string& sample_id, const std::vector<ToolOutput>& outputs,
                    const FamilyAliasTable& table);

// Schema: {"sample": "<sha256>", "tools": {"<tool>": {"heur": "yes"|"no",
//          "signature_match": "<family>", "raw": <any>}}}
nlohmann::json unified_record_to_json(const UnifiedRecord& rec);
UnifiedRecord unified_record_from_json(const nlohmann::json& j);

struct VtReport {
  std::string sample;
  std::vector<ToolOutput> outputs;
};

// Export schema: {"sample": "...", "packers": {"<subtool>": "<raw label>"}}.
VtReport read_vt_report(const std::string& json_text);

}  // namespace packerlab
