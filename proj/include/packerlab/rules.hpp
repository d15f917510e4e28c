#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vendor_json.hpp"

#include "packerlab/entropy.hpp"
#include "packerlab/pe_model.hpp"
#include "packerlab/signature.hpp"

namespace packerlab {

struct RuleId {
  std::string tool;
  std::string name;

  bool operator==(const RuleId& o) const { return tool == o.tool && name == o.name; }
  bool operator<(const RuleId& o) const {
    return tool != o.tool ? tool < o.tool : name < o.name;
  }
  std::string str() const { return tool + "." + name; }
};

struct RuleVerdict {
  RuleId rule;
  bool fired = false;
  nlohmann::json evidence = nlohmann::json::object();
};

enum class RuleCombiner { ANY, ALL };

struct RuleSet {
  std::string name;
  std::vector<RuleId> members;  // drawn from the catalog, non-empty
  RuleCombiner combiner = RuleCombiner::ANY;
};

// name<TAB>family lines, '#' comments. These files are repair targets, so
// they stay editable text.
struct NameTable {
  std::vector<std::pair<std::string, std::string>> entries;  // (name, family), file order

  static NameTable load(const std::string& text);
  std::string serialize() const;
  std::optional<std::string> family_for(const std::string& name, bool case_sensitive) const;
};

NameTable default_section_table();
NameTable default_marker_table();

struct RuleConfig {
  EntropyConfig entropy;
  int low_imports_threshold = 10;
  double section_entropy_threshold = 7.0;  // Manalyze-flavor high_entropy
  std::vector<std::string> good_ep_sections = {".text", "CODE", ".code", "INIT"};
  bool section_name_case_sensitive = true;
  std::uint64_t resources_file_floor = 64 * 1024;
  double resources_min_ratio = 0.01;
  std::string dos_message = "This program cannot be run in DOS mode";
  NameTable section_table = default_section_table();
  NameTable marker_table = default_marker_table();
  const SignatureDb* peid_db = nullptr;  // backing for peid_signature_match
  MatchConfig match;
};

struct RuleDescriptor {
  RuleId id;
  std::string description;
  std::vector<std::string> config_keys;
};

// Stable enumeration of every cataloged rule.
const std::vector<RuleDescriptor>& catalog();

RuleVerdict evaluate_rule(const RuleId& rule, const PeImage& img, const RuleConfig& cfg);
PackednessVerdict evaluate_ruleset(const RuleSet& rs, const PeImage& img, const RuleConfig& cfg);

// Tool-level composite heuristics (ANY over the tool's cataloged rules).
const std::vector<RuleSet>& named_rulesets();
const RuleSet& ruleset_by_name(const std::string& name);

}  // namespace packerlab
