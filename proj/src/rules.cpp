#include "packerlab/rules.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "packerlab/errors.hpp"

namespace packerlab {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool contains_bytes(ByteSpan hay, const std::string& needle) {
  if (needle.empty() || hay.size() < needle.size()) return false;
  const auto* first = reinterpret_cast<const std::uint8_t*>(needle.data());
  auto it = std::search(hay.begin(), hay.end(), first, first + needle.size());
  return it != hay.end();
}

}  // namespace

NameTable NameTable::load(const std::string& text) {
  NameTable t;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos)
      fail(errc::config_invalid, "name table line needs name<TAB>family: " + line);
    t.entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return t;
}

std::string NameTable::serialize() const {
  std::string out;
  for (const auto& [name, family] : entries) out += name + "\t" + family + "\n";
  return out;
}

std::optional<std::string> NameTable::family_for(const std::string& name,
                                                 bool case_sensitive) const {
  for (const auto& [n, family] : entries) {
    if (case_sensitive ? n == name : lower(n) == lower(name)) return family;
  }
  return std::nullopt;
}

NameTable default_section_table() {
  NameTable t;
  t.entries = {
      {"UPX0", "UPX"},       {"UPX1", "UPX"},       {"UPX2", "UPX"},
      {"UPX!", "UPX"},       {".aspack", "ASPack"}, {".adata", "ASPack"},
      {".MPRESS1", "MPRESS"}, {".MPRESS2", "MPRESS"},
      {"pec1", "PECompact"}, {"PEC2", "PECompact"},
      {".petite", "Petite"}, {"nsp0", "NSPack"},    {"nsp1", "NSPack"},
      {"nsp2", "NSPack"},    {"MEW", "MEW"},        {".MEW", "MEW"},
      {".themida", "Themida"}, {".taz", "PESpin"},  {".MaskPE", "MaskPE"},
      {".Upack", "WinUpack"}, {".ByDwing", "WinUpack"},
      {"MCKX0", "MOCKX"},    {"MCKX1", "MOCKX"},
      {"MCKR0", "MOCKR"},    {"MCKR1", "MOCKR"},
      {"MCKN0", "MOCKN"},    {"MCKN1", "MOCKN"},
  };
  return t;
}

NameTable default_marker_table() {
  NameTable t;
  t.entries = {
      {"UPX!", "UPX"},        {"aPLib", "aPLib"},      {"PECompact2", "PECompact"},
      {".themida", "Themida"}, {"Themida", "Themida"}, {"ASPack", "ASPack"},
      {"MPRESS", "MPRESS"},   {"NsPack", "NSPack"},    {"MEW", "MEW"},
      {"MOCKX!", "MOCKX"},    {"MOCKR!", "MOCKR"},     {"MOCKN!", "MOCKN"},
  };
  return t;
}

const std::vector<RuleDescriptor>& catalog() {
  static const std::vector<RuleDescriptor> rules = {
      {{"Manalyze", "high_entropy"},
       "any section raw-data entropy above the section threshold",
       {"section_entropy_threshold"}},
      {{"Manalyze", "low_imports"},
       "total imported function count below the threshold",
       {"low_imports_threshold"}},
      {{"Manalyze", "resources_size"},
       "resource directory absent or under the size ratio on a large file",
       {"resources_file_floor", "resources_min_ratio"}},
      {{"Manalyze", "rich_header"},
       "rich header absent (low-fidelity stand-in for the upstream check)",
       {}},
      {{"Manalyze", "section_name"},
       "any section name listed in the packer section table",
       {"section_table", "section_name_case_sensitive"}},
      {{"Manalyze", "wx_section"},
       "some section is both writable and executable",
       {}},
      {{"PyPackerDetect", "bad_ep_sections"},
       "entry point missing or outside the conventional code sections",
       {"good_ep_sections"}},
      {{"PyPackerDetect", "low_imports"},
       "total imported function count below the threshold",
       {"low_imports_threshold"}},
      {{"PyPackerDetect", "packer_section_match"},
       "any section name listed in the packer section table",
       {"section_table", "section_name_case_sensitive"}},
      {{"PyPackerDetect", "peid_signature_match"},
       "at least one signature match under the tool-scoped database",
       {"peid_db"}},
      {{"pypeid", "heur1"},
       "whole-file entropy above the threshold",
       {"entropy.wholefile_threshold"}},
      {{"qu1cksc0pe", "HasModified_DOS_Message"},
       "DOS stub lacks the canonical message bytes",
       {"dos_message"}},
      {{"qu1cksc0pe", "HasOverlay"},
       "bytes present after the last section's raw data",
       {}},
      {{"qu1cksc0pe", "ImportTableIsBad"},
       "import directory resolves nowhere or a descriptor is truncated",
       {}},
      {{"qu1cksc0pe", "IsBeyondImageSize"},
       "entry RVA at or past SizeOfImage, or a section raw range past file end",
       {}},
      {{"qu1cksc0pe", "IsPacked"},
       "whole-file entropy above the threshold",
       {"entropy.wholefile_threshold"}},
      {{"qu1cksc0pe", "string_name_match"},
       "any marker string from the marker table occurs in the raw bytes",
       {"marker_table"}},
      {{"readpe", "high_entropy"},
       "whole-file entropy above the threshold",
       {"entropy.wholefile_threshold"}},
      {{"readpe", "section_name"},
       "any section name listed in the packer section table",
       {"section_table", "section_name_case_sensitive"}},
  };
  return rules;
}

namespace {

RuleVerdict section_name_rule(const RuleId& id, const PeImage& img, const RuleConfig& cfg) {
  RuleVerdict v{id, false, nlohmann::json::object()};
  for (const auto& s : img.sections) {
    auto fam = cfg.section_table.family_for(s.name, cfg.section_name_case_sensitive);
    if (fam) {
      v.fired = true;
      v.evidence["matched"] = s.name;
      v.evidence["family_hint"] = *fam;
      return v;
    }
  }
  return v;
}

RuleVerdict low_imports_rule(const RuleId& id, const PeImage& img, const RuleConfig& cfg) {
  RuleVerdict v{id, false, nlohmann::json::object()};
  std::uint32_t total = img.import_function_total();
  if (total < static_cast<std::uint32_t>(cfg.low_imports_threshold)) {
    v.fired = true;
    v.evidence["import_count"] = total;
    v.evidence["threshold"] = cfg.low_imports_threshold;
  }
  return v;
}

}  // namespace

RuleVerdict evaluate_rule(const RuleId& rule, const PeImage& img, const RuleConfig& cfg) {
  bool known = std::any_of(catalog().begin(), catalog().end(),
                           [&](const RuleDescriptor& d) { return d.id == rule; });
  if (!known) fail(errc::unknown_rule, rule.str());

  RuleVerdict v{rule, false, nlohmann::json::object()};
  const std::string& n = rule.name;

  if (n == "section_name" || n == "packer_section_match") return section_name_rule(rule, img, cfg);
  if (n == "low_imports") return low_imports_rule(rule, img, cfg);

  if (n == "high_entropy" && rule.tool == "Manalyze") {
    for (const auto& s : img.sections) {
      double e = shannon_entropy(img.section_data(s));
      if (e > cfg.section_entropy_threshold) {
        v.fired = true;
        v.evidence["section"] = s.name;
        v.evidence["entropy"] = e;
        return v;
      }
    }
    return v;
  }

  // The shared whole-file predicate: pypeid.heur1, readpe.high_entropy and
  // qu1cksc0pe.IsPacked are one check published under three names.
  if ((n == "high_entropy" && rule.tool == "readpe") || n == "IsPacked" || n == "heur1") {
    PackednessVerdict w = wholefile_entropy_decide(img, cfg.entropy, rule.str());
    v.fired = w.packed;
    if (v.fired) v.evidence = w.evidence;
    return v;
  }

  if (n == "resources_size") {
    std::uint64_t rsrc = img.resource_dir ? img.resource_dir->second : 0;
    double ratio = img.raw.empty() ? 0.0 : static_cast<double>(rsrc) / img.raw.size();
    bool large = img.raw.size() > cfg.resources_file_floor;
    if (large && (!img.resource_dir || ratio < cfg.resources_min_ratio)) {
      v.fired = true;
      v.evidence["resource_bytes"] = rsrc;
      v.evidence["file_size"] = img.raw.size();
      v.evidence["ratio"] = ratio;
    }
    return v;
  }

  if (n == "rich_header") {
    if (!img.rich_header_present) {
      v.fired = true;
      v.evidence["rich_header_present"] = false;
    }
    return v;
  }

  if (n == "wx_section") {
    for (const auto& s : img.sections) {
      if (s.writable && s.executable) {
        v.fired = true;
        v.evidence["section"] = s.name;
        return v;
      }
    }
    return v;
  }

  if (n == "bad_ep_sections") {
    EpContext ep = entry_point_context(img, cfg.match.ep_window);
    if (!ep.ep_section) {
      v.fired = true;
      v.evidence["ep_section"] = nullptr;
      return v;
    }
    const std::string& name = img.sections[*ep.ep_section].name;
    if (std::find(cfg.good_ep_sections.begin(), cfg.good_ep_sections.end(), name) ==
        cfg.good_ep_sections.end()) {
      v.fired = true;
      v.evidence["ep_section"] = name;
    }
    return v;
  }

  if (n == "peid_signature_match") {
    if (!cfg.peid_db) return v;  // no database configured, nothing to match
    auto matches = match_signatures(*cfg.peid_db, img, profile_scopes("pypackerdetect"), cfg.match);
    if (!matches.empty()) {
      v.fired = true;
      v.evidence["label"] = cfg.peid_db->entries[matches.front().sig_index].label;
      v.evidence["match_count"] = matches.size();
    }
    return v;
  }

  if (n == "HasModified_DOS_Message") {
    bool has = contains_bytes(ByteSpan(img.dos_stub.data(), img.dos_stub.size()), cfg.dos_message);
    if (!has) {
      v.fired = true;
      v.evidence["dos_stub_bytes"] = img.dos_stub.size();
    }
    return v;
  }

  if (n == "HasOverlay") {
    auto ov = overlay_range(img);
    if (ov && ov->second > 0) {
      v.fired = true;
      v.evidence["overlay_offset"] = ov->first;
      v.evidence["overlay_length"] = ov->second;
    }
    return v;
  }

  if (n == "ImportTableIsBad") {
    if (img.import_table_bad) {
      v.fired = true;
      v.evidence["import_dir_rva"] = img.import_dir_rva;
    }
    return v;
  }

  if (n == "IsBeyondImageSize") {
    bool beyond_entry = img.entry_point_rva >= img.image_size;
    bool beyond_section = std::any_of(img.sections.begin(), img.sections.end(),
                                      [](const SectionInfo& s) { return s.raw_truncated; });
    if (beyond_entry || beyond_section) {
      v.fired = true;
      v.evidence["entry_beyond_image"] = beyond_entry;
      v.evidence["section_beyond_file"] = beyond_section;
    }
    return v;
  }

  if (n == "string_name_match") {
    for (const auto& [marker, family] : cfg.marker_table.entries) {
      if (contains_bytes(ByteSpan(img.raw.data(), img.raw.size()), marker)) {
        v.fired = true;
        v.evidence["marker"] = marker;
        v.evidence["family_hint"] = family;
        return v;
      }
    }
    return v;
  }

  fail(errc::unknown_rule, rule.str());
}

PackednessVerdict evaluate_ruleset(const RuleSet& rs, const PeImage& img, const RuleConfig& cfg) {
  if (rs.members.empty()) fail(errc::config_invalid, "ruleset '" + rs.name + "' has no members");
  PackednessVerdict v;
  v.detector_id = rs.name;
  nlohmann::json fired = nlohmann::json::object();
  bool any = false, all = true;
  for (const auto& id : rs.members) {
    RuleVerdict rv = evaluate_rule(id, img, cfg);
    any = any || rv.fired;
    all = all && rv.fired;
    if (rv.fired) fired[id.str()] = rv.evidence;
  }
  v.packed = rs.combiner == RuleCombiner::ANY ? any : all;
  v.evidence["combiner"] = rs.combiner == RuleCombiner::ANY ? "ANY" : "ALL";
  v.evidence["fired"] = std::move(fired);
  return v;
}

const std::vector<RuleSet>& named_rulesets() {
  static const std::vector<RuleSet> sets = [] {
    auto tool_rules = [](const std::string& tool) {
      std::vector<RuleId> ids;
      for (const auto& d : catalog())
        if (d.id.tool == tool) ids.push_back(d.id);
      return ids;
    };
    std::vector<RuleSet> s;
    s.push_back({"Manalyze(heur1)", tool_rules("Manalyze"), RuleCombiner::ANY});
    s.push_back({"PyPackerDetect(heur1)", tool_rules("PyPackerDetect"), RuleCombiner::ANY});
    s.push_back({"qu1cksc0pe(heur1)", tool_rules("qu1cksc0pe"), RuleCombiner::ANY});
    s.push_back({"pypeid(heur1)", {{"pypeid", "heur1"}}, RuleCombiner::ANY});
    s.push_back({"readpe(heur1)", {{"readpe", "high_entropy"}}, RuleCombiner::ANY});
    s.push_back({"readpe(heur2)", {{"readpe", "section_name"}}, RuleCombiner::ANY});
    return s;
  }();
  return sets;
}

const RuleSet& ruleset_by_name(const std::string& name) {
  for (const auto& rs : named_rulesets())
    if (rs.name == name) return rs;
  fail(errc::config_invalid, "unknown ruleset '" + name + "'");
}

}  // namespace packerlab
