#include "packerlab/normalizer.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <sstream>

#include "packerlab/errors.hpp"

namespace packerlab {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

const char* alias_kind_name(AliasKind k) {
  switch (k) {
    case AliasKind::PREFIX: return "prefix";
    case AliasKind::SUBSTR: return "substr";
    case AliasKind::REGEX: return "regex";
  }
  return "?";
}

// Position/length of the matched region, or npos.
std::size_t find_match(const AliasRule& rule, const std::string& raw, std::size_t* len) {
  switch (rule.kind) {
    case AliasKind::PREFIX: {
      if (raw.size() < rule.pattern.size()) return std::string::npos;
      if (lower(raw.substr(0, rule.pattern.size())) != lower(rule.pattern))
        return std::string::npos;
      *len = rule.pattern.size();
      return 0;
    }
    case AliasKind::SUBSTR: {
      std::string hay = lower(raw), needle = lower(rule.pattern);
      std::size_t pos = hay.find(needle);
      if (pos == std::string::npos) return std::string::npos;
      *len = needle.size();
      return pos;
    }
    case AliasKind::REGEX: {
      std::smatch m;
      try {
        std::regex re(rule.pattern);
        if (!std::regex_search(raw, m, re)) return std::string::npos;
      } catch (const std::regex_error&) {
        return std::string::npos;
      }
      *len = static_cast<std::size_t>(m.length(0));
      return static_cast<std::size_t>(m.position(0));
    }
  }
  return std::string::npos;
}

// Version token `v?\d[\w.]*` immediately after the family token.
std::optional<std::string> extract_version(const std::string& raw, std::size_t after) {
  std::size_t i = after;
  while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t')) ++i;
  if (i >= raw.size()) return std::nullopt;
  std::size_t start = i;
  if (raw[i] == 'v' || raw[i] == 'V') ++i;
  if (i >= raw.size() || !std::isdigit(static_cast<unsigned char>(raw[i]))) return std::nullopt;
  std::size_t digits_begin = i;
  while (i < raw.size() &&
         (std::isalnum(static_cast<unsigned char>(raw[i])) || raw[i] == '.' || raw[i] == '_'))
    ++i;
  (void)start;
  return raw.substr(digits_begin, i - digits_begin);
}

}  // namespace

const std::vector<std::string>& canonical_families() {
  static const std::vector<std::string> families = {
      "UPX",     "Themida",   "WinUpack", "ASPack",     "Petite",
      "Armadillo", "MPRESS",  "PECompact", "MEW",       "NSPack",
      "PESpin",  "PyInstaller", "ConfuserEx", "Molebox", "tElock",
      "MOCKX",   "MOCKR",     "MOCKN",
  };
  return families;
}

FamilyAliasTable FamilyAliasTable::builtin() {
  FamilyAliasTable t;
  // Aliases that differ from the family spelling come first so their raw
  // forms cannot fall through to a broader rule.
  t.rules.push_back({AliasKind::SUBSTR, "WinLicense", "Themida"});
  t.rules.push_back({AliasKind::SUBSTR, "WinUpack", "WinUpack"});
  t.rules.push_back({AliasKind::SUBSTR, "Upack", "WinUpack"});
  for (const auto& fam : canonical_families())
    t.rules.push_back({AliasKind::SUBSTR, fam, fam});
  return t;
}

FamilyAliasTable FamilyAliasTable::load(const std::string& text) {
  FamilyAliasTable t;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind, pattern, family;
    if (!std::getline(ls, kind, '\t') || !std::getline(ls, pattern, '\t') ||
        !std::getline(ls, family, '\t'))
      fail(errc::config_invalid, "alias table line needs kind<TAB>pattern<TAB>family: " + line);
    while (!family.empty() && (family.back() == '\r' || family.back() == '\n')) family.pop_back();
    AliasKind k;
    if (kind == "prefix")
      k = AliasKind::PREFIX;
    else if (kind == "substr")
      k = AliasKind::SUBSTR;
    else if (kind == "regex")
      k = AliasKind::REGEX;
    else
      fail(errc::config_invalid, "unknown alias kind '" + kind + "'");
    t.rules.push_back({k, pattern, family});
  }
  return t;
}

std::string FamilyAliasTable::serialize() const {
  std::string out;
  for (const auto& r : rules)
    out += std::string(alias_kind_name(r.kind)) + "\t" + r.pattern + "\t" + r.family + "\n";
  return out;
}

CanonicalLabel canonicalize_label(const std::string& raw, const FamilyAliasTable& table) {
  CanonicalLabel out;
  out.raw = raw;
  for (const auto& rule : table.rules) {
    std::size_t len = 0;
    std::size_t pos = find_match(rule, raw, &len);
    if (pos == std::string::npos) continue;
    out.family = rule.family;
    out.version = extract_version(raw, pos + len);
    return out;
  }
  out.family = "UNKNOWN";
  return out;
}

namespace {

std::optional<bool> parse_packedness(const nlohmann::json& payload) {
  if (payload.is_boolean()) return payload.get<bool>();
  if (payload.is_number()) return payload.get<double>() != 0.0;
  if (payload.is_string()) {
    std::string s = lower(payload.get<std::string>());
    if (s == "true" || s == "yes" || s == "packed" || s == "1") return true;
    if (s == "false" || s == "no" || s == "not packed" || s == "unpacked" || s == "0")
      return false;
  }
  return std::nullopt;
}

}  // namespace

UnifiedRecord unify(const std::string& sample_id, const std::vector<ToolOutput>& outputs,
                    const FamilyAliasTable& table) {
  if (sample_id.empty()) fail(errc::config_invalid, "sample id must be non-empty");
  UnifiedRecord rec;
  rec.sample_id = sample_id;
  std::vector<std::pair<std::string, ToolRole>> seen;
  for (const auto& out : outputs) {
    auto key = std::make_pair(out.tool, out.role);
    if (std::find(seen.begin(), seen.end(), key) != seen.end())
      fail(errc::duplicate_tool, "tool '" + out.tool + "' submitted the same role twice");
    seen.push_back(key);

    ToolResult& tr = rec.tools[out.tool];
    if (out.role == ToolRole::PACKEDNESS) {
      tr.heur = parse_packedness(out.payload);
      tr.raw = out.payload;
    } else {
      if (out.payload.is_string())
        tr.signature_match = canonicalize_label(out.payload.get<std::string>(), table).family;
      if (tr.raw.is_null())
        tr.raw = out.payload;
      else if (!out.payload.is_null())
        tr.raw = out.payload;
    }
  }
  return rec;
}

nlohmann::json unified_record_to_json(const UnifiedRecord& rec) {
  nlohmann::json tools = nlohmann::json::object();
  for (const auto& [name, tr] : rec.tools) {
    nlohmann::json t = nlohmann::json::object();
    if (tr.heur) t["heur"] = *tr.heur ? "yes" : "no";
    if (tr.signature_match) t["signature_match"] = *tr.signature_match;
    if (!tr.raw.is_null()) t["raw"] = tr.raw;
    tools[name] = std::move(t);
  }
  return nlohmann::json{{"sample", rec.sample_id}, {"tools", std::move(tools)}};
}

UnifiedRecord unified_record_from_json(const nlohmann::json& j) {
  UnifiedRecord rec;
  rec.sample_id = j.at("sample").get<std::string>();
  for (const auto& [name, t] : j.at("tools").items()) {
    ToolResult tr;
    if (t.contains("heur")) tr.heur = t.at("heur").get<std::string>() == "yes";
    if (t.contains("signature_match"))
      tr.signature_match = t.at("signature_match").get<std::string>();
    if (t.contains("raw")) tr.raw = t.at("raw");
    rec.tools[name] = std::move(tr);
  }
  return rec;
}

VtReport read_vt_report(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    fail(errc::malformed_report, "report is not a JSON object");
  if (!j.contains("packers") || !j.at("packers").is_object())
    fail(errc::malformed_report, "report has no 'packers' object");

  VtReport rep;
  if (j.contains("sample") && j.at("sample").is_string())
    rep.sample = j.at("sample").get<std::string>();
  for (const auto& [subtool, label] : j.at("packers").items()) {
    if (!label.is_string()) continue;
    rep.outputs.push_back({"VT " + subtool, ToolRole::FAMILY, label});
  }
  return rep;
}

}  // namespace packerlab
