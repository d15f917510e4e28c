#include "packerlab/repair.hpp"

#include <algorithm>
#include <set>

#include "packerlab/corpus.hpp"
#include "packerlab/errors.hpp"

namespace packerlab {

const char* repair_kind_name(RepairKind k) {
  switch (k) {
    case RepairKind::SIGNATURE_FIX: return "SIGNATURE_FIX";
    case RepairKind::HEURISTIC_FIX: return "HEURISTIC_FIX";
    case RepairKind::UNPACKER_FIX: return "UNPACKER_FIX";
  }
  return "?";
}

nlohmann::json RepairPlan::to_json() const {
  nlohmann::json removals_json = nlohmann::json::array();
  for (const auto& r : removals)
    removals_json.push_back({{"db", r.ref.db},
                             {"label", r.ref.label},
                             {"pattern_digest", r.ref.pattern_digest},
                             {"rationale", r.rationale}});
  nlohmann::json additions_json = nlohmann::json::array();
  for (const auto& a : additions)
    additions_json.push_back({{"label", a.sig.label},
                              {"pattern", a.sig.pattern_text()},
                              {"ep_only", a.sig.ep_only},
                              {"source_db", a.sig.source_db},
                              {"rationale", a.rationale}});
  return nlohmann::json{{"kind", repair_kind_name(kind)},
                        {"oracle_run_id", oracle_run_id},
                        {"target_db", target_db},
                        {"removals", std::move(removals_json)},
                        {"additions", std::move(additions_json)}};
}

RepairPlan RepairPlan::from_json(const nlohmann::json& j) {
  RepairPlan plan;
  std::string kind = j.at("kind").get<std::string>();
  plan.kind = kind == "HEURISTIC_FIX"  ? RepairKind::HEURISTIC_FIX
              : kind == "UNPACKER_FIX" ? RepairKind::UNPACKER_FIX
                                       : RepairKind::SIGNATURE_FIX;
  plan.oracle_run_id = j.at("oracle_run_id").get<std::string>();
  plan.target_db = j.at("target_db").get<std::string>();
  for (const auto& r : j.at("removals")) {
    PlannedRemoval rem;
    rem.ref = {r.at("db").get<std::string>(), r.at("label").get<std::string>(),
               r.at("pattern_digest").get<std::string>()};
    rem.rationale = r.value("rationale", "");
    plan.removals.push_back(std::move(rem));
  }
  for (const auto& a : j.at("additions")) {
    PlannedAddition add;
    std::string text = "[x]\nsignature = " + a.at("pattern").get<std::string>() + "\nep_only = " +
                       (a.at("ep_only").get<bool>() ? "true" : "false") + "\n";
    SignatureDb tmp = parse_signature_db(text);
    add.sig = tmp.entries.front();
    add.sig.label = a.at("label").get<std::string>();
    add.sig.source_db = a.value("source_db", "");
    add.rationale = a.value("rationale", "");
    plan.additions.push_back(std::move(add));
  }
  return plan;
}

namespace {

std::string dedup_key(const Signature& s) {
  return s.pattern_text() + (s.ep_only ? "|ep" : "|any");
}

// Union recall over the surviving signatures' correctly-covered samples.
std::map<std::string, double> post_removal_recall(
    const SignatureDb& target, const std::vector<SignatureScore>& scores,
    const std::set<std::size_t>& removed,
    const std::map<std::string, std::uint64_t>& family_counts) {
  std::map<std::string, std::set<std::string>> covered;
  for (const auto& s : scores) {
    if (removed.count(s.sig_index)) continue;
    for (const auto& [fam, tally] : s.per_family)
      for (const auto& sample : tally.correct_samples) covered[fam].insert(sample);
  }
  std::map<std::string, double> recall;
  for (const auto& [fam, count] : family_counts) {
    auto it = covered.find(fam);
    std::uint64_t hit = it == covered.end() ? 0 : it->second.size();
    recall[fam] = count > 0 ? 100.0 * static_cast<double>(hit) / static_cast<double>(count) : 0.0;
  }
  (void)target;
  return recall;
}

}  // namespace

RepairPlan plan_signature_fix(const SignatureDb& target, const ScoredDb& target_scores,
                              const std::vector<std::pair<const SignatureDb*, const ScoredDb*>>& donors,
                              const std::map<std::string, std::uint64_t>& family_counts,
                              const FixThresholds& th) {
  for (const auto& [db, scored] : donors) {
    (void)db;
    if (scored->oracle_run_id != target_scores.oracle_run_id)
      fail(errc::oracle_mismatch, "donor scores come from a different oracle run");
  }

  RepairPlan plan;
  plan.kind = RepairKind::SIGNATURE_FIX;
  plan.oracle_run_id = target_scores.oracle_run_id;
  plan.target_db = target.name;

  std::set<std::size_t> removed;
  for (const auto& s : target_scores.scores) {
    if (s.matches >= th.min_support && s.accuracy <= th.faulty_accuracy_max) {
      removed.insert(s.sig_index);
      PlannedRemoval rem;
      rem.ref = {target.name, target.entries[s.sig_index].label,
                 target.entries[s.sig_index].pattern_digest()};
      rem.rationale = "accuracy " + std::to_string(s.accuracy) + " over " +
                      std::to_string(s.matches) + " matches";
      plan.removals.push_back(std::move(rem));
    }
  }

  auto recall = post_removal_recall(target, target_scores.scores, removed, family_counts);
  std::set<std::string> weak;
  for (const auto& [fam, r] : recall)
    if (r < th.target_family_recall_min) weak.insert(fam);

  std::set<std::string> taken;
  for (std::size_t i = 0; i < target.entries.size(); ++i)
    if (!removed.count(i)) taken.insert(dedup_key(target.entries[i]));

  for (const auto& [db, scored] : donors) {
    for (const auto& s : scored->scores) {
      if (s.matches == 0 || s.accuracy < th.donor_accuracy_min) continue;
      if (!weak.count(s.family)) continue;
      const Signature& sig = db->entries[s.sig_index];
      if (!taken.insert(dedup_key(sig)).second) continue;
      PlannedAddition add;
      add.sig = sig;
      add.sig.source_db = db->name;
      add.rationale = "family " + s.family + " post-removal recall " +
                      std::to_string(recall[s.family]) + "% below floor; donor accuracy " +
                      std::to_string(s.accuracy) + " over " + std::to_string(s.matches) +
                      " matches";
      plan.additions.push_back(std::move(add));
    }
  }
  return plan;
}

SignatureDb apply_signature_fix(const SignatureDb& db, const RepairPlan& plan, bool idempotent) {
  if (plan.kind != RepairKind::SIGNATURE_FIX)
    fail(errc::config_invalid, "plan kind is not SIGNATURE_FIX");
  if (plan.target_db != db.name)
    fail(errc::stale_plan, "plan targets db '" + plan.target_db + "', got '" + db.name + "'");

  std::set<std::size_t> to_remove;
  for (const auto& rem : plan.removals) {
    bool found = false;
    for (std::size_t i = 0; i < db.entries.size(); ++i) {
      if (to_remove.count(i)) continue;
      if (db.entries[i].label == rem.ref.label &&
          db.entries[i].pattern_digest() == rem.ref.pattern_digest) {
        to_remove.insert(i);
        found = true;
        break;
      }
    }
    if (!found && !idempotent)
      fail(errc::stale_plan, "removal no longer resolves: " + rem.ref.label);
  }

  SignatureDb out;
  out.name = db.name;
  std::set<std::string> keys;
  for (std::size_t i = 0; i < db.entries.size(); ++i) {
    if (to_remove.count(i)) continue;
    out.entries.push_back(db.entries[i]);
    keys.insert(dedup_key(db.entries[i]));
  }
  for (const auto& add : plan.additions) {
    if (!keys.insert(dedup_key(add.sig)).second) {
      if (idempotent) continue;
      fail(errc::stale_plan, "addition already present: " + add.sig.label);
    }
    out.entries.push_back(add.sig);
  }
  return out;
}

RuleSet plan_heuristic_fix(const RuleSet& target, const RuleProfile& target_profile,
                           const std::vector<RuleProfile>& candidates,
                           const std::vector<std::string>& families, const FixThresholds& th) {
  RuleSet out = target;
  out.combiner = RuleCombiner::ANY;

  auto target_recall = [&](const std::string& fam) {
    auto it = target_profile.per_family.find(fam);
    return it == target_profile.per_family.end() ? 0.0 : it->second.recall;
  };

  for (const auto& cand : candidates) {
    if (std::find(out.members.begin(), out.members.end(), cand.rule) != out.members.end())
      continue;
    bool helps = false;
    for (const auto& fam : families) {
      if (target_recall(fam) >= th.target_family_recall_min) continue;
      auto it = cand.per_family.find(fam);
      if (it != cand.per_family.end() && it->second.recall >= th.target_family_recall_min) {
        helps = true;
        break;
      }
    }
    if (helps) out.members.push_back(cand.rule);
  }
  return out;
}

std::optional<std::string> DetectorModule::predict_family(const PeImage& img,
                                                          const RuleConfig& cfg) const {
  if (!signatures.entries.empty()) {
    auto matches = match_signatures(signatures, img,
                                    {MatchScope::ENTRY_POINT, MatchScope::FULL_FILE}, cfg.match);
    if (!matches.empty()) return family;
  }
  return std::nullopt;
}

bool DetectorModule::packedness(const PeImage& img, const RuleConfig& cfg) const {
  if (predict_family(img, cfg)) return true;
  for (const auto& id : rules)
    if (evaluate_rule(id, img, cfg).fired) return true;
  return false;
}

nlohmann::json DetectorModule::to_json() const {
  nlohmann::json rules_json = nlohmann::json::array();
  for (const auto& r : rules) rules_json.push_back({{"tool", r.tool}, {"name", r.name}});
  return nlohmann::json{{"id", id},
                        {"family", family},
                        {"signatures", serialize_signature_db(signatures)},
                        {"rules", std::move(rules_json)}};
}

DetectorModule DetectorModule::from_json(const nlohmann::json& j) {
  DetectorModule m;
  m.id = j.at("id").get<std::string>();
  m.family = j.at("family").get<std::string>();
  std::string db_text = j.at("signatures").get<std::string>();
  if (!db_text.empty()) {
    m.signatures = parse_signature_db(db_text);
    m.signatures.name = m.id;
  }
  for (const auto& r : j.at("rules"))
    m.rules.push_back({r.at("tool").get<std::string>(), r.at("name").get<std::string>()});
  return m;
}

DetectorModule build_unpacker_detector(const UnpackerSpec& spec, const SignatureDb& signatures,
                                       const std::vector<RuleId>& rules) {
  if (spec.kind == UnpackerKind::GENERIC)
    fail(errc::config_invalid, "generic unpackers carry no family detection logic");
  if (signatures.entries.empty() && rules.empty())
    fail(errc::empty_module, "detector module needs signatures or rules");
  DetectorModule m;
  m.id = spec.id;
  m.family = spec.families.front();
  m.signatures = signatures;
  m.signatures.name = spec.id;
  m.rules = rules;
  return m;
}

SignatureDb mock_detector_signatures(MockId id) {
  const MockFamily& fam = mock_family(id);
  // Stub prologue at the entry point plus the marker anywhere in the file.
  auto hex = [](ByteSpan bytes) {
    static const char* digits = "0123456789ABCDEF";
    std::string out;
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      if (i) out.push_back(' ');
      out.push_back(digits[bytes[i] >> 4]);
      out.push_back(digits[bytes[i] & 0xF]);
    }
    return out;
  };
  Bytes stub = {0x60, 'M', 'O', 'C', 'K', static_cast<std::uint8_t>(fam.tag), '!', 0x01};
  Bytes marker(fam.marker, fam.marker + std::strlen(fam.marker));

  std::string text;
  text += std::string("[") + fam.name + " stub]\n";
  text += "signature = " + hex(ByteSpan(stub.data(), stub.size())) + "\n";
  text += "ep_only = true\n\n";
  text += std::string("[") + fam.name + " marker]\n";
  text += "signature = " + hex(ByteSpan(marker.data(), marker.size())) + "\n";
  text += "ep_only = false\n";

  SignatureDb db = parse_signature_db(text);
  db.name = std::string("detector-") + fam.name;
  return db;
}

}  // namespace packerlab
