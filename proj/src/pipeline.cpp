#include "packerlab/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <thread>

#include "packerlab/errors.hpp"

namespace packerlab {

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(errc::io_error, "cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

Bytes slurp_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(errc::io_error, "cannot read " + path.string());
  return Bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  std::size_t nw = workers > 0 ? static_cast<std::size_t>(workers)
                               : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  nw = std::min(nw, n == 0 ? 1 : n);
  if (nw <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (std::size_t w = 0; w < nw; ++w)
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace

SuiteConfig SuiteConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  SuiteConfig cfg;
  auto path_of = [&](const char* key) -> fs::path {
    if (!j.contains(key)) return {};
    return resolve(base_dir, j.at(key).get<std::string>());
  };
  cfg.corpus = path_of("corpus");
  cfg.registry = path_of("registry");
  cfg.alias_table = path_of("alias_table");
  cfg.section_table = path_of("section_table");
  cfg.marker_table = path_of("marker_table");
  cfg.detector_modules = path_of("detector_modules");
  if (j.contains("store")) cfg.store = resolve(base_dir, j.at("store").get<std::string>());
  if (j.contains("signature_dbs")) {
    const auto& dbs = j.at("signature_dbs");
    if (dbs.contains("target"))
      cfg.target_db = resolve(base_dir, dbs.at("target").get<std::string>());
    if (dbs.contains("donors"))
      for (const auto& d : dbs.at("donors"))
        cfg.donor_dbs.push_back(resolve(base_dir, d.get<std::string>()));
  }
  cfg.workers = j.value("workers", 0);
  cfg.seed = j.value("seed", std::uint64_t{0});
  cfg.heuristic_target = j.value("heuristic_target", cfg.heuristic_target);
  cfg.ep_window = j.value("ep_window", cfg.ep_window);

  if (j.contains("entropy")) {
    const auto& e = j.at("entropy");
    cfg.entropy.block_size = e.value("block_size", cfg.entropy.block_size);
    cfg.entropy.bintropy_avg_threshold =
        e.value("bintropy_avg_threshold", cfg.entropy.bintropy_avg_threshold);
    cfg.entropy.bintropy_max_threshold =
        e.value("bintropy_max_threshold", cfg.entropy.bintropy_max_threshold);
    cfg.entropy.reminder_ep_entropy_threshold =
        e.value("reminder_ep_entropy_threshold", cfg.entropy.reminder_ep_entropy_threshold);
    cfg.entropy.wholefile_threshold =
        e.value("wholefile_threshold", cfg.entropy.wholefile_threshold);
    cfg.entropy.exclude_zero_blocks =
        e.value("exclude_zero_blocks", cfg.entropy.exclude_zero_blocks);
    cfg.entropy.include_partial_block =
        e.value("include_partial_block", cfg.entropy.include_partial_block);
  }
  if (j.contains("validation")) {
    const auto& v = j.at("validation");
    cfg.validation.require_valid_pe =
        v.value("require_valid_pe", cfg.validation.require_valid_pe);
    cfg.validation.min_entropy_drop =
        v.value("min_entropy_drop", cfg.validation.min_entropy_drop);
    cfg.validation.min_import_growth =
        v.value("min_import_growth", cfg.validation.min_import_growth);
    cfg.validation.min_size_ratio = v.value("min_size_ratio", cfg.validation.min_size_ratio);
    cfg.validation.min_evidence = v.value("min_evidence", cfg.validation.min_evidence);
  }
  if (j.contains("fix")) {
    const auto& f = j.at("fix");
    cfg.fix.faulty_accuracy_max = f.value("faulty_accuracy_max", cfg.fix.faulty_accuracy_max);
    cfg.fix.min_support = f.value("min_support", cfg.fix.min_support);
    cfg.fix.donor_accuracy_min = f.value("donor_accuracy_min", cfg.fix.donor_accuracy_min);
    cfg.fix.target_family_recall_min =
        f.value("target_family_recall_min", cfg.fix.target_family_recall_min);
  }
  cfg.resolve_defaults();
  return cfg;
}

void SuiteConfig::resolve_defaults() {
  fs::path dir = store.has_parent_path() ? store.parent_path() : fs::path(".");
  if (oracle_snapshot.empty()) oracle_snapshot = dir / "oracle.json";
  if (diagnose_out.empty()) diagnose_out = dir / "diagnose.json";
  if (scratch.empty()) scratch = dir / "scratch";
}

ToolSuite ToolSuite::load(const SuiteConfig& cfg) {
  cfg.entropy.validate();
  cfg.validation.validate();

  ToolSuite suite;
  suite.cfg_ = cfg;
  suite.aliases_ =
      cfg.alias_table.empty() ? FamilyAliasTable::builtin() : FamilyAliasTable::load(slurp(cfg.alias_table));

  suite.rule_cfg_.entropy = cfg.entropy;
  suite.rule_cfg_.match.ep_window = cfg.ep_window;
  if (!cfg.section_table.empty())
    suite.rule_cfg_.section_table = NameTable::load(slurp(cfg.section_table));
  if (!cfg.marker_table.empty())
    suite.rule_cfg_.marker_table = NameTable::load(slurp(cfg.marker_table));

  if (!cfg.target_db.empty()) {
    suite.target_db_ = parse_signature_db(slurp(cfg.target_db));
    suite.target_db_.name = cfg.target_db.filename().string();
  }
  for (const auto& donor : cfg.donor_dbs) {
    SignatureDb db = parse_signature_db(slurp(donor));
    db.name = donor.filename().string();
    suite.donor_dbs_.push_back(std::move(db));
  }
  suite.rule_cfg_.peid_db = suite.target_db_.entries.empty() ? nullptr : &suite.target_db_;

  if (!cfg.registry.empty())
    suite.registry_ = load_registry(slurp(cfg.registry), suite.aliases_);

  if (!cfg.detector_modules.empty()) {
    nlohmann::json mods = nlohmann::json::parse(slurp(cfg.detector_modules));
    for (const auto& m : mods) suite.modules_.push_back(DetectorModule::from_json(m));
  }
  return suite;
}

ScanResult ToolSuite::scan_sample(const std::string& sample_id, ByteSpan bytes) const {
  ScanResult result;
  result.sample_id = sample_id;

  PeImage img;
  try {
    img = parse_pe(bytes);
    result.parse_status = "OK";
  } catch (const Error& e) {
    result.parse_status = e.code() == errc::not_pe ? "NOT_PE" : "TRUNCATED";
    result.record.sample_id = sample_id;
    return result;
  }

  std::vector<ToolOutput> outputs;

  // Packedness strategies.
  for (const auto& [variant, mode] : default_bintropy_variant_map()) {
    PackednessVerdict v = bintropy_decide(img, cfg_.entropy, mode);
    outputs.push_back({"Bintropy(" + variant + ")", ToolRole::PACKEDNESS, v.packed});
  }
  outputs.push_back({"REMINDer(heur1)", ToolRole::PACKEDNESS,
                     reminder_decide(img, cfg_.entropy).packed});
  for (const auto& rs : named_rulesets()) {
    PackednessVerdict v = evaluate_ruleset(rs, img, rule_cfg_);
    outputs.push_back({rs.name, ToolRole::PACKEDNESS, v.packed});
  }

  // Family identification strategies over the target db.
  std::vector<const SignatureDb*> dbs;
  if (!target_db_.entries.empty()) dbs.push_back(&target_db_);
  MatchConfig mc = rule_cfg_.match;
  auto family_tool = [&](const std::string& tool, const std::string& profile) {
    if (dbs.empty()) return;
    auto label = signature_predict(dbs, img, ScopePolicy{profile}, mc);
    outputs.push_back({tool, ToolRole::FAMILY,
                       label ? nlohmann::json(*label) : nlohmann::json(nullptr)});
  };
  family_tool("PEiD", "peid");
  family_tool("app-peid", "app-peid");
  family_tool("readpe", "readpe");
  family_tool("PyPackerDetect", "pypackerdetect");

  // Table-driven family hints.
  RuleVerdict section_hint = evaluate_rule({"Manalyze", "section_name"}, img, rule_cfg_);
  outputs.push_back({"Manalyze", ToolRole::FAMILY,
                     section_hint.fired ? nlohmann::json(section_hint.evidence.at("family_hint"))
                                        : nlohmann::json(nullptr)});
  RuleVerdict marker_hint = evaluate_rule({"qu1cksc0pe", "string_name_match"}, img, rule_cfg_);
  outputs.push_back({"qu1cksc0pe", ToolRole::FAMILY,
                     marker_hint.fired ? nlohmann::json(marker_hint.evidence.at("family_hint"))
                                       : nlohmann::json(nullptr)});

  for (const auto& mod : modules_) {
    auto fam = mod.predict_family(img, rule_cfg_);
    outputs.push_back({"module:" + mod.id, ToolRole::FAMILY,
                       fam ? nlohmann::json(*fam) : nlohmann::json(nullptr)});
  }

  result.record = unify(sample_id, outputs, aliases_);

  // Rule verdict log for localization.
  for (const auto& d : catalog())
    result.rule_log.push_back({d.id, sample_id, evaluate_rule(d.id, img, rule_cfg_).fired});

  // Per-signature match log, all scopes (the score only needs sample x sig).
  std::vector<MatchScope> all_scopes = {MatchScope::ENTRY_POINT, MatchScope::ENTRY_SECTION,
                                        MatchScope::FULL_FILE};
  auto log_db = [&](const SignatureDb& db) {
    auto& entries = result.sig_log[db.name];
    for (const auto& m : match_signatures(db, img, all_scopes, mc))
      entries.push_back({sample_id, m.sig_index});
  };
  if (!target_db_.entries.empty()) log_db(target_db_);
  for (const auto& donor : donor_dbs_) log_db(donor);

  // Predicted families for the oracle phase-1 walk.
  std::set<std::string> families;
  for (const auto& [tool, tr] : result.record.tools)
    if (tr.signature_match && *tr.signature_match != "UNKNOWN")
      families.insert(*tr.signature_match);
  result.predictions.assign(families.begin(), families.end());
  return result;
}

std::vector<ScanResult> ToolSuite::scan_corpus() const {
  SampleIndex index = ingest(cfg_.corpus);
  std::vector<const SampleEntry*> files;
  for (const auto& e : index.entries) {
    if (e.paths.front() == (cfg_.corpus / "manifest.json").string()) continue;
    files.push_back(&e);
    sample_paths_[e.sha256] = e.paths.front();
  }

  std::vector<ScanResult> results(files.size());
  parallel_for(files.size(), cfg_.workers, [&](std::size_t i) {
    Bytes bytes = slurp_bytes(files[i]->paths.front());
    results[i] = scan_sample(files[i]->sha256, ByteSpan(bytes.data(), bytes.size()));
  });
  return results;
}

OracleSnapshot ToolSuite::run_oracle(const std::vector<ScanResult>& scans,
                                     std::vector<ContractVerdict>* verdicts) const {
  HarnessConfig harness;
  harness.scratch_dir = cfg_.scratch;

  std::vector<OracleLabel> labels(scans.size());
  std::vector<std::vector<ContractVerdict>> logs(scans.size());
  parallel_for(scans.size(), cfg_.workers, [&](std::size_t i) {
    const auto& scan = scans[i];
    auto it = sample_paths_.find(scan.sample_id);
    if (it == sample_paths_.end()) fail(errc::io_error, "no path recorded for " + scan.sample_id);
    Bytes bytes = slurp_bytes(it->second);
    labels[i] = derive_oracle_label(scan.sample_id, ByteSpan(bytes.data(), bytes.size()),
                                    scan.predictions, registry_, cfg_.validation, harness,
                                    "NOT_PACKED", &logs[i]);
  });

  OracleSnapshot snap;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    snap.labels[labels[i].sample_id] = labels[i];
    if (verdicts) verdicts->insert(verdicts->end(), logs[i].begin(), logs[i].end());
  }
  snap.finalize();
  return snap;
}

nlohmann::json DiagnoseOutput::to_json() const {
  nlohmann::json sig_json = nlohmann::json::object();
  for (const auto& [db, scores] : sig_scores) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : scores) arr.push_back(s.to_json());
    sig_json[db] = std::move(arr);
  }
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& p : rule_profiles) profiles.push_back(p.to_json());
  auto rows_json = [](const std::vector<ReportRow>& rows) { return report_json(rows); };
  return nlohmann::json{{"oracle_run_id", oracle_run_id},
                        {"family_counts", family_counts},
                        {"family_rows", rows_json(family_rows)},
                        {"packedness_rows", rows_json(packedness_rows)},
                        {"rule_rows", rows_json(rule_rows)},
                        {"sig_scores", std::move(sig_json)},
                        {"rule_profiles", std::move(profiles)},
                        {"parse_failures", parse_failures}};
}

DiagnoseOutput DiagnoseOutput::from_json(const nlohmann::json& j) {
  DiagnoseOutput out;
  out.oracle_run_id = j.at("oracle_run_id").get<std::string>();
  for (const auto& [fam, count] : j.at("family_counts").items())
    out.family_counts[fam] = count.get<std::uint64_t>();
  auto rows_from = [](const nlohmann::json& arr) {
    std::vector<ReportRow> rows;
    for (const auto& r : arr) {
      ReportRow row;
      row.tool = r.at("tool").get<std::string>();
      row.family = r.at("family").get<std::string>();
      row.metrics = Metrics::from_counts(
          r.at("counts").at("tp").get<std::uint64_t>(), r.at("counts").at("fp").get<std::uint64_t>(),
          r.at("counts").at("fn").get<std::uint64_t>(), r.at("counts").at("tn").get<std::uint64_t>());
      rows.push_back(std::move(row));
    }
    return rows;
  };
  out.family_rows = rows_from(j.at("family_rows"));
  out.packedness_rows = rows_from(j.at("packedness_rows"));
  out.rule_rows = rows_from(j.at("rule_rows"));
  for (const auto& [db, arr] : j.at("sig_scores").items()) {
    std::vector<SignatureScore> scores;
    for (const auto& s : arr) scores.push_back(SignatureScore::from_json(s));
    out.sig_scores[db] = std::move(scores);
  }
  for (const auto& p : j.at("rule_profiles"))
    out.rule_profiles.push_back(RuleProfile::from_json(p));
  out.parse_failures = j.value("parse_failures", std::uint64_t{0});
  return out;
}

DiagnoseOutput ToolSuite::diagnose(const std::vector<ScanResult>& scans,
                                   const OracleSnapshot& snapshot) const {
  DiagnoseOutput out;
  out.oracle_run_id = snapshot.run_id;
  out.family_counts = snapshot.family_counts();

  // Scoring runs over samples present in both the scan set and the oracle.
  std::map<std::string, OracleLabel> oracle;
  std::vector<const ScanResult*> ok_scans;
  for (const auto& scan : scans) {
    if (scan.parse_status != "OK") {
      ++out.parse_failures;
      continue;
    }
    auto it = snapshot.labels.find(scan.sample_id);
    if (it == snapshot.labels.end())
      fail(errc::oracle_mismatch, "scan sample missing from oracle snapshot");
    oracle[scan.sample_id] = it->second;
    ok_scans.push_back(&scan);
  }

  // Tool-level family scores. A merged-role tool lands in both sets.
  std::set<std::string> family_tools, packedness_tools;
  for (const auto* scan : ok_scans)
    for (const auto& [tool, tr] : scan->record.tools) {
      if (tr.heur)
        packedness_tools.insert(tool);
      else
        family_tools.insert(tool);
      if (tr.signature_match) family_tools.insert(tool);
    }

  std::set<std::string> families_present;
  for (const auto& [sample, label] : oracle)
    if (label.packed() && label.family != "UNKNOWN_PACKED") families_present.insert(label.family);

  for (const auto& tool : family_tools) {
    std::map<std::string, std::optional<std::string>> preds;
    for (const auto* scan : ok_scans) {
      auto it = scan->record.tools.find(tool);
      preds[scan->sample_id] =
          it != scan->record.tools.end() ? it->second.signature_match : std::nullopt;
    }
    for (const auto& fam : families_present)
      out.family_rows.push_back({tool, fam, score_family(preds, oracle, fam)});
  }

  for (const auto& tool : packedness_tools) {
    std::map<std::string, bool> verdicts;
    for (const auto* scan : ok_scans) {
      auto it = scan->record.tools.find(tool);
      verdicts[scan->sample_id] =
          it != scan->record.tools.end() && it->second.heur && *it->second.heur;
    }
    out.packedness_rows.push_back({tool, "(packed)", score_packedness(verdicts, oracle)});
  }

  // Rule profiles.
  std::vector<RuleLogEntry> rule_log;
  for (const auto* scan : ok_scans)
    rule_log.insert(rule_log.end(), scan->rule_log.begin(), scan->rule_log.end());
  out.rule_profiles = profile_rules(rule_log, oracle);
  for (const auto& p : out.rule_profiles)
    out.rule_rows.push_back({p.rule.tool, p.rule.name, p.aggregate});

  // Composite (tool-level) profiles, computed from the recorded heur verdicts
  // so ANY-union recall is exact. Keyed under the pseudo-tool "composite".
  for (const auto& tool : packedness_tools) {
    std::vector<RuleLogEntry> comp_log;
    for (const auto* scan : ok_scans) {
      auto it = scan->record.tools.find(tool);
      bool fired = it != scan->record.tools.end() && it->second.heur && *it->second.heur;
      comp_log.push_back({{"composite", tool}, scan->sample_id, fired});
    }
    auto profiles = profile_rules(comp_log, oracle);
    out.rule_profiles.insert(out.rule_profiles.end(), profiles.begin(), profiles.end());
  }

  // Signature scores per db.
  auto score_db = [&](const SignatureDb& db) {
    std::vector<SigMatchLogEntry> log;
    for (const auto* scan : ok_scans) {
      auto it = scan->sig_log.find(db.name);
      if (it != scan->sig_log.end()) log.insert(log.end(), it->second.begin(), it->second.end());
    }
    out.sig_scores[db.name] = score_signatures(db, log, oracle, aliases_);
  };
  if (!target_db_.entries.empty()) score_db(target_db_);
  for (const auto& donor : donor_dbs_) score_db(donor);

  sort_rows_by_recall(out.family_rows);
  sort_rows_by_recall(out.packedness_rows);
  sort_rows_by_recall(out.rule_rows);
  return out;
}

RepairPlan ToolSuite::plan_signature_repair(const DiagnoseOutput& diag) const {
  if (target_db_.entries.empty()) fail(errc::config_invalid, "no target signature db configured");
  auto target_it = diag.sig_scores.find(target_db_.name);
  if (target_it == diag.sig_scores.end())
    fail(errc::oracle_mismatch, "diagnose output lacks scores for the target db");

  ScoredDb target_scored{diag.oracle_run_id, target_db_.name, target_it->second};
  std::vector<ScoredDb> donor_storage;
  donor_storage.reserve(donor_dbs_.size());
  std::vector<const SignatureDb*> donor_refs;
  for (const auto& donor : donor_dbs_) {
    auto it = diag.sig_scores.find(donor.name);
    if (it == diag.sig_scores.end()) continue;
    donor_storage.push_back({diag.oracle_run_id, donor.name, it->second});
    donor_refs.push_back(&donor);
  }
  std::vector<std::pair<const SignatureDb*, const ScoredDb*>> donors;
  for (std::size_t i = 0; i < donor_storage.size(); ++i)
    donors.push_back({donor_refs[i], &donor_storage[i]});

  return plan_signature_fix(target_db_, target_scored, donors, diag.family_counts, cfg_.fix);
}

RuleSet ToolSuite::plan_heuristic_repair(const DiagnoseOutput& diag) const {
  const RuleSet& target = ruleset_by_name(cfg_.heuristic_target);

  RuleId composite_key{"composite", target.name};
  const RuleProfile* target_profile = nullptr;
  std::vector<RuleProfile> candidates;
  for (const auto& p : diag.rule_profiles) {
    if (p.rule == composite_key) {
      target_profile = &p;
      continue;
    }
    if (p.rule.tool == "composite") continue;
    if (std::find(target.members.begin(), target.members.end(), p.rule) == target.members.end())
      candidates.push_back(p);
  }
  if (!target_profile)
    fail(errc::oracle_mismatch, "diagnose output has no composite profile for " + target.name);

  std::vector<std::string> families;
  for (const auto& [fam, count] : diag.family_counts) families.push_back(fam);

  return plan_heuristic_fix(target, *target_profile, candidates, families, cfg_.fix);
}

std::vector<DetectorModule> ToolSuite::plan_unpacker_repair() const {
  std::vector<DetectorModule> modules;
  for (const auto& spec : registry_) {
    if (spec.kind == UnpackerKind::GENERIC) continue;
    if (spec.invocation.rfind("mock:", 0) == 0) {
      auto id = mock_id_by_name(spec.invocation.substr(5));
      if (!id) continue;
      modules.push_back(build_unpacker_detector(spec, mock_detector_signatures(*id), {}));
    }
    // Real unpackers would need authored fragments; none ship by default.
  }
  return modules;
}

std::string compute_run_id(const nlohmann::json& config_json, std::uint64_t seed,
                           std::size_t store_lines) {
  std::string blob = config_json.dump() + "|" + std::to_string(seed) + "|" +
                     std::to_string(store_lines);
  return sha256_hex(ByteSpan(reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()))
      .substr(0, 16);
}

}  // namespace packerlab
