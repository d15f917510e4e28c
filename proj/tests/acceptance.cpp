// Acceptance suite: one line per criterion, nonzero exit when any fails.
// Each criterion pins its tolerances in code; runtimes are bounded by design.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <thread>
#include <vector>

#include "helpers.hpp"
#include "oracles.hpp"
#include "packerlab/corpus.hpp"
#include "packerlab/diagnostics.hpp"
#include "packerlab/pipeline.hpp"
#include "packerlab/repair.hpp"

using namespace packerlab;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void criterion(int number, const char* description, const std::function<bool()>& body) {
  auto start = std::chrono::steady_clock::now();
  bool ok = false;
  std::string error;
  try {
    ok = body();
  } catch (const std::exception& e) {
    error = e.what();
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("[%s] %2d. %s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", number, description, secs,
              error.empty() ? "" : " error: ", error.c_str());
  if (!ok) ++failures;
}

struct Fixture {
  fs::path root;
  fs::path corpus_dir;
  GroundTruthManifest manifest;
  SuiteConfig cfg;

  // Samples cached by id so criteria can re-scan without touching disk again.
  std::vector<std::pair<std::string, Bytes>> samples;
};

Fixture build_fixture() {
  Fixture fx;
  fx.root = testutil::fresh_dir("acceptance");
  fx.corpus_dir = fx.root / "corpus";

  GenSpec gen;
  gen.family_counts = {{"MOCKX", 50}, {"MOCKR", 50}, {"MOCKN", 50}};
  gen.unpacked_count = 50;
  fx.manifest = generate_corpus(gen, 20260810, fx.corpus_dir);

  fx.cfg.corpus = fx.corpus_dir;
  fx.cfg.registry = testutil::data_file("registry.tsv");
  fx.cfg.target_db = testutil::data_file("userdb_main.txt");
  fx.cfg.donor_dbs = {testutil::data_file("userdb_donor.txt")};
  fx.cfg.alias_table = testutil::data_file("family_aliases.tsv");
  fx.cfg.section_table = testutil::data_file("packer_sections.tsv");
  fx.cfg.marker_table = testutil::data_file("marker_strings.tsv");
  fx.cfg.store = fx.root / "out" / "results.jsonl";
  fx.cfg.workers = 0;
  fx.cfg.resolve_defaults();

  for (const auto& entry : fs::directory_iterator(fx.corpus_dir)) {
    if (entry.path().filename() == "manifest.json") continue;
    std::ifstream f(entry.path(), std::ios::binary);
    Bytes bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    fx.samples.push_back({sha256_hex(ByteSpan(bytes.data(), bytes.size())), std::move(bytes)});
  }
  return fx;
}

double family_recall(const DiagnoseOutput& diag, const std::string& tool,
                     const std::string& family) {
  for (const auto& row : diag.family_rows)
    if (row.tool == tool && row.family == family) return row.metrics.recall;
  return 0.0;
}

}  // namespace

int main() {
  std::printf("packerlab acceptance suite\n");

  // 1 ----------------------------------------------------------------------
  criterion(1, "metric arithmetic matches the published rows (+-0.05)", [] {
    return std::abs(f1_from_percent(46.3, 53.7) - 49.7) <= 0.05 &&
           std::abs(f1_from_percent(46.8, 89.1) - 61.4) <= 0.05;
  });

  // 2 ----------------------------------------------------------------------
  criterion(2, "entropy equals the brute-force histogram oracle (1e-9, 1000 buffers)", [] {
    Rng rng(7001);
    EntropyConfig cfg;
    for (int i = 0; i < 1000; ++i) {
      std::size_t len = 1 + rng.below(64 * 1024);
      Bytes buf = rng.bytes(len);
      if (i % 7 == 0) std::fill(buf.begin(), buf.begin() + len / 2, 0);
      ByteSpan s(buf.data(), buf.size());
      if (std::abs(shannon_entropy(s) - oracles::brute_entropy(s)) >= 1e-9) return false;
      if (i % 10 == 0) {
        auto got = block_entropies(s, cfg);
        auto want = oracles::brute_block_entropies(s, cfg.block_size, cfg.exclude_zero_blocks,
                                                   cfg.include_partial_block);
        if (got.size() != want.size()) return false;
        for (std::size_t k = 0; k < got.size(); ++k)
          if (std::abs(got[k] - want[k]) >= 1e-9) return false;
      }
    }
    return true;
  });

  // 3 ----------------------------------------------------------------------
  criterion(3, "wildcard matcher equals the naive scanner (10,000 pairs, all scopes)", [] {
    Rng rng(7002);
    std::vector<MatchScope> all = {MatchScope::ENTRY_POINT, MatchScope::ENTRY_SECTION,
                                   MatchScope::FULL_FILE};
    std::size_t pairs = 0;
    for (int img_i = 0; img_i < 500; ++img_i) {
      BuildSpec spec;
      spec.sections.push_back({".a", true, false, true, rng.bytes(128 + rng.below(2048)), 0, 0});
      spec.sections.push_back({".b", true, true, false, rng.bytes(128 + rng.below(1024)), 0, 0});
      spec.entry_section = 0;
      spec.entry_offset = static_cast<std::uint32_t>(rng.below(100));
      Bytes bytes = build_minimal_pe(spec);
      PeImage img = parse_pe(ByteSpan(bytes.data(), bytes.size()));

      for (int p = 0; p < 20; ++p) {
        SignatureDb db;
        Signature sig;
        sig.label = "probe";
        std::size_t len = 1 + rng.below(5);
        bool concrete = false;
        for (std::size_t k = 0; k < len; ++k) {
          bool wild = !concrete ? (k + 1 < len && rng.below(3) == 0) : rng.below(3) == 0;
          if (!wild) concrete = true;
          // Half the probes copy real image bytes so positives are common.
          std::uint8_t v = rng.below(2) ? rng.byte() : bytes[rng.below(bytes.size())];
          sig.pattern.push_back({wild ? std::uint8_t(0) : v, wild});
        }
        sig.ep_only = rng.below(4) == 0;
        db.entries.push_back(sig);

        auto got = match_signatures(db, img, all);
        auto want = oracles::naive_scan(db, img, all, 64);
        if (got.size() != want.size()) return false;
        std::set<std::tuple<std::size_t, int, std::uint64_t>> g, w;
        for (const auto& m : got) g.insert({m.sig_index, static_cast<int>(m.scope_hit), m.offset});
        for (const auto& m : want) w.insert({m.sig_index, static_cast<int>(m.scope), m.offset});
        if (g != w) return false;
        ++pairs;
      }
    }
    return pairs == 10000;
  });

  // 4 ----------------------------------------------------------------------
  criterion(4, "signature db parse/serialize/parse fixpoint (100 generated dbs)", [] {
    Rng rng(7003);
    for (int i = 0; i < 100; ++i) {
      SignatureDb db;
      std::size_t n = 1 + rng.below(20);
      for (std::size_t e = 0; e < n; ++e) {
        Signature s;
        s.label = "Entry " + std::to_string(e) + " v" + std::to_string(rng.below(9)) + "." +
                  std::to_string(rng.below(99));
        std::size_t len = 1 + rng.below(24);
        bool concrete = false;
        for (std::size_t k = 0; k < len; ++k) {
          bool wild = rng.below(3) == 0 && !(k + 1 == len && !concrete);
          if (!wild) concrete = true;
          s.pattern.push_back({wild ? std::uint8_t(0) : rng.byte(), wild});
        }
        s.ep_only = rng.below(2) == 0;
        db.entries.push_back(std::move(s));
      }
      std::string text1 = serialize_signature_db(db);
      SignatureDb once = parse_signature_db(text1);
      std::string text2 = serialize_signature_db(once);
      SignatureDb twice = parse_signature_db(text2);
      if (text1 != text2) return false;
      if (serialize_signature_db(twice) != text2) return false;
    }
    return true;
  });

  Fixture fx = build_fixture();
  ToolSuite suite = ToolSuite::load(fx.cfg);
  auto scans = suite.scan_corpus();
  OracleSnapshot snapshot = suite.run_oracle(scans);

  // 5 ----------------------------------------------------------------------
  criterion(5, "oracle reproduces the planted manifest (50/50/50/50 corpus)", [&] {
    if (snapshot.labels.size() != 200) return false;
    for (const auto& [sha, fam] : fx.manifest.samples) {
      auto it = snapshot.labels.find(sha);
      if (it == snapshot.labels.end()) return false;
      const std::string& got = it->second.family;
      if (fam == "MOCKN" && got != "UNKNOWN_PACKED") return false;
      if (fam != "MOCKN" && got != fam) return false;
    }
    return true;
  });

  // 6 ----------------------------------------------------------------------
  criterion(6, "planted-fault signature repair restores MOCKX recall to >= 95%", [&] {
    // Cripple the target db: delete every MOCKX signature.
    SignatureDb crippled = suite.target_db();
    crippled.entries.erase(
        std::remove_if(crippled.entries.begin(), crippled.entries.end(),
                       [](const Signature& s) {
                         return s.label.find("MOCKX") != std::string::npos;
                       }),
        crippled.entries.end());
    fs::path crippled_path = fx.root / "userdb_crippled.txt";
    {
      std::ofstream f(crippled_path);
      f << serialize_signature_db(crippled);
    }

    SuiteConfig cfg = fx.cfg;
    cfg.target_db = crippled_path;
    ToolSuite crippled_suite = ToolSuite::load(cfg);
    auto crippled_scans = crippled_suite.scan_corpus();
    DiagnoseOutput diag = crippled_suite.diagnose(crippled_scans, snapshot);

    if (family_recall(diag, "PEiD", "MOCKX") != 0.0) return false;  // fault visible

    RepairPlan plan = crippled_suite.plan_signature_repair(diag);
    SignatureDb repaired = apply_signature_fix(crippled_suite.target_db(), plan);
    fs::path repaired_path = fx.root / "userdb_repaired.txt";
    {
      std::ofstream f(repaired_path);
      f << serialize_signature_db(repaired);
    }

    SuiteConfig cfg2 = fx.cfg;
    cfg2.target_db = repaired_path;
    ToolSuite repaired_suite = ToolSuite::load(cfg2);
    auto repaired_scans = repaired_suite.scan_corpus();
    DiagnoseOutput rediag = repaired_suite.diagnose(repaired_scans, snapshot);

    if (family_recall(rediag, "PEiD", "MOCKX") < 95.0) return false;

    // Repair safety on the same oracle: no surviving entry stays faulty.
    const auto& rescored = rediag.sig_scores.at(repaired_suite.target_db().name);
    FixThresholds th = fx.cfg.fix;
    for (const auto& s : rescored)
      if (s.matches >= th.min_support && s.accuracy <= th.faulty_accuracy_max) return false;
    return true;
  });

  // 7 ----------------------------------------------------------------------
  criterion(7, "heuristic fixes are recall-monotone per family; ANY >= max member", [&] {
    DiagnoseOutput diag = suite.diagnose(scans, snapshot);
    std::map<std::string, OracleLabel> oracle;
    for (const auto& scan : scans) oracle[scan.sample_id] = snapshot.labels.at(scan.sample_id);

    std::vector<std::string> families;
    for (const auto& [fam, n] : diag.family_counts) families.push_back(fam);

    auto profile_of = [&](const RuleId& key) -> const RuleProfile* {
      for (const auto& p : diag.rule_profiles)
        if (p.rule == key) return &p;
      return nullptr;
    };

    // Per-family recall of an arbitrary rule set, evaluated sample by sample.
    RuleConfig rule_cfg = suite.rule_config();
    auto set_recall = [&](const RuleSet& rs) {
      std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> tally;  // fam -> fired/count
      for (const auto& [sha, bytes] : fx.samples) {
        PeImage img = parse_pe(ByteSpan(bytes.data(), bytes.size()));
        bool fired = evaluate_ruleset(rs, img, rule_cfg).packed;
        const std::string& fam = oracle.at(sha).family;
        auto& t = tally[fam];
        ++t.second;
        if (fired) ++t.first;
      }
      std::map<std::string, double> recall;
      for (const auto& [fam, t] : tally)
        recall[fam] = t.second ? 100.0 * double(t.first) / double(t.second) : 0.0;
      return recall;
    };

    for (const auto& target : named_rulesets()) {
      SuiteConfig cfg = fx.cfg;
      cfg.heuristic_target = target.name;
      ToolSuite s2 = ToolSuite::load(cfg);
      RuleSet fixed = s2.plan_heuristic_repair(diag);
      if (fixed.members.size() < target.members.size()) return false;

      auto pre = set_recall(target);
      auto post = set_recall(fixed);
      for (const auto& [fam, r] : pre)
        if (post.at(fam) + 1e-9 < r) return false;

      // Composite ANY recall dominates every member (aggregate packedness).
      const RuleProfile* comp = profile_of({"composite", target.name});
      if (!comp) return false;
      for (const auto& member : target.members) {
        const RuleProfile* mp = profile_of(member);
        if (!mp) return false;
        if (comp->aggregate.recall + 1e-9 < mp->aggregate.recall) return false;
      }
    }
    return true;
  });

  // 8 ----------------------------------------------------------------------
  criterion(8, "whole-file-entropy aliases agree on every corpus sample", [&] {
    RuleConfig rule_cfg = suite.rule_config();
    for (const auto& [sha, bytes] : fx.samples) {
      PeImage img = parse_pe(ByteSpan(bytes.data(), bytes.size()));
      bool a = evaluate_rule({"pypeid", "heur1"}, img, rule_cfg).fired;
      bool b = evaluate_rule({"readpe", "high_entropy"}, img, rule_cfg).fired;
      bool c = evaluate_rule({"qu1cksc0pe", "IsPacked"}, img, rule_cfg).fired;
      if (a != b || b != c) return false;
    }
    // And the recorded scan verdicts of the two singleton alias strategies agree.
    for (const auto& scan : scans) {
      bool a = *scan.record.tools.at("pypeid(heur1)").heur;
      bool b = *scan.record.tools.at("readpe(heur1)").heur;
      if (a != b) return false;
    }
    return true;
  });

  // 9 ----------------------------------------------------------------------
  criterion(9, "published disagreement labels normalize as expected", [] {
    FamilyAliasTable table = FamilyAliasTable::load(
        testutil::slurp(testutil::data_file("family_aliases.tsv")));
    CanonicalLabel upx = canonicalize_label("UPX compressed Win32 Executable", table);
    CanonicalLabel aspack = canonicalize_label("ASPack v2.11d", table);
    CanonicalLabel telock = canonicalize_label("tElock v0.85f", table);
    if (upx.family != "UPX") return false;
    if (aspack.family != "ASPack" || aspack.version != std::optional<std::string>("2.11d"))
      return false;
    if (telock.family != "tElock" || telock.version != std::optional<std::string>("0.85f"))
      return false;
    UnifiedRecord rec = unify("sample", {{"Bintropy", ToolRole::PACKEDNESS, "False"}}, table);
    nlohmann::json j = unified_record_to_json(rec);
    return j.at("tools").at("Bintropy").at("heur") == "no";
  });

  // 10 ---------------------------------------------------------------------
  criterion(10, "results store: 8 appenders x 1,000 records, exact and parseable", [&] {
    fs::path path = fx.root / "stress.jsonl";
    {
      ResultsStore store(path);
      std::vector<std::thread> threads;
      for (int t = 0; t < 8; ++t)
        threads.emplace_back([&store, t] {
          for (int i = 0; i < 1000; ++i)
            store.append({{"kind", "stress"}, {"thread", t}, {"seq", i},
                          {"pad", std::string(64, 'x')}});
        });
      for (auto& th : threads) th.join();
    }
    auto records = ResultsStore::read_all(path);
    if (records.size() != 8000) return false;
    std::map<int, std::set<int>> seen;
    for (const auto& r : records) {
      if (r.at("kind") != "stress") return false;
      seen[r.at("thread").get<int>()].insert(r.at("seq").get<int>());
    }
    for (int t = 0; t < 8; ++t)
      if (seen[t].size() != 1000) return false;
    return true;
  });

  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
