#include <doctest.h>

#include "helpers.hpp"
#include "oracles.hpp"
#include "packerlab/diagnostics.hpp"
#include "packerlab/errors.hpp"

using namespace packerlab;

namespace {

OracleLabel lab(const std::string& sample, const std::string& family) {
  OracleLabel l;
  l.sample_id = sample;
  l.family = family;
  l.provenance = OracleProvenance::PLANTED;
  return l;
}

}  // namespace

TEST_CASE("published F1 arithmetic reproduces") {
  // REMINDer row: 46.3 recall, 53.7 precision -> 49.7 F1.
  CHECK(f1_from_percent(46.3, 53.7) == doctest::Approx(49.7).epsilon(0.001));
  CHECK(std::abs(f1_from_percent(46.3, 53.7) - 49.7) < 0.05);
  // VT PEiD row: 46.8 recall, 89.1 precision -> 61.4 F1.
  CHECK(std::abs(f1_from_percent(46.8, 89.1) - 61.4) < 0.05);
  CHECK(f1_from_percent(0, 0) == 0.0);
}

TEST_CASE("Metrics identities hold on arbitrary counts") {
  Rng rng(64);
  for (int i = 0; i < 200; ++i) {
    std::uint64_t tp = rng.below(50), fp = rng.below(50), fn = rng.below(50), tn = rng.below(50);
    Metrics m = Metrics::from_counts(tp, fp, fn, tn);
    if (m.precision + m.recall > 0)
      CHECK(m.f1 ==
            doctest::Approx(2 * m.precision * m.recall / (m.precision + m.recall)).epsilon(1e-9));
    else
      CHECK(m.f1 == 0.0);
    if (fp + tn > 0)
      CHECK(m.fpr == doctest::Approx(100.0 * double(fp) / double(fp + tn)).epsilon(1e-9));
    else
      CHECK(m.fpr == 0.0);
    CHECK(m.tp + m.fp + m.fn + m.tn == tp + fp + fn + tn);
  }
}

TEST_CASE("score_packedness") {
  std::map<std::string, OracleLabel> oracle;
  std::map<std::string, bool> always_true, always_false;
  for (int i = 0; i < 20; ++i) {
    std::string id = "s" + std::to_string(i);
    oracle[id] = lab(id, i < 10 ? "MOCKX" : "NOT_PACKED");
    always_true[id] = true;
    always_false[id] = false;
  }

  SUBCASE("all-true predictor: recall 100, fpr 100") {
    Metrics m = score_packedness(always_true, oracle);
    CHECK(m.recall == doctest::Approx(100.0));
    CHECK(m.fpr == doctest::Approx(100.0));
  }

  SUBCASE("all-false predictor: recall 0, fpr 0") {
    Metrics m = score_packedness(always_false, oracle);
    CHECK(m.recall == doctest::Approx(0.0));
    CHECK(m.fpr == doctest::Approx(0.0));
  }

  SUBCASE("crafted 20-sample corpus equals the hand-built confusion matrix") {
    Rng rng(2);
    std::map<std::string, bool> preds;
    std::vector<std::pair<bool, bool>> pairs;
    for (const auto& [id, label] : oracle) {
      bool p = rng.below(2) == 0;
      preds[id] = p;
      pairs.push_back({p, label.packed()});
    }
    auto want = oracles::brute_confusion(pairs);
    Metrics m = score_packedness(preds, oracle);
    CHECK(m.tp == want.tp);
    CHECK(m.fp == want.fp);
    CHECK(m.fn == want.fn);
    CHECK(m.tn == want.tn);
  }

  SUBCASE("domain mismatch is rejected") {
    auto bad = always_true;
    bad.erase("s0");
    try {
      (void)score_packedness(bad, oracle);
      FAIL("expected DomainMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == errc::domain_mismatch);
    }
  }
}

TEST_CASE("score_family one-vs-rest") {
  std::map<std::string, OracleLabel> oracle;
  std::map<std::string, std::optional<std::string>> preds;
  // 4 MOCKX (3 found, 1 missed), 3 MOCKR (1 mislabeled as MOCKX), 3 NOT_PACKED
  // (1 falsely called MOCKX), 2 UNKNOWN_PACKED excluded.
  for (int i = 0; i < 4; ++i) {
    std::string id = "x" + std::to_string(i);
    oracle[id] = lab(id, "MOCKX");
    preds[id] = i < 3 ? std::optional<std::string>("MOCKX") : std::nullopt;
  }
  for (int i = 0; i < 3; ++i) {
    std::string id = "r" + std::to_string(i);
    oracle[id] = lab(id, "MOCKR");
    preds[id] = i == 0 ? std::optional<std::string>("MOCKX") : std::optional<std::string>("MOCKR");
  }
  for (int i = 0; i < 3; ++i) {
    std::string id = "n" + std::to_string(i);
    oracle[id] = lab(id, "NOT_PACKED");
    preds[id] = i == 0 ? std::optional<std::string>("MOCKX") : std::nullopt;
  }
  for (int i = 0; i < 2; ++i) {
    std::string id = "u" + std::to_string(i);
    oracle[id] = lab(id, "UNKNOWN_PACKED");
    preds[id] = std::nullopt;
  }

  std::uint64_t excluded = 0;
  Metrics m = score_family(preds, oracle, "MOCKX", &excluded);
  CHECK(excluded == 2);
  CHECK(m.tp == 3);
  CHECK(m.fn == 1);
  CHECK(m.fp == 2);  // one MOCKR and one NOT_PACKED called MOCKX
  CHECK(m.tn == 4);  // remaining MOCKR + NOT_PACKED samples
  CHECK(m.tp + m.fp + m.fn + m.tn + excluded == oracle.size());
  CHECK(m.recall == doctest::Approx(75.0));

  SUBCASE("FP=0 means fpr 0 regardless of TN") {
    Metrics r = score_family(preds, oracle, "MOCKR");
    CHECK(r.fp == 0);
    CHECK(r.fpr == 0.0);
  }

  SUBCASE("sum of per-family TP stays within the corpus") {
    std::uint64_t total_tp = 0;
    for (const std::string fam : {"MOCKX", "MOCKR"}) total_tp += score_family(preds, oracle, fam).tp;
    CHECK(total_tp <= oracle.size());
  }
}

TEST_CASE("score_signatures") {
  SignatureDb db = parse_signature_db(
      "[MOCKX stub]\nsignature = 60 4D\nep_only = true\n\n"
      "[Wrong label v2]\nsignature = 90 90\nep_only = false\n\n"
      "[Dead entry]\nsignature = DE AD\nep_only = false\n");
  FamilyAliasTable aliases = FamilyAliasTable::builtin();

  std::map<std::string, OracleLabel> oracle;
  std::vector<SigMatchLogEntry> log;
  // Signature 0 matches 10 samples, 9 of them truly MOCKX.
  for (int i = 0; i < 9; ++i) {
    std::string id = "x" + std::to_string(i);
    oracle[id] = lab(id, "MOCKX");
    log.push_back({id, 0});
  }
  oracle["odd"] = lab("odd", "MOCKR");
  log.push_back({"odd", 0});
  // Signature 1 (unknown family label) matches 5 MOCKX samples: accuracy 0.
  for (int i = 0; i < 5; ++i) log.push_back({"x" + std::to_string(i), 1});

  auto scores = score_signatures(db, log, oracle, aliases);
  REQUIRE(scores.size() == 3);

  CHECK(scores[0].family == "MOCKX");
  CHECK(scores[0].matches == 10);
  CHECK(scores[0].correct == 9);
  CHECK(scores[0].accuracy == doctest::Approx(0.9));
  CHECK(scores[0].per_family.at("MOCKX").correct == 9);
  CHECK(scores[0].per_family.at("MOCKR").matches == 1);

  CHECK(scores[1].family == "UNKNOWN");
  CHECK(scores[1].matches == 5);
  CHECK(scores[1].accuracy == 0.0);

  // Zero-match signature reports matches=0, not an error.
  CHECK(scores[2].matches == 0);
  CHECK(scores[2].accuracy == 0.0);

  // Duplicate (sample, signature) pairs in the log count once.
  log.push_back({"x0", 0});
  auto rescores = score_signatures(db, log, oracle, aliases);
  CHECK(rescores[0].matches == 10);

  // Round-trip.
  SignatureScore back = SignatureScore::from_json(scores[0].to_json());
  CHECK(back.matches == scores[0].matches);
  CHECK(back.per_family.at("MOCKX").correct_samples == scores[0].per_family.at("MOCKX").correct_samples);
}

TEST_CASE("profile_rules accounting") {
  std::map<std::string, OracleLabel> oracle;
  std::vector<RuleLogEntry> log;
  RuleId rule{"toolA", "r1"};

  // Fires on every MOCKX (4), none of MOCKR (3), one NOT_PACKED (of 3).
  for (int i = 0; i < 4; ++i) {
    std::string id = "a" + std::to_string(i);
    oracle[id] = lab(id, "MOCKX");
    log.push_back({rule, id, true});
  }
  for (int i = 0; i < 3; ++i) {
    std::string id = "b" + std::to_string(i);
    oracle[id] = lab(id, "MOCKR");
    log.push_back({rule, id, false});
  }
  for (int i = 0; i < 3; ++i) {
    std::string id = "c" + std::to_string(i);
    oracle[id] = lab(id, "NOT_PACKED");
    log.push_back({rule, id, i == 0});
  }

  auto profiles = profile_rules(log, oracle);
  REQUIRE(profiles.size() == 1);
  const RuleProfile& p = profiles[0];
  CHECK(p.per_family.at("MOCKX").recall == doctest::Approx(100.0));
  CHECK(p.per_family.at("MOCKR").recall == doctest::Approx(0.0));
  CHECK(p.aggregate.tp == 4);
  CHECK(p.aggregate.fp == 1);
  CHECK(p.aggregate.fn == 3);
  CHECK(p.aggregate.tn == 2);

  // Per-class fired counts sum to the aggregate fired total.
  std::uint64_t fired_sum = 0;
  for (const auto& [fam, stat] : p.per_family) fired_sum += stat.fired;
  CHECK(fired_sum == p.aggregate.tp + p.aggregate.fp);

  // Round-trip.
  RuleProfile back = RuleProfile::from_json(p.to_json());
  CHECK(back.rule == p.rule);
  CHECK(back.aggregate.tp == p.aggregate.tp);
  CHECK(back.per_family.at("MOCKX").fired == 4);
}

TEST_CASE("report rows order by recall and format as the published tables") {
  std::vector<ReportRow> rows;
  rows.push_back({"toolB", "MOCKX", Metrics::from_counts(1, 0, 9, 10)});   // recall 10
  rows.push_back({"toolA", "MOCKX", Metrics::from_counts(9, 1, 1, 9)});    // recall 90
  rows.push_back({"toolC", "(packed)", Metrics::from_counts(5, 5, 5, 5)});  // recall 50
  sort_rows_by_recall(rows);
  CHECK(rows[0].tool == "toolA");
  CHECK(rows[1].tool == "toolC");
  CHECK(rows[2].tool == "toolB");

  std::string csv = report_csv(rows);
  CHECK(csv.rfind("Tool,Family,Recall,Prec.,F1,FPR\n", 0) == 0);
  CHECK(csv.find("toolA,MOCKX,90.0,90.0,90.0,10.0\n") != std::string::npos);

  nlohmann::json j = report_json(rows);
  REQUIRE(j.size() == 3);
  CHECK(j[0].at("tool") == "toolA");
  CHECK(j[0].at("counts").at("tp") == 9);
}

TEST_CASE("union of two rules dominates each member per family") {
  std::map<std::string, OracleLabel> oracle;
  std::vector<RuleLogEntry> log;
  RuleId r1{"t", "r1"}, r2{"t", "r2"}, both{"t", "union"};
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    std::string id = "s" + std::to_string(i);
    std::string fam = i % 4 == 0 ? "NOT_PACKED" : (i % 4 == 1 ? "MOCKX" : "MOCKR");
    oracle[id] = lab(id, fam);
    bool f1 = rng.below(3) == 0;
    bool f2 = rng.below(3) == 0;
    log.push_back({r1, id, f1});
    log.push_back({r2, id, f2});
    log.push_back({both, id, f1 || f2});
  }
  auto profiles = profile_rules(log, oracle);
  auto find = [&](const RuleId& id) -> const RuleProfile& {
    for (const auto& p : profiles)
      if (p.rule == id) return p;
    FAIL("profile missing");
    return profiles[0];
  };
  const auto& p1 = find(r1);
  const auto& p2 = find(r2);
  const auto& pu = find(both);
  for (const auto& [fam, stat] : pu.per_family) {
    CHECK(stat.recall >= p1.per_family.at(fam).recall - 1e-9);
    CHECK(stat.recall >= p2.per_family.at(fam).recall - 1e-9);
  }
  CHECK(pu.aggregate.recall >=
        std::max(p1.aggregate.recall, p2.aggregate.recall) - 1e-9);
}
