#include <doctest.h>

#include <set>

#include <algorithm>

#include "helpers.hpp"
#include "packerlab/errors.hpp"
#include "packerlab/rules.hpp"

using namespace packerlab;
using testutil::basic_spec;
using testutil::span;

namespace {

PeImage build(const BuildSpec& spec) { return parse_pe(span(build_minimal_pe(spec))); }

}  // namespace

TEST_CASE("catalog carries every published rule under its tool") {
  auto has = [](const std::string& tool, const std::string& name) {
    return std::any_of(catalog().begin(), catalog().end(), [&](const RuleDescriptor& d) {
      return d.id.tool == tool && d.id.name == name;
    });
  };
  CHECK(has("Manalyze", "section_name"));
  CHECK(has("Manalyze", "high_entropy"));
  CHECK(has("Manalyze", "low_imports"));
  CHECK(has("Manalyze", "resources_size"));
  CHECK(has("Manalyze", "rich_header"));
  CHECK(has("Manalyze", "wx_section"));
  CHECK(has("PyPackerDetect", "bad_ep_sections"));
  CHECK(has("PyPackerDetect", "low_imports"));
  CHECK(has("PyPackerDetect", "packer_section_match"));
  CHECK(has("PyPackerDetect", "peid_signature_match"));
  CHECK(has("qu1cksc0pe", "HasModified_DOS_Message"));
  CHECK(has("qu1cksc0pe", "HasOverlay"));
  CHECK(has("qu1cksc0pe", "ImportTableIsBad"));
  CHECK(has("qu1cksc0pe", "IsBeyondImageSize"));
  CHECK(has("qu1cksc0pe", "IsPacked"));
  CHECK(has("qu1cksc0pe", "string_name_match"));
  CHECK(has("readpe", "high_entropy"));
  CHECK(has("readpe", "section_name"));
  CHECK(has("pypeid", "heur1"));

  std::set<std::pair<std::string, std::string>> unique;
  for (const auto& d : catalog()) unique.insert({d.id.tool, d.id.name});
  CHECK(unique.size() == catalog().size());
  CHECK(unique.size() >= 15);
}

TEST_CASE("unknown rule is rejected") {
  RuleConfig cfg;
  PeImage img = build(basic_spec());
  try {
    (void)evaluate_rule({"Manalyze", "nonexistent"}, img, cfg);
    FAIL("expected UnknownRule");
  } catch (const Error& e) {
    CHECK(e.code() == errc::unknown_rule);
  }
}

TEST_CASE("wx_section fires on a writable executable section") {
  RuleConfig cfg;
  BuildSpec spec = basic_spec();
  CHECK_FALSE(evaluate_rule({"Manalyze", "wx_section"}, build(spec), cfg).fired);

  spec.sections[0].writable = true;
  RuleVerdict v = evaluate_rule({"Manalyze", "wx_section"}, build(spec), cfg);
  CHECK(v.fired);
  CHECK(v.evidence.at("section") == ".text");
}

TEST_CASE("low_imports respects the configured threshold") {
  RuleConfig cfg;
  BuildSpec spec = basic_spec();  // imports 2 functions
  RuleVerdict v = evaluate_rule({"PyPackerDetect", "low_imports"}, build(spec), cfg);
  CHECK(v.fired);
  CHECK(v.evidence.at("import_count").get<int>() == 2);

  cfg.low_imports_threshold = 2;
  CHECK_FALSE(evaluate_rule({"PyPackerDetect", "low_imports"}, build(spec), cfg).fired);
}

TEST_CASE("section_name maps names to families through the table") {
  RuleConfig cfg;
  BuildSpec spec;
  spec.sections.push_back({"UPX0", true, true, true, Bytes(128, 0x90), 0, 0});
  spec.sections.push_back({"UPX1", true, true, false, Bytes(128, 0x61), 0, 0});
  spec.sections.push_back({".rsrc", true, false, false, Bytes(64, 0x00), 0, 0});
  spec.entry_section = 0;
  RuleVerdict v = evaluate_rule({"Manalyze", "section_name"}, build(spec), cfg);
  CHECK(v.fired);
  CHECK(v.evidence.at("matched") == "UPX0");
  CHECK(v.evidence.at("family_hint") == "UPX");

  // Case sensitivity is an option, default on.
  BuildSpec lower = spec;
  lower.sections[0].name = "upx0";
  lower.sections[1].name = "upx1";
  CHECK_FALSE(evaluate_rule({"Manalyze", "section_name"}, build(lower), cfg).fired);
  cfg.section_name_case_sensitive = false;
  CHECK(evaluate_rule({"Manalyze", "section_name"}, build(lower), cfg).fired);
}

TEST_CASE("bad_ep_sections") {
  RuleConfig cfg;
  CHECK_FALSE(evaluate_rule({"PyPackerDetect", "bad_ep_sections"}, build(basic_spec()), cfg).fired);

  BuildSpec odd = basic_spec();
  odd.sections[0].name = "weird";
  RuleVerdict v = evaluate_rule({"PyPackerDetect", "bad_ep_sections"}, build(odd), cfg);
  CHECK(v.fired);
  CHECK(v.evidence.at("ep_section") == "weird");

  BuildSpec outside = basic_spec();
  outside.entry_section = -1;
  outside.entry_rva = 0x00600000;
  outside.require_entry_in_section = false;
  CHECK(evaluate_rule({"PyPackerDetect", "bad_ep_sections"}, build(outside), cfg).fired);
}

TEST_CASE("HasOverlay / IsBeyondImageSize / ImportTableIsBad / DOS message") {
  RuleConfig cfg;

  SUBCASE("overlay") {
    Bytes bytes = build_minimal_pe(basic_spec());
    CHECK_FALSE(evaluate_rule({"qu1cksc0pe", "HasOverlay"}, parse_pe(span(bytes)), cfg).fired);
    bytes.resize(bytes.size() + 16, 0x5A);
    RuleVerdict v = evaluate_rule({"qu1cksc0pe", "HasOverlay"}, parse_pe(span(bytes)), cfg);
    CHECK(v.fired);
    CHECK(v.evidence.at("overlay_length").get<std::uint64_t>() == 16);
  }

  SUBCASE("section raw range past file end") {
    Bytes bytes = build_minimal_pe(basic_spec());
    bytes.resize(bytes.size() - 64);  // truncate the last section
    PeImage img = parse_pe(span(bytes));
    CHECK(evaluate_rule({"qu1cksc0pe", "IsBeyondImageSize"}, img, cfg).fired);
  }

  SUBCASE("entry at or past SizeOfImage") {
    BuildSpec spec = basic_spec();
    spec.entry_section = -1;
    spec.entry_rva = 0x7FFFFFFF;
    spec.require_entry_in_section = false;
    CHECK(evaluate_rule({"qu1cksc0pe", "IsBeyondImageSize"}, build(spec), cfg).fired);
  }

  SUBCASE("modified DOS stub message") {
    CHECK_FALSE(
        evaluate_rule({"qu1cksc0pe", "HasModified_DOS_Message"}, build(basic_spec()), cfg).fired);
    BuildSpec spec = basic_spec();
    spec.dos_message = "packed by nobody";
    CHECK(evaluate_rule({"qu1cksc0pe", "HasModified_DOS_Message"}, build(spec), cfg).fired);
  }

  SUBCASE("import table damage") {
    CHECK_FALSE(evaluate_rule({"qu1cksc0pe", "ImportTableIsBad"}, build(basic_spec()), cfg).fired);
    Bytes bytes = build_minimal_pe(basic_spec());
    std::uint32_t pe = u32le(bytes.data() + 0x3C);
    std::uint32_t dir_off = pe + 24 + 112 + 8;
    bytes[dir_off + 2] = 0x7F;  // import RVA into nowhere
    CHECK(evaluate_rule({"qu1cksc0pe", "ImportTableIsBad"}, parse_pe(span(bytes)), cfg).fired);
  }
}

TEST_CASE("string_name_match finds marker strings in raw bytes") {
  RuleConfig cfg;
  BuildSpec spec = basic_spec();
  std::string marker = "PECompact2";
  Bytes& data = spec.sections[1].content;
  std::copy(marker.begin(), marker.end(), data.begin() + 32);
  RuleVerdict v = evaluate_rule({"qu1cksc0pe", "string_name_match"}, build(spec), cfg);
  CHECK(v.fired);
  CHECK(v.evidence.at("marker") == "PECompact2");
  CHECK(v.evidence.at("family_hint") == "PECompact");
}

TEST_CASE("rich_header and resources_size") {
  RuleConfig cfg;
  BuildSpec spec = basic_spec();
  spec.rich_header = false;
  CHECK(evaluate_rule({"Manalyze", "rich_header"}, build(spec), cfg).fired);
  spec.rich_header = true;
  CHECK_FALSE(evaluate_rule({"Manalyze", "rich_header"}, build(spec), cfg).fired);

  // Small file: resources_size stays quiet regardless.
  CHECK_FALSE(evaluate_rule({"Manalyze", "resources_size"}, build(spec), cfg).fired);
  // Large file without resources fires.
  BuildSpec big = basic_spec();
  big.sections[0].content = Bytes(128 * 1024, 0x90);
  big.resource_size = 0;
  big.imports.clear();
  CHECK(evaluate_rule({"Manalyze", "resources_size"}, build(big), cfg).fired);
}

TEST_CASE("peid_signature_match delegates to the signature engine") {
  RuleConfig cfg;
  SignatureDb db = parse_signature_db("[Hit v1.0]\nsignature = 90 90 90 90\nep_only = true\n");
  cfg.peid_db = &db;

  PeImage img = build(basic_spec());  // EP bytes are 0x90s
  RuleVerdict v = evaluate_rule({"PyPackerDetect", "peid_signature_match"}, img, cfg);
  CHECK(v.fired);
  CHECK(v.evidence.at("label") == "Hit v1.0");

  // Cross-module consistency: the rule fires iff match_signatures reports >= 1.
  auto matches = match_signatures(db, img, profile_scopes("pypackerdetect"), cfg.match);
  CHECK(v.fired == !matches.empty());

  cfg.peid_db = nullptr;
  CHECK_FALSE(evaluate_rule({"PyPackerDetect", "peid_signature_match"}, img, cfg).fired);
}

TEST_CASE("whole-file alias rules agree on every input") {
  RuleConfig cfg;
  Rng rng(6);
  for (int i = 0; i < 10; ++i) {
    BuildSpec spec = basic_spec();
    spec.sections[0].content = i % 2 ? rng.bytes(8192) : Bytes(4096, 0x20);
    PeImage img = build(spec);
    bool a = evaluate_rule({"pypeid", "heur1"}, img, cfg).fired;
    bool b = evaluate_rule({"readpe", "high_entropy"}, img, cfg).fired;
    bool c = evaluate_rule({"qu1cksc0pe", "IsPacked"}, img, cfg).fired;
    CHECK(a == b);
    CHECK(b == c);
  }
}

TEST_CASE("evaluate_ruleset combiners and evidence aggregation") {
  RuleConfig cfg;
  PeImage img = build(basic_spec());  // low imports fires, wx does not

  RuleSet any{"any-set",
              {{"Manalyze", "low_imports"}, {"Manalyze", "wx_section"}},
              RuleCombiner::ANY};
  PackednessVerdict va = evaluate_ruleset(any, img, cfg);
  CHECK(va.packed);
  CHECK(va.evidence.at("fired").contains("Manalyze.low_imports"));
  CHECK_FALSE(va.evidence.at("fired").contains("Manalyze.wx_section"));

  RuleSet all = any;
  all.combiner = RuleCombiner::ALL;
  CHECK_FALSE(evaluate_ruleset(all, img, cfg).packed);

  RuleSet empty{"empty", {}, RuleCombiner::ANY};
  CHECK_THROWS_AS((void)evaluate_ruleset(empty, img, cfg), Error);
}

TEST_CASE("ANY is monotone: adding a rule never un-fires a set") {
  RuleConfig cfg;
  Rng rng(33);
  std::vector<RuleId> pool;
  for (const auto& d : catalog())
    if (d.id.name != "peid_signature_match") pool.push_back(d.id);  // needs no db

  for (int i = 0; i < 15; ++i) {
    BuildSpec spec = basic_spec();
    if (rng.below(2)) spec.sections[0].writable = true;
    if (rng.below(2)) spec.dos_message = "strange";
    if (rng.below(2)) spec.sections[0].content = rng.bytes(4096);
    PeImage img = build(spec);

    RuleSet small{"s", {pool[rng.below(pool.size())]}, RuleCombiner::ANY};
    RuleSet bigger = small;
    bigger.members.push_back(pool[rng.below(pool.size())]);
    bigger.members.push_back(pool[rng.below(pool.size())]);
    if (evaluate_ruleset(small, img, cfg).packed) CHECK(evaluate_ruleset(bigger, img, cfg).packed);
  }
}

TEST_CASE("determinism: equal inputs give equal verdicts") {
  RuleConfig cfg;
  BuildSpec spec = basic_spec();
  spec.sections[0].content = Rng(5).bytes(2048);
  Bytes bytes = build_minimal_pe(spec);
  PeImage a = parse_pe(span(bytes));
  PeImage b = parse_pe(span(bytes));
  for (const auto& d : catalog()) {
    RuleVerdict va = evaluate_rule(d.id, a, cfg);
    RuleVerdict vb = evaluate_rule(d.id, b, cfg);
    CHECK(va.fired == vb.fired);
    CHECK(va.evidence == vb.evidence);
  }
}

TEST_CASE("fired verdicts always carry evidence") {
  RuleConfig cfg;
  SignatureDb db = parse_signature_db("[X]\nsignature = 90 90\nep_only = true\n");
  cfg.peid_db = &db;
  std::vector<BuildSpec> variants;
  variants.push_back(basic_spec());
  BuildSpec wx = basic_spec();
  wx.sections[0].writable = true;
  wx.dos_message = "odd";
  variants.push_back(wx);
  for (const auto& spec : variants) {
    PeImage img = build(spec);
    for (const auto& d : catalog()) {
      RuleVerdict v = evaluate_rule(d.id, img, cfg);
      if (v.fired) CHECK_FALSE(v.evidence.empty());
    }
  }
}

TEST_CASE("name tables load and serialize") {
  NameTable t = NameTable::load("# comment\nUPX0\tUPX\n.aspack\tASPack\n");
  REQUIRE(t.entries.size() == 2);
  CHECK(t.family_for("UPX0", true) == "UPX");
  CHECK_FALSE(t.family_for("upx0", true).has_value());
  CHECK(t.family_for("upx0", false) == "UPX");
  CHECK(t.serialize() == "UPX0\tUPX\n.aspack\tASPack\n");
  CHECK_THROWS_AS((void)NameTable::load("no-tab-here\n"), Error);
}

TEST_CASE("shipped data files load") {
  NameTable sections = NameTable::load(testutil::slurp(testutil::data_file("packer_sections.tsv")));
  CHECK(sections.family_for("UPX0", true) == "UPX");
  CHECK(sections.family_for("MCKX0", true) == "MOCKX");
  NameTable markers = NameTable::load(testutil::slurp(testutil::data_file("marker_strings.tsv")));
  CHECK(markers.family_for("MOCKR!", true) == "MOCKR");
}
