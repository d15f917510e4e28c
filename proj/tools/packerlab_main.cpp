// packerlab command line: gen / scan / oracle / diagnose / repair / report.
// Progress goes to stderr; machine-readable output goes to files or stdout.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "packerlab/corpus.hpp"
#include "packerlab/errors.hpp"
#include "packerlab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace packerlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitStale = 3;

struct CommonOpts {
  std::string config_path;
  std::string corpus_override;
  std::string registry_override;
  int workers = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

nlohmann::json load_config_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(errc::config_invalid, "cannot read config file " + path);
  return nlohmann::json::parse(f);
}

SuiteConfig resolve_config(const CommonOpts& opts) {
  nlohmann::json j = nlohmann::json::object();
  fs::path base = ".";
  if (!opts.config_path.empty()) {
    j = load_config_json(opts.config_path);
    base = fs::path(opts.config_path).parent_path();
    if (base.empty()) base = ".";
  }
  SuiteConfig cfg = SuiteConfig::from_json(j, base);
  if (!opts.corpus_override.empty()) cfg.corpus = opts.corpus_override;
  if (!opts.registry_override.empty()) cfg.registry = opts.registry_override;
  if (opts.workers >= 0) cfg.workers = opts.workers;
  if (opts.seed_set) cfg.seed = opts.seed;
  cfg.resolve_defaults();

  // Referenced inputs must exist up front.
  auto must_exist = [](const fs::path& p, const char* what) {
    if (!p.empty() && !fs::exists(p))
      fail(errc::config_invalid, std::string(what) + " does not exist: " + p.string());
  };
  must_exist(cfg.corpus, "corpus");
  must_exist(cfg.registry, "registry");
  must_exist(cfg.target_db, "target signature db");
  for (const auto& d : cfg.donor_dbs) must_exist(d, "donor signature db");
  must_exist(cfg.alias_table, "alias table");
  must_exist(cfg.section_table, "section table");
  must_exist(cfg.marker_table, "marker table");
  must_exist(cfg.detector_modules, "detector module file");
  return cfg;
}

nlohmann::json config_fingerprint(const SuiteConfig& cfg) {
  return nlohmann::json{{"corpus", cfg.corpus.string()},
                        {"registry", cfg.registry.string()},
                        {"target_db", cfg.target_db.string()},
                        {"store", cfg.store.string()}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) fail(errc::io_error, "cannot write " + path.string());
  f << text;
}

int cmd_gen(const CommonOpts& opts, const std::string& out_dir, long mockx, long mockr, long mockn,
            long plain, long upx) {
  if (mockx < 0 || mockr < 0 || mockn < 0 || plain < 0 || upx < 0) {
    std::cerr << "gen: counts must be non-negative\n";
    return kExitConfig;
  }
  GenSpec spec;
  if (mockx > 0) spec.family_counts["MOCKX"] = static_cast<std::size_t>(mockx);
  if (mockr > 0) spec.family_counts["MOCKR"] = static_cast<std::size_t>(mockr);
  if (mockn > 0) spec.family_counts["MOCKN"] = static_cast<std::size_t>(mockn);
  spec.unpacked_count = static_cast<std::size_t>(plain);
  spec.upx_count = static_cast<std::size_t>(upx);
  generate_corpus(spec, opts.seed, out_dir);
  std::cout << (fs::path(out_dir) / "manifest.json").string() << "\n";
  return kExitOk;
}

int cmd_scan(const CommonOpts& opts) {
  SuiteConfig cfg = resolve_config(opts);
  if (cfg.corpus.empty()) fail(errc::config_invalid, "scan needs a corpus");
  ToolSuite suite = ToolSuite::load(cfg);
  auto scans = suite.scan_corpus();

  std::string run_id = compute_run_id(config_fingerprint(cfg), cfg.seed,
                                      ResultsStore::line_count(cfg.store));
  ResultsStore store(cfg.store);
  std::size_t failures = 0;
  for (const auto& scan : scans) {
    if (scan.parse_status != "OK") ++failures;
    nlohmann::json rec{{"kind", "unified_record"},
                       {"run_id", run_id},
                       {"parse_status", scan.parse_status},
                       {"record", unified_record_to_json(scan.record)}};
    store.append(rec);
  }
  std::cerr << "scan: " << scans.size() << " samples, " << failures
            << " parse failures, run " << run_id << "\n";
  return kExitOk;
}

int cmd_oracle(const CommonOpts& opts) {
  SuiteConfig cfg = resolve_config(opts);
  if (cfg.corpus.empty() || cfg.registry.empty())
    fail(errc::config_invalid, "oracle needs a corpus and a registry");
  ToolSuite suite = ToolSuite::load(cfg);
  auto scans = suite.scan_corpus();

  std::vector<ContractVerdict> verdicts;
  OracleSnapshot snap = suite.run_oracle(scans, &verdicts);

  ResultsStore store(cfg.store);
  for (const auto& v : verdicts)
    store.append(nlohmann::json{{"kind", "contract_verdict"}, {"record", v.to_json()}});
  for (const auto& [sample, label] : snap.labels)
    store.append(nlohmann::json{{"kind", "oracle_label"}, {"record", label.to_json()}});
  write_text(cfg.oracle_snapshot, snap.to_json().dump(2) + "\n");
  std::cerr << "oracle: " << snap.labels.size() << " labels, run " << snap.run_id << "\n";
  return kExitOk;
}

int cmd_diagnose(const CommonOpts& opts) {
  SuiteConfig cfg = resolve_config(opts);
  if (!fs::exists(cfg.oracle_snapshot)) {
    std::cerr << "diagnose: no oracle snapshot at " << cfg.oracle_snapshot
              << " (run `packerlab oracle` first)\n";
    return kExitStale;
  }
  ToolSuite suite = ToolSuite::load(cfg);
  auto scans = suite.scan_corpus();
  OracleSnapshot snap = OracleSnapshot::from_json(load_config_json(cfg.oracle_snapshot.string()));
  DiagnoseOutput diag = suite.diagnose(scans, snap);
  write_text(cfg.diagnose_out, diag.to_json().dump(2) + "\n");

  ResultsStore store(cfg.store);
  for (const auto& row : diag.family_rows) {
    nlohmann::json rec = row.metrics.to_json();
    rec["tool"] = row.tool;
    rec["family"] = row.family;
    store.append(nlohmann::json{{"kind", "metrics_report"}, {"record", std::move(rec)}});
  }
  std::cerr << "diagnose: " << diag.family_rows.size() << " family rows, "
            << diag.packedness_rows.size() << " packedness rows\n";
  return kExitOk;
}

int cmd_repair(const CommonOpts& opts, const std::string& kind, const std::string& out_path) {
  SuiteConfig cfg = resolve_config(opts);
  if (!fs::exists(cfg.oracle_snapshot) || !fs::exists(cfg.diagnose_out)) {
    std::cerr << "repair: need oracle + diagnose outputs first\n";
    return kExitStale;
  }
  ToolSuite suite = ToolSuite::load(cfg);
  OracleSnapshot snap = OracleSnapshot::from_json(load_config_json(cfg.oracle_snapshot.string()));
  DiagnoseOutput diag = DiagnoseOutput::from_json(load_config_json(cfg.diagnose_out.string()));
  if (diag.oracle_run_id != snap.run_id) {
    std::cerr << "repair: diagnose output was computed against a different oracle run\n";
    return kExitStale;
  }

  fs::path out = out_path.empty() ? cfg.store.parent_path() : fs::path(out_path);
  fs::create_directories(out);

  if (kind == "signature") {
    RepairPlan plan = suite.plan_signature_repair(diag);
    write_text(out / "repair_plan.json", plan.to_json().dump(2) + "\n");
    SignatureDb repaired = apply_signature_fix(suite.target_db(), plan);
    write_text(out / ("repaired_" + suite.target_db().name), serialize_signature_db(repaired));
    std::cerr << "repair: " << plan.removals.size() << " removals, " << plan.additions.size()
              << " additions\n";
  } else if (kind == "heuristic") {
    RuleSet fixed = suite.plan_heuristic_repair(diag);
    nlohmann::json members = nlohmann::json::array();
    for (const auto& id : fixed.members) members.push_back({{"tool", id.tool}, {"name", id.name}});
    write_text(out / "repaired_ruleset.json",
               nlohmann::json{{"name", fixed.name}, {"combiner", "ANY"}, {"members", members}}
                       .dump(2) +
                   "\n");
    std::cerr << "repair: ruleset '" << fixed.name << "' now has " << fixed.members.size()
              << " members\n";
  } else if (kind == "unpacker") {
    auto modules = suite.plan_unpacker_repair();
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : modules) arr.push_back(m.to_json());
    write_text(out / "detectors.json", arr.dump(2) + "\n");
    std::cerr << "repair: " << modules.size() << " detector modules\n";
  } else {
    std::cerr << "repair: unknown kind '" << kind << "'\n";
    return kExitConfig;
  }
  return kExitOk;
}

int cmd_report(const CommonOpts& opts, const std::string& format, const std::string& out_path) {
  SuiteConfig cfg = resolve_config(opts);
  if (!fs::exists(cfg.diagnose_out)) {
    std::cerr << "report: no diagnose output at " << cfg.diagnose_out << "\n";
    return kExitStale;
  }
  DiagnoseOutput diag = DiagnoseOutput::from_json(load_config_json(cfg.diagnose_out.string()));

  std::vector<ReportRow> rows = diag.family_rows;
  rows.insert(rows.end(), diag.packedness_rows.begin(), diag.packedness_rows.end());
  sort_rows_by_recall(rows);

  std::string text;
  if (format == "csv")
    text = report_csv(rows);
  else
    text = report_json(rows).dump(2) + "\n";

  if (out_path.empty())
    std::cout << text;
  else
    write_text(out_path, text);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"packer identification testing, diagnosis and repair"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  CommonOpts opts;
  app.add_option("--config", opts.config_path, "configuration file (JSON)");
  app.add_option("--corpus", opts.corpus_override, "corpus directory override");
  app.add_option("--registry", opts.registry_override, "unpacker registry override");
  app.add_option("--workers", opts.workers, "worker pool size (0 = auto)");
  app.add_option("--seed", opts.seed, "generation / run seed")->each([&](const std::string&) {
    opts.seed_set = true;
  });

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus with planted ground truth");
  std::string gen_out = "corpus";
  long mockx = 0, mockr = 0, mockn = 0, plain = 0, upx = 0;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--mockx", mockx, "MOCKX-packed sample count");
  gen->add_option("--mockr", mockr, "MOCKR-packed sample count");
  gen->add_option("--mockn", mockn, "MOCKN-packed sample count");
  gen->add_option("--plain", plain, "unpacked sample count");
  gen->add_option("--upx", upx, "UPX-packed sample count (skipped when upx is absent)");

  auto* scan = app.add_subcommand("scan", "run every detector and record unified results");
  auto* oracle = app.add_subcommand("oracle", "derive unpacking-validated oracle labels");
  auto* diagnose = app.add_subcommand("diagnose", "score tools, rules and signatures");

  auto* repair = app.add_subcommand("repair", "plan and write repaired artifacts");
  std::string repair_kind = "signature";
  std::string repair_out;
  repair->add_option("--kind", repair_kind, "signature | heuristic | unpacker");
  repair->add_option("--out", repair_out, "output directory for repaired artifacts");

  auto* report = app.add_subcommand("report", "emit metric tables");
  std::string format = "csv";
  std::string report_out;
  report->add_option("--format", format, "csv | json")
      ->check(CLI::IsMember({"csv", "json"}));
  report->add_option("--out", report_out, "write to a file instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(opts, gen_out, mockx, mockr, mockn, plain, upx);
    if (scan->parsed()) return cmd_scan(opts);
    if (oracle->parsed()) return cmd_oracle(opts);
    if (diagnose->parsed()) return cmd_diagnose(opts);
    if (repair->parsed()) return cmd_repair(opts, repair_kind, repair_out);
    if (report->parsed()) return cmd_report(opts, format, report_out);
  } catch (const Error& e) {
    std::cerr << argv[0] << ": " << e.what() << "\n";
    switch (e.code()) {
      case errc::spec_invalid:
      case errc::config_invalid:
      case errc::bad_registry:
      case errc::empty_db:
      case errc::io_error:
        return kExitConfig;
      case errc::oracle_mismatch:
      case errc::stale_plan:
        return kExitStale;
      default:
        return kExitInternal;
    }
  } catch (const std::exception& e) {
    std::cerr << argv[0] << ": " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitOk;
}
