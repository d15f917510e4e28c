#include "packerlab/oracle.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "packerlab/corpus.hpp"
#include "packerlab/entropy.hpp"
#include "packerlab/errors.hpp"

namespace packerlab {

namespace fs = std::filesystem;

const char* unpacker_kind_name(UnpackerKind k) {
  switch (k) {
    case UnpackerKind::GENERIC: return "GENERIC";
    case UnpackerKind::CUSTOM: return "CUSTOM";
    case UnpackerKind::MOCK: return "MOCK";
  }
  return "?";
}

const char* contract_outcome_name(ContractOutcome o) {
  switch (o) {
    case ContractOutcome::CONFIRMED: return "CONFIRMED";
    case ContractOutcome::VIOLATED: return "VIOLATED";
    case ContractOutcome::NO_UNPACKER: return "NO_UNPACKER";
    case ContractOutcome::TIMEOUT: return "TIMEOUT";
    case ContractOutcome::CRASH: return "CRASH";
  }
  return "?";
}

const char* provenance_name(OracleProvenance p) {
  switch (p) {
    case OracleProvenance::LABEL_GUIDED: return "LABEL_GUIDED";
    case OracleProvenance::EXHAUSTIVE: return "EXHAUSTIVE";
    case OracleProvenance::PLANTED: return "PLANTED";
  }
  return "?";
}

bool UnpackerSpec::covers(const std::string& family) const {
  return std::find(families.begin(), families.end(), family) != families.end();
}

std::vector<UnpackerSpec> load_registry(const std::string& text,
                                        const FamilyAliasTable& aliases) {
  std::vector<UnpackerSpec> specs;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, '\t')) fields.push_back(field);
    if (fields.size() != 5)
      fail(errc::bad_registry, "registry line needs 5 tab-separated fields: " + line);

    UnpackerSpec spec;
    spec.id = fields[0];
    if (!ids.insert(spec.id).second)
      fail(errc::bad_registry, "duplicate unpacker id '" + spec.id + "'");

    if (fields[1] == "GENERIC")
      spec.kind = UnpackerKind::GENERIC;
    else if (fields[1] == "CUSTOM")
      spec.kind = UnpackerKind::CUSTOM;
    else if (fields[1] == "MOCK")
      spec.kind = UnpackerKind::MOCK;
    else
      fail(errc::bad_registry, "unknown unpacker kind '" + fields[1] + "'");

    if (fields[2] != "-" && !fields[2].empty()) {
      std::istringstream fams(fields[2]);
      std::string fam;
      while (std::getline(fams, fam, ',')) {
        if (fam.empty()) continue;
        spec.families.push_back(canonicalize_label(fam, aliases).family);
      }
    }
    spec.invocation = fields[3];
    try {
      spec.timeout_s = std::stod(fields[4]);
    } catch (...) {
      fail(errc::bad_registry, "bad timeout in: " + line);
    }
    if (spec.timeout_s <= 0) fail(errc::bad_registry, "timeout must be positive: " + line);

    if (spec.kind == UnpackerKind::GENERIC && !spec.families.empty())
      fail(errc::bad_registry, "GENERIC unpacker '" + spec.id + "' must not list families");
    if (spec.kind != UnpackerKind::GENERIC && spec.families.empty())
      fail(errc::bad_registry, "unpacker '" + spec.id + "' must list at least one family");
    if (spec.kind == UnpackerKind::CUSTOM &&
        (spec.invocation.find("{in}") == std::string::npos ||
         spec.invocation.find("{out}") == std::string::npos))
      fail(errc::bad_registry, "CUSTOM command needs {in} and {out}: " + line);
    if (spec.kind == UnpackerKind::MOCK || spec.invocation.rfind("mock:", 0) == 0) {
      std::string mock = spec.invocation.substr(5);
      if (spec.invocation.rfind("mock:", 0) != 0 ||
          (mock != "generic" && !mock_id_by_name(mock)))
        fail(errc::bad_registry, "unknown mock unpacker '" + spec.invocation + "'");
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

void ValidationPolicy::validate() const {
  int votes = (use_entropy_drop ? 1 : 0) + (use_import_growth ? 1 : 0);
  if (min_evidence > votes)
    fail(errc::config_invalid, "validation quorum cannot be satisfied");
}

nlohmann::json ValidationResult::to_json() const {
  return nlohmann::json{{"pass", pass},
                        {"valid_pe", valid_pe},
                        {"entropy_before", entropy_before},
                        {"entropy_after", entropy_after},
                        {"imports_before", imports_before},
                        {"imports_after", imports_after},
                        {"size_before", size_before},
                        {"size_after", size_after},
                        {"entropy_drop_ok", entropy_drop_ok},
                        {"import_growth_ok", import_growth_ok},
                        {"size_ratio_ok", size_ratio_ok}};
}

nlohmann::json ContractVerdict::to_json() const {
  nlohmann::json j{{"sample", sample_id},
                   {"predicted_family", predicted_family},
                   {"unpacker", unpacker_id},
                   {"outcome", contract_outcome_name(outcome)}};
  if (validation) j["validation"] = validation->to_json();
  return j;
}

nlohmann::json OracleLabel::to_json() const {
  nlohmann::json j{{"sample", sample_id},
                   {"family", family},
                   {"provenance", provenance_name(provenance)}};
  if (confirming_unpacker) j["confirming_unpacker"] = *confirming_unpacker;
  if (generic_confirmer) j["generic_confirmer"] = *generic_confirmer;
  return j;
}

OracleLabel OracleLabel::from_json(const nlohmann::json& j) {
  OracleLabel l;
  l.sample_id = j.at("sample").get<std::string>();
  l.family = j.at("family").get<std::string>();
  std::string p = j.at("provenance").get<std::string>();
  l.provenance = p == "LABEL_GUIDED"  ? OracleProvenance::LABEL_GUIDED
                 : p == "PLANTED"     ? OracleProvenance::PLANTED
                                      : OracleProvenance::EXHAUSTIVE;
  if (j.contains("confirming_unpacker"))
    l.confirming_unpacker = j.at("confirming_unpacker").get<std::string>();
  if (j.contains("generic_confirmer"))
    l.generic_confirmer = j.at("generic_confirmer").get<std::string>();
  return l;
}

ValidationResult validate_unpacked(const PeImage& original, ByteSpan recovered,
                                   const ValidationPolicy& policy) {
  policy.validate();
  ValidationResult r;
  r.size_before = original.raw.size();
  r.size_after = recovered.size();
  r.entropy_before = shannon_entropy(ByteSpan(original.raw.data(), original.raw.size()));
  r.entropy_after = shannon_entropy(recovered);
  r.imports_before = original.import_function_total();

  std::optional<PeImage> rec;
  try {
    rec = parse_pe(recovered);
    r.valid_pe = true;
    r.imports_after = rec->import_function_total();
  } catch (const Error&) {
    r.valid_pe = false;
  }

  r.entropy_drop_ok = (r.entropy_before - r.entropy_after) >= policy.min_entropy_drop;
  r.import_growth_ok = (r.imports_after - r.imports_before) >= policy.min_import_growth;
  double ratio =
      r.size_before == 0 ? 0.0 : static_cast<double>(r.size_after) / static_cast<double>(r.size_before);
  r.size_ratio_ok = ratio >= policy.min_size_ratio;

  bool gates = (!policy.require_valid_pe || r.valid_pe) && (!policy.use_size_ratio || r.size_ratio_ok);
  int votes = (policy.use_entropy_drop && r.entropy_drop_ok ? 1 : 0) +
              (policy.use_import_growth && r.import_growth_ok ? 1 : 0);
  r.pass = gates && votes >= policy.min_evidence;
  return r;
}

// ---------------------------------------------------------------------------
// Unpacker execution
// ---------------------------------------------------------------------------

namespace {

struct RunResult {
  // REFUSED: the unpacker inspected the input and rejected it as not its
  // family. Only in-process mock unpackers can signal this; an external
  // process exiting nonzero is indistinguishable from a crash.
  enum class Status { OK, CRASH, TIMEOUT, REFUSED } status = Status::CRASH;
  Bytes output;
};

void write_file(const fs::path& path, ByteSpan bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(errc::io_error, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::optional<Bytes> read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  return Bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Template split on whitespace; no shell is involved.
std::vector<std::string> expand_template(const std::string& tmpl, const std::string& in,
                                         const std::string& out) {
  std::vector<std::string> argv;
  std::istringstream ss(tmpl);
  std::string tok;
  while (ss >> tok) {
    std::size_t pos;
    while ((pos = tok.find("{in}")) != std::string::npos) tok.replace(pos, 4, in);
    while ((pos = tok.find("{out}")) != std::string::npos) tok.replace(pos, 5, out);
    argv.push_back(tok);
  }
  return argv;
}

RunResult run_child_process(const std::vector<std::string>& argv, double timeout_s,
                            const fs::path& out_path) {
  RunResult result;
  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  pid_t pid = ::fork();
  if (pid < 0) return result;  // CRASH
  if (pid == 0) {
    int devnull = ::open("/dev/null", O_RDWR);
    if (devnull >= 0) {
      ::dup2(devnull, 0);
      ::dup2(devnull, 1);
      ::dup2(devnull, 2);
    }
    ::execvp(cargv[0], cargv.data());
    ::_exit(127);
  }

  auto deadline = std::chrono::steady_clock::now() +
                  std::chrono::milliseconds(static_cast<long>(timeout_s * 1000));
  int status = 0;
  for (;;) {
    pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) return result;
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      result.status = RunResult::Status::TIMEOUT;
      return result;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return result;  // CRASH

  auto out = read_file(out_path);
  if (!out || out->empty()) return result;  // wrote nothing usable
  result.status = RunResult::Status::OK;
  result.output = std::move(*out);
  return result;
}

RunResult run_unpacker(const UnpackerSpec& spec, const std::string& sample_id, ByteSpan sample,
                       const HarnessConfig& harness) {
  fs::path dir = harness.scratch_dir / (sample_id.substr(0, 12) + "_" + spec.id);
  std::error_code ec;
  fs::create_directories(dir, ec);
  fs::path in_path = dir / "in.bin";
  fs::path out_path = dir / "out.bin";
  write_file(in_path, sample);
  fs::remove(out_path, ec);

  RunResult result;
  if (spec.invocation.rfind("mock:", 0) == 0) {
    std::string mock = spec.invocation.substr(5);
    std::optional<Bytes> out;
    if (mock == "generic") {
      out = generic_mock_unpack(sample);
      if (!out) result.status = RunResult::Status::REFUSED;
    } else {
      try {
        out = mock_unpack(sample, *mock_id_by_name(mock));
      } catch (const Error&) {
        result.status = RunResult::Status::REFUSED;
      }
    }
    if (out) {
      result.status = RunResult::Status::OK;
      result.output = std::move(*out);
      write_file(out_path, ByteSpan(result.output.data(), result.output.size()));
    }
    return result;
  }
  return run_child_process(expand_template(spec.invocation, in_path.string(), out_path.string()),
                           spec.timeout_s, out_path);
}

}  // namespace

ContractVerdict run_contract(const std::string& sample_id, ByteSpan sample,
                             const std::string& predicted_family,
                             const std::vector<UnpackerSpec>& registry,
                             const ValidationPolicy& policy, const HarnessConfig& harness) {
  ContractVerdict verdict;
  verdict.sample_id = sample_id;
  verdict.predicted_family = predicted_family;

  std::optional<PeImage> original;
  try {
    original = parse_pe(sample);
  } catch (const Error&) {
    // Unparseable sample: contracts can still run, validation treats the
    // original as opaque bytes.
  }

  bool any = false;
  bool saw_timeout = false;
  std::optional<ContractVerdict> violated;
  for (const auto& spec : registry) {
    if (spec.kind == UnpackerKind::GENERIC || !spec.covers(predicted_family)) continue;
    any = true;
    RunResult run = run_unpacker(spec, sample_id, sample, harness);
    if (run.status == RunResult::Status::TIMEOUT) {
      saw_timeout = true;
      verdict.unpacker_id = spec.id;
      continue;
    }
    if (run.status == RunResult::Status::CRASH) {
      if (verdict.unpacker_id.empty()) verdict.unpacker_id = spec.id;
      continue;
    }
    ValidationResult val;
    if (original) {
      val = validate_unpacked(*original, ByteSpan(run.output.data(), run.output.size()), policy);
    } else {
      PeImage opaque;
      opaque.raw = Bytes(sample.begin(), sample.end());
      val = validate_unpacked(opaque, ByteSpan(run.output.data(), run.output.size()), policy);
    }
    if (val.pass) {
      verdict.unpacker_id = spec.id;
      verdict.outcome = ContractOutcome::CONFIRMED;
      verdict.validation = val;
      return verdict;
    }
    if (!violated) {
      violated = verdict;
      violated->unpacker_id = spec.id;
      violated->outcome = ContractOutcome::VIOLATED;
      violated->validation = val;
    }
  }

  if (!any) {
    verdict.outcome = ContractOutcome::NO_UNPACKER;
    return verdict;
  }
  if (violated) return *violated;
  verdict.outcome = saw_timeout ? ContractOutcome::TIMEOUT : ContractOutcome::CRASH;
  return verdict;
}

OracleLabel derive_oracle_label(const std::string& sample_id, ByteSpan sample,
                                const std::vector<std::string>& predictions,
                                const std::vector<UnpackerSpec>& registry,
                                const ValidationPolicy& policy, const HarnessConfig& harness,
                                const std::string& default_label,
                                std::vector<ContractVerdict>* verdict_log) {
  OracleLabel label;
  label.sample_id = sample_id;
  std::size_t budget = harness.max_unpackers_per_sample;

  // Phase 1: label-guided.
  std::set<std::string> tried;
  for (const auto& family : predictions) {
    if (budget == 0) break;
    ContractVerdict v = run_contract(sample_id, sample, family, registry, policy, harness);
    if (verdict_log) verdict_log->push_back(v);
    for (const auto& spec : registry)
      if (spec.kind != UnpackerKind::GENERIC && spec.covers(family)) tried.insert(spec.id);
    if (budget > 0) --budget;
    if (v.outcome == ContractOutcome::CONFIRMED) {
      label.family = family;
      label.provenance = OracleProvenance::LABEL_GUIDED;
      label.confirming_unpacker = v.unpacker_id;
      return label;
    }
  }

  auto validate_run = [&](const UnpackerSpec& spec, RunResult& run) -> std::optional<ValidationResult> {
    if (run.status != RunResult::Status::OK) return std::nullopt;
    std::optional<PeImage> original;
    try {
      original = parse_pe(sample);
    } catch (const Error&) {
      PeImage opaque;
      opaque.raw = Bytes(sample.begin(), sample.end());
      return validate_unpacked(opaque, ByteSpan(run.output.data(), run.output.size()), policy);
    }
    (void)spec;
    return validate_unpacked(*original, ByteSpan(run.output.data(), run.output.size()), policy);
  };

  // Phase 2: exhaust family unpackers, then generic ones.
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& spec : registry) {
      bool generic = spec.kind == UnpackerKind::GENERIC;
      if ((pass == 0) == generic) continue;
      if (!generic && tried.count(spec.id)) continue;
      if (budget == 0) break;
      --budget;

      RunResult run = run_unpacker(spec, sample_id, sample, harness);
      auto val = validate_run(spec, run);
      if (verdict_log) {
        ContractVerdict v;
        v.sample_id = sample_id;
        v.predicted_family = generic ? "" : spec.families.front();
        v.unpacker_id = spec.id;
        v.outcome = val && val->pass ? ContractOutcome::CONFIRMED
                    : val            ? ContractOutcome::VIOLATED
                    : run.status == RunResult::Status::TIMEOUT ? ContractOutcome::TIMEOUT
                                                               : ContractOutcome::CRASH;
        v.validation = val;
        verdict_log->push_back(v);
      }
      if (val && val->pass) {
        label.provenance = OracleProvenance::EXHAUSTIVE;
        if (generic) {
          label.family = "UNKNOWN_PACKED";
          label.generic_confirmer = spec.id;
        } else {
          label.family = spec.families.front();
          label.confirming_unpacker = spec.id;
        }
        return label;
      }
    }
  }

  label.family = default_label;
  label.provenance = OracleProvenance::EXHAUSTIVE;
  return label;
}

void OracleSnapshot::finalize() {
  nlohmann::json labels_json = nlohmann::json::array();
  for (const auto& [sample, label] : labels) labels_json.push_back(label.to_json());
  std::string blob = labels_json.dump();
  run_id = sha256_hex(ByteSpan(reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()));
}

nlohmann::json OracleSnapshot::to_json() const {
  nlohmann::json labels_json = nlohmann::json::array();
  for (const auto& [sample, label] : labels) labels_json.push_back(label.to_json());
  return nlohmann::json{{"run_id", run_id}, {"labels", std::move(labels_json)}};
}

OracleSnapshot OracleSnapshot::from_json(const nlohmann::json& j) {
  OracleSnapshot snap;
  snap.run_id = j.at("run_id").get<std::string>();
  for (const auto& item : j.at("labels")) {
    OracleLabel l = OracleLabel::from_json(item);
    snap.labels[l.sample_id] = l;
  }
  return snap;
}

std::map<std::string, std::uint64_t> OracleSnapshot::family_counts() const {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& [sample, label] : labels) {
    if (label.family == "NOT_PACKED" || label.family == "UNKNOWN_PACKED") continue;
    ++counts[label.family];
  }
  return counts;
}

}  // namespace packerlab
