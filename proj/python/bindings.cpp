// Python bindings for the core operations: PE model, entropy detectors,
// signature engine, normalization, metrics, mock packers and corpus tools.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "packerlab/corpus.hpp"
#include "packerlab/diagnostics.hpp"
#include "packerlab/entropy.hpp"
#include "packerlab/errors.hpp"
#include "packerlab/normalizer.hpp"
#include "packerlab/pe_model.hpp"
#include "packerlab/rules.hpp"
#include "packerlab/signature.hpp"

namespace py = pybind11;
using namespace packerlab;

namespace {

ByteSpan as_span(const py::bytes& data) {
  char* buf = nullptr;
  Py_ssize_t len = 0;
  if (PyBytes_AsStringAndSize(data.ptr(), &buf, &len) != 0) throw py::error_already_set();
  return ByteSpan(reinterpret_cast<const std::uint8_t*>(buf), static_cast<std::size_t>(len));
}

py::bytes to_bytes(const Bytes& b) {
  return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

py::object json_to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null: return py::none();
    case nlohmann::json::value_t::boolean: return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer: return py::int_(j.get<std::int64_t>());
    case nlohmann::json::value_t::number_unsigned: return py::int_(j.get<std::uint64_t>());
    case nlohmann::json::value_t::number_float: return py::float_(j.get<double>());
    case nlohmann::json::value_t::string: return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list out;
      for (const auto& item : j) out.append(json_to_py(item));
      return out;
    }
    case nlohmann::json::value_t::object: {
      py::dict out;
      for (const auto& [key, value] : j.items()) out[py::str(key)] = json_to_py(value);
      return out;
    }
    default: return py::none();
  }
}

py::dict verdict_to_dict(const PackednessVerdict& v) {
  py::dict out;
  out["packed"] = v.packed;
  out["detector_id"] = v.detector_id;
  out["evidence"] = json_to_py(v.evidence);
  return out;
}

MatchScope scope_from_name(const std::string& name) {
  if (name == "ENTRY_POINT") return MatchScope::ENTRY_POINT;
  if (name == "ENTRY_SECTION") return MatchScope::ENTRY_SECTION;
  if (name == "FULL_FILE") return MatchScope::FULL_FILE;
  fail(errc::config_invalid, "unknown scope '" + name + "'");
}

MockId mock_from_name(const std::string& name) {
  auto id = mock_id_by_name(name);
  if (!id) fail(errc::config_invalid, "unknown mock family '" + name + "'");
  return *id;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "packer identification toolkit core";

  py::register_exception<Error>(m, "PackerlabError");

  // --- PE model ------------------------------------------------------------
  py::class_<SectionInfo>(m, "SectionInfo")
      .def_readonly("name", &SectionInfo::name)
      .def_readonly("virtual_addr", &SectionInfo::virtual_addr)
      .def_readonly("virtual_size", &SectionInfo::virtual_size)
      .def_readonly("raw_offset", &SectionInfo::raw_offset)
      .def_readonly("raw_size", &SectionInfo::raw_size)
      .def_readonly("readable", &SectionInfo::readable)
      .def_readonly("writable", &SectionInfo::writable)
      .def_readonly("executable", &SectionInfo::executable)
      .def_readonly("raw_truncated", &SectionInfo::raw_truncated)
      .def("__repr__",
           [](const SectionInfo& s) { return "<SectionInfo '" + s.name + "'>"; });

  py::class_<PeImage>(m, "PeImage")
      .def_property_readonly(
          "arch", [](const PeImage& img) { return std::string(arch_name(img.arch)); })
      .def_readonly("entry_point_rva", &PeImage::entry_point_rva)
      .def_readonly("image_size", &PeImage::image_size)
      .def_readonly("headers_size", &PeImage::headers_size)
      .def_readonly("sections", &PeImage::sections)
      .def_readonly("rich_header_present", &PeImage::rich_header_present)
      .def_readonly("import_table_bad", &PeImage::import_table_bad)
      .def_readonly("parse_notes", &PeImage::parse_notes)
      .def_property_readonly("imports",
                             [](const PeImage& img) {
                               py::list out;
                               for (const auto& e : img.imports)
                                 out.append(py::make_tuple(e.dll, e.function_count));
                               return out;
                             })
      .def_property_readonly("overlay",
                             [](const PeImage& img) -> py::object {
                               auto ov = overlay_range(img);
                               if (!ov) return py::none();
                               return py::make_tuple(ov->first, ov->second);
                             })
      .def_property_readonly("raw", [](const PeImage& img) { return to_bytes(img.raw); });

  m.def(
      "parse_pe", [](const py::bytes& data) { return parse_pe(as_span(data)); }, py::arg("data"),
      "Parse a PE image; raises PackerlabError on non-PE input.");

  py::class_<SectionSpec>(m, "SectionSpec")
      .def(py::init([](const std::string& name, const py::bytes& content, bool readable,
                       bool writable, bool executable, std::uint32_t virtual_addr,
                       std::uint32_t virtual_size) {
             SectionSpec s;
             s.name = name;
             auto sp = as_span(content);
             s.content.assign(sp.begin(), sp.end());
             s.readable = readable;
             s.writable = writable;
             s.executable = executable;
             s.virtual_addr = virtual_addr;
             s.virtual_size = virtual_size;
             return s;
           }),
           py::arg("name"), py::arg("content") = py::bytes(), py::arg("readable") = true,
           py::arg("writable") = false, py::arg("executable") = false,
           py::arg("virtual_addr") = 0, py::arg("virtual_size") = 0);

  py::class_<BuildSpec>(m, "BuildSpec")
      .def(py::init<>())
      .def_readwrite("sections", &BuildSpec::sections)
      .def_readwrite("entry_section", &BuildSpec::entry_section)
      .def_readwrite("entry_offset", &BuildSpec::entry_offset)
      .def_readwrite("entry_rva", &BuildSpec::entry_rva)
      .def_readwrite("require_entry_in_section", &BuildSpec::require_entry_in_section)
      .def_readwrite("import_host_section", &BuildSpec::import_host_section)
      .def_readwrite("resource_size", &BuildSpec::resource_size)
      .def_readwrite("dos_message", &BuildSpec::dos_message)
      .def_readwrite("rich_header", &BuildSpec::rich_header)
      .def_property(
          "arch", [](const BuildSpec& s) { return std::string(arch_name(s.arch)); },
          [](BuildSpec& s, const std::string& a) {
            s.arch = a == "PE32" ? PeArch::PE32 : PeArch::PE64;
          })
      .def("add_import", [](BuildSpec& s, const std::string& dll,
                            const std::vector<std::string>& functions) {
        s.imports.push_back({dll, functions});
      });

  m.def(
      "build_minimal_pe",
      [](const BuildSpec& spec) { return to_bytes(build_minimal_pe(spec)); }, py::arg("spec"),
      "Build a deterministic synthetic PE from a BuildSpec.");

  // --- Entropy detectors ----------------------------------------------------
  m.def(
      "shannon_entropy", [](const py::bytes& data) { return shannon_entropy(as_span(data)); },
      py::arg("data"));

  m.def(
      "block_entropies",
      [](const py::bytes& data, std::size_t block_size, bool exclude_zero_blocks) {
        EntropyConfig cfg;
        cfg.block_size = block_size;
        cfg.exclude_zero_blocks = exclude_zero_blocks;
        return block_entropies(as_span(data), cfg);
      },
      py::arg("data"), py::arg("block_size") = 256, py::arg("exclude_zero_blocks") = true);

  m.def(
      "bintropy_decide",
      [](const PeImage& img, const std::string& mode, double avg_threshold, double max_threshold,
         std::size_t block_size) {
        EntropyConfig cfg;
        cfg.bintropy_avg_threshold = avg_threshold;
        cfg.bintropy_max_threshold = max_threshold;
        cfg.block_size = block_size;
        auto modes = default_bintropy_variant_map();
        BintropyMode parsed;
        if (auto it = modes.find(mode); it != modes.end())
          parsed = it->second;
        else if (mode == "FULL_FILE")
          parsed = BintropyMode::FULL_FILE;
        else if (mode == "PER_SECTION")
          parsed = BintropyMode::PER_SECTION;
        else if (mode == "OR_COMBINE")
          parsed = BintropyMode::OR_COMBINE;
        else if (mode == "AND_COMBINE")
          parsed = BintropyMode::AND_COMBINE;
        else
          fail(errc::config_invalid, "unknown bintropy mode '" + mode + "'");
        return verdict_to_dict(bintropy_decide(img, cfg, parsed));
      },
      py::arg("image"), py::arg("mode") = "m0/m1", py::arg("avg_threshold") = 6.677,
      py::arg("max_threshold") = 7.199, py::arg("block_size") = 256);

  m.def(
      "reminder_decide",
      [](const PeImage& img, double ep_entropy_threshold) {
        EntropyConfig cfg;
        cfg.reminder_ep_entropy_threshold = ep_entropy_threshold;
        return verdict_to_dict(reminder_decide(img, cfg));
      },
      py::arg("image"), py::arg("ep_entropy_threshold") = 6.85);

  m.def(
      "wholefile_entropy_decide",
      [](const PeImage& img, double threshold, const std::string& detector_id) {
        EntropyConfig cfg;
        cfg.wholefile_threshold = threshold;
        return verdict_to_dict(wholefile_entropy_decide(img, cfg, detector_id));
      },
      py::arg("image"), py::arg("threshold") = 7.0, py::arg("detector_id") = "wholefile_entropy");

  // --- Signature engine ------------------------------------------------------
  py::class_<Signature>(m, "Signature")
      .def_readonly("label", &Signature::label)
      .def_readonly("ep_only", &Signature::ep_only)
      .def_property_readonly("pattern", &Signature::pattern_text)
      .def("__repr__", [](const Signature& s) { return "<Signature '" + s.label + "'>"; });

  py::class_<SignatureDb>(m, "SignatureDb")
      .def_readonly("name", &SignatureDb::name)
      .def_readonly("entries", &SignatureDb::entries)
      .def("__len__", [](const SignatureDb& db) { return db.entries.size(); });

  m.def(
      "parse_signature_db",
      [](const std::string& text) {
        DbParseReport report;
        SignatureDb db = parse_signature_db(text, &report);
        return py::make_tuple(db, report.skipped_entries, report.diagnostics);
      },
      py::arg("text"), "Returns (db, skipped_count, diagnostics).");

  m.def("serialize_signature_db", &serialize_signature_db, py::arg("db"));

  m.def(
      "match_signatures",
      [](const SignatureDb& db, const PeImage& img, const std::vector<std::string>& scopes,
         std::size_t ep_window) {
        std::vector<MatchScope> parsed;
        for (const auto& s : scopes) parsed.push_back(scope_from_name(s));
        MatchConfig cfg;
        cfg.ep_window = ep_window;
        py::list out;
        for (const auto& match : match_signatures(db, img, parsed, cfg)) {
          py::dict d;
          d["label"] = db.entries[match.sig_index].label;
          d["sig_index"] = match.sig_index;
          d["scope"] = std::string(scope_name(match.scope_hit));
          d["offset"] = match.offset;
          out.append(d);
        }
        return out;
      },
      py::arg("db"), py::arg("image"),
      py::arg("scopes") = std::vector<std::string>{"ENTRY_POINT", "ENTRY_SECTION", "FULL_FILE"},
      py::arg("ep_window") = 64);

  m.def(
      "signature_predict",
      [](const SignatureDb& db, const PeImage& img, const std::string& profile,
         std::size_t ep_window) -> py::object {
        MatchConfig cfg;
        cfg.ep_window = ep_window;
        auto label = signature_predict({&db}, img, ScopePolicy{profile}, cfg);
        if (!label) return py::none();
        return py::str(*label);
      },
      py::arg("db"), py::arg("image"), py::arg("profile") = "app-peid", py::arg("ep_window") = 64);

  m.def("scope_profiles", [] {
    py::dict out;
    for (const auto& [name, scopes] : scope_profiles()) {
      py::list l;
      for (auto s : scopes) l.append(std::string(scope_name(s)));
      out[py::str(name)] = l;
    }
    return out;
  });

  // --- Normalizer -------------------------------------------------------------
  m.def(
      "canonicalize_label",
      [](const std::string& raw, const std::string& alias_table_text) {
        FamilyAliasTable table = alias_table_text.empty() ? FamilyAliasTable::builtin()
                                                          : FamilyAliasTable::load(alias_table_text);
        CanonicalLabel c = canonicalize_label(raw, table);
        return py::make_tuple(
            c.family, c.version ? py::object(py::str(*c.version)) : py::object(py::none()), c.raw);
      },
      py::arg("raw"), py::arg("alias_table_text") = "", "Returns (family, version_or_None, raw).");

  m.def("canonical_families", [] { return canonical_families(); });

  // --- Rules -------------------------------------------------------------------
  m.def("rule_catalog", [] {
    py::list out;
    for (const auto& d : catalog()) {
      py::dict row;
      row["tool"] = d.id.tool;
      row["name"] = d.id.name;
      row["description"] = d.description;
      row["config_keys"] = d.config_keys;
      out.append(row);
    }
    return out;
  });

  m.def(
      "evaluate_rule",
      [](const std::string& tool, const std::string& name, const PeImage& img) {
        RuleConfig cfg;
        RuleVerdict v = evaluate_rule({tool, name}, img, cfg);
        py::dict out;
        out["tool"] = v.rule.tool;
        out["name"] = v.rule.name;
        out["fired"] = v.fired;
        out["evidence"] = json_to_py(v.evidence);
        return out;
      },
      py::arg("tool"), py::arg("name"), py::arg("image"),
      "Evaluate one cataloged rule with default configuration.");

  // --- Metrics -------------------------------------------------------------------
  m.def("f1_from_percent", &f1_from_percent, py::arg("recall_pct"), py::arg("precision_pct"));

  m.def(
      "metrics_from_counts",
      [](std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
        return json_to_py(Metrics::from_counts(tp, fp, fn, tn).to_json());
      },
      py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn"));

  // --- Mock packers and corpus ----------------------------------------------------
  m.def("mock_families", [] {
    py::list out;
    for (const auto& f : mock_families()) {
      py::dict d;
      d["name"] = std::string(f.name);
      d["stub_section"] = std::string(f.stub_section);
      d["payload_section"] = std::string(f.payload_section);
      d["marker"] = std::string(f.marker);
      d["has_unpacker"] = f.has_unpacker;
      out.append(d);
    }
    return out;
  });

  m.def(
      "mock_pack",
      [](const py::bytes& pe, const std::string& family, std::uint64_t seed) {
        return to_bytes(mock_pack(as_span(pe), mock_from_name(family), seed));
      },
      py::arg("pe"), py::arg("family"), py::arg("seed") = 0);

  m.def(
      "mock_unpack",
      [](const py::bytes& packed, const std::string& family) {
        return to_bytes(mock_unpack(as_span(packed), mock_from_name(family)));
      },
      py::arg("packed"), py::arg("family"));

  m.def(
      "generic_mock_unpack",
      [](const py::bytes& packed) -> py::object {
        auto out = generic_mock_unpack(as_span(packed));
        if (!out) return py::none();
        return to_bytes(*out);
      },
      py::arg("packed"));

  m.def(
      "generate_corpus",
      [](const std::map<std::string, std::size_t>& family_counts, std::size_t unpacked,
         std::uint64_t seed, const std::string& out_dir, std::size_t upx) {
        GenSpec spec;
        spec.family_counts = family_counts;
        spec.unpacked_count = unpacked;
        spec.upx_count = upx;
        GroundTruthManifest manifest = generate_corpus(spec, seed, out_dir);
        return json_to_py(manifest.to_json());
      },
      py::arg("family_counts"), py::arg("unpacked") = 0, py::arg("seed") = 0,
      py::arg("out_dir") = "corpus", py::arg("upx") = 0,
      "Generate a synthetic corpus; returns the ground-truth manifest.");

  m.def(
      "sha256_hex", [](const py::bytes& data) { return sha256_hex(as_span(data)); },
      py::arg("data"));

#ifdef VERSION_INFO
  m.attr("__version__") = VERSION_INFO;
#else
  m.attr("__version__") = "0.1.0";
#endif
}
