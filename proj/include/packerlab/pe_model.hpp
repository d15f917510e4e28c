#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "packerlab/bytes.hpp"

namespace packerlab {

enum class PeArch { PE32, PE64 };

inline const char* arch_name(PeArch a) { return a == PeArch::PE32 ? "PE32" : "PE64"; }

struct SectionInfo {
  std::string name;  // raw header name, NUL-trimmed, nothing else
  std::uint32_t virtual_addr = 0;
  std::uint32_t virtual_size = 0;
  std::uint32_t raw_offset = 0;
  std::uint32_t raw_size = 0;
  bool readable = false;
  bool writable = false;
  bool executable = false;
  std::uint32_t characteristics = 0;
  bool raw_truncated = false;  // declared raw range extends past the file end

  // Virtual extent used for RVA containment; zero virtual_size falls back to raw_size.
  std::uint32_t virtual_extent() const {
    return virtual_size != 0 ? virtual_size : raw_size;
  }
};

struct ImportEntry {
  std::string dll;
  std::uint32_t function_count = 0;
};

// Parsed PE; immutable after parse_pe returns. Mandatory headers are strict,
// everything else is lenient with a parse note instead of a failure.
struct PeImage {
  PeArch arch = PeArch::PE32;
  std::uint32_t entry_point_rva = 0;
  std::uint32_t image_size = 0;    // SizeOfImage as declared
  std::uint32_t headers_size = 0;  // SizeOfHeaders as declared
  std::vector<SectionInfo> sections;
  std::vector<ImportEntry> imports;
  Bytes dos_stub;  // bytes between the DOS header and the PE signature
  bool rich_header_present = false;
  std::optional<std::pair<std::uint32_t, std::uint32_t>> resource_dir;  // (rva, size)
  std::uint32_t import_dir_rva = 0;
  bool import_table_bad = false;  // nonzero import RVA resolving nowhere, or truncated descriptors
  Bytes raw;
  std::vector<std::string> parse_notes;

  std::uint32_t import_function_total() const {
    std::uint32_t n = 0;
    for (const auto& e : imports) n += e.function_count;
    return n;
  }

  // Headers byte count usable for offset math (declared size clamped to the file).
  std::uint64_t headers_end() const {
    return headers_size < raw.size() ? headers_size : raw.size();
  }

  // First section whose virtual range contains the RVA, or -1.
  int section_index_for_rva(std::uint32_t rva) const;

  // RVA -> file offset through the containing section's raw data.
  std::optional<std::uint64_t> rva_to_offset(std::uint32_t rva) const;

  // Raw bytes backing a section, clamped to the file.
  ByteSpan section_data(const SectionInfo& s) const;
};

struct EpContext {
  std::optional<std::size_t> ep_section;       // index into PeImage::sections
  std::optional<std::uint64_t> ep_file_offset;
  Bytes ep_bytes;       // exactly `window` bytes when an offset exists, else empty
  std::size_t padding = 0;  // zero bytes appended because the file ended inside the window
};

PeImage parse_pe(ByteSpan bytes);
EpContext entry_point_context(const PeImage& img, std::size_t window = 64);
std::optional<std::pair<std::uint64_t, std::uint64_t>> overlay_range(const PeImage& img);

// ---------------------------------------------------------------------------
// Synthetic PE builder
// ---------------------------------------------------------------------------

struct SectionSpec {
  std::string name;
  bool readable = true;
  bool writable = false;
  bool executable = false;
  Bytes content;
  std::uint32_t virtual_addr = 0;  // 0 = assign sequentially
  std::uint32_t virtual_size = 0;  // 0 = derive from content
};

struct ImportSpec {
  std::string dll;
  std::vector<std::string> functions;
};

struct BuildSpec {
  PeArch arch = PeArch::PE32;
  std::vector<SectionSpec> sections;

  // Entry location: either (entry_section, entry_offset) or a raw entry_rva
  // with entry_section = -1. Containment is enforced only when requested.
  int entry_section = 0;
  std::uint32_t entry_offset = 0;
  std::uint32_t entry_rva = 0;
  bool require_entry_in_section = true;

  std::vector<ImportSpec> imports;
  int import_host_section = -1;  // -1 = last section
  std::uint32_t resource_size = 0;
  std::string dos_message = "This program cannot be run in DOS mode";
  bool rich_header = false;
  Bytes overlay;
};

// Deterministic: identical specs yield identical bytes.
Bytes build_minimal_pe(const BuildSpec& spec);

}  // namespace packerlab
