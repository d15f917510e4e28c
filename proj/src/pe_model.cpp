#include "packerlab/pe_model.hpp"

#include <algorithm>
#include <set>

#include "packerlab/errors.hpp"

namespace packerlab {

namespace {

constexpr std::size_t kDosHeaderSize = 64;
constexpr std::size_t kCoffSize = 20;
constexpr std::uint16_t kMagicPe32 = 0x10B;
constexpr std::uint16_t kMagicPe64 = 0x20B;
constexpr std::uint32_t kScnExecute = 0x20000000;
constexpr std::uint32_t kScnRead = 0x40000000;
constexpr std::uint32_t kScnWrite = 0x80000000;
constexpr std::uint32_t kFileAlign = 0x200;
constexpr std::uint32_t kSectionAlign = 0x1000;
constexpr std::uint32_t kRichKey = 0x9A3B45D1;

std::string trim_section_name(const std::uint8_t* p) {
  std::string name;
  for (int i = 0; i < 8 && p[i] != 0; ++i) name.push_back(static_cast<char>(p[i]));
  return name;
}

std::optional<std::string> read_asciiz(ByteSpan data, std::uint64_t off, std::size_t cap = 256) {
  if (off >= data.size()) return std::nullopt;
  std::string s;
  for (std::uint64_t i = off; i < data.size() && s.size() < cap; ++i) {
    if (data[i] == 0) return s;
    s.push_back(static_cast<char>(data[i]));
  }
  return std::nullopt;  // ran off the file or the cap before a terminator
}

}  // namespace

int PeImage::section_index_for_rva(std::uint32_t rva) const {
  for (std::size_t i = 0; i < sections.size(); ++i) {
    const auto& s = sections[i];
    std::uint64_t lo = s.virtual_addr;
    std::uint64_t hi = lo + s.virtual_extent();
    if (rva >= lo && rva < hi) return static_cast<int>(i);
  }
  return -1;
}

std::optional<std::uint64_t> PeImage::rva_to_offset(std::uint32_t rva) const {
  int idx = section_index_for_rva(rva);
  if (idx < 0) return std::nullopt;
  const auto& s = sections[static_cast<std::size_t>(idx)];
  std::uint64_t delta = rva - s.virtual_addr;
  if (delta >= s.raw_size) return std::nullopt;  // virtual-only tail, no file backing
  return static_cast<std::uint64_t>(s.raw_offset) + delta;
}

ByteSpan PeImage::section_data(const SectionInfo& s) const {
  if (s.raw_offset >= raw.size()) return {};
  std::uint64_t avail = raw.size() - s.raw_offset;
  std::uint64_t len = std::min<std::uint64_t>(s.raw_size, avail);
  return ByteSpan(raw.data() + s.raw_offset, static_cast<std::size_t>(len));
}

PeImage parse_pe(ByteSpan bytes) {
  if (bytes.size() < 2 || bytes[0] != 'M' || bytes[1] != 'Z')
    fail(errc::not_pe, "missing MZ marker");
  if (bytes.size() < kDosHeaderSize)
    fail(errc::truncated_headers, "file ends inside the DOS header");

  std::uint32_t e_lfanew = u32le(bytes.data() + 0x3C);
  // NT headers must follow the DOS header; anything else cannot hold the chain.
  if (e_lfanew < kDosHeaderSize || !in_bounds(bytes, e_lfanew, 4 + kCoffSize + 2))
    fail(errc::truncated_headers, "NT headers out of range");
  if (std::memcmp(bytes.data() + e_lfanew, "PE\0\0", 4) != 0)
    fail(errc::not_pe, "missing PE\\0\\0 marker");

  const std::uint8_t* coff = bytes.data() + e_lfanew + 4;
  std::uint16_t num_sections = u16le(coff + 2);
  std::uint16_t opt_size = u16le(coff + 16);

  std::uint64_t opt_off = e_lfanew + 4 + kCoffSize;
  std::uint16_t magic = u16le(bytes.data() + opt_off);
  PeArch arch;
  if (magic == kMagicPe32)
    arch = PeArch::PE32;
  else if (magic == kMagicPe64)
    arch = PeArch::PE64;
  else
    fail(errc::not_pe, "unknown optional header magic");

  // Mandatory optional-header fields run through SizeOfHeaders (offset 60..64).
  if (!in_bounds(bytes, opt_off, 64))
    fail(errc::truncated_headers, "file ends inside the optional header");

  PeImage img;
  img.arch = arch;
  img.entry_point_rva = u32le(bytes.data() + opt_off + 16);
  img.image_size = u32le(bytes.data() + opt_off + 56);
  img.headers_size = u32le(bytes.data() + opt_off + 60);
  img.raw.assign(bytes.begin(), bytes.end());

  // DOS stub and rich-header scan: region between the DOS header and e_lfanew.
  img.dos_stub.assign(bytes.begin() + kDosHeaderSize, bytes.begin() + e_lfanew);
  for (std::size_t i = 0; i + 4 <= img.dos_stub.size(); ++i) {
    if (std::memcmp(img.dos_stub.data() + i, "Rich", 4) == 0) {
      img.rich_header_present = true;
      break;
    }
  }

  // Data directories (lenient): import = index 1, resource = index 2.
  std::uint64_t dir_off = opt_off + (arch == PeArch::PE32 ? 96 : 112);
  std::uint32_t num_dirs = 0;
  std::uint64_t ndirs_off = opt_off + (arch == PeArch::PE32 ? 92 : 108);
  if (in_bounds(bytes, ndirs_off, 4) && ndirs_off + 4 <= opt_off + opt_size)
    num_dirs = u32le(bytes.data() + ndirs_off);
  else
    img.parse_notes.push_back("optional header too small for data directory count");
  auto read_dir = [&](std::uint32_t index) -> std::optional<std::pair<std::uint32_t, std::uint32_t>> {
    std::uint64_t off = dir_off + index * 8ULL;
    if (index >= num_dirs || !in_bounds(bytes, off, 8) || off + 8 > opt_off + opt_size)
      return std::nullopt;
    std::uint32_t rva = u32le(bytes.data() + off);
    std::uint32_t size = u32le(bytes.data() + off + 4);
    if (rva == 0) return std::nullopt;
    return std::make_pair(rva, size);
  };

  // Section table is part of the mandatory header chain.
  std::uint64_t sect_off = opt_off + opt_size;
  if (!in_bounds(bytes, sect_off, static_cast<std::uint64_t>(num_sections) * 40))
    fail(errc::truncated_headers, "file ends inside the section table");
  for (std::uint16_t i = 0; i < num_sections; ++i) {
    const std::uint8_t* p = bytes.data() + sect_off + i * 40ULL;
    SectionInfo s;
    s.name = trim_section_name(p);
    s.virtual_size = u32le(p + 8);
    s.virtual_addr = u32le(p + 12);
    s.raw_size = u32le(p + 16);
    s.raw_offset = u32le(p + 20);
    s.characteristics = u32le(p + 36);
    s.readable = (s.characteristics & kScnRead) != 0;
    s.writable = (s.characteristics & kScnWrite) != 0;
    s.executable = (s.characteristics & kScnExecute) != 0;
    if (s.raw_size != 0 &&
        (static_cast<std::uint64_t>(s.raw_offset) + s.raw_size > bytes.size())) {
      s.raw_truncated = true;
      img.parse_notes.push_back("section '" + s.name + "' raw range extends past file end");
    }
    img.sections.push_back(std::move(s));
  }

  if (auto rsrc = read_dir(2)) img.resource_dir = rsrc;

  // Imports (lenient): count functions per DLL, flag structural damage.
  if (auto imp = read_dir(1)) {
    img.import_dir_rva = imp->first;
    std::size_t ptr_size = arch == PeArch::PE32 ? 4 : 8;
    auto desc_base = img.rva_to_offset(imp->first);
    if (!desc_base) {
      img.import_table_bad = true;
      img.parse_notes.push_back("import directory RVA resolves outside every section");
    } else {
      for (std::uint32_t di = 0; di < 4096; ++di) {
        std::uint64_t doff = *desc_base + di * 20ULL;
        if (!in_bounds(bytes, doff, 20)) {
          img.import_table_bad = true;
          img.parse_notes.push_back("import descriptor table truncated");
          break;
        }
        const std::uint8_t* d = bytes.data() + doff;
        std::uint32_t oft = u32le(d);
        std::uint32_t name_rva = u32le(d + 12);
        std::uint32_t ft = u32le(d + 16);
        if (oft == 0 && name_rva == 0 && ft == 0) break;  // terminator

        ImportEntry entry;
        auto name_off = img.rva_to_offset(name_rva);
        bool entry_bad = false;
        if (name_off) {
          if (auto nm = read_asciiz(bytes, *name_off))
            entry.dll = *nm;
          else
            entry_bad = true;
        } else {
          entry_bad = true;
        }
        if (entry_bad) {
          entry.dll = "?";
          img.import_table_bad = true;
          img.parse_notes.push_back("import descriptor with unreadable DLL name");
        }

        std::uint32_t thunk_rva = oft != 0 ? oft : ft;
        auto thunk_off = img.rva_to_offset(thunk_rva);
        if (thunk_rva != 0 && !thunk_off) {
          img.import_table_bad = true;
          img.parse_notes.push_back("import thunk array resolves outside every section");
        }
        if (thunk_off) {
          for (std::uint32_t ti = 0; ti < 4096; ++ti) {
            std::uint64_t toff = *thunk_off + static_cast<std::uint64_t>(ti) * ptr_size;
            if (!in_bounds(bytes, toff, ptr_size)) {
              img.import_table_bad = true;
              img.parse_notes.push_back("import thunk array truncated");
              break;
            }
            std::uint64_t v = ptr_size == 4 ? u32le(bytes.data() + toff) : u64le(bytes.data() + toff);
            if (v == 0) break;
            ++entry.function_count;
          }
        }
        img.imports.push_back(std::move(entry));
      }
    }
  }

  return img;
}

EpContext entry_point_context(const PeImage& img, std::size_t window) {
  EpContext ctx;
  std::uint32_t rva = img.entry_point_rva;
  int idx = img.section_index_for_rva(rva);
  if (idx >= 0) {
    ctx.ep_section = static_cast<std::size_t>(idx);
    const auto& s = img.sections[static_cast<std::size_t>(idx)];
    std::uint64_t delta = rva - s.virtual_addr;
    if (delta < s.raw_size) ctx.ep_file_offset = static_cast<std::uint64_t>(s.raw_offset) + delta;
  } else if (rva < img.headers_end()) {
    // Identity mapping holds only inside the headers.
    ctx.ep_file_offset = rva;
  }

  if (ctx.ep_file_offset) {
    std::uint64_t off = *ctx.ep_file_offset;
    std::uint64_t avail = off < img.raw.size() ? img.raw.size() - off : 0;
    std::size_t take = static_cast<std::size_t>(std::min<std::uint64_t>(window, avail));
    ctx.ep_bytes.assign(img.raw.begin() + static_cast<std::ptrdiff_t>(off),
                        img.raw.begin() + static_cast<std::ptrdiff_t>(off + take));
    ctx.padding = window - take;
    ctx.ep_bytes.resize(window, 0);
  }
  return ctx;
}

std::optional<std::pair<std::uint64_t, std::uint64_t>> overlay_range(const PeImage& img) {
  std::uint64_t end = img.headers_end();
  for (const auto& s : img.sections)
    end = std::max(end, static_cast<std::uint64_t>(s.raw_offset) + s.raw_size);
  if (img.raw.size() > end) return std::make_pair(end, img.raw.size() - end);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

namespace {

Bytes make_dos_stub(const std::string& message, bool rich) {
  // Classic 14-byte DOS program, then the message, then a rich header if asked.
  Bytes stub = {0x0E, 0x1F, 0xBA, 0x0E, 0x00, 0xB4, 0x09, 0xCD,
                0x21, 0xB8, 0x01, 0x4C, 0xCD, 0x21};
  put_bytes(stub, ByteSpan(reinterpret_cast<const std::uint8_t*>(message.data()), message.size()));
  const char tail[] = "\r\r\n$";
  put_bytes(stub, ByteSpan(reinterpret_cast<const std::uint8_t*>(tail), 4));
  pad_to(stub, 8);
  if (rich) {
    auto put_xored = [&](std::uint32_t v) { put_u32le(stub, v ^ kRichKey); };
    put_xored(0x536E6144);  // "DanS"
    put_xored(0);
    put_xored(0);
    put_xored(0);
    put_xored(0x00010000);  // one synthetic comp-id entry
    put_xored(1);
    put_bytes(stub, ByteSpan(reinterpret_cast<const std::uint8_t*>("Rich"), 4));
    put_u32le(stub, kRichKey);
    pad_to(stub, 8);
  }
  return stub;
}

struct ImportBlob {
  Bytes bytes;
  std::uint32_t dir_size = 0;  // descriptor table size for the data directory
};

// Import structures laid out relative to `base_rva`.
ImportBlob build_import_blob(const std::vector<ImportSpec>& imports, std::uint32_t base_rva,
                             std::size_t ptr_size) {
  ImportBlob blob;
  std::size_t ndll = imports.size();
  std::size_t desc_bytes = (ndll + 1) * 20;
  blob.dir_size = static_cast<std::uint32_t>(desc_bytes);

  // First pass: assign relative offsets.
  std::size_t cursor = desc_bytes;
  struct DllLayout {
    std::size_t oft, ft, name;
    std::vector<std::size_t> hints;
  };
  std::vector<DllLayout> layout(ndll);
  for (std::size_t i = 0; i < ndll; ++i) {
    auto& l = layout[i];
    std::size_t thunks = (imports[i].functions.size() + 1) * ptr_size;
    l.oft = cursor;
    cursor += thunks;
    l.ft = cursor;
    cursor += thunks;
    for (const auto& fn : imports[i].functions) {
      l.hints.push_back(cursor);
      cursor += 2 + fn.size() + 1;
      if (cursor % 2 != 0) ++cursor;
    }
    l.name = cursor;
    cursor += imports[i].dll.size() + 1;
    if (cursor % 2 != 0) ++cursor;
  }

  blob.bytes.assign(cursor, 0);
  auto wr32 = [&](std::size_t off, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) blob.bytes[off + k] = static_cast<std::uint8_t>(v >> (8 * k));
  };
  auto wr_ptr = [&](std::size_t off, std::uint64_t v) {
    for (std::size_t k = 0; k < ptr_size; ++k)
      blob.bytes[off + k] = static_cast<std::uint8_t>(v >> (8 * k));
  };

  for (std::size_t i = 0; i < ndll; ++i) {
    const auto& l = layout[i];
    std::size_t d = i * 20;
    wr32(d + 0, base_rva + static_cast<std::uint32_t>(l.oft));
    wr32(d + 12, base_rva + static_cast<std::uint32_t>(l.name));
    wr32(d + 16, base_rva + static_cast<std::uint32_t>(l.ft));
    for (std::size_t f = 0; f < imports[i].functions.size(); ++f) {
      std::uint64_t hint_rva = base_rva + l.hints[f];
      wr_ptr(l.oft + f * ptr_size, hint_rva);
      wr_ptr(l.ft + f * ptr_size, hint_rva);
      const auto& fn = imports[i].functions[f];
      std::memcpy(blob.bytes.data() + l.hints[f] + 2, fn.data(), fn.size());
    }
    std::memcpy(blob.bytes.data() + l.name, imports[i].dll.data(), imports[i].dll.size());
  }
  return blob;
}

}  // namespace

Bytes build_minimal_pe(const BuildSpec& spec) {
  bool pe32 = spec.arch == PeArch::PE32;
  std::size_t ptr_size = pe32 ? 4 : 8;
  std::size_t opt_size = pe32 ? 0xE0 : 0xF0;
  std::size_t nsec = spec.sections.size();

  if (spec.entry_section >= 0 && static_cast<std::size_t>(spec.entry_section) >= nsec)
    fail(errc::spec_invalid, "entry section index out of range");
  int host = spec.import_host_section;
  bool need_host = !spec.imports.empty() || spec.resource_size > 0;
  if (need_host) {
    if (host < 0) host = static_cast<int>(nsec) - 1;
    if (host < 0 || static_cast<std::size_t>(host) >= nsec)
      fail(errc::spec_invalid, "imports/resources need a host section");
  }

  Bytes stub = make_dos_stub(spec.dos_message, spec.rich_header);
  std::uint32_t e_lfanew = static_cast<std::uint32_t>(kDosHeaderSize + stub.size());
  std::uint64_t headers_raw_end = e_lfanew + 4 + kCoffSize + opt_size + nsec * 40;
  std::uint32_t size_of_headers = static_cast<std::uint32_t>(align_up(headers_raw_end, kFileAlign));

  // Section content staging; the host section grows import/resource blobs.
  std::vector<Bytes> contents(nsec);
  for (std::size_t i = 0; i < nsec; ++i) contents[i] = spec.sections[i].content;

  std::size_t import_blob_off = 0, resource_off = 0, resource_bytes = 0;
  ImportBlob import_blob;
  if (!spec.imports.empty()) {
    while (contents[static_cast<std::size_t>(host)].size() % 4 != 0)
      contents[static_cast<std::size_t>(host)].push_back(0);
    import_blob_off = contents[static_cast<std::size_t>(host)].size();
    // Size of the blob is RVA-independent; real RVAs are patched below.
    import_blob = build_import_blob(spec.imports, 0, ptr_size);
    contents[static_cast<std::size_t>(host)].resize(import_blob_off + import_blob.bytes.size());
  }
  if (spec.resource_size > 0) {
    while (contents[static_cast<std::size_t>(host)].size() % 4 != 0)
      contents[static_cast<std::size_t>(host)].push_back(0);
    resource_off = contents[static_cast<std::size_t>(host)].size();
    resource_bytes = std::max<std::size_t>(spec.resource_size, 16);
    contents[static_cast<std::size_t>(host)].resize(resource_off + resource_bytes);
  }

  // Virtual layout.
  std::vector<std::uint32_t> vas(nsec), vsizes(nsec);
  std::uint64_t next_va = kSectionAlign;
  for (std::size_t i = 0; i < nsec; ++i) {
    std::uint64_t va = spec.sections[i].virtual_addr != 0 ? spec.sections[i].virtual_addr : next_va;
    std::uint64_t vsize = spec.sections[i].virtual_size != 0
                              ? spec.sections[i].virtual_size
                              : std::max<std::uint64_t>(contents[i].size(), 1);
    vsize = std::max<std::uint64_t>(vsize, contents[i].size());
    vas[i] = static_cast<std::uint32_t>(va);
    vsizes[i] = static_cast<std::uint32_t>(vsize);
    next_va = align_up(std::max<std::uint64_t>(next_va, va + vsize), kSectionAlign);
  }
  for (std::size_t i = 0; i < nsec; ++i)
    for (std::size_t j = i + 1; j < nsec; ++j) {
      std::uint64_t ai = vas[i], bi = ai + std::max<std::uint32_t>(vsizes[i], 1);
      std::uint64_t aj = vas[j], bj = aj + std::max<std::uint32_t>(vsizes[j], 1);
      if (ai < bj && aj < bi)
        fail(errc::spec_invalid, "sections '" + spec.sections[i].name + "' and '" +
                                     spec.sections[j].name + "' overlap virtually");
    }

  // Entry RVA.
  std::uint32_t entry_rva;
  if (spec.entry_section >= 0) {
    std::size_t ei = static_cast<std::size_t>(spec.entry_section);
    if (spec.entry_offset >= vsizes[ei])
      fail(errc::spec_invalid, "entry offset outside its section");
    entry_rva = vas[ei] + spec.entry_offset;
  } else {
    entry_rva = spec.entry_rva;
    if (spec.require_entry_in_section) {
      bool inside = false;
      for (std::size_t i = 0; i < nsec; ++i)
        if (entry_rva >= vas[i] && entry_rva < vas[i] + vsizes[i]) inside = true;
      if (!inside) fail(errc::spec_invalid, "entry RVA outside every section");
    }
  }

  // Patch the import blob now that the host RVA is known.
  std::uint32_t import_rva = 0;
  if (!spec.imports.empty()) {
    import_rva = vas[static_cast<std::size_t>(host)] + static_cast<std::uint32_t>(import_blob_off);
    import_blob = build_import_blob(spec.imports, import_rva, ptr_size);
    std::copy(import_blob.bytes.begin(), import_blob.bytes.end(),
              contents[static_cast<std::size_t>(host)].begin() +
                  static_cast<std::ptrdiff_t>(import_blob_off));
  }
  std::uint32_t resource_rva = 0;
  if (spec.resource_size > 0)
    resource_rva = vas[static_cast<std::size_t>(host)] + static_cast<std::uint32_t>(resource_off);

  // Raw layout.
  std::vector<std::uint32_t> raw_offsets(nsec), raw_sizes(nsec);
  std::uint32_t cursor = size_of_headers;
  for (std::size_t i = 0; i < nsec; ++i) {
    raw_sizes[i] = static_cast<std::uint32_t>(align_up(contents[i].size(), kFileAlign));
    raw_offsets[i] = raw_sizes[i] != 0 ? cursor : 0;
    cursor += raw_sizes[i];
  }

  std::uint64_t image_extent = size_of_headers;
  for (std::size_t i = 0; i < nsec; ++i)
    image_extent = std::max<std::uint64_t>(image_extent, static_cast<std::uint64_t>(vas[i]) + vsizes[i]);
  std::uint32_t size_of_image = static_cast<std::uint32_t>(align_up(image_extent, kSectionAlign));

  std::uint32_t size_of_code = 0, base_of_code = 0;
  for (std::size_t i = 0; i < nsec; ++i)
    if (spec.sections[i].executable) {
      size_of_code += raw_sizes[i];
      if (base_of_code == 0) base_of_code = vas[i];
    }

  // Emit.
  Bytes out;
  out.reserve(cursor + spec.overlay.size());
  put_u16le(out, 0x5A4D);  // "MZ"
  put_u16le(out, 0x90);    // e_cblp
  put_u16le(out, 3);       // e_cp
  put_u16le(out, 0);       // e_crlc
  put_u16le(out, 4);       // e_cparhdr
  for (int i = 0; i < 9; ++i) put_u16le(out, 0);   // e_minalloc through e_ovno
  for (int i = 0; i < 4; ++i) put_u16le(out, 0);   // e_res
  put_u16le(out, 0);                               // e_oemid
  put_u16le(out, 0);                               // e_oeminfo
  for (int i = 0; i < 10; ++i) put_u16le(out, 0);  // e_res2
  put_u32le(out, e_lfanew);                        // at 0x3C
  put_bytes(out, stub);

  put_bytes(out, ByteSpan(reinterpret_cast<const std::uint8_t*>("PE\0\0"), 4));
  put_u16le(out, pe32 ? 0x014C : 0x8664);  // machine
  put_u16le(out, static_cast<std::uint16_t>(nsec));
  put_u32le(out, 0);  // timestamp pinned for determinism
  put_u32le(out, 0);
  put_u32le(out, 0);
  put_u16le(out, static_cast<std::uint16_t>(opt_size));
  put_u16le(out, pe32 ? 0x0102 : 0x0022);  // EXECUTABLE_IMAGE | (32BIT or LARGE_ADDRESS_AWARE)

  put_u16le(out, pe32 ? kMagicPe32 : kMagicPe64);
  put_u8(out, 14);  // linker major
  put_u8(out, 0);
  put_u32le(out, size_of_code);
  put_u32le(out, 0);
  put_u32le(out, 0);
  put_u32le(out, entry_rva);
  put_u32le(out, base_of_code);
  if (pe32) {
    put_u32le(out, 0);           // BaseOfData
    put_u32le(out, 0x400000);    // ImageBase
  } else {
    put_u64le(out, 0x140000000ULL);
  }
  put_u32le(out, kSectionAlign);
  put_u32le(out, kFileAlign);
  put_u16le(out, 6);  // OS major
  put_u16le(out, 0);
  put_u16le(out, 0);  // image version
  put_u16le(out, 0);
  put_u16le(out, 6);  // subsystem major
  put_u16le(out, 0);
  put_u32le(out, 0);  // Win32VersionValue
  put_u32le(out, size_of_image);
  put_u32le(out, size_of_headers);
  put_u32le(out, 0);  // checksum
  put_u16le(out, 3);  // console subsystem
  put_u16le(out, 0);  // DllCharacteristics
  if (pe32) {
    put_u32le(out, 0x100000);
    put_u32le(out, 0x1000);
    put_u32le(out, 0x100000);
    put_u32le(out, 0x1000);
  } else {
    put_u64le(out, 0x100000);
    put_u64le(out, 0x1000);
    put_u64le(out, 0x100000);
    put_u64le(out, 0x1000);
  }
  put_u32le(out, 0);   // LoaderFlags
  put_u32le(out, 16);  // NumberOfRvaAndSizes
  for (int i = 0; i < 16; ++i) {
    if (i == 1 && import_rva != 0) {
      put_u32le(out, import_rva);
      put_u32le(out, import_blob.dir_size);
    } else if (i == 2 && resource_rva != 0) {
      put_u32le(out, resource_rva);
      put_u32le(out, static_cast<std::uint32_t>(resource_bytes));
    } else {
      put_u32le(out, 0);
      put_u32le(out, 0);
    }
  }

  for (std::size_t i = 0; i < nsec; ++i) {
    const auto& s = spec.sections[i];
    std::uint8_t name[8] = {0};
    std::memcpy(name, s.name.data(), std::min<std::size_t>(s.name.size(), 8));
    put_bytes(out, ByteSpan(name, 8));
    put_u32le(out, vsizes[i]);
    put_u32le(out, vas[i]);
    put_u32le(out, raw_sizes[i]);
    put_u32le(out, raw_offsets[i]);
    put_u32le(out, 0);
    put_u32le(out, 0);
    put_u16le(out, 0);
    put_u16le(out, 0);
    std::uint32_t ch = 0;
    if (s.readable) ch |= kScnRead;
    if (s.writable) ch |= kScnWrite;
    if (s.executable) ch |= kScnExecute | 0x20;  // CNT_CODE
    if (!s.executable) ch |= 0x40;               // CNT_INITIALIZED_DATA
    put_u32le(out, ch);
  }

  out.resize(size_of_headers, 0);
  for (std::size_t i = 0; i < nsec; ++i) {
    if (raw_sizes[i] == 0) continue;
    out.resize(raw_offsets[i], 0);
    put_bytes(out, ByteSpan(contents[i].data(), contents[i].size()));
    out.resize(raw_offsets[i] + raw_sizes[i], 0);
  }
  put_bytes(out, ByteSpan(spec.overlay.data(), spec.overlay.size()));
  return out;
}

}  // namespace packerlab
