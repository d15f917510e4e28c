#include "packerlab/corpus.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "packerlab/errors.hpp"

namespace packerlab {

namespace fs = std::filesystem;

namespace {

constexpr char kGeneratorVersion[] = "corpusgen-1";

// Stub container, fixed layout at the start of the stub section:
//   0x60 'M' 'O' 'C' 'K' <tag> '!' <version=1> key:u64 payload_len:u64 orig_len:u64
constexpr std::size_t kStubHeaderSize = 32;
constexpr std::uint8_t kStubVersion = 1;

Bytes xor_stream_transform(ByteSpan data, std::uint64_t key, std::uint64_t tweak) {
  Rng rng(key ^ tweak);
  Bytes out(data.begin(), data.end());
  for (auto& b : out) b ^= rng.byte();
  return out;
}

Bytes rle_encode(ByteSpan data) {
  Bytes out;
  std::size_t i = 0;
  while (i < data.size()) {
    std::uint8_t b = data[i];
    std::size_t run = 1;
    while (i + run < data.size() && data[i + run] == b && run < 255) ++run;
    out.push_back(static_cast<std::uint8_t>(run));
    out.push_back(b);
    i += run;
  }
  return out;
}

std::optional<Bytes> rle_decode(ByteSpan data) {
  if (data.size() % 2 != 0) return std::nullopt;
  Bytes out;
  for (std::size_t i = 0; i < data.size(); i += 2) {
    std::uint8_t run = data[i];
    if (run == 0) return std::nullopt;
    out.insert(out.end(), run, data[i + 1]);
  }
  return out;
}

Bytes apply_transform(char tag, ByteSpan data, std::uint64_t key) {
  switch (tag) {
    case 'X': return xor_stream_transform(data, key, 0x584D4F434Bull);
    case 'R': return rle_encode(data);
    case 'N': return xor_stream_transform(data, key, 0x4E4D4F434Bull);
    default: fail(errc::config_invalid, "unknown mock transform tag");
  }
}

std::optional<Bytes> invert_transform(char tag, ByteSpan data, std::uint64_t key) {
  switch (tag) {
    case 'X': return xor_stream_transform(data, key, 0x584D4F434Bull);
    case 'R': return rle_decode(data);
    case 'N': return xor_stream_transform(data, key, 0x4E4D4F434Bull);
    default: return std::nullopt;
  }
}

struct Container {
  char tag = 0;
  std::uint64_t key = 0;
  std::uint64_t payload_len = 0;
  std::uint64_t orig_len = 0;
  ByteSpan payload;
};

// Locates the stub container and the payload in the following section.
std::optional<Container> read_container(const PeImage& img) {
  for (std::size_t i = 0; i < img.sections.size(); ++i) {
    ByteSpan data = img.section_data(img.sections[i]);
    if (data.size() < kStubHeaderSize) continue;
    if (data[0] != 0x60 || std::memcmp(data.data() + 1, "MOCK", 4) != 0 || data[6] != '!')
      continue;
    if (data[7] != kStubVersion) continue;
    Container c;
    c.tag = static_cast<char>(data[5]);
    c.key = u64le(data.data() + 8);
    c.payload_len = u64le(data.data() + 16);
    c.orig_len = u64le(data.data() + 24);
    if (i + 1 >= img.sections.size()) return std::nullopt;
    ByteSpan payload = img.section_data(img.sections[i + 1]);
    if (payload.size() < c.payload_len) return std::nullopt;
    c.payload = payload.subspan(0, static_cast<std::size_t>(c.payload_len));
    return c;
  }
  return std::nullopt;
}

}  // namespace

const std::vector<MockFamily>& mock_families() {
  static const std::vector<MockFamily> fams = {
      {MockId::MOCKX, "MOCKX", "MCKX0", "MCKX1", "MOCKX!", 'X', true},
      {MockId::MOCKR, "MOCKR", "MCKR0", "MCKR1", "MOCKR!", 'R', true},
      {MockId::MOCKN, "MOCKN", "MCKN0", "MCKN1", "MOCKN!", 'N', false},
  };
  return fams;
}

const MockFamily& mock_family(MockId id) {
  for (const auto& f : mock_families())
    if (f.id == id) return f;
  fail(errc::config_invalid, "unknown mock family");
}

std::optional<MockId> mock_id_by_name(const std::string& name) {
  for (const auto& f : mock_families())
    if (name == f.name) return f.id;
  return std::nullopt;
}

Bytes mock_pack(ByteSpan pe, MockId family, std::uint64_t seed) {
  PeArch arch;
  try {
    arch = parse_pe(pe).arch;
  } catch (const Error& e) {
    fail(errc::input_not_pe, std::string("mock_pack input: ") + e.what());
  }
  const MockFamily& fam = mock_family(family);

  std::uint64_t s = seed;
  std::uint64_t key = splitmix64(s);
  if (key == 0) key = 1;
  Bytes payload = apply_transform(fam.tag, pe, key);

  Bytes stub;
  stub.push_back(0x60);
  for (char c : std::string("MOCK")) stub.push_back(static_cast<std::uint8_t>(c));
  stub.push_back(static_cast<std::uint8_t>(fam.tag));
  stub.push_back('!');
  stub.push_back(kStubVersion);
  put_u64le(stub, key);
  put_u64le(stub, payload.size());
  put_u64le(stub, pe.size());
  stub.push_back(0xC3);  // ret

  BuildSpec spec;
  spec.arch = arch;
  spec.sections.push_back({fam.stub_section, true, true, true, stub, 0, 0});
  spec.sections.push_back({fam.payload_section, true, true, false, payload, 0, 0});
  spec.entry_section = 0;
  spec.entry_offset = 0;
  spec.imports = {{"KERNEL32.dll", {"LoadLibraryA"}}};
  spec.import_host_section = 0;  // keep the payload section's prefix clean
  return build_minimal_pe(spec);
}

Bytes mock_unpack(ByteSpan packed, MockId family) {
  const MockFamily& fam = mock_family(family);
  if (!fam.has_unpacker)
    fail(errc::config_invalid, std::string(fam.name) + " has no registered unpacker");

  PeImage img;
  try {
    img = parse_pe(packed);
  } catch (const Error&) {
    fail(errc::wrong_family, "input is not a mock container");
  }
  auto c = read_container(img);
  if (!c) fail(errc::wrong_family, "stub marker absent");
  if (c->tag != fam.tag)
    fail(errc::wrong_family, std::string("container belongs to tag '") + c->tag + "'");
  auto out = invert_transform(c->tag, c->payload, c->key);
  if (!out || out->size() != c->orig_len)
    fail(errc::wrong_family, "payload does not invert cleanly");
  return *out;
}

std::optional<Bytes> generic_mock_unpack(ByteSpan packed) {
  PeImage img;
  try {
    img = parse_pe(packed);
  } catch (const Error&) {
    return std::nullopt;
  }
  auto c = read_container(img);
  if (!c) return std::nullopt;
  auto out = invert_transform(c->tag, c->payload, c->key);
  if (!out || out->size() != c->orig_len) return std::nullopt;
  return out;
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

namespace {

const char* kDlls[] = {"KERNEL32.dll", "USER32.dll", "ADVAPI32.dll", "SHELL32.dll"};
const char* kFuncs[] = {"CreateFileW", "ReadFile",   "WriteFile", "CloseHandle",
                        "MessageBoxW", "RegOpenKeyW", "ExitProcess", "GetModuleHandleW",
                        "VirtualAlloc", "LoadLibraryA"};

// Repetitive, low-entropy "code" so the packed payload stands out.
Bytes structured_content(Rng& rng, std::size_t len) {
  Bytes motif = rng.bytes(12 + rng.below(8));
  for (auto& b : motif) b &= 0x3F;  // narrow the alphabet
  Bytes out;
  out.reserve(len);
  while (out.size() < len) {
    out.insert(out.end(), motif.begin(), motif.end());
    if (rng.below(8) == 0 && !out.empty()) out.back() = rng.byte() & 0x7F;
  }
  out.resize(len);
  return out;
}

}  // namespace

Bytes make_base_pe(std::uint64_t seed, std::size_t index) {
  Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
  BuildSpec spec;
  spec.arch = rng.below(2) == 0 ? PeArch::PE32 : PeArch::PE64;

  std::size_t text_len = 2048 + rng.below(2048);
  SectionSpec text{".text", true, false, true, structured_content(rng, text_len), 0, 0};

  Bytes data_content;
  std::string tagline = "base sample #" + std::to_string(index) + " build " + std::to_string(seed % 997);
  for (int rep = 0; rep < 24; ++rep)
    data_content.insert(data_content.end(), tagline.begin(), tagline.end());
  data_content.resize(1024 + rng.below(512), ' ');
  SectionSpec data{".data", true, true, false, data_content, 0, 0};

  spec.sections = {text, data};
  if (rng.below(2) == 0)
    spec.sections.push_back({".rdata", true, false, false, structured_content(rng, 512), 0, 0});

  spec.entry_section = 0;
  spec.entry_offset = static_cast<std::uint32_t>(rng.below(64));

  std::size_t ndll = 2 + rng.below(3);
  for (std::size_t d = 0; d < ndll; ++d) {
    ImportSpec imp;
    imp.dll = kDlls[d % 4];
    std::size_t nf = 2 + rng.below(4);
    for (std::size_t f = 0; f < nf; ++f) imp.functions.push_back(kFuncs[rng.below(10)]);
    spec.imports.push_back(imp);
  }
  spec.import_host_section = 1;
  if (rng.below(2) == 0) spec.resource_size = 128;
  spec.rich_header = rng.below(2) == 0;
  if (rng.below(4) == 0) spec.overlay = Bytes(64, 0x20);
  return build_minimal_pe(spec);
}

nlohmann::json GroundTruthManifest::to_json() const {
  nlohmann::json samples_json = nlohmann::json::object();
  for (const auto& [sha, fam] : samples) samples_json[sha] = fam;
  return nlohmann::json{
      {"seed", seed}, {"generator", generator_version}, {"samples", std::move(samples_json)}};
}

GroundTruthManifest GroundTruthManifest::from_json(const nlohmann::json& j) {
  GroundTruthManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.generator_version = j.value("generator", "");
  for (const auto& [sha, fam] : j.at("samples").items())
    m.samples[sha] = fam.get<std::string>();
  return m;
}

namespace {

bool upx_available() { return std::system("command -v upx >/dev/null 2>&1") == 0; }

std::optional<Bytes> upx_pack(const Bytes& pe, const fs::path& workdir) {
  fs::path in = workdir / "upx_in.exe";
  fs::path out = workdir / "upx_out.exe";
  std::ofstream(in, std::ios::binary).write(reinterpret_cast<const char*>(pe.data()),
                                            static_cast<std::streamsize>(pe.size()));
  std::string cmd = "upx -q -q -q -o " + out.string() + " " + in.string() + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  if (rc != 0 || !fs::exists(out)) return std::nullopt;
  std::ifstream f(out, std::ios::binary);
  Bytes bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  fs::remove(in);
  fs::remove(out);
  return bytes;
}

}  // namespace

GroundTruthManifest generate_corpus(const GenSpec& spec, std::uint64_t seed,
                                    const fs::path& out_dir) {
  for (const auto& [fam, count] : spec.family_counts) {
    (void)count;
    if (!mock_id_by_name(fam)) fail(errc::spec_invalid, "unknown mock family '" + fam + "'");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(errc::io_error, "cannot create corpus dir: " + out_dir.string());

  GroundTruthManifest manifest;
  manifest.seed = seed;
  manifest.generator_version = kGeneratorVersion;

  std::size_t index = 0;
  auto emit = [&](const Bytes& bytes, const std::string& label) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04zu.exe", index);
    fs::path path = out_dir / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(errc::io_error, "cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    manifest.samples[sha256_hex(ByteSpan(bytes.data(), bytes.size()))] = label;
    ++index;
  };

  // Family order is fixed (map is ordered) so generation is reproducible.
  for (const auto& [fam_name, count] : spec.family_counts) {
    MockId id = *mock_id_by_name(fam_name);
    for (std::size_t i = 0; i < count; ++i) {
      Bytes base = make_base_pe(seed, index);
      emit(mock_pack(ByteSpan(base.data(), base.size()), id, seed ^ (index * 2654435761ULL)),
           fam_name);
    }
  }
  for (std::size_t i = 0; i < spec.unpacked_count; ++i)
    emit(make_base_pe(seed, index), "NOT_PACKED");

  if (spec.upx_count > 0 && upx_available()) {
    for (std::size_t i = 0; i < spec.upx_count; ++i) {
      Bytes base = make_base_pe(seed, index);
      if (auto packed = upx_pack(base, out_dir))
        emit(*packed, "UPX");
      // Silently skipped when upx rejects the input; the corpus stays hermetic.
    }
  }

  std::ofstream mf(out_dir / "manifest.json");
  mf << manifest.to_json().dump(2) << "\n";
  return manifest;
}

SampleIndex ingest(const fs::path& directory) {
  std::error_code ec;
  if (!fs::is_directory(directory, ec) || ec)
    fail(errc::io_error, "not a readable directory: " + directory.string());

  std::vector<fs::path> files;
  for (auto it = fs::recursive_directory_iterator(directory, ec);
       it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) fail(errc::io_error, "scan failed: " + ec.message());
    if (it->is_regular_file()) files.push_back(it->path());
  }
  std::sort(files.begin(), files.end());

  SampleIndex index;
  std::map<std::string, std::size_t> by_sha;
  for (const auto& path : files) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(errc::io_error, "cannot read " + path.string());
    Bytes bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::string sha = sha256_hex(ByteSpan(bytes.data(), bytes.size()));
    auto it = by_sha.find(sha);
    if (it != by_sha.end()) {
      index.entries[it->second].paths.push_back(path.string());
      continue;
    }
    SampleEntry e;
    e.sha256 = sha;
    e.paths.push_back(path.string());
    e.size = bytes.size();
    try {
      PeImage img = parse_pe(ByteSpan(bytes.data(), bytes.size()));
      e.arch = img.arch;
      e.parse_status = "OK";
    } catch (const Error& err) {
      e.parse_status = err.code() == errc::not_pe ? "NOT_PE" : "TRUNCATED";
    }
    by_sha[sha] = index.entries.size();
    index.entries.push_back(std::move(e));
  }
  return index;
}

// ---------------------------------------------------------------------------
// Results store
// ---------------------------------------------------------------------------

ResultsStore::ResultsStore(const fs::path& path) : path_(path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd_ < 0) fail(errc::io_error, "cannot open results store " + path.string());
}

ResultsStore::~ResultsStore() {
  if (fd_ >= 0) ::close(fd_);
}

void ResultsStore::append(const nlohmann::json& record) {
  std::string line = record.dump();
  line.push_back('\n');
  const char* p = line.data();
  std::size_t remaining = line.size();
  // O_APPEND makes each write() land atomically at the end of the file.
  while (remaining > 0) {
    ssize_t n = ::write(fd_, p, remaining);
    if (n < 0) fail(errc::io_error, "results store write failed");
    p += n;
    remaining -= static_cast<std::size_t>(n);
  }
}

std::vector<nlohmann::json> ResultsStore::read_all(const fs::path& path) {
  std::ifstream f(path);
  if (!f) fail(errc::io_error, "cannot read results store " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

std::size_t ResultsStore::line_count(const fs::path& path) {
  std::ifstream f(path);
  if (!f) return 0;
  std::size_t n = 0;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace packerlab
