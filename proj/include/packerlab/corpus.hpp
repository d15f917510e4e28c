#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vendor_json.hpp"

#include "packerlab/bytes.hpp"
#include "packerlab/pe_model.hpp"

namespace packerlab {

enum class MockId { MOCKX, MOCKR, MOCKN };

// Deterministic invertible stand-ins for real packer/unpacker pairs:
//   MOCKX  keyed byte-wise cipher, registered unpacker
//   MOCKR  run-length compression, registered unpacker
//   MOCKN  keyed transform with NO registered family unpacker
struct MockFamily {
  MockId id;
  const char* name;
  const char* stub_section;
  const char* payload_section;
  const char* marker;  // stub marker string, also the string_name_match hook
  char tag;
  bool has_unpacker;
};

const std::vector<MockFamily>& mock_families();
const MockFamily& mock_family(MockId id);
std::optional<MockId> mock_id_by_name(const std::string& name);

// Packs a valid PE into the family's stub+payload container.
Bytes mock_pack(ByteSpan pe, MockId family, std::uint64_t seed);

// Exact inverse for the family's own output; raises WrongFamily on anything
// else. Only valid for has_unpacker families.
Bytes mock_unpack(ByteSpan packed, MockId family);

// Container-aware recovery regardless of family tag; the stand-in for a
// generic dynamic unpacker. Returns nothing when no mock container is found.
std::optional<Bytes> generic_mock_unpack(ByteSpan packed);

struct GenSpec {
  std::map<std::string, std::size_t> family_counts;  // mock family name -> count
  std::size_t unpacked_count = 0;
  std::size_t upx_count = 0;  // real UPX samples; silently 0 when upx is absent
};

struct GroundTruthManifest {
  std::uint64_t seed = 0;
  std::string generator_version;
  std::map<std::string, std::string> samples;  // sha256 -> family | "NOT_PACKED"

  nlohmann::json to_json() const;
  static GroundTruthManifest from_json(const nlohmann::json& j);
};

// Builds a diverse deterministic base PE; exposed for tests and the packers.
Bytes make_base_pe(std::uint64_t seed, std::size_t index);

// Writes samples + manifest.json under out_dir; pure function of (spec, seed).
GroundTruthManifest generate_corpus(const GenSpec& spec, std::uint64_t seed,
                                    const std::filesystem::path& out_dir);

struct SampleEntry {
  std::string sha256;
  std::vector<std::string> paths;  // all paths carrying this content
  std::uint64_t size = 0;
  std::optional<PeArch> arch;
  std::string parse_status;  // OK | NOT_PE | TRUNCATED
};

struct SampleIndex {
  std::vector<SampleEntry> entries;
};

SampleIndex ingest(const std::filesystem::path& directory);

// Append-only JSONL store; one record per line, each append one write().
class ResultsStore {
 public:
  explicit ResultsStore(const std::filesystem::path& path);
  ~ResultsStore();
  ResultsStore(const ResultsStore&) = delete;
  ResultsStore& operator=(const ResultsStore&) = delete;

  void append(const nlohmann::json& record);
  const std::filesystem::path& path() const { return path_; }

  static std::vector<nlohmann::json> read_all(const std::filesystem::path& path);
  static std::size_t line_count(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace packerlab
