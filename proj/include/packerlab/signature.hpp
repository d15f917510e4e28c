#pragma once

#include <optional>
#include <string>
#include <vector>

#include "packerlab/bytes.hpp"
#include "packerlab/pe_model.hpp"

namespace packerlab {

// One pattern byte: either a concrete value or a '??' wildcard.
struct PatternByte {
  std::uint8_t value = 0;
  bool wild = false;
};

struct Signature {
  std::string label;
  std::vector<PatternByte> pattern;  // non-empty, <= 2048, >= 1 concrete byte
  bool ep_only = false;
  std::string source_db;

  std::string pattern_text() const;   // canonical "AA BB ??" form
  std::string pattern_digest() const; // sha256 over pattern_text + ep_only
};

struct SignatureDb {
  std::string name;
  std::vector<Signature> entries;  // file order, which is also match-report order
};

enum class MatchScope { ENTRY_POINT, ENTRY_SECTION, FULL_FILE };

const char* scope_name(MatchScope s);

struct SignatureMatch {
  std::size_t sig_index = 0;  // into SignatureDb::entries
  MatchScope scope_hit = MatchScope::ENTRY_POINT;
  std::uint64_t offset = 0;   // file offset of the match
};

struct DbParseReport {
  std::size_t skipped_entries = 0;
  std::vector<std::string> diagnostics;
};

// PEiD userdb grammar: "[Label]" then "signature = HH ?? .." then
// "ep_only = true|false". Unknown keys are ignored with a diagnostic,
// malformed entries are skipped and counted.
SignatureDb parse_signature_db(const std::string& text, DbParseReport* report = nullptr);

// Canonical form; parse(serialize(db)) reproduces the model exactly.
std::string serialize_signature_db(const SignatureDb& db);

struct MatchConfig {
  std::size_t ep_window = 64;  // ENTRY_POINT patterns longer than this are refused
};

std::vector<SignatureMatch> match_signatures(const SignatureDb& db, const PeImage& img,
                                             const std::vector<MatchScope>& scopes,
                                             const MatchConfig& cfg = {});

// Named tool profile selecting which scopes a tool consults and in which
// priority order (entry point before entry section before full file).
struct ScopePolicy {
  std::string profile = "app-peid";
};

const std::vector<std::pair<std::string, std::vector<MatchScope>>>& scope_profiles();
const std::vector<MatchScope>& profile_scopes(const std::string& profile);

// First match under the profile's scope priority wins; ties within a scope
// resolve by db order, then offset. Returns the raw signature label.
std::optional<std::string> signature_predict(const std::vector<const SignatureDb*>& dbs,
                                             const PeImage& img, const ScopePolicy& policy,
                                             const MatchConfig& cfg = {});

}  // namespace packerlab
