#include "packerlab/signature.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "packerlab/errors.hpp"

namespace packerlab {

namespace {

constexpr std::size_t kMaxPatternLen = 2048;

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

// Returns empty + message on malformed token streams.
std::optional<std::vector<PatternByte>> parse_pattern(const std::string& text, std::string* why) {
  std::vector<PatternByte> pat;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    if (tok == "??") {
      pat.push_back({0, true});
      continue;
    }
    if (tok.size() == 2) {
      int hi = hex_nibble(tok[0]), lo = hex_nibble(tok[1]);
      if (hi >= 0 && lo >= 0) {
        pat.push_back({static_cast<std::uint8_t>((hi << 4) | lo), false});
        continue;
      }
      if (tok[0] == '?' || tok[1] == '?') {
        *why = "nibble wildcards ('" + tok + "') are not supported";
        return std::nullopt;
      }
    }
    *why = "bad pattern token '" + tok + "'";
    return std::nullopt;
  }
  if (pat.empty()) {
    *why = "empty pattern";
    return std::nullopt;
  }
  if (pat.size() > kMaxPatternLen) {
    *why = "pattern longer than 2048 bytes";
    return std::nullopt;
  }
  if (std::all_of(pat.begin(), pat.end(), [](const PatternByte& b) { return b.wild; })) {
    *why = "pattern has no concrete byte";
    return std::nullopt;
  }
  return pat;
}

bool pattern_matches_at(const std::vector<PatternByte>& pat, ByteSpan data, std::size_t pos) {
  if (pos + pat.size() > data.size()) return false;
  for (std::size_t i = 0; i < pat.size(); ++i)
    if (!pat[i].wild && data[pos + i] != pat[i].value) return false;
  return true;
}

}  // namespace

std::string Signature::pattern_text() const {
  static const char* digits = "0123456789ABCDEF";
  std::string out;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (i) out.push_back(' ');
    if (pattern[i].wild) {
      out += "??";
    } else {
      out.push_back(digits[pattern[i].value >> 4]);
      out.push_back(digits[pattern[i].value & 0xF]);
    }
  }
  return out;
}

std::string Signature::pattern_digest() const {
  std::string key = pattern_text() + (ep_only ? "|ep" : "|any");
  return sha256_hex(ByteSpan(reinterpret_cast<const std::uint8_t*>(key.data()), key.size()));
}

const char* scope_name(MatchScope s) {
  switch (s) {
    case MatchScope::ENTRY_POINT: return "ENTRY_POINT";
    case MatchScope::ENTRY_SECTION: return "ENTRY_SECTION";
    case MatchScope::FULL_FILE: return "FULL_FILE";
  }
  return "?";
}

SignatureDb parse_signature_db(const std::string& text, DbParseReport* report) {
  DbParseReport local;
  DbParseReport& rep = report ? *report : local;

  SignatureDb db;
  struct Pending {
    std::string label;
    std::optional<std::string> sig_text;
    bool ep_only = false;
    bool open = false;
  } cur;

  auto flush = [&]() {
    if (!cur.open) return;
    if (!cur.sig_text) {
      ++rep.skipped_entries;
      rep.diagnostics.push_back("entry '" + cur.label + "' has no signature line");
    } else {
      std::string why;
      auto pat = parse_pattern(*cur.sig_text, &why);
      if (!pat) {
        ++rep.skipped_entries;
        rep.diagnostics.push_back("entry '" + cur.label + "': " + why);
      } else {
        Signature s;
        s.label = cur.label;
        s.pattern = std::move(*pat);
        s.ep_only = cur.ep_only;
        db.entries.push_back(std::move(s));
      }
    }
    cur = Pending{};
  };

  std::istringstream in(text);
  std::string raw_line;
  while (std::getline(in, raw_line)) {
    std::string line = trim(raw_line);
    if (line.empty() || line[0] == ';') continue;
    if (line.front() == '[') {
      flush();
      std::size_t close = line.rfind(']');
      cur.label = close == std::string::npos ? line.substr(1) : line.substr(1, close - 1);
      cur.open = true;
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos || !cur.open) {
      rep.diagnostics.push_back("ignored line: " + line);
      continue;
    }
    std::string key = lower(trim(line.substr(0, eq)));
    std::string value = trim(line.substr(eq + 1));
    if (key == "signature") {
      cur.sig_text = value;
    } else if (key == "ep_only") {
      cur.ep_only = lower(value) == "true";
    } else {
      rep.diagnostics.push_back("entry '" + cur.label + "': unknown key '" + key + "'");
    }
  }
  flush();

  if (db.entries.empty()) fail(errc::empty_db, "no valid signature entries");
  return db;
}

std::string serialize_signature_db(const SignatureDb& db) {
  std::string out;
  for (std::size_t i = 0; i < db.entries.size(); ++i) {
    const auto& s = db.entries[i];
    if (i) out += "\n";
    out += "[" + s.label + "]\n";
    out += "signature = " + s.pattern_text() + "\n";
    out += std::string("ep_only = ") + (s.ep_only ? "true" : "false") + "\n";
  }
  return out;
}

std::vector<SignatureMatch> match_signatures(const SignatureDb& db, const PeImage& img,
                                             const std::vector<MatchScope>& scopes,
                                             const MatchConfig& cfg) {
  if (scopes.empty()) fail(errc::config_invalid, "scope set must be non-empty");
  auto wants = [&](MatchScope s) {
    return std::find(scopes.begin(), scopes.end(), s) != scopes.end();
  };

  EpContext ep = entry_point_context(img, cfg.ep_window);
  std::vector<SignatureMatch> out;

  auto scan_span = [&](const std::vector<PatternByte>& pat, ByteSpan data, std::uint64_t base,
                       MatchScope scope, std::size_t sig_index) {
    if (pat.size() > data.size()) return;
    // Anchor candidate positions on the first concrete byte.
    std::size_t anchor = 0;
    while (pat[anchor].wild) ++anchor;
    std::uint8_t needle = pat[anchor].value;
    std::size_t limit = data.size() - pat.size();
    for (std::size_t pos = 0; pos <= limit; ++pos) {
      if (data[pos + anchor] != needle) continue;
      if (pattern_matches_at(pat, data, pos))
        out.push_back({sig_index, scope, base + pos});
    }
  };

  for (std::size_t i = 0; i < db.entries.size(); ++i) {
    const auto& sig = db.entries[i];
    if (wants(MatchScope::ENTRY_POINT) && ep.ep_file_offset &&
        sig.pattern.size() <= cfg.ep_window) {
      ByteSpan window(ep.ep_bytes.data(), ep.ep_bytes.size());
      if (pattern_matches_at(sig.pattern, window, 0))
        out.push_back({i, MatchScope::ENTRY_POINT, *ep.ep_file_offset});
    }
    if (sig.ep_only) continue;  // confined to the entry point
    if (wants(MatchScope::ENTRY_SECTION) && ep.ep_section) {
      const auto& s = img.sections[*ep.ep_section];
      scan_span(sig.pattern, img.section_data(s), s.raw_offset, MatchScope::ENTRY_SECTION, i);
    }
    if (wants(MatchScope::FULL_FILE))
      scan_span(sig.pattern, ByteSpan(img.raw.data(), img.raw.size()), 0, MatchScope::FULL_FILE, i);
  }

  auto rank = [](MatchScope s) {
    return s == MatchScope::ENTRY_POINT ? 0 : s == MatchScope::ENTRY_SECTION ? 1 : 2;
  };
  std::sort(out.begin(), out.end(), [&](const SignatureMatch& a, const SignatureMatch& b) {
    if (a.sig_index != b.sig_index) return a.sig_index < b.sig_index;
    if (rank(a.scope_hit) != rank(b.scope_hit)) return rank(a.scope_hit) < rank(b.scope_hit);
    return a.offset < b.offset;
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const SignatureMatch& a, const SignatureMatch& b) {
                          return a.sig_index == b.sig_index && a.scope_hit == b.scope_hit &&
                                 a.offset == b.offset;
                        }),
            out.end());
  return out;
}

const std::vector<std::pair<std::string, std::vector<MatchScope>>>& scope_profiles() {
  static const std::vector<std::pair<std::string, std::vector<MatchScope>>> profiles = {
      {"app-peid", {MatchScope::ENTRY_POINT, MatchScope::ENTRY_SECTION, MatchScope::FULL_FILE}},
      {"peid", {MatchScope::ENTRY_POINT, MatchScope::ENTRY_SECTION}},
      {"readpe", {MatchScope::ENTRY_POINT}},
      {"pypackerdetect", {MatchScope::ENTRY_POINT, MatchScope::FULL_FILE}},
  };
  return profiles;
}

const std::vector<MatchScope>& profile_scopes(const std::string& profile) {
  for (const auto& [name, scopes] : scope_profiles())
    if (name == profile) return scopes;
  fail(errc::config_invalid, "unknown scope profile '" + profile + "'");
}

std::optional<std::string> signature_predict(const std::vector<const SignatureDb*>& dbs,
                                             const PeImage& img, const ScopePolicy& policy,
                                             const MatchConfig& cfg) {
  const auto& priority = profile_scopes(policy.profile);
  std::vector<std::vector<SignatureMatch>> per_db;
  per_db.reserve(dbs.size());
  for (const auto* db : dbs) per_db.push_back(match_signatures(*db, img, priority, cfg));

  for (MatchScope scope : priority) {
    for (std::size_t d = 0; d < dbs.size(); ++d) {
      const SignatureMatch* best = nullptr;
      for (const auto& m : per_db[d]) {
        if (m.scope_hit != scope) continue;
        if (!best || m.sig_index < best->sig_index ||
            (m.sig_index == best->sig_index && m.offset < best->offset))
          best = &m;
      }
      if (best) return dbs[d]->entries[best->sig_index].label;
    }
  }
  return std::nullopt;
}

}  // namespace packerlab
