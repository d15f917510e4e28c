// Independent brute-force oracles. These deliberately re-derive results from
// first principles (different formulas, different traversals) so they stay
// decoupled from the library code they check.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "packerlab/bytes.hpp"
#include "packerlab/signature.hpp"

namespace oracles {

// Entropy via H = log2(n) - (1/n) * sum c_i*log2(c_i), long double accumulation.
inline double brute_entropy(packerlab::ByteSpan data) {
  if (data.empty()) return 0.0;
  std::map<std::uint8_t, std::uint64_t> hist;
  for (auto b : data) ++hist[b];
  long double n = static_cast<long double>(data.size());
  long double acc = 0.0L;
  for (const auto& [byte, count] : hist)
    acc += static_cast<long double>(count) * std::log2(static_cast<long double>(count));
  return static_cast<double>(std::log2(n) - acc / n);
}

inline std::vector<double> brute_block_entropies(packerlab::ByteSpan data, std::size_t block,
                                                 bool exclude_zero, bool include_partial) {
  std::vector<double> out;
  for (std::size_t off = 0; off < data.size(); off += block) {
    std::size_t len = std::min(block, data.size() - off);
    if (len < block && !include_partial) break;
    bool all_zero = true;
    for (std::size_t i = 0; i < len; ++i)
      if (data[off + i] != 0) {
        all_zero = false;
        break;
      }
    if (all_zero && exclude_zero) continue;
    out.push_back(brute_entropy(data.subspan(off, len)));
  }
  return out;
}

// Position-by-position wildcard check.
inline bool naive_match_at(const std::vector<packerlab::PatternByte>& pat,
                           packerlab::ByteSpan data, std::size_t pos) {
  if (pos + pat.size() > data.size()) return false;
  for (std::size_t i = 0; i < pat.size(); ++i) {
    if (pat[i].wild) continue;
    if (data[pos + i] != pat[i].value) return false;
  }
  return true;
}

struct NaiveMatch {
  std::size_t sig_index;
  packerlab::MatchScope scope;
  std::uint64_t offset;

  bool operator==(const NaiveMatch& o) const {
    return sig_index == o.sig_index && scope == o.scope && offset == o.offset;
  }
};

// Full rescan mirroring the documented matcher contract, including the
// zero-padded entry-point window and the ep_only confinement.
std::vector<NaiveMatch> naive_scan(const packerlab::SignatureDb& db, const packerlab::PeImage& img,
                                   const std::vector<packerlab::MatchScope>& scopes,
                                   std::size_t ep_window);

// Hand confusion counter for binary verdicts.
struct BruteConfusion {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline BruteConfusion brute_confusion(const std::vector<std::pair<bool, bool>>& pred_actual) {
  BruteConfusion c;
  for (auto [pred, actual] : pred_actual) {
    if (pred && actual)
      ++c.tp;
    else if (pred && !actual)
      ++c.fp;
    else if (!pred && actual)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

}  // namespace oracles
