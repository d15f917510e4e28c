#include "packerlab/entropy.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "packerlab/errors.hpp"

namespace packerlab {

void EntropyConfig::validate() const {
  auto in_range = [](double t) { return t >= 0.0 && t <= 8.0; };
  if (!in_range(bintropy_avg_threshold) || !in_range(bintropy_max_threshold) ||
      !in_range(reminder_ep_entropy_threshold) || !in_range(wholefile_threshold))
    fail(errc::config_invalid, "entropy thresholds must lie in [0, 8]");
  if (block_size < 16) fail(errc::config_invalid, "block_size must be >= 16");
}

const char* bintropy_mode_name(BintropyMode m) {
  switch (m) {
    case BintropyMode::FULL_FILE: return "FULL_FILE";
    case BintropyMode::PER_SECTION: return "PER_SECTION";
    case BintropyMode::OR_COMBINE: return "OR_COMBINE";
    case BintropyMode::AND_COMBINE: return "AND_COMBINE";
  }
  return "?";
}

std::map<std::string, BintropyMode> default_bintropy_variant_map() {
  return {{"m0", BintropyMode::FULL_FILE},
          {"m1", BintropyMode::PER_SECTION},
          {"m0/m1", BintropyMode::OR_COMBINE},
          {"m0&m1", BintropyMode::AND_COMBINE}};
}

double shannon_entropy(ByteSpan data) {
  if (data.empty()) return 0.0;
  std::array<std::uint64_t, 256> hist{};
  for (auto b : data) ++hist[b];
  double n = static_cast<double>(data.size());
  double h = 0.0;
  for (auto c : hist) {
    if (c == 0) continue;
    double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

std::vector<double> block_entropies(ByteSpan data, const EntropyConfig& cfg) {
  cfg.validate();
  std::vector<double> out;
  for (std::size_t off = 0; off < data.size(); off += cfg.block_size) {
    std::size_t len = std::min(cfg.block_size, data.size() - off);
    if (len < cfg.block_size && !cfg.include_partial_block) break;
    ByteSpan block = data.subspan(off, len);
    if (cfg.exclude_zero_blocks &&
        std::all_of(block.begin(), block.end(), [](std::uint8_t b) { return b == 0; }))
      continue;
    out.push_back(shannon_entropy(block));
  }
  return out;
}

namespace {

struct AvgMax {
  double avg = 0.0;
  double max = 0.0;
  bool any = false;
};

AvgMax summarize(const std::vector<double>& blocks) {
  AvgMax r;
  if (blocks.empty()) return r;
  r.any = true;
  double sum = 0.0;
  for (double e : blocks) {
    sum += e;
    r.max = std::max(r.max, e);
  }
  r.avg = sum / static_cast<double>(blocks.size());
  return r;
}

bool exceeds(const AvgMax& m, const EntropyConfig& cfg) {
  return m.any && m.avg > cfg.bintropy_avg_threshold && m.max > cfg.bintropy_max_threshold;
}

}  // namespace

PackednessVerdict bintropy_decide(const PeImage& img, const EntropyConfig& cfg, BintropyMode mode) {
  cfg.validate();
  PackednessVerdict v;
  v.detector_id = std::string("Bintropy.") + bintropy_mode_name(mode);

  AvgMax whole = summarize(block_entropies(ByteSpan(img.raw.data(), img.raw.size()), cfg));
  bool full_hit = exceeds(whole, cfg);

  bool section_hit = false;
  std::string hit_section;
  AvgMax best_section;
  for (const auto& s : img.sections) {
    AvgMax m = summarize(block_entropies(img.section_data(s), cfg));
    if (m.any && (!best_section.any || m.avg > best_section.avg)) best_section = m;
    if (exceeds(m, cfg)) {
      section_hit = true;
      if (hit_section.empty()) hit_section = s.name;
    }
  }

  switch (mode) {
    case BintropyMode::FULL_FILE: v.packed = full_hit; break;
    case BintropyMode::PER_SECTION: v.packed = section_hit; break;
    case BintropyMode::OR_COMBINE: v.packed = full_hit || section_hit; break;
    case BintropyMode::AND_COMBINE: v.packed = full_hit && section_hit; break;
  }

  v.evidence["mode"] = bintropy_mode_name(mode);
  v.evidence["avg_block_entropy"] = whole.avg;
  v.evidence["max_block_entropy"] = whole.max;
  v.evidence["full_file_hit"] = full_hit;
  v.evidence["section_hit"] = section_hit;
  if (best_section.any) {
    v.evidence["best_section_avg"] = best_section.avg;
    v.evidence["best_section_max"] = best_section.max;
  }
  if (!hit_section.empty()) v.evidence["hit_section"] = hit_section;
  return v;
}

PackednessVerdict reminder_decide(const PeImage& img, const EntropyConfig& cfg) {
  cfg.validate();
  PackednessVerdict v;
  v.detector_id = "REMINDer";
  EpContext ep = entry_point_context(img);
  if (!ep.ep_section) {
    v.evidence["ep_section"] = nullptr;
    return v;
  }
  const auto& s = img.sections[*ep.ep_section];
  double e = shannon_entropy(img.section_data(s));
  v.packed = s.writable && e > cfg.reminder_ep_entropy_threshold;
  v.evidence["ep_section"] = s.name;
  v.evidence["ep_section_writable"] = s.writable;
  v.evidence["ep_section_entropy"] = e;
  return v;
}

PackednessVerdict wholefile_entropy_decide(const PeImage& img, const EntropyConfig& cfg,
                                           const std::string& detector_id) {
  cfg.validate();
  PackednessVerdict v;
  v.detector_id = detector_id;
  double e = shannon_entropy(ByteSpan(img.raw.data(), img.raw.size()));
  v.packed = e > cfg.wholefile_threshold;
  v.evidence["wholefile_entropy"] = e;
  return v;
}

}  // namespace packerlab
