#pragma once

#include <map>
#include <string>
#include <vector>

#include "vendor_json.hpp"

#include "packerlab/bytes.hpp"
#include "packerlab/pe_model.hpp"

namespace packerlab {

// Thresholds default to the original tools' published configurations; the
// block/average/max pair drives the Bintropy-style decision, the single
// thresholds drive the entry-point and whole-file detectors.
struct EntropyConfig {
  std::size_t block_size = 256;
  double bintropy_avg_threshold = 6.677;
  double bintropy_max_threshold = 7.199;
  double reminder_ep_entropy_threshold = 6.85;
  double wholefile_threshold = 7.0;
  bool exclude_zero_blocks = true;
  bool include_partial_block = true;

  void validate() const;  // thresholds in [0,8], block_size >= 16
};

enum class BintropyMode { FULL_FILE, PER_SECTION, OR_COMBINE, AND_COMBINE };

const char* bintropy_mode_name(BintropyMode m);

// Published variant names -> modes. Re-bindable when comparing against a
// tool build that numbers its variants differently.
std::map<std::string, BintropyMode> default_bintropy_variant_map();

struct PackednessVerdict {
  bool packed = false;
  std::string detector_id;
  nlohmann::json evidence = nlohmann::json::object();
};

// -Σ p_i log2 p_i over the 256-symbol byte histogram; empty input -> 0.
double shannon_entropy(ByteSpan data);

// Entropy per consecutive block; the final partial block is included when
// configured, all-zero blocks are dropped when exclude_zero_blocks is set.
std::vector<double> block_entropies(ByteSpan data, const EntropyConfig& cfg);

PackednessVerdict bintropy_decide(const PeImage& img, const EntropyConfig& cfg, BintropyMode mode);
PackednessVerdict reminder_decide(const PeImage& img, const EntropyConfig& cfg);
PackednessVerdict wholefile_entropy_decide(const PeImage& img, const EntropyConfig& cfg,
                                           const std::string& detector_id = "wholefile_entropy");

}  // namespace packerlab
