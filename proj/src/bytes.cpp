#include "packerlab/bytes.hpp"

#include <openssl/evp.h>

#include "packerlab/errors.hpp"

namespace packerlab {

const char* errc_name(errc c) {
  switch (c) {
    case errc::not_pe: return "NotPe";
    case errc::truncated_headers: return "TruncatedHeaders";
    case errc::spec_invalid: return "SpecInvalid";
    case errc::unknown_rule: return "UnknownRule";
    case errc::empty_db: return "EmptyDb";
    case errc::duplicate_tool: return "DuplicateTool";
    case errc::malformed_report: return "MalformedReport";
    case errc::bad_registry: return "BadRegistry";
    case errc::domain_mismatch: return "DomainMismatch";
    case errc::oracle_mismatch: return "OracleMismatch";
    case errc::stale_plan: return "StalePlan";
    case errc::empty_module: return "EmptyModule";
    case errc::input_not_pe: return "InputNotPe";
    case errc::wrong_family: return "WrongFamily";
    case errc::io_error: return "IoError";
    case errc::config_invalid: return "ConfigInvalid";
  }
  return "Error";
}

std::string to_hex(ByteSpan data) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xF]);
  }
  return out;
}

std::string sha256_hex(ByteSpan data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int md_len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &md_len, EVP_sha256(), nullptr) != 1)
    fail(errc::io_error, "sha256 digest failed");
  return to_hex(ByteSpan(md, md_len));
}

}  // namespace packerlab
