#pragma once

#include <stdexcept>
#include <string>

namespace packerlab {

// Every declared failure in the toolkit maps to one of these codes.
enum class errc {
  not_pe,
  truncated_headers,
  spec_invalid,
  unknown_rule,
  empty_db,
  duplicate_tool,
  malformed_report,
  bad_registry,
  domain_mismatch,
  oracle_mismatch,
  stale_plan,
  empty_module,
  input_not_pe,
  wrong_family,
  io_error,
  config_invalid,
};

const char* errc_name(errc c);

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

  errc code() const { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace packerlab
