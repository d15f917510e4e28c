#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "packerlab/bytes.hpp"
#include "packerlab/pe_model.hpp"

namespace testutil {

inline packerlab::ByteSpan span(const packerlab::Bytes& b) {
  return packerlab::ByteSpan(b.data(), b.size());
}

inline packerlab::ByteSpan span(const std::string& s) {
  return packerlab::ByteSpan(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

// Three-section PE with an executable .text holding the entry point.
inline packerlab::BuildSpec basic_spec(packerlab::PeArch arch = packerlab::PeArch::PE64) {
  packerlab::BuildSpec spec;
  spec.arch = arch;
  spec.sections.push_back({".text", true, false, true, packerlab::Bytes(512, 0x90), 0, 0});
  spec.sections.push_back({".data", true, true, false, packerlab::Bytes(256, 0x61), 0, 0});
  spec.sections.push_back({".rsrc", true, false, false, packerlab::Bytes(64, 0x00), 0, 0});
  spec.entry_section = 0;
  spec.entry_offset = 0;
  spec.imports = {{"KERNEL32.dll", {"ExitProcess", "CreateFileW"}}};
  spec.import_host_section = 1;
  return spec;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("packerlab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& p, packerlab::ByteSpan bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::string data_file(const std::string& name) {
  return std::string(PACKERLAB_DATA_DIR) + "/" + name;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace testutil
