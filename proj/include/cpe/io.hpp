#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "cpe/errors.hpp"

namespace cpe {

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path + " for reading");
  std::ostringstream out;
  out << in.rdbuf();
  if (!in.good() && !in.eof()) throw io_error("read failed on " + path);
  return out.str();
}

// Write-temp-then-rename so interrupted runs never leave torn files.
inline void write_text_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.parent_path() /
                       (target.filename().string() + ".tmp." + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out.good()) throw io_error("write failed on " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw io_error("cannot rename " + tmp.string() + " to " + path);
  }
}

inline nlohmann::ordered_json parse_json(const std::string& text, const std::string& context) {
  try {
    return nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw validation_error("invalid JSON in " + context + ": " + e.what());
  }
}

inline nlohmann::ordered_json load_json_file(const std::string& path) {
  return parse_json(read_text_file(path), path);
}

}  // namespace cpe
