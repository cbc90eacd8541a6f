#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "odtk/core.hpp"

namespace odtk::io {

namespace fs = std::filesystem;

inline std::string read_text(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::MissingFile,
          "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temporary and renames over the target, so readers never
/// observe a half-written file.
inline void write_atomic(const fs::path &path, std::string_view bytes) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io,
            "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(static_cast<bool>(out), ErrorKind::Io,
            "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error(ErrorKind::Io, "cannot rename onto " + path.string() + ": " +
                                   ec.message());
  }
}

/// Little-endian float32 payload.
inline std::string encode_f32(std::span<const float> values) {
  std::string out(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    if constexpr (std::endian::native == std::endian::big)
      bits = __builtin_bswap32(bits);
    std::memcpy(out.data() + 4 * i, &bits, 4);
  }
  return out;
}

inline std::vector<float> decode_f32(std::string_view bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big)
      bits = __builtin_bswap32(bits);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

} // namespace odtk::io
