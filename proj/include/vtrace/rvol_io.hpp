#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vtrace/error.hpp"
#include "vtrace/volume.hpp"

namespace vtrace {

// RVOL: `<name>.rvol.json` header next to a raw little-endian x-fastest payload.

namespace detail {

inline std::filesystem::path rvol_raw_path(const std::filesystem::path& header) {
  std::string name = header.filename().string();
  const std::string suffix = ".rvol.json";
  if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
    name.resize(name.size() - suffix.size());
  } else {
    name = header.stem().string();
  }
  return header.parent_path() / (name + ".raw");
}

inline VolumeKind parse_kind(const std::string& s) {
  if (s == "intensity") return VolumeKind::intensity;
  if (s == "probability") return VolumeKind::probability;
  if (s == "binary") return VolumeKind::binary;
  throw Error(ErrorCode::malformed_file, "unknown volume kind '" + s + "'");
}

}  // namespace detail

inline void save_volume(const Volume3D& v, const std::filesystem::path& path) {
  v.validate();
  const bool as_u8 = v.kind() == VolumeKind::binary;
  const std::filesystem::path raw = detail::rvol_raw_path(path);

  nlohmann::json header;
  header["dims"] = v.dims();
  header["spacing"] = to_array(v.spacing());
  header["origin"] = to_array(v.origin());
  header["dtype"] = as_u8 ? "u8" : "f32";
  header["order"] = "x-fastest";
  header["kind"] = to_string(v.kind());
  header["data"] = raw.filename().string();

  std::ofstream raw_out(raw, std::ios::binary | std::ios::trunc);
  if (!raw_out) throw Error(ErrorCode::io, "cannot write " + raw.string());
  if (as_u8) {
    std::vector<std::uint8_t> bytes(v.size());
    for (std::size_t n = 0; n < v.size(); ++n) bytes[n] = v[n] != 0.0f ? 1 : 0;
    raw_out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  } else {
    std::vector<std::uint32_t> words(v.size());
    for (std::size_t n = 0; n < v.size(); ++n) {
      std::uint32_t w = std::bit_cast<std::uint32_t>(v[n]);
      if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
      words[n] = w;
    }
    raw_out.write(reinterpret_cast<const char*>(words.data()),
                  static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  }
  if (!raw_out) throw Error(ErrorCode::io, "failed writing " + raw.string());

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << header.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::io, "failed writing " + path.string());
}

inline Volume3D load_volume(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "missing file: " + path.string());
  nlohmann::json header;
  try {
    in >> header;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_file, path.string() + ": " + e.what());
  }

  Grid grid;
  std::string dtype;
  std::filesystem::path raw;
  VolumeKind kind = VolumeKind::intensity;
  try {
    const auto dims = header.at("dims").get<std::array<int, 3>>();
    const auto spacing = header.at("spacing").get<std::array<double, 3>>();
    const auto origin = header.at("origin").get<std::array<double, 3>>();
    grid = Grid{dims, from_array(spacing), from_array(origin)};
    dtype = header.at("dtype").get<std::string>();
    if (header.value("order", std::string("x-fastest")) != "x-fastest")
      throw Error(ErrorCode::malformed_file, "unsupported voxel order");
    raw = path.parent_path() / header.at("data").get<std::string>();
    if (header.contains("kind")) {
      kind = detail::parse_kind(header.at("kind").get<std::string>());
    } else {
      kind = dtype == "u8" ? VolumeKind::binary : VolumeKind::intensity;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_file, path.string() + ": " + e.what());
  }
  grid.validate();
  if (dtype != "f32" && dtype != "u8")
    throw Error(ErrorCode::malformed_file, "unsupported dtype '" + dtype + "'");

  const std::size_t elem = dtype == "u8" ? 1 : 4;
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(raw, ec);
  if (ec) throw Error(ErrorCode::io, "missing payload: " + raw.string());
  if (bytes != grid.size() * elem)
    throw Error(ErrorCode::size_mismatch, "size mismatch: payload has " + std::to_string(bytes) +
                                              " bytes, header implies " +
                                              std::to_string(grid.size() * elem));

  std::ifstream raw_in(raw, std::ios::binary);
  if (!raw_in) throw Error(ErrorCode::io, "cannot read " + raw.string());
  std::vector<float> data(grid.size());
  if (elem == 1) {
    std::vector<std::uint8_t> buf(grid.size());
    raw_in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    for (std::size_t n = 0; n < buf.size(); ++n) data[n] = static_cast<float>(buf[n]);
  } else {
    std::vector<std::uint32_t> buf(grid.size());
    raw_in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    for (std::size_t n = 0; n < buf.size(); ++n) {
      std::uint32_t w = buf[n];
      if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
      data[n] = std::bit_cast<float>(w);
    }
  }
  if (!raw_in) throw Error(ErrorCode::io, "short read on " + raw.string());

  Volume3D v(grid, kind, std::move(data));
  v.validate();
  return v;
}

}  // namespace vtrace
