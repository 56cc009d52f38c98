#include "clickseg/npy.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <regex>
#include <string>

#include "clickseg/error.hpp"

namespace clickseg {

static_assert(std::endian::native == std::endian::little, "npy writer assumes a little-endian host");

void save_npy(const FloatGrid& grid, const std::filesystem::path& path) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(grid.height()) +
                       ", " + std::to_string(grid.width()) + "), }";
  // magic(6) + version(2) + len(2) + header + '\n' padded to 64 bytes
  std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  auto len = static_cast<std::uint16_t>(header.size());
  out.put(static_cast<char>(len & 0xff));
  out.put(static_cast<char>(len >> 8));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(grid.data()), static_cast<std::streamsize>(grid.size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::io_error, "short write to " + path.string());
}

FloatGrid load_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::not_found, "cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string_view(magic, 6) != "\x93NUMPY") throw Error(ErrorCode::parse_error, "not an npy file: " + path.string());
  std::size_t header_len = 0;
  if (magic[6] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (std::size_t{b[3]} << 24);
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));

  static const std::regex descr(R"('descr':\s*'<f4')");
  static const std::regex fortran(R"('fortran_order':\s*False)");
  static const std::regex shape(R"('shape':\s*\((\d+),\s*(\d+),?\s*\))");
  std::smatch m;
  if (!std::regex_search(header, descr) || !std::regex_search(header, fortran) ||
      !std::regex_search(header, m, shape))
    throw Error(ErrorCode::parse_error, "unsupported npy header (need C-order <f4 2-D): " + header);
  int h = std::stoi(m[1].str());
  int w = std::stoi(m[2].str());
  FloatGrid grid(h, w, 0.0f);
  in.read(reinterpret_cast<char*>(grid.data()), static_cast<std::streamsize>(grid.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(grid.size() * sizeof(float)))
    throw Error(ErrorCode::parse_error, "truncated npy payload: " + path.string());
  return grid;
}

}  // namespace clickseg
