#include "specfuse/image.hpp"

#include "specfuse/errors.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace specfuse {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back((uint8_t)(v >> 24));
  out.push_back((uint8_t)(v >> 16));
  out.push_back((uint8_t)(v >> 8));
  out.push_back((uint8_t)v);
}

void put_chunk(std::ofstream& f, const char type[4], const std::vector<uint8_t>& data) {
  std::vector<uint8_t> buf;
  put_u32(buf, (uint32_t)data.size());
  buf.insert(buf.end(), type, type + 4);
  buf.insert(buf.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, buf.data() + 4, (uInt)(buf.size() - 4));
  put_u32(buf, crc);
  f.write(reinterpret_cast<const char*>(buf.data()), (std::streamsize)buf.size());
}

}  // namespace

void write_png(const std::string& path, int width, int height,
               const std::vector<uint8_t>& rgb) {
  if (width < 1 || height < 1 || rgb.size() != (size_t)width * height * 3)
    throw DataError("write_png: buffer does not match dimensions");

  // filter byte 0 per scanline
  std::vector<uint8_t> raw((size_t)height * (1 + (size_t)width * 3));
  for (int r = 0; r < height; ++r) {
    uint8_t* row = raw.data() + (size_t)r * (1 + (size_t)width * 3);
    row[0] = 0;
    std::memcpy(row + 1, rgb.data() + (size_t)r * width * 3, (size_t)width * 3);
  }

  uLongf bound = compressBound((uLong)raw.size());
  std::vector<uint8_t> zdata(bound);
  if (compress2(zdata.data(), &bound, raw.data(), (uLong)raw.size(), 9) != Z_OK)
    throw DataError("write_png: zlib compression failed");
  zdata.resize(bound);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("write_png: cannot open " + path);
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  f.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  put_u32(ihdr, (uint32_t)width);
  put_u32(ihdr, (uint32_t)height);
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(f, "IHDR", ihdr);
  put_chunk(f, "IDAT", zdata);
  put_chunk(f, "IEND", {});
  if (!f) throw DataError("write_png: write failed for " + path);
}

std::vector<uint8_t> colorize_labels(const std::vector<int32_t>& labels,
                                     const std::vector<std::array<uint8_t, 3>>& palette) {
  std::vector<uint8_t> rgb(labels.size() * 3, 0);
  for (size_t i = 0; i < labels.size(); ++i) {
    int32_t l = labels[i];
    if (l <= 0) continue;
    if ((size_t)l > palette.size())
      throw DataError("colorize_labels: label exceeds palette size");
    const auto& c = palette[(size_t)l - 1];
    rgb[i * 3] = c[0];
    rgb[i * 3 + 1] = c[1];
    rgb[i * 3 + 2] = c[2];
  }
  return rgb;
}

}  // namespace specfuse
