#include "qus/image_io.hpp"

#include <zlib.h>

#include <array>
#include <cstring>
#include <fstream>

#include "qus/errors.hpp"

namespace qus {

void write_pgm(const std::string& path, const RasterU8& img) {
  if (img.empty()) throw SizeError("write_pgm: empty image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data()),
           static_cast<std::streamsize>(img.size()));
  if (!os) throw IoError("write failed: " + path);
}

RasterU8 read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw IoError("PGM: expected P5 in " + path);
  // Header tokens may be separated by whitespace and '#' comment lines.
  auto next_int = [&is, &path]() -> long {
    for (;;) {
      int ch = is.peek();
      if (ch == EOF) throw IoError("PGM: truncated header in " + path);
      if (std::isspace(ch)) {
        is.get();
      } else if (ch == '#') {
        std::string line;
        std::getline(is, line);
      } else {
        break;
      }
    }
    long v = 0;
    is >> v;
    if (!is) throw IoError("PGM: malformed header in " + path);
    return v;
  };
  const long w = next_int();
  const long h = next_int();
  const long maxval = next_int();
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw IoError("PGM: unsupported dimensions or maxval in " + path);
  is.get();  // single whitespace after maxval
  RasterU8 img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  is.read(reinterpret_cast<char*>(img.data()),
          static_cast<std::streamsize>(img.size()));
  if (!is) throw IoError("PGM: truncated pixel data in " + path);
  return img;
}

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void write_chunk(std::ofstream& os, const char type[4],
                 const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> head;
  put_be32(head, static_cast<std::uint32_t>(data.size()));
  os.write(reinterpret_cast<const char*>(head.data()), 4);
  os.write(type, 4);
  if (!data.empty())
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty())
    crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  std::vector<std::uint8_t> tail;
  put_be32(tail, static_cast<std::uint32_t>(crc));
  os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

void write_png(const std::string& path, std::size_t rows, std::size_t cols,
               std::uint8_t color_type, std::size_t channels,
               const std::uint8_t* pixels) {
  if (rows < 1 || cols < 1) throw SizeError("write_png: empty image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);

  static const std::array<std::uint8_t, 8> sig = {0x89, 'P',  'N',  'G',
                                                  0x0d, 0x0a, 0x1a, 0x0a};
  os.write(reinterpret_cast<const char*>(sig.data()), 8);

  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(cols));
  put_be32(ihdr, static_cast<std::uint32_t>(rows));
  ihdr.push_back(8);           // bit depth
  ihdr.push_back(color_type);  // 0 gray, 2 rgb
  ihdr.push_back(0);           // compression
  ihdr.push_back(0);           // filter
  ihdr.push_back(0);           // interlace
  write_chunk(os, "IHDR", ihdr);

  // Raw scanlines, each prefixed with filter byte 0.
  const std::size_t stride = cols * channels;
  std::vector<std::uint8_t> raw((stride + 1) * rows);
  for (std::size_t r = 0; r < rows; ++r) {
    raw[r * (stride + 1)] = 0;
    std::memcpy(raw.data() + r * (stride + 1) + 1, pixels + r * stride,
                stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> idat(bound);
  if (compress2(idat.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw IoError("write_png: deflate failed");
  idat.resize(bound);
  write_chunk(os, "IDAT", idat);
  write_chunk(os, "IEND", {});
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace

void write_png_gray(const std::string& path, const RasterU8& img) {
  write_png(path, img.rows(), img.cols(), 0, 1, img.data());
}

void write_png_rgb(const std::string& path, std::size_t rows, std::size_t cols,
                   const std::vector<std::uint8_t>& rgb_interleaved) {
  if (rgb_interleaved.size() != rows * cols * 3)
    throw ShapeError("write_png_rgb: buffer size does not match dims");
  write_png(path, rows, cols, 2, 3, rgb_interleaved.data());
}

}  // namespace qus
