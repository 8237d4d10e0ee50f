#include "dialoc/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <zlib.h>

#include "dialoc/util.hpp"

namespace dialoc {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void put_u32_be(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::string body = std::string(type, 4) + data;
  out += body;
  put_u32_be(out, static_cast<std::uint32_t>(
                      crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace

std::string encode_png(const Tensor& image) {
  const bool rgb = image.rank() == 3;
  if (!(rgb && image.dim(0) == 3) && image.rank() != 2) {
    throw DimensionError("encode_png: expected [3, H, W] or [H, W], got " + shape_str(image.shape()));
  }
  const int H = rgb ? image.dim(1) : image.dim(0);
  const int W = rgb ? image.dim(2) : image.dim(1);
  const int channels = rgb ? 3 : 1;
  std::string raw;
  raw.reserve(static_cast<std::size_t>(H) * (W * channels + 1));
  for (int y = 0; y < H; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < W; ++x) {
      if (rgb) {
        for (int c = 0; c < 3; ++c) raw.push_back(static_cast<char>(to_byte(image.at(c, y, x))));
      } else {
        raw.push_back(static_cast<char>(to_byte(image.at(y, x))));
      }
    }
  }
  uLongf size = compressBound(static_cast<uLong>(raw.size()));
  std::string compressed(size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &size, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("encode_png: deflate failed");
  }
  compressed.resize(size);

  std::string ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(W));
  put_u32_be(ihdr, static_cast<std::uint32_t>(H));
  ihdr += std::string{8, static_cast<char>(rgb ? 2 : 0), 0, 0, 0};

  std::string out("\x89PNG\r\n\x1a\n", 8);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", compressed);
  put_chunk(out, "IEND", "");
  return out;
}

std::string encode_pgm(const Tensor& gray, const std::string& comment) {
  if (gray.rank() != 2) throw DimensionError("encode_pgm: expected [H, W], got " + shape_str(gray.shape()));
  if (comment.find('\n') != std::string::npos) throw std::invalid_argument("encode_pgm: comment spans lines");
  std::string out = "P5\n" + (comment.empty() ? "" : "# " + comment + "\n");
  out += std::to_string(gray.dim(1)) + " " + std::to_string(gray.dim(0)) + "\n255\n";
  for (float v : gray.data()) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (static_cast<std::uint8_t>(bytes[i]) << 16) |
                            (static_cast<std::uint8_t>(bytes[i + 1]) << 8) | static_cast<std::uint8_t>(bytes[i + 2]);
    for (int s = 18; s >= 0; s -= 6) out.push_back(kAlphabet[(v >> s) & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = static_cast<std::uint8_t>(bytes[i]) << 16;
    if (rest == 2) v |= static_cast<std::uint8_t>(bytes[i + 1]) << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const char* pos = std::char_traits<char>::find(kAlphabet, 64, c);
    if (!pos) throw DataError("base64: invalid character");
    acc = (acc << 6) | static_cast<std::uint32_t>(pos - kAlphabet);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace dialoc
