#include "difaug/image_io.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "difaug/error.hpp"

namespace difaug {
namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

Image from_interleaved(const std::uint8_t* rgb, std::size_t h, std::size_t w) {
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = rgb[(y * w + x) * 3 + c] / 255.0;
  return img;
}

std::vector<std::uint8_t> to_interleaved(const Image& img) {
  std::vector<std::uint8_t> rgb(img.height * img.width * 3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) rgb[(y * img.width + x) * 3 + c] = quantize(img.at(c, y, x));
  return rgb;
}

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

// Walks the chunk list so structural damage is reported with its byte offset
// before libpng sees the data.
void validate_png_chunks(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0) {
    throw ParseError("PNG: bad signature at byte offset 0");
  }
  std::size_t pos = 8;
  bool seen_header = false;
  while (true) {
    if (pos + 8 > bytes.size()) {
      throw ParseError("PNG: truncated chunk header at byte offset " + std::to_string(pos));
    }
    const std::uint32_t len = read_be32(bytes.data() + pos);
    const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    if (len > 0x7FFFFFFFu || pos + 12 + len > bytes.size()) {
      throw ParseError("PNG: chunk '" + type + "' at byte offset " + std::to_string(pos) +
                       " runs past end of file");
    }
    const uLong crc = crc32(crc32(0L, Z_NULL, 0), bytes.data() + pos + 4, len + 4);
    if (crc != read_be32(bytes.data() + pos + 8 + len)) {
      throw ParseError("PNG: CRC mismatch in chunk '" + type + "' at byte offset " +
                       std::to_string(pos));
    }
    if (!seen_header && type != "IHDR") {
      throw ParseError("PNG: expected IHDR at byte offset " + std::to_string(pos));
    }
    seen_header = true;
    pos += 12 + len;
    if (type == "IEND") return;
  }
}

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) {
    throw ParseError("PPM: " + why + " at byte offset " + std::to_string(pos));
  };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail("expected an integer");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 24)) fail("header value too large");
      ++pos;
    }
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') fail("missing 'P6' magic");
  pos = 2;
  const std::size_t w = read_uint();
  const std::size_t h = read_uint();
  const std::size_t maxval = read_uint();
  if (w == 0 || h == 0) fail("zero image dimension");
  if (maxval == 0 || maxval > 255) fail("unsupported maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("expected whitespace after header");
  ++pos;
  const std::size_t need = w * h * 3;
  if (bytes.size() - pos < need) {
    pos = bytes.size();
    fail("truncated pixel data (" + std::to_string(need) + " bytes expected)");
  }
  Image img(h, w);
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, y, x) = std::min(1.0, bytes[pos + (y * w + x) * 3 + c] * scale);
      }
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto rgb = to_interleaved(img);
  out.insert(out.end(), rgb.begin(), rgb.end());
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  validate_png_chunks(bytes);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ParseError(std::string("PNG: cannot decode header (offset 8): ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ParseError("PNG: cannot decode image data: " + msg);
  }
  return from_interleaved(rgb.data(), image.height, image.width);
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  const auto rgb = to_interleaved(img);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) {
      return decode_png(bytes);
    }
    return decode_ppm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_image(const Image& img, const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") {
    write_file(path, encode_png(img));
  } else if (ext == ".ppm") {
    write_file(path, encode_ppm(img));
  } else {
    throw IoError("unsupported image extension '" + ext + "' for '" + path.string() + "'");
  }
}

}  // namespace difaug
