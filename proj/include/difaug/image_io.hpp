#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "difaug/image.hpp"

namespace difaug {

// Format is chosen from the file signature (PNG or binary PPM "P6").
Image load_image(const std::filesystem::path& path);

// Format is chosen from the extension: .png or .ppm. Pixels are clamped to
// [0, 1] and rounded to 8 bits.
void save_image(const Image& img, const std::filesystem::path& path);

Image decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const Image& img);

Image decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const Image& img);

}  // namespace difaug
