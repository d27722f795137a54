#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "difaug/image.hpp"

namespace difaug {

enum class TextureFamily { kGrating, kCheckerboard, kRadialGradient, kFilteredNoise, kPolygonEdges };

inline constexpr std::size_t kTextureFamilies = 5;

std::string_view to_string(TextureFamily family);
TextureFamily parse_texture_family(std::string_view text);

struct TextureRecipe {
  TextureFamily family = TextureFamily::kGrating;
  std::uint64_t seed = 0;

  friend bool operator==(const TextureRecipe&, const TextureRecipe&) = default;
};

using Color = std::array<double, 3>;

// Oriented sinusoid with an integer wave vector (kx, ky) in cycles per patch,
// so the grating tiles the patch and lands on a single DFT bin.
struct GratingParams {
  int kx = 1;
  int ky = 0;
  double phase = 0.0;
  Color low{0.0, 0.0, 0.0};
  Color high{1.0, 1.0, 1.0};
};

GratingParams grating_params(const TextureRecipe& recipe);
Image render_grating(const GratingParams& params, std::size_t size);

// Renders one square HR patch; deterministic in (recipe, size).
Image render_texture(const TextureRecipe& recipe, std::size_t size);

struct ImagePair {
  Image hr;
  Image lr;
  std::size_t scale = 4;
};

// HR plus its bicubic x4 downscale.
ImagePair make_pair(Image hr);

inline constexpr const char* kDatasetFormatVersion = "difaug-dataset-v1";

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::size_t patch_size = 64;
  std::size_t count = 400;
  // Held-out images for PSNR/SSIM and calibration crops.
  std::size_t val_count = 16;
  std::size_t val_patch_size = 128;
  std::vector<TextureRecipe> recipes;
  std::vector<TextureRecipe> val_recipes;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Fills the recipe lists from seed; family and parameters per patch come
// from per-patch derived seeds.
DatasetManifest make_manifest(std::uint64_t seed, std::size_t patch_size, std::size_t count,
                              std::size_t val_count, std::size_t val_patch_size);

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

struct Dataset {
  DatasetManifest manifest;
  std::vector<ImagePair> train;
  std::vector<ImagePair> val;
};

Dataset gen_synthetic_dataset(const DatasetManifest& manifest);

// Layout: manifest.json, train/hr_NNNN.png, train/lr_NNNN.png, val/... .
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
// Reads the PNG pairs written by write_dataset.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace difaug
