#include "difaug/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "difaug/diffusion_augment.hpp"
#include "difaug/error.hpp"
#include "difaug/image_io.hpp"
#include "difaug/parallel.hpp"
#include "difaug/resample.hpp"
#include "difaug/rng.hpp"

namespace difaug {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Validation recipes use a disjoint seed range.
constexpr std::uint64_t kValStream = 0x76616c6964ULL;

Color random_color(Rng& rng) {
  return {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
}

// Two colors at least 0.3 apart in mean absolute channel difference.
std::pair<Color, Color> color_pair(Rng& rng) {
  Color a = random_color(rng);
  Color b = random_color(rng);
  for (int tries = 0; tries < 32; ++tries) {
    double d = 0.0;
    for (int c = 0; c < 3; ++c) d += std::abs(a[c] - b[c]) / 3.0;
    if (d >= 0.3) break;
    b = random_color(rng);
  }
  return {a, b};
}

void mix_into(Image& img, std::size_t y, std::size_t x, const Color& a, const Color& b, double t) {
  for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = a[c] + (b[c] - a[c]) * t;
}

Image render_checkerboard(Rng& rng, std::size_t size) {
  static constexpr std::size_t kCells[] = {2, 4, 8, 16};
  const std::size_t cell = kCells[rng.uniform_int(3)];
  const std::size_t ox = rng.uniform_int(cell - 1);
  const std::size_t oy = rng.uniform_int(cell - 1);
  const auto [a, b] = color_pair(rng);
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const bool odd = (((x + ox) / cell) + ((y + oy) / cell)) % 2 == 1;
      mix_into(img, y, x, a, b, odd ? 1.0 : 0.0);
    }
  return img;
}

Image render_radial(Rng& rng, std::size_t size) {
  const double n = static_cast<double>(size);
  const double cx = rng.uniform(0.0, n);
  const double cy = rng.uniform(0.0, n);
  const double radius = rng.uniform(0.3, 1.2) * n;
  const double gamma = rng.uniform(0.5, 2.0);
  const auto [a, b] = color_pair(rng);
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy) / radius;
      mix_into(img, y, x, a, b, std::pow(std::min(d, 1.0), gamma));
    }
  return img;
}

// Circular Gaussian blur of one plane.
std::vector<double> blur_wrap(const std::vector<double>& in, std::size_t n, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += k[i + radius];
  }
  for (double& v : k) v /= total;
  const auto wrap = [n](long i) { return static_cast<std::size_t>(((i % long(n)) + long(n)) % long(n)); };
  std::vector<double> tmp(n * n, 0.0), out(n * n, 0.0);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (int i = -radius; i <= radius; ++i) tmp[y * n + x] += k[i + radius] * in[y * n + wrap(long(x) + i)];
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (int i = -radius; i <= radius; ++i) out[y * n + x] += k[i + radius] * tmp[wrap(long(y) + i) * n + x];
  return out;
}

Image render_filtered_noise(Rng& rng, std::size_t size) {
  const double sigma = rng.uniform(1.0, 4.0);
  const auto [a, b] = color_pair(rng);
  std::vector<double> white(size * size);
  for (double& v : white) v = rng.normal();
  std::vector<double> field = blur_wrap(white, size, sigma);
  const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
  const double span = std::max(*hi - *lo, 1e-12);
  const double base = *lo;
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) mix_into(img, y, x, a, b, (field[y * size + x] - base) / span);
  return img;
}

struct Polygon {
  std::vector<double> xs, ys;
  Color color;

  bool contains(double px, double py) const {
    bool inside = false;
    for (std::size_t i = 0, j = xs.size() - 1; i < xs.size(); j = i++) {
      if ((ys[i] > py) != (ys[j] > py) &&
          px < (xs[j] - xs[i]) * (py - ys[i]) / (ys[j] - ys[i]) + xs[i]) {
        inside = !inside;
      }
    }
    return inside;
  }
};

Image render_polygons(Rng& rng, std::size_t size) {
  const double n = static_cast<double>(size);
  const Color background = random_color(rng);
  std::vector<Polygon> polys(1 + rng.uniform_int(2));
  for (auto& p : polys) {
    const std::size_t verts = 3 + rng.uniform_int(3);
    const double cx = rng.uniform(0.2, 0.8) * n;
    const double cy = rng.uniform(0.2, 0.8) * n;
    std::vector<double> angles(verts);
    for (double& t : angles) t = rng.uniform(0.0, kTwoPi);
    std::sort(angles.begin(), angles.end());
    for (double t : angles) {
      const double r = rng.uniform(0.15, 0.5) * n;
      p.xs.push_back(cx + r * std::cos(t));
      p.ys.push_back(cy + r * std::sin(t));
    }
    p.color = color_pair(rng).first;
  }
  // 4x4 supersampling for antialiased edges.
  constexpr int kSub = 4;
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      Color acc{0.0, 0.0, 0.0};
      for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x + (sx + 0.5) / kSub;
          const double py = y + (sy + 0.5) / kSub;
          Color c = background;
          for (const auto& p : polys) {
            if (p.contains(px, py)) c = p.color;
          }
          for (int ch = 0; ch < 3; ++ch) acc[ch] += c[ch] / (kSub * kSub);
        }
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(ch, y, x) = acc[ch];
    }
  return img;
}

nlohmann::json recipes_to_json(const std::vector<TextureRecipe>& recipes) {
  auto arr = nlohmann::json::array();
  for (const auto& r : recipes) arr.push_back({{"family", to_string(r.family)}, {"seed", r.seed}});
  return arr;
}

std::vector<TextureRecipe> recipes_from_json(const nlohmann::json& j, std::size_t expected,
                                             const char* key) {
  if (!j.is_array() || j.size() != expected) {
    throw ParseError(std::string("manifest: '") + key + "' must be an array of " +
                     std::to_string(expected) + " recipes");
  }
  std::vector<TextureRecipe> out;
  for (const auto& r : j) {
    out.push_back({parse_texture_family(r.at("family").get<std::string>()),
                   r.at("seed").get<std::uint64_t>()});
  }
  return out;
}

std::vector<ImagePair> render_all(const std::vector<TextureRecipe>& recipes, std::size_t size) {
  std::vector<ImagePair> out(recipes.size());
  parallel_for(recipes.size(), [&](std::size_t i) { out[i] = make_pair(render_texture(recipes[i], size)); });
  return out;
}

std::filesystem::path pair_path(const std::filesystem::path& dir, const char* split,
                                const char* kind, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "%s_%04zu.png", kind, i);
  return dir / split / name;
}

}  // namespace

std::string_view to_string(TextureFamily family) {
  switch (family) {
    case TextureFamily::kGrating: return "grating";
    case TextureFamily::kCheckerboard: return "checkerboard";
    case TextureFamily::kRadialGradient: return "radial_gradient";
    case TextureFamily::kFilteredNoise: return "filtered_noise";
    case TextureFamily::kPolygonEdges: return "polygon_edges";
  }
  return "unknown";
}

TextureFamily parse_texture_family(std::string_view text) {
  for (std::size_t i = 0; i < kTextureFamilies; ++i) {
    const auto f = static_cast<TextureFamily>(i);
    if (to_string(f) == text) return f;
  }
  throw ParseError("unknown texture family '" + std::string(text) + "'");
}

GratingParams grating_params(const TextureRecipe& recipe) {
  Rng rng(recipe.seed);
  GratingParams p;
  // Wave vectors up to 4 cycles per axis keep gratings well below the LR
  // Nyquist limit for 64-pixel patches.
  do {
    p.kx = static_cast<int>(rng.uniform_int(8)) - 4;
    p.ky = static_cast<int>(rng.uniform_int(4));
  } while (p.kx == 0 && p.ky == 0);
  p.phase = rng.uniform(0.0, kTwoPi);
  std::tie(p.low, p.high) = color_pair(rng);
  return p;
}

Image render_grating(const GratingParams& p, std::size_t size) {
  const double n = static_cast<double>(size);
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double arg = kTwoPi * (p.kx * static_cast<double>(x) + p.ky * static_cast<double>(y)) / n + p.phase;
      mix_into(img, y, x, p.low, p.high, 0.5 + 0.5 * std::sin(arg));
    }
  return img;
}

Image render_texture(const TextureRecipe& recipe, std::size_t size) {
  if (size == 0) throw ConfigError("texture size must be positive");
  // Skip the draws grating_params makes so each family has its own stream.
  Rng rng(derive_seed(recipe.seed, 1));
  Image img;
  switch (recipe.family) {
    case TextureFamily::kGrating: img = render_grating(grating_params(recipe), size); break;
    case TextureFamily::kCheckerboard: img = render_checkerboard(rng, size); break;
    case TextureFamily::kRadialGradient: img = render_radial(rng, size); break;
    case TextureFamily::kFilteredNoise: img = render_filtered_noise(rng, size); break;
    case TextureFamily::kPolygonEdges: img = render_polygons(rng, size); break;
  }
  img.clamp();
  return img;
}

ImagePair make_pair(Image hr) {
  if (hr.height % kScaleFactor != 0 || hr.width % kScaleFactor != 0) {
    throw ConfigError("HR size " + std::to_string(hr.height) + "x" + std::to_string(hr.width) +
                      " is not divisible by the scale factor 4");
  }
  ImagePair p;
  p.lr = bicubic_resize(hr, hr.height / kScaleFactor, hr.width / kScaleFactor);
  p.hr = std::move(hr);
  p.scale = kScaleFactor;
  return p;
}

DatasetManifest make_manifest(std::uint64_t seed, std::size_t patch_size, std::size_t count,
                              std::size_t val_count, std::size_t val_patch_size) {
  if (patch_size == 0 || patch_size % kScaleFactor != 0) {
    throw ConfigError("patch_size must be a positive multiple of 4, got " + std::to_string(patch_size));
  }
  if (val_count > 0 && (val_patch_size == 0 || val_patch_size % kScaleFactor != 0)) {
    throw ConfigError("val_patch_size must be a positive multiple of 4, got " +
                      std::to_string(val_patch_size));
  }
  if (count == 0) throw ConfigError("dataset count must be positive");
  DatasetManifest m;
  m.seed = seed;
  m.patch_size = patch_size;
  m.count = count;
  m.val_count = val_count;
  m.val_patch_size = val_patch_size;
  auto recipe = [](std::uint64_t s) {
    Rng rng(s);
    return TextureRecipe{static_cast<TextureFamily>(rng.uniform_int(kTextureFamilies - 1)), s};
  };
  for (std::size_t i = 0; i < count; ++i) m.recipes.push_back(recipe(derive_seed(seed, i)));
  const std::uint64_t val_seed = derive_seed(seed, kValStream);
  for (std::size_t i = 0; i < val_count; ++i) m.val_recipes.push_back(recipe(derive_seed(val_seed, i)));
  return m;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  return {{"version", kDatasetFormatVersion},
          {"seed", m.seed},
          {"patch_size", m.patch_size},
          {"count", m.count},
          {"val_count", m.val_count},
          {"val_patch_size", m.val_patch_size},
          {"recipes", recipes_to_json(m.recipes)},
          {"val_recipes", recipes_to_json(m.val_recipes)}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<std::string>() != kDatasetFormatVersion) {
      throw ParseError("manifest: unsupported version '" + j.at("version").get<std::string>() + "'");
    }
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.patch_size = j.at("patch_size").get<std::size_t>();
    m.count = j.at("count").get<std::size_t>();
    m.val_count = j.at("val_count").get<std::size_t>();
    m.val_patch_size = j.at("val_patch_size").get<std::size_t>();
    m.recipes = recipes_from_json(j.at("recipes"), m.count, "recipes");
    m.val_recipes = recipes_from_json(j.at("val_recipes"), m.val_count, "val_recipes");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

Dataset gen_synthetic_dataset(const DatasetManifest& manifest) {
  Dataset d;
  d.manifest = manifest;
  d.train = render_all(manifest.recipes, manifest.patch_size);
  d.val = render_all(manifest.val_recipes, manifest.val_patch_size);
  return d;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "train");
  std::filesystem::create_directories(dir / "val");
  {
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("cannot write '" + (dir / "manifest.json").string() + "'");
    os << manifest_to_json(dataset.manifest).dump(2) << "\n";
  }
  auto write_split = [&](const std::vector<ImagePair>& pairs, const char* split) {
    parallel_for(pairs.size(), [&](std::size_t i) {
      save_image(pairs[i].hr, pair_path(dir, split, "hr", i));
      save_image(pairs[i].lr, pair_path(dir, split, "lr", i));
    });
  };
  write_split(dataset.train, "train");
  write_split(dataset.val, "val");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("cannot open '" + (dir / "manifest.json").string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  Dataset d;
  d.manifest = manifest_from_json(j);
  auto read_split = [&](std::size_t n, const char* split) {
    std::vector<ImagePair> pairs(n);
    for (std::size_t i = 0; i < n; ++i) {
      pairs[i].hr = load_image(pair_path(dir, split, "hr", i));
      pairs[i].lr = load_image(pair_path(dir, split, "lr", i));
      if (pairs[i].lr.height * kScaleFactor != pairs[i].hr.height ||
          pairs[i].lr.width * kScaleFactor != pairs[i].hr.width) {
        throw ParseError(pair_path(dir, split, "lr", i).string() + ": not the x4 downscale of its HR");
      }
    }
    return pairs;
  };
  d.train = read_split(d.manifest.count, "train");
  d.val = read_split(d.manifest.val_count, "val");
  return d;
}

}  // namespace difaug
