#include "difaug/image.hpp"

#include <algorithm>

namespace difaug {

void Image::clamp() {
  for (double& v : pixels) v = std::clamp(v, 0.0, 1.0);
}

template <typename T>
Tensor<T> to_tensor(const Image& img) {
  std::vector<T> data(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), data.begin(),
                 [](double v) { return static_cast<T>(v); });
  return Tensor<T>(Shape{Image::kChannels, img.height, img.width}, std::move(data));
}

template <typename T>
Image image_from_tensor(const Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != Image::kChannels) {
    throw ShapeError("expected a [3,H,W] tensor, got " + shape_str(t.shape()));
  }
  Image img(t.dim(1), t.dim(2));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    img.pixels[i] = std::clamp(static_cast<double>(t[i]), 0.0, 1.0);
  }
  return img;
}

template <typename T>
Image image_from_batch(const Tensor<T>& batch, std::size_t index) {
  if (batch.rank() != 4 || batch.dim(1) != Image::kChannels || index >= batch.dim(0)) {
    throw ShapeError("cannot take sample " + std::to_string(index) + " from " +
                     shape_str(batch.shape()));
  }
  Image img(batch.dim(2), batch.dim(3));
  const std::size_t per = img.pixels.size();
  for (std::size_t i = 0; i < per; ++i) {
    img.pixels[i] = std::clamp(static_cast<double>(batch[index * per + i]), 0.0, 1.0);
  }
  return img;
}

template <typename T>
Tensor<T> stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("stack_images: empty image list");
  const std::size_t h = images[0]->height, w = images[0]->width;
  Tensor<T> out(Shape{images.size(), Image::kChannels, h, w});
  const std::size_t per = Image::kChannels * h * w;
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->height != h || images[n]->width != w) {
      throw ShapeError("stack_images: mixed image sizes");
    }
    for (std::size_t i = 0; i < per; ++i) out[n * per + i] = static_cast<T>(images[n]->pixels[i]);
  }
  return out;
}

template Tensor<float> to_tensor<float>(const Image&);
template Tensor<double> to_tensor<double>(const Image&);
template Image image_from_tensor<float>(const Tensor<float>&);
template Image image_from_tensor<double>(const Tensor<double>&);
template Image image_from_batch<float>(const Tensor<float>&, std::size_t);
template Image image_from_batch<double>(const Tensor<double>&, std::size_t);
template Tensor<float> stack_images<float>(const std::vector<const Image*>&);
template Tensor<double> stack_images<double>(const std::vector<const Image*>&);

}  // namespace difaug
