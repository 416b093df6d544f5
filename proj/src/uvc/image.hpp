#pragma once

#include <string>
#include <vector>

#include "uvc/tensor.hpp"

namespace uvc {

// Float image in [0,1], row-major (H, W, C). Channels: 3 = RGB, 1 = gray/mask.
struct Image {
  int height = 0, width = 0, channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c) {
    data.assign(static_cast<size_t>(h) * w * c, 0.0f);
  }

  float& px(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float px(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }

  size_t numel() const { return data.size(); }
};

// 8-bit PNG, channels inferred from the image (1 -> gray, 3 -> RGB).
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// (H,W,C) image -> (C,H,W) plane-major tensor slab writer / reader used when
// batching images for the network.
template <typename T>
void image_into_tensor(const Image& img, TensorT<T>& t, int batch_index) {
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.at(batch_index, c, y, x) = static_cast<T>(img.px(y, x, c));
}

template <typename T>
Image image_from_tensor(const TensorT<T>& t, int batch_index, int channels_offset,
                        int channels) {
  Image img(t.shape[2], t.shape[3], channels);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float v = static_cast<float>(t.at(batch_index, channels_offset + c, y, x));
        img.px(y, x, c) = v;
      }
  return img;
}

}  // namespace uvc
