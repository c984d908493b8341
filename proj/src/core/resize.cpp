#include "patchguard/core/resize.hpp"

#include <algorithm>
#include <cmath>

namespace patchguard {

namespace {

struct Tap {
  std::size_t i0, i1;
  float w1;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    t[o] = {i0, i1, static_cast<float>(s - static_cast<double>(i0))};
  }
  return t;
}

}  // namespace

std::vector<float> resize_bilinear(std::span<const float> src, std::size_t h, std::size_t w, std::size_t c,
                                   std::size_t out_h, std::size_t out_w) {
  std::vector<float> out(out_h * out_w * c);
  if (out_h == h && out_w == w) {
    std::copy(src.begin(), src.end(), out.begin());
    return out;
  }
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& b = tx[x];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v00 = src[(a.i0 * w + b.i0) * c + ch];
        const float v01 = src[(a.i0 * w + b.i1) * c + ch];
        const float v10 = src[(a.i1 * w + b.i0) * c + ch];
        const float v11 = src[(a.i1 * w + b.i1) * c + ch];
        const float top = v00 + (v01 - v00) * b.w1;
        const float bot = v10 + (v11 - v10) * b.w1;
        out[(y * out_w + x) * c + ch] = top + (bot - top) * a.w1;
      }
    }
  }
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& img, std::size_t out_h, std::size_t out_w) {
  auto data = resize_bilinear(img.data(), img.height(), img.width(), img.channels(), out_h, out_w);
  for (auto& v : data) v = std::clamp(v, 0.0f, 1.0f);
  return ImageTensor(out_h, out_w, img.channels(), std::move(data));
}

ScoreMap resize_bilinear(const ScoreMap& map, std::size_t out_h, std::size_t out_w) {
  auto data = resize_bilinear(map.data(), map.height(), map.width(), 1, out_h, out_w);
  for (auto& v : data) v = std::max(v, 0.0f);
  return ScoreMap(out_h, out_w, std::move(data));
}

ImageTensor to_rgb(const ImageTensor& img) {
  if (img.channels() == 3) return img;
  std::vector<float> data(img.pixels() * 3);
  auto src = img.data();
  for (std::size_t i = 0; i < img.pixels(); ++i) data[3 * i] = data[3 * i + 1] = data[3 * i + 2] = src[i];
  return ImageTensor(img.height(), img.width(), 3, std::move(data));
}

}  // namespace patchguard
