#include "patchguard/masking/masking.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/resize.hpp"

namespace patchguard::masking {

SegmenterBackend parse_backend(const std::string& s) {
  if (s == "builtin") return SegmenterBackend::Builtin;
  if (s == "external") return SegmenterBackend::External;
  throw InvalidConfig("unknown mask backend '" + s + "' (expected builtin or external)");
}

std::string to_string(SegmenterBackend b) { return b == SegmenterBackend::Builtin ? "builtin" : "external"; }

void SegmenterConfig::validate() const {
  if (downsize_width < 64) throw InvalidConfig("downsize_width must be >= 64");
  if (backend == SegmenterBackend::External && external_endpoint.empty()) {
    throw InvalidConfig("external backend needs an endpoint");
  }
}

nlohmann::json SegmenterConfig::to_json() const {
  return {{"backend", to_string(backend)},
          {"downsize_width", downsize_width},
          {"endpoint", external_endpoint},
          {"timeout_seconds", timeout_seconds}};
}

SegmenterConfig SegmenterConfig::from_json(const nlohmann::json& j) {
  SegmenterConfig c;
  c.backend = parse_backend(j.value("backend", std::string("builtin")));
  c.downsize_width = j.value("downsize_width", c.downsize_width);
  c.external_endpoint = j.value("endpoint", c.external_endpoint);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.validate();
  return c;
}

ImageTensor downsize_for_segmentation(const ImageTensor& img, std::size_t target_width) {
  if (target_width == 0) throw InvalidConfig("target width must be >= 1");
  if (img.empty()) throw DimensionMismatch("empty image");
  if (img.width() <= target_width) return img;
  // round(h·tw/w) with halves rounded up, in exact integer arithmetic.
  const std::size_t h = std::max<std::size_t>(1, (2 * img.height() * target_width + img.width()) / (2 * img.width()));
  return resize_bilinear(img, h, target_width);
}

namespace {

float otsu_threshold(const std::vector<float>& gray, float lo, float hi) {
  constexpr int kBins = 256;
  std::array<double, kBins> hist{};
  const double scale = (kBins - 1) / (static_cast<double>(hi) - lo);
  for (float v : gray) hist[static_cast<std::size_t>(std::lround((v - lo) * scale))] += 1.0;
  const double total = static_cast<double>(gray.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += i * hist[i];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = 0;
  for (int t = 0; t < kBins - 1; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  // Midpoint between bin t and t+1 in gray units: class 0 is ≤ this.
  return lo + static_cast<float>((best_t + 0.5) / scale);
}

BinaryMask largest_component(const BinaryMask& m) {
  const std::size_t h = m.height(), w = m.width();
  std::vector<int> label(h * w, -1);
  std::vector<std::size_t> sizes, stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!m.data()[start] || label[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t count = 0;
    stack.assign(1, start);
    label[start] = id;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++count;
      const long y = static_cast<long>(i / w), x = static_cast<long>(i % w);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
          const std::size_t j = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (m.data()[j] && label[j] < 0) {
            label[j] = id;
            stack.push_back(j);
          }
        }
    }
    sizes.push_back(count);
  }
  BinaryMask out(h, w);
  if (sizes.empty()) return out;
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < h * w; ++i) out.data()[i] = label[i] == keep ? 1 : 0;
  return out;
}

// Background reachable from the border (4-connected) stays background;
// everything else becomes foreground.
void fill_holes(BinaryMask& m) {
  const std::size_t h = m.height(), w = m.width();
  std::vector<std::uint8_t> outside(h * w, 0);
  std::vector<std::size_t> stack;
  auto seed = [&](std::size_t y, std::size_t x) {
    const std::size_t i = y * w + x;
    if (!m.data()[i] && !outside[i]) {
      outside[i] = 1;
      stack.push_back(i);
    }
  };
  for (std::size_t x = 0; x < w; ++x) {
    seed(0, x);
    seed(h - 1, x);
  }
  for (std::size_t y = 0; y < h; ++y) {
    seed(y, 0);
    seed(y, w - 1);
  }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const std::size_t y = i / w, x = i % w;
    if (y > 0) seed(y - 1, x);
    if (y + 1 < h) seed(y + 1, x);
    if (x > 0) seed(y, x - 1);
    if (x + 1 < w) seed(y, x + 1);
  }
  for (std::size_t i = 0; i < h * w; ++i)
    if (!outside[i]) m.data()[i] = 1;
}

}  // namespace

BinaryMask segment_builtin(const ImageTensor& img) {
  if (img.empty()) throw DegenerateImage("empty image");
  const auto gray = to_luma(img);
  const auto [lo_it, hi_it] = std::minmax_element(gray.begin(), gray.end());
  const float lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw DegenerateImage("constant image has no foreground/background split");
  const float t = otsu_threshold(gray, lo, hi);
  std::size_t above = 0;
  for (float v : gray) above += v > t ? 1 : 0;
  const bool take_above = above <= gray.size() - above;
  BinaryMask cand(img.height(), img.width());
  for (std::size_t i = 0; i < gray.size(); ++i) cand.data()[i] = ((gray[i] > t) == take_above) ? 1 : 0;
  BinaryMask mask = largest_component(cand);
  fill_holes(mask);
  if (mask.count() == 0) throw DegenerateImage("segmentation produced no foreground");
  return mask;
}

BinaryMask upscale_mask(const BinaryMask& mask, std::size_t target_h, std::size_t target_w) {
  if (mask.pixels() == 0 || target_h == 0 || target_w == 0) throw DimensionMismatch("upscale_mask: empty mask");
  BinaryMask out(target_h, target_w);
  const std::size_t h = mask.height(), w = mask.width();
  for (std::size_t y = 0; y < target_h; ++y) {
    const std::size_t sy = std::min(h - 1, y * h / target_h);
    for (std::size_t x = 0; x < target_w; ++x) out.set(y, x, mask.at(sy, std::min(w - 1, x * w / target_w)));
  }
  return out;
}

ImageTensor apply_mask(const ImageTensor& img, const BinaryMask& mask) {
  if (img.height() != mask.height() || img.width() != mask.width()) {
    throw DimensionMismatch("apply_mask: image is " + std::to_string(img.height()) + "x" +
                            std::to_string(img.width()) + ", mask is " + std::to_string(mask.height()) + "x" +
                            std::to_string(mask.width()));
  }
  ImageTensor out = img;
  const std::size_t c = img.channels();
  auto d = out.data();
  for (std::size_t i = 0; i < mask.pixels(); ++i)
    if (!mask.data()[i]) std::fill_n(d.begin() + static_cast<std::ptrdiff_t>(i * c), c, 0.0f);
  return out;
}

BinaryMask segment(const ImageTensor& img, const SegmenterConfig& cfg) {
  cfg.validate();
  const ImageTensor small = downsize_for_segmentation(img, cfg.downsize_width);
  BinaryMask m = cfg.backend == SegmenterBackend::Builtin
                     ? segment_builtin(small)
                     : segment_external(small, cfg.external_endpoint, cfg.timeout_seconds);
  return upscale_mask(m, img.height(), img.width());
}

}  // namespace patchguard::masking
