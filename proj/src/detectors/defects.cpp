#include <algorithm>
#include <cmath>

#include "patchguard/core/errors.hpp"
#include "patchguard/detectors/detectors.hpp"

namespace patchguard::detectors {

void SyntheticDefectSpec::validate() const {
  if (count_min < 0 || count_max < count_min) throw InvalidConfig("defect count range is empty");
  if (!(radius_min > 0.0) || radius_max < radius_min) throw InvalidConfig("defect radius range is empty");
  if (!(blend_alpha > 0.0 && blend_alpha <= 1.0)) throw InvalidConfig("blend_alpha must be in (0, 1]");
  if (color_jitter < 0.0) throw InvalidConfig("color_jitter must be nonnegative");
}

nlohmann::json SyntheticDefectSpec::to_json() const {
  return {{"count_range", {count_min, count_max}},
          {"radius_range", {radius_min, radius_max}},
          {"color_jitter", color_jitter},
          {"blend_alpha", blend_alpha},
          {"base_color", base_color},
          {"seed", seed.value}};
}

SyntheticDefectSpec SyntheticDefectSpec::from_json(const nlohmann::json& j) {
  SyntheticDefectSpec s;
  if (j.contains("count_range")) {
    s.count_min = j["count_range"].at(0);
    s.count_max = j["count_range"].at(1);
  }
  if (j.contains("radius_range")) {
    s.radius_min = j["radius_range"].at(0);
    s.radius_max = j["radius_range"].at(1);
  }
  s.color_jitter = j.value("color_jitter", s.color_jitter);
  s.blend_alpha = j.value("blend_alpha", s.blend_alpha);
  s.base_color = j.value("base_color", s.base_color);
  s.seed.value = j.value("seed", s.seed.value);
  s.validate();
  return s;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

// Separable blur of an n×n window with zero boundary.
std::vector<double> blur(const std::vector<double>& src, int n, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double s = 0.0;
      for (int t = -r; t <= r; ++t)
        if (x + t >= 0 && x + t < n) s += k[t + r] * src[y * n + x + t];
      tmp[y * n + x] = s;
    }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double s = 0.0;
      for (int t = -r; t <= r; ++t)
        if (y + t >= 0 && y + t < n) s += k[t + r] * tmp[(y + t) * n + x];
      out[y * n + x] = s;
    }
  return out;
}

}  // namespace

DefectSample inject_defect(const ImageTensor& patch, const SyntheticDefectSpec& spec, const BinaryMask* allowed) {
  spec.validate();
  const std::size_t h = patch.height(), w = patch.width(), ch = patch.channels();
  if (allowed && (allowed->height() != h || allowed->width() != w)) {
    throw DimensionMismatch("inject_defect: allowed mask does not match the patch");
  }
  DefectSample out{patch, BinaryMask(h, w)};
  Rng rng(spec.seed, 0x44454643);
  const int blobs = rng.uniform_int(spec.count_min, spec.count_max);
  if (blobs == 0) return out;

  std::vector<std::size_t> candidates;
  if (allowed) {
    for (std::size_t i = 0; i < h * w; ++i)
      if (allowed->data()[i]) candidates.push_back(i);
    if (candidates.empty()) return out;
  }

  for (int b = 0; b < blobs; ++b) {
    const double radius = rng.uniform(spec.radius_min, spec.radius_max);
    std::size_t cy, cx;
    if (allowed) {
      const auto pick = candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(candidates.size()) - 1))];
      cy = pick / w;
      cx = pick % w;
    } else {
      cy = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(h) - 1));
      cx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(w) - 1));
    }

    // Random-walk splat in a local window centred on (cy, cx).
    const int half = static_cast<int>(std::ceil(2.0 * radius));
    const int n = 2 * half + 1;
    std::vector<double> splat(static_cast<std::size_t>(n * n), 0.0);
    const int steps = std::max(4, static_cast<int>(std::lround(4.0 * radius)));
    const double step_len = std::max(1.0, radius / 3.0);
    double py = half, px = half;
    for (int s = 0; s < steps; ++s) {
      splat[static_cast<std::size_t>(std::lround(py)) * n + static_cast<std::size_t>(std::lround(px))] += 1.0;
      const double theta = rng.uniform(0.0, 2.0 * M_PI);
      py = std::clamp(py + step_len * std::sin(theta), 0.0, static_cast<double>(n - 1));
      px = std::clamp(px + step_len * std::cos(theta), 0.0, static_cast<double>(n - 1));
    }
    const auto smooth = blur(splat, n, std::max(1.0, radius / 3.0));

    std::vector<double> positive;
    for (double v : smooth)
      if (v > 0.0) positive.push_back(v);
    if (positive.empty()) continue;
    const std::size_t q = static_cast<std::size_t>(0.7 * static_cast<double>(positive.size() - 1));
    std::nth_element(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(q), positive.end());
    const double cut = positive[q];

    std::array<float, 3> color;
    for (int c = 0; c < 3; ++c) {
      color[c] = std::clamp(static_cast<float>(spec.base_color[c] + rng.uniform(-spec.color_jitter, spec.color_jitter)),
                            0.0f, 1.0f);
    }
    const float luma = 0.299f * color[0] + 0.587f * color[1] + 0.114f * color[2];
    const auto a = static_cast<float>(spec.blend_alpha);

    for (int wy = 0; wy < n; ++wy)
      for (int wx = 0; wx < n; ++wx) {
        if (!(smooth[static_cast<std::size_t>(wy * n + wx)] > cut)) continue;
        const long y = static_cast<long>(cy) + wy - half, x = static_cast<long>(cx) + wx - half;
        if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) continue;
        const auto uy = static_cast<std::size_t>(y), ux = static_cast<std::size_t>(x);
        if (allowed && !allowed->at(uy, ux)) continue;
        for (std::size_t c = 0; c < ch; ++c) {
          const float target = ch == 3 ? color[c] : luma;
          float& v = out.image.at(uy, ux, c);
          v = a == 1.0f ? target : (1.0f - a) * v + a * target;
        }
        out.mask.set(uy, ux, true);
      }
  }
  return out;
}

}  // namespace patchguard::detectors
