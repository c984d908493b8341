#include "patchguard/core/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "patchguard/core/errors.hpp"

namespace patchguard {

namespace {

void check_dims(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw FormatError("zero-area image");
}

}  // namespace

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels, float fill)
    : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill) {
  check_dims(height, width);
  if (channels != 1 && channels != 3) throw FormatError("image must have 1 or 3 channels");
}

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  check_dims(height, width);
  if (channels != 1 && channels != 3) throw FormatError("image must have 1 or 3 channels");
  if (data_.size() != height * width * channels) throw DimensionMismatch("image buffer size does not match dims");
}

void ImageTensor::validate() const {
  for (float v : data_) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw FormatError("image value outside [0,1]");
  }
}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), data_(height * width, fill ? 1 : 0) {
  check_dims(height, width);
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [](std::uint8_t v) { return v != 0; }));
}

ScoreMap::ScoreMap(std::size_t height, std::size_t width, float fill)
    : height_(height), width_(width), data_(height * width, fill) {
  check_dims(height, width);
}

ScoreMap::ScoreMap(std::size_t height, std::size_t width, std::vector<float> data)
    : height_(height), width_(width), data_(std::move(data)) {
  check_dims(height, width);
  if (data_.size() != height * width) throw DimensionMismatch("score map buffer size does not match dims");
}

float ScoreMap::max() const { return data_.empty() ? 0.0f : *std::max_element(data_.begin(), data_.end()); }

void ScoreMap::validate() const {
  for (float v : data_) {
    if (!std::isfinite(v) || v < 0.0f) throw FormatError("score map value negative or non-finite");
  }
}

std::vector<float> to_luma(const ImageTensor& img) {
  std::vector<float> out(img.pixels());
  auto src = img.data();
  if (img.channels() == 1) {
    std::copy(src.begin(), src.end(), out.begin());
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.299f * src[3 * i] + 0.587f * src[3 * i + 1] + 0.114f * src[3 * i + 2];
  }
  return out;
}

}  // namespace patchguard
