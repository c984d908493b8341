#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace patchguard {

/// H×W×C float image, interleaved row-major, values in [0,1].
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f);
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels, std::vector<float> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t pixels() const { return height_ * width_; }
  bool empty() const { return data_.empty(); }

  float& at(std::size_t y, std::size_t x, std::size_t c) { return data_[(y * width_ + x) * channels_ + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return data_[(y * width_ + x) * channels_ + c]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  /// Throws FormatError when a value is non-finite or outside [0,1].
  void validate() const;

  bool operator==(const ImageTensor&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
};

/// Per-pixel foreground flag; true = instrument.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width, bool fill = false);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixels() const { return height_ * width_; }

  bool at(std::size_t y, std::size_t x) const { return data_[y * width_ + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v) { data_[y * width_ + x] = v ? 1 : 0; }

  std::span<std::uint8_t> data() { return data_; }
  std::span<const std::uint8_t> data() const { return data_; }

  std::size_t count() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Nonnegative anomaly heatmap; higher means more defect-likely.
class ScoreMap {
 public:
  ScoreMap() = default;
  ScoreMap(std::size_t height, std::size_t width, float fill = 0.0f);
  ScoreMap(std::size_t height, std::size_t width, std::vector<float> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixels() const { return height_ * width_; }

  float& at(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  float at(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  float max() const;
  void validate() const;

  bool operator==(const ScoreMap&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> data_;
};

/// Luma (0.299, 0.587, 0.114); single-channel images are returned as-is.
std::vector<float> to_luma(const ImageTensor& img);

}  // namespace patchguard
