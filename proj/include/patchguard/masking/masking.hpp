#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

#include "patchguard/core/image.hpp"

namespace patchguard::masking {

enum class SegmenterBackend { Builtin, External };

SegmenterBackend parse_backend(const std::string& s);
std::string to_string(SegmenterBackend b);

struct SegmenterConfig {
  SegmenterBackend backend = SegmenterBackend::Builtin;
  std::size_t downsize_width = 512;
  std::string external_endpoint;
  double timeout_seconds = 30.0;

  void validate() const;
  nlohmann::json to_json() const;
  static SegmenterConfig from_json(const nlohmann::json& j);
};

/// Bilinear resize to `target_width`, height rounded half-up (minimum 1).
/// Images already at or below the target width pass through unchanged.
ImageTensor downsize_for_segmentation(const ImageTensor& img, std::size_t target_width);

/// Otsu on luma, minority side as foreground, largest 8-connected
/// component, holes filled. Throws DegenerateImage on constant input.
BinaryMask segment_builtin(const ImageTensor& img);

/// POSTs `img` as PNG to `<endpoint>/segment` and decodes the returned mask,
/// which must match the image dimensions and contain foreground.
BinaryMask segment_external(const ImageTensor& img, const std::string& endpoint, double timeout_seconds = 30.0);

/// Nearest-neighbor scaling to exactly (target_h, target_w).
BinaryMask upscale_mask(const BinaryMask& mask, std::size_t target_h, std::size_t target_w);

/// Zeroes every channel of background pixels; foreground is untouched.
ImageTensor apply_mask(const ImageTensor& img, const BinaryMask& mask);

/// Downsize, segment with the configured backend, upscale to the input size.
BinaryMask segment(const ImageTensor& img, const SegmenterConfig& cfg);

}  // namespace patchguard::masking
