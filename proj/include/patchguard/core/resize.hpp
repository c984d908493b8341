#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "patchguard/core/image.hpp"

namespace patchguard {

/// Bilinear resampling of an interleaved H×W×C buffer with half-pixel
/// centers (src = (dst + 0.5)·in/out − 0.5, clamped at the borders).
std::vector<float> resize_bilinear(std::span<const float> src, std::size_t h, std::size_t w, std::size_t c,
                                   std::size_t out_h, std::size_t out_w);

ImageTensor resize_bilinear(const ImageTensor& img, std::size_t out_h, std::size_t out_w);
ScoreMap resize_bilinear(const ScoreMap& map, std::size_t out_h, std::size_t out_w);

/// Replicates a single channel to RGB; RGB input is returned unchanged.
ImageTensor to_rgb(const ImageTensor& img);

}  // namespace patchguard
