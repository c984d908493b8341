#pragma once

#include <filesystem>
#include <vector>

#include "patchguard/core/image.hpp"

namespace patchguard {

/// Reads an 8- or 16-bit PNG. Palette images are expanded to RGB and alpha
/// channels are dropped, so the result has 1 or 3 channels.
ImageTensor load_image(const std::filesystem::path& path);

/// Quantizes to `bit_depth` (8 or 16) with round-to-nearest.
void save_image(const ImageTensor& img, const std::filesystem::path& path, int bit_depth = 8);

/// Mask PNG: single channel 8-bit, 0 = background, 255 = foreground. Any
/// nonzero code reads as foreground.
BinaryMask load_mask(const std::filesystem::path& path);
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);

/// PNG <-> in-memory buffers, used by the external segmenter client.
std::vector<unsigned char> encode_png(const ImageTensor& img, int bit_depth = 8);
ImageTensor decode_png(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_mask_png(const BinaryMask& mask);
BinaryMask decode_mask_png(const std::vector<unsigned char>& bytes);

/// 8-bit min–max visualization; a constant map renders all-zero.
std::vector<std::uint8_t> visualize_scoremap(const ScoreMap& map);

/// Writes the raw SMAP container at `path` and the 8-bit visualization next
/// to it with the extension replaced by ".png".
void save_scoremap(const ScoreMap& map, const std::filesystem::path& path);
ScoreMap load_scoremap(const std::filesystem::path& path);

std::filesystem::path visualization_path(const std::filesystem::path& scoremap_path);

}  // namespace patchguard
