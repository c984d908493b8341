#pragma once

#include <cstddef>
#include <vector>

#include "patchguard/core/image.hpp"
#include "patchguard/core/manifest.hpp"
#include "patchguard/detectors/detectors.hpp"
#include "patchguard/masking/masking.hpp"

namespace patchguard::patching {

struct PatchCell {
  std::size_t row = 0;
  std::size_t col = 0;
  ImageTensor image;
};

/// Non-overlapping tiling of an image zero-padded on the bottom/right.
struct PatchGrid {
  std::size_t patch_size = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t pad_bottom = 0;
  std::size_t pad_right = 0;
  std::vector<PatchCell> patches;  // row-major
};

PatchGrid patchify(const ImageTensor& img, std::size_t patch_size);

struct PatchScore {
  std::size_t row = 0;
  std::size_t col = 0;
  ScoreMap map;
};

/// Places each cell at (row·p, col·p) and crops the padding. Every grid
/// cell must be present exactly once.
ScoreMap stitch(const std::vector<PatchScore>& scores, const PatchGrid& grid, std::size_t orig_h, std::size_t orig_w);

struct StitchConfig {
  float threshold = 0.0f;
  std::size_t patch_size = 256;
  /// Emit 1 for retained pixels instead of their magnitude.
  bool binarize = false;

  void validate() const;
};

/// Values below the threshold become 0 (the rest keep their magnitude, or
/// 1 when binarizing); background pixels become 0.
ScoreMap threshold_and_remask(const ScoreMap& map, const BinaryMask& mask, const StitchConfig& cfg);

struct PipelineOptions {
  std::size_t jobs = 1;
  /// Cells with no foreground pixel get a zero map without a detector call.
  bool skip_background = true;
};

/// apply_mask → patchify → score → stitch → threshold_and_remask.
ScoreMap run_patch_pipeline(const ImageTensor& img, const BinaryMask& mask, const detectors::DetectorHandle& detector,
                            const StitchConfig& cfg, const PipelineOptions& opts = {});

/// How an image reaches the detector.
struct ScoringMode {
  bool use_mask = true;
  bool patch = true;  // false: whole image resized to the detector input
};

/// Detector inputs for training, prepared exactly as scoring prepares them.
/// `mask` may be null when mode.use_mask is false.
std::vector<ImageTensor> training_inputs(const ImageTensor& img, const BinaryMask* mask,
                                         std::size_t detector_input, const ScoringMode& mode);

/// Loads the train split (which must be non-empty and all normal), masks it
/// when the mode asks for it, and returns the detector inputs.
std::vector<ImageTensor> prepare_training_patches(const DatasetManifest& manifest, const ScoringMode& mode,
                                                  const masking::SegmenterConfig& seg, std::size_t detector_input);

/// Continuous (pre-threshold) full-resolution map; background re-masked
/// when mode.use_mask.
ScoreMap score_image(const ImageTensor& img, const BinaryMask* mask, const detectors::DetectorHandle& detector,
                     const ScoringMode& mode, const PipelineOptions& opts = {});

}  // namespace patchguard::patching
