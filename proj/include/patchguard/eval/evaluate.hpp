#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchguard/core/image.hpp"
#include "patchguard/core/manifest.hpp"

namespace patchguard::eval {

struct ImageResult {
  std::string id;
  std::optional<double> p_auroc;  // undefined for images without defects
};

struct EvalResult {
  double p_auroc = 0.0;        // pooled over all pixels of all test images
  double best_f1 = 0.0;
  float best_threshold = 0.0f;
  std::string threshold_split;  // split the threshold was selected on
  std::vector<ImageResult> per_image;
  /// Diagnostic: AUROC restricted to ground-truth foreground pixels.
  std::optional<double> foreground_auroc;

  nlohmann::json to_json() const;
};

struct ScoredImage {
  std::string id;
  ScoreMap map;
  BinaryMask gt;  // defect pixels
  std::optional<BinaryMask> foreground;
};

/// Threshold by F1 on `val` (falls back to `test` when val has no defective
/// pixel), P-AUROC on `test` from the continuous maps.
EvalResult evaluate(const std::vector<ScoredImage>& val, const std::vector<ScoredImage>& test);

/// Prediction file for a manifest entry: <pred_dir>/<image stem>.smap.
std::filesystem::path prediction_path(const std::filesystem::path& pred_dir, const ManifestEntry& entry);

/// Loads predictions for the val and test splits and evaluates them. Entries
/// without a ground-truth mask count as all-negative.
EvalResult evaluate_predictions(const DatasetManifest& manifest, const std::filesystem::path& pred_dir);

/// Ground-truth defect mask of an entry (all-false when absent).
BinaryMask load_ground_truth(const DatasetManifest& manifest, const ManifestEntry& entry, std::size_t h,
                             std::size_t w);

}  // namespace patchguard::eval
