#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "patchguard/core/image.hpp"
#include "patchguard/core/manifest.hpp"
#include "patchguard/core/random.hpp"
#include "patchguard/detectors/detectors.hpp"

namespace patchguard::synthgen {

enum class Background { Plain, Textured };

Background parse_background(const std::string& s);
std::string to_string(Background b);

struct SceneSpec {
  std::size_t image_size = 768;
  Background background = Background::Textured;
  /// Multiplies the texture frequencies; larger = finer weave.
  double texture_scale = 1.0;
  std::optional<detectors::SyntheticDefectSpec> defect;
  RandomSeed seed{0};
  double min_foreground = 0.10;
  double max_foreground = 0.60;
  double sensor_noise = 0.01;

  void validate() const;
  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
};

/// Stains used by the benchmark: 1–3 blobs of 4–10 px radius on 768² scenes.
detectors::SyntheticDefectSpec small_stains();

struct Scene {
  ImageTensor image;
  BinaryMask foreground;
  BinaryMask defect;
};

/// Renders background, a shaded scissor/forceps/scalpel-like instrument and
/// optional stains restricted to the instrument. Throws InvalidConfig when
/// no instrument within the foreground bounds is found in 100 attempts.
Scene generate_scene(const SceneSpec& spec);

/// Writes images/<id>.png, masks/<id>_fg.png, masks/<id>_defect.png and
/// manifest.json (relative paths). Normals are split 70/15/15 by a seeded
/// shuffle; defectives go half to val, half to test.
DatasetManifest generate_corpus(std::size_t n_normal, std::size_t n_defective, const SceneSpec& spec_template,
                                const std::filesystem::path& out_dir, RandomSeed seed);

/// Path of the foreground ground-truth mask written for an image entry.
std::filesystem::path foreground_mask_path(const DatasetManifest& manifest, const ManifestEntry& entry);

}  // namespace patchguard::synthgen
