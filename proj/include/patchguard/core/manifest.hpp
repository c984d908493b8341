#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace patchguard {

enum class Label { Normal, Defective };
enum class Split { Train, Val, Test };

struct ManifestEntry {
  std::string image_path;
  Label label = Label::Normal;
  Split split = Split::Train;
  std::optional<std::string> gt_mask_path;

  bool operator==(const ManifestEntry&) const = default;
};

/// Train/val/test partition. Paths are stored as written; `resolve` joins
/// relative paths onto the manifest's own directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  /// Throws InvalidConfig when a train entry is defective or a defective
  /// val/test entry lacks a ground-truth mask.
  void validate() const;

  std::vector<ManifestEntry> select(Split split) const;
  std::filesystem::path resolve(const std::string& relative) const;
};

std::string to_string(Label label);
std::string to_string(Split split);
Label parse_label(const std::string& s);
Split parse_split(const std::string& s);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace patchguard
