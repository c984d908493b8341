#include "patchguard/core/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "patchguard/core/errors.hpp"

namespace patchguard {

using nlohmann::json;

std::string to_string(Label label) { return label == Label::Normal ? "normal" : "defective"; }

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Label parse_label(const std::string& s) {
  if (s == "normal") return Label::Normal;
  if (s == "defective") return Label::Defective;
  throw FormatError("unknown label '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw FormatError("unknown split '" + s + "'");
}

void DatasetManifest::validate() const {
  for (const auto& e : entries) {
    if (e.split == Split::Train && e.label != Label::Normal) {
      throw InvalidConfig("train entry " + e.image_path + " is not normal");
    }
    if (e.split != Split::Train && e.label == Label::Defective && !e.gt_mask_path) {
      throw InvalidConfig("defective entry " + e.image_path + " has no ground-truth mask");
    }
  }
}

std::vector<ManifestEntry> DatasetManifest::select(Split split) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e);
  return out;
}

std::filesystem::path DatasetManifest::resolve(const std::string& relative) const {
  std::filesystem::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_array()) throw FormatError("manifest must be a JSON array");
  DatasetManifest m;
  m.base_dir = path.parent_path();
  for (const auto& item : doc) {
    ManifestEntry e;
    try {
      e.image_path = item.at("image_path").get<std::string>();
      e.label = parse_label(item.at("label").get<std::string>());
      e.split = parse_split(item.at("split").get<std::string>());
      if (item.contains("gt_mask_path") && !item["gt_mask_path"].is_null()) {
        e.gt_mask_path = item["gt_mask_path"].get<std::string>();
      }
    } catch (const json::exception& ex) {
      throw FormatError("malformed manifest entry: " + std::string(ex.what()));
    }
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  json doc = json::array();
  for (const auto& e : manifest.entries) {
    json item{{"image_path", e.image_path}, {"label", to_string(e.label)}, {"split", to_string(e.split)}};
    if (e.gt_mask_path) item["gt_mask_path"] = *e.gt_mask_path;
    doc.push_back(std::move(item));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace patchguard
