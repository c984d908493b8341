#include "patchguard/eval/evaluate.hpp"

#include "patchguard/core/errors.hpp"
#include "patchguard/core/io.hpp"
#include "patchguard/eval/metrics.hpp"

namespace patchguard::eval {

nlohmann::json EvalResult::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& r : per_image) {
    per.push_back({{"id", r.id}, {"p_auroc", r.p_auroc ? nlohmann::json(*r.p_auroc) : nlohmann::json(nullptr)}});
  }
  return {{"p_auroc", p_auroc},
          {"best_f1", best_f1},
          {"best_threshold", best_threshold},
          {"threshold_split", threshold_split},
          {"foreground_auroc", foreground_auroc ? nlohmann::json(*foreground_auroc) : nlohmann::json(nullptr)},
          {"per_image", per}};
}

namespace {

void check(const ScoredImage& s) {
  if (s.map.height() != s.gt.height() || s.map.width() != s.gt.width()) {
    throw DimensionMismatch("score map and ground truth differ in size for " + s.id);
  }
}

}  // namespace

EvalResult evaluate(const std::vector<ScoredImage>& val, const std::vector<ScoredImage>& test) {
  if (test.empty()) throw InvalidConfig("no test images to evaluate");
  EvalResult r;
  ScoreAccumulator pooled, fg_pooled;
  bool all_fg = true;
  for (const auto& s : test) {
    check(s);
    pooled.add(s.map.data(), s.gt.data());
    ScoreAccumulator one;
    one.add(s.map.data(), s.gt.data());
    ImageResult ir{s.id, std::nullopt};
    if (one.positives() > 0 && one.negatives() > 0) ir.p_auroc = one.auroc();
    r.per_image.push_back(ir);
    if (s.foreground) {
      std::vector<float> sc;
      std::vector<std::uint8_t> lb;
      for (std::size_t i = 0; i < s.map.pixels(); ++i)
        if (s.foreground->data()[i]) {
          sc.push_back(s.map.data()[i]);
          lb.push_back(s.gt.data()[i]);
        }
      fg_pooled.add(sc, lb);
    } else {
      all_fg = false;
    }
  }
  r.p_auroc = pooled.auroc();
  if (all_fg && fg_pooled.positives() > 0 && fg_pooled.negatives() > 0) r.foreground_auroc = fg_pooled.auroc();

  ScoreAccumulator val_pool;
  for (const auto& s : val) {
    check(s);
    val_pool.add(s.map.data(), s.gt.data());
  }
  const bool use_val = val_pool.positives() > 0;
  const auto t = select_threshold(use_val ? val_pool : pooled);
  r.best_threshold = t.threshold;
  r.best_f1 = t.f1;
  r.threshold_split = use_val ? "val" : "test";
  return r;
}

std::filesystem::path prediction_path(const std::filesystem::path& pred_dir, const ManifestEntry& entry) {
  return pred_dir / (std::filesystem::path(entry.image_path).stem().string() + ".smap");
}

BinaryMask load_ground_truth(const DatasetManifest& manifest, const ManifestEntry& entry, std::size_t h,
                             std::size_t w) {
  if (!entry.gt_mask_path) return BinaryMask(h, w);
  BinaryMask m = load_mask(manifest.resolve(*entry.gt_mask_path));
  if (m.height() != h || m.width() != w) throw DimensionMismatch("ground truth size differs for " + entry.image_path);
  return m;
}

EvalResult evaluate_predictions(const DatasetManifest& manifest, const std::filesystem::path& pred_dir) {
  auto load = [&](Split split) {
    std::vector<ScoredImage> out;
    for (const auto& e : manifest.select(split)) {
      const auto path = prediction_path(pred_dir, e);
      if (!std::filesystem::exists(path)) {
        if (split == Split::Val) continue;
        throw IoError("missing prediction " + path.string());
      }
      ScoredImage s;
      s.id = std::filesystem::path(e.image_path).stem().string();
      s.map = load_scoremap(path);
      s.gt = load_ground_truth(manifest, e, s.map.height(), s.map.width());
      out.push_back(std::move(s));
    }
    return out;
  };
  return evaluate(load(Split::Val), load(Split::Test));
}

}  // namespace patchguard::eval
