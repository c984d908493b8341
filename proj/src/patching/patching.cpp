#include "patchguard/patching/patching.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <thread>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/io.hpp"
#include "patchguard/core/resize.hpp"
#include "patchguard/masking/masking.hpp"

namespace patchguard::patching {

PatchGrid patchify(const ImageTensor& img, std::size_t patch_size) {
  if (patch_size < 16) throw InvalidConfig("patch_size must be >= 16");
  if (img.empty()) throw DimensionMismatch("patchify: empty image");
  const std::size_t h = img.height(), w = img.width(), c = img.channels(), p = patch_size;
  PatchGrid grid;
  grid.patch_size = p;
  grid.rows = (h + p - 1) / p;
  grid.cols = (w + p - 1) / p;
  grid.pad_bottom = grid.rows * p - h;
  grid.pad_right = grid.cols * p - w;
  grid.patches.reserve(grid.rows * grid.cols);
  for (std::size_t r = 0; r < grid.rows; ++r)
    for (std::size_t col = 0; col < grid.cols; ++col) {
      ImageTensor patch(p, p, c);
      const std::size_t y0 = r * p, x0 = col * p;
      const std::size_t ny = std::min(p, h - y0), nx = std::min(p, w - x0);
      auto src = img.data();
      auto dst = patch.data();
      for (std::size_t y = 0; y < ny; ++y) {
        const auto from = src.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * w + x0) * c);
        std::copy(from, from + static_cast<std::ptrdiff_t>(nx * c), dst.begin() + static_cast<std::ptrdiff_t>(y * p * c));
      }
      grid.patches.push_back({r, col, std::move(patch)});
    }
  return grid;
}

ScoreMap stitch(const std::vector<PatchScore>& scores, const PatchGrid& grid, std::size_t orig_h, std::size_t orig_w) {
  const std::size_t p = grid.patch_size;
  if (orig_h + grid.pad_bottom != grid.rows * p || orig_w + grid.pad_right != grid.cols * p) {
    throw DimensionMismatch("stitch: original size does not match the grid");
  }
  std::vector<std::uint8_t> seen(grid.rows * grid.cols, 0);
  ScoreMap out(orig_h, orig_w);
  for (const auto& s : scores) {
    if (s.row >= grid.rows || s.col >= grid.cols) throw DimensionMismatch("stitch: cell outside the grid");
    if (seen[s.row * grid.cols + s.col]++) throw DimensionMismatch("stitch: duplicate cell");
    if (s.map.height() != p || s.map.width() != p) throw DimensionMismatch("stitch: score map is not patch-sized");
    const std::size_t y0 = s.row * p, x0 = s.col * p;
    const std::size_t ny = std::min(p, orig_h - y0), nx = std::min(p, orig_w - x0);
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) out.at(y0 + y, x0 + x) = s.map.at(y, x);
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw DimensionMismatch("stitch: missing cell");
  return out;
}

void StitchConfig::validate() const {
  if (!std::isfinite(threshold) || threshold < 0.0f) throw InvalidConfig("threshold must be finite and >= 0");
  if (patch_size < 16) throw InvalidConfig("patch_size must be >= 16");
}

ScoreMap threshold_and_remask(const ScoreMap& map, const BinaryMask& mask, const StitchConfig& cfg) {
  cfg.validate();
  if (map.height() != mask.height() || map.width() != mask.width()) {
    throw DimensionMismatch("threshold_and_remask: map and mask sizes differ");
  }
  ScoreMap out = map;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!mask.data()[i] || d[i] < cfg.threshold) {
      d[i] = 0.0f;
    } else if (cfg.binarize) {
      d[i] = 1.0f;
    }
  }
  return out;
}

namespace {

bool has_foreground(const BinaryMask& mask, std::size_t row, std::size_t col, std::size_t p) {
  const std::size_t y0 = row * p, x0 = col * p;
  const std::size_t y1 = std::min(mask.height(), y0 + p), x1 = std::min(mask.width(), x0 + p);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x)
      if (mask.at(y, x)) return true;
  return false;
}

// Scores the selected cells; output independent of the number of workers.
std::vector<PatchScore> score_cells(const PatchGrid& grid, const std::vector<bool>& active,
                                    const detectors::DetectorHandle& detector, std::size_t jobs) {
  const std::size_t n = grid.patches.size(), p = grid.patch_size;
  std::vector<PatchScore> out(n);
  auto work = [&](std::size_t t, std::size_t stride) {
    for (std::size_t i = t; i < n; i += stride) {
      const auto& cell = grid.patches[i];
      out[i] = {cell.row, cell.col, active[i] ? detector.score(cell.image) : ScoreMap(p, p)};
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs);
    for (std::size_t t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        try {
          work(t, jobs);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace

ScoreMap run_patch_pipeline(const ImageTensor& img, const BinaryMask& mask, const detectors::DetectorHandle& detector,
                            const StitchConfig& cfg, const PipelineOptions& opts) {
  cfg.validate();
  if (detector.patch_size() != cfg.patch_size) throw DimensionMismatch("detector was trained on a different patch size");
  const ImageTensor masked = masking::apply_mask(img, mask);
  const PatchGrid grid = patchify(masked, cfg.patch_size);
  std::vector<bool> active(grid.patches.size(), true);
  if (opts.skip_background)
    for (std::size_t i = 0; i < active.size(); ++i)
      active[i] = has_foreground(mask, grid.patches[i].row, grid.patches[i].col, cfg.patch_size);
  const auto scores = score_cells(grid, active, detector, opts.jobs);
  return threshold_and_remask(stitch(scores, grid, img.height(), img.width()), mask, cfg);
}

std::vector<ImageTensor> training_inputs(const ImageTensor& img, const BinaryMask* mask, std::size_t detector_input,
                                         const ScoringMode& mode) {
  if (mode.use_mask && !mask) throw InvalidConfig("masked mode needs a mask");
  const ImageTensor src = to_rgb(mode.use_mask ? masking::apply_mask(img, *mask) : img);
  if (!mode.patch) return {resize_bilinear(src, detector_input, detector_input)};
  PatchGrid grid = patchify(src, detector_input);
  std::vector<ImageTensor> out;
  for (auto& cell : grid.patches)
    if (!mode.use_mask || has_foreground(*mask, cell.row, cell.col, detector_input)) out.push_back(std::move(cell.image));
  return out;
}

std::vector<ImageTensor> prepare_training_patches(const DatasetManifest& manifest, const ScoringMode& mode,
                                                  const masking::SegmenterConfig& seg, std::size_t detector_input) {
  const auto train = manifest.select(Split::Train);
  if (train.empty()) throw InvalidConfig("train split is empty");
  for (const auto& e : train)
    if (e.label != Label::Normal) throw InvalidConfig("train split contains a defective image: " + e.image_path);
  std::vector<ImageTensor> out;
  for (const auto& e : train) {
    const ImageTensor img = load_image(manifest.resolve(e.image_path));
    std::optional<BinaryMask> mask;
    if (mode.use_mask) mask = masking::segment(img, seg);
    for (auto& p : training_inputs(img, mask ? &*mask : nullptr, detector_input, mode)) out.push_back(std::move(p));
  }
  return out;
}

ScoreMap score_image(const ImageTensor& img, const BinaryMask* mask, const detectors::DetectorHandle& detector,
                     const ScoringMode& mode, const PipelineOptions& opts) {
  if (mode.use_mask && !mask) throw InvalidConfig("masked mode needs a mask");
  const ImageTensor rgb = to_rgb(img);
  const std::size_t p = detector.patch_size();
  if (mode.patch) {
    const BinaryMask all(img.height(), img.width(), true);
    StitchConfig cfg;
    cfg.patch_size = p;
    return run_patch_pipeline(rgb, mode.use_mask ? *mask : all, detector, cfg, opts);
  }
  const ImageTensor src = mode.use_mask ? masking::apply_mask(rgb, *mask) : rgb;
  ScoreMap small = detector.score(resize_bilinear(src, p, p));
  ScoreMap full = resize_bilinear(small, img.height(), img.width());
  if (mode.use_mask) {
    for (std::size_t i = 0; i < full.pixels(); ++i)
      if (!mask->data()[i]) full.data()[i] = 0.0f;
  }
  return full;
}

}  // namespace patchguard::patching
