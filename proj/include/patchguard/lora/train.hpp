#pragma once

#include <cstdint>
#include <vector>

#include "patchguard/core/manifest.hpp"
#include "patchguard/detectors/detectors.hpp"
#include "patchguard/lora/lora.hpp"
#include "patchguard/masking/masking.hpp"
#include "patchguard/patching/patching.hpp"

namespace patchguard::lora {

struct AdapterTrainingResult {
  detectors::TrainReport report;  // per-epoch mean loss
  std::uint64_t frozen_hash = 0;  // base weights, identical before and after
};

/// Jointly optimizes the adapters held by `detector.encoder()` and the
/// detector head on the detector's own objective, using cfg.epochs and
/// cfg.learning_rate. The base encoder must be frozen; its hash is checked
/// after training (StateError on any change).
AdapterTrainingResult train_adapters(detectors::DetectorHandle& detector, const std::vector<ImageTensor>& inputs,
                                     const LoraConfig& cfg, RandomSeed seed);

/// Manifest form: prepares the train split with `mode` (masking/patching)
/// first. Throws InvalidConfig on an empty split or a defective train entry.
AdapterTrainingResult train_adapters(detectors::DetectorHandle& detector, const DatasetManifest& train,
                                     const LoraConfig& cfg, RandomSeed seed, const patching::ScoringMode& mode,
                                     const masking::SegmenterConfig& seg);

}  // namespace patchguard::lora
