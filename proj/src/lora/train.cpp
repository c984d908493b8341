#include "patchguard/lora/train.hpp"

#include "patchguard/core/errors.hpp"

namespace patchguard::lora {

AdapterTrainingResult train_adapters(detectors::DetectorHandle& detector, const std::vector<ImageTensor>& inputs,
                                     const LoraConfig& cfg, RandomSeed seed) {
  cfg.validate();
  auto& enc = detector.encoder();
  if (!enc.has_adapters()) throw StateError("train_adapters: encoder has no adapters (inject first)");
  if (enc.base_trainable()) throw StateError("train_adapters: base encoder must stay frozen");
  AdapterTrainingResult result;
  result.frozen_hash = enc.frozen_hash();
  if (cfg.epochs == 0) return result;
  if (inputs.empty()) throw InvalidConfig("train_adapters: no training inputs");

  auto& train = detector.config().train;
  train.epochs = cfg.epochs;
  train.learning_rate = cfg.learning_rate;
  train.seed = seed;
  result.report = detectors::train_detector(detector, inputs);
  if (enc.frozen_hash() != result.frozen_hash) throw StateError("frozen encoder weights changed during adaptation");
  return result;
}

AdapterTrainingResult train_adapters(detectors::DetectorHandle& detector, const DatasetManifest& train,
                                     const LoraConfig& cfg, RandomSeed seed, const patching::ScoringMode& mode,
                                     const masking::SegmenterConfig& seg) {
  const auto inputs = patching::prepare_training_patches(train, mode, seg, detector.patch_size());
  return train_adapters(detector, inputs, cfg, seed);
}

}  // namespace patchguard::lora
