#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchguard/core/manifest.hpp"
#include "patchguard/detectors/detectors.hpp"
#include "patchguard/encoder/encoder.hpp"
#include "patchguard/eval/evaluate.hpp"
#include "patchguard/lora/lora.hpp"
#include "patchguard/masking/masking.hpp"

namespace patchguard::eval {

/// baseline: whole image downsized to the detector input, no mask.
/// finetune: baseline with the whole encoder unfrozen.
/// mask: baseline on the masked image (score re-masked).
/// mask_patch: masked image scored per native-resolution patch.
/// full: mask_patch with LoRA adapters trained jointly with the head.
enum class Arm { Baseline, Finetune, Mask, MaskPatch, Full };

Arm parse_arm(const std::string& s);
std::string to_string(Arm arm);
/// "all" or a comma-separated list of arm names.
std::set<Arm> parse_arms(const std::string& s);

struct AblationConfig {
  detectors::DetectorConfig detector;
  encoder::EncoderConfig encoder;
  lora::LoraConfig lora;
  masking::SegmenterConfig segmenter;
  /// Self-supervised warm start of the stub encoder on the train images.
  std::size_t pretrain_steps = 0;
  /// Training samples per arm; epochs = round(budget / #inputs), so arms with
  /// few whole images and arms with many patches see equal compute.
  std::size_t sample_budget = 1500;
  std::size_t jobs = 1;
  RandomSeed seed{0};

  nlohmann::json to_json() const;
  static AblationConfig from_json(const nlohmann::json& j);
};

struct ArmResult {
  Arm arm = Arm::Baseline;
  EvalResult eval;
  std::vector<float> loss_curve;
  std::size_t training_inputs = 0;
  std::size_t epochs = 0;
  std::size_t trainable_parameters = 0;
  std::uint64_t score_hash = 0;  // over every val/test score map
  double seconds = 0.0;
};

struct AblationReport {
  std::vector<ArmResult> rows;

  const ArmResult& row(Arm arm) const;
  /// `timings = false` drops wall-clock fields so the JSON is reproducible.
  nlohmann::json to_json(bool timings = true) const;
  /// Hash of the timing-free JSON.
  std::uint64_t hash() const;
};

using ProgressFn = std::function<void(const std::string&)>;

AblationReport run_ablation(const DatasetManifest& corpus, const std::set<Arm>& arms, const AblationConfig& cfg,
                            const ProgressFn& progress = {});

}  // namespace patchguard::eval
