#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "patchguard/core/image.hpp"
#include "patchguard/core/random.hpp"
#include "patchguard/lora/lora.hpp"
#include "patchguard/nn/graph.hpp"

namespace patchguard::detectors {

enum class DetectorKind { Feature, Reconstruction };

DetectorKind parse_kind(const std::string& s);
std::string to_string(DetectorKind kind);

/// Stain generator. Radii are in pixels of the image being corrupted.
struct SyntheticDefectSpec {
  int count_min = 1;
  int count_max = 3;
  double radius_min = 4.0;
  double radius_max = 12.0;
  double color_jitter = 0.08;
  double blend_alpha = 0.85;
  std::array<float, 3> base_color{0.55f, 0.27f, 0.10f};  // reddish brown
  RandomSeed seed{0};

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticDefectSpec from_json(const nlohmann::json& j);
};

struct DefectSample {
  ImageTensor image;
  BinaryMask mask;
};

/// Alpha-blends smoothed random-walk blobs over `patch`. When `allowed` is
/// given, blob centers and blob pixels are restricted to it.
DefectSample inject_defect(const ImageTensor& patch, const SyntheticDefectSpec& spec,
                           const BinaryMask* allowed = nullptr);

struct FeatureHeadConfig {
  /// Encoder blocks averaged into the bottleneck input; empty = targets.
  std::vector<std::size_t> input_layers;
  double bottleneck_ratio = 0.25;
  double dropout = 0.2;
  double decoder_mlp_ratio = 2.0;
  /// Cut the gradient into the reconstruction targets when the encoder
  /// itself is trainable, so adaptation cannot trivially collapse them.
  bool stop_target_gradient = true;
  /// With adapters attached, take the targets from the encoder without them
  /// (the frozen reference); only the bottleneck input sees the adapters.
  bool adapter_free_targets = true;
};

struct ReconstructionHeadConfig {
  std::array<std::size_t, 4> channels{16, 32, 64, 128};
  /// Inject encoder tokens at the bottleneck (required for LoRA to matter).
  bool fuse_encoder = true;
};

struct TrainOptions {
  std::size_t epochs = 10;
  float learning_rate = 1e-3f;
  std::size_t batch = 4;  // gradient accumulation per optimizer step
  RandomSeed seed{0};

  nlohmann::json to_json() const;
  static TrainOptions from_json(const nlohmann::json& j);
};

struct DetectorConfig {
  DetectorKind kind = DetectorKind::Feature;
  FeatureHeadConfig feature;
  ReconstructionHeadConfig reconstruction;
  SyntheticDefectSpec defect;
  TrainOptions train;

  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
};

/// A detector: encoder (optionally with adapters or unfrozen), head weights,
/// and the config needed to rebuild the forward pass.
class DetectorHandle {
 public:
  DetectorHandle() = default;
  DetectorHandle(DetectorConfig cfg, lora::AdaptedEncoder encoder, RandomSeed init_seed);

  DetectorKind kind() const { return config_.kind; }
  const DetectorConfig& config() const { return config_; }
  DetectorConfig& config() { return config_; }
  std::size_t patch_size() const { return encoder_.config().input_size; }

  lora::AdaptedEncoder& encoder() { return encoder_; }
  const lora::AdaptedEncoder& encoder() const { return encoder_; }
  nn::ParamMap<float>& head() { return head_; }
  const nn::ParamMap<float>& head() const { return head_; }

  bool trained() const { return trained_; }
  void set_trained(bool t) { trained_ = t; }

  /// Patch-sized nonnegative score map. Read-only on the weights, so
  /// concurrent calls are safe.
  ScoreMap score(const ImageTensor& patch) const;

 private:
  DetectorConfig config_;
  lora::AdaptedEncoder encoder_;
  nn::ParamMap<float> head_;
  bool trained_ = false;
};

/// Head parameters for `cfg.kind` on top of an encoder with config `enc`.
nn::ParamMap<float> init_head(const DetectorConfig& cfg, const encoder::EncoderConfig& enc, RandomSeed seed);

struct TrainReport {
  std::vector<float> epoch_loss;  // mean loss per epoch
  std::size_t steps = 0;
};

/// Trains the head and every trainable encoder parameter (adapters, or the
/// whole base when unfrozen) on normal patches. Patches must match the
/// encoder input size and be RGB.
TrainReport train_detector(DetectorHandle& handle, const std::vector<ImageTensor>& patches);

DetectorHandle train_feature_detector(lora::AdaptedEncoder encoder, const std::vector<ImageTensor>& patches,
                                      std::size_t epochs, RandomSeed seed, DetectorConfig cfg = {},
                                      TrainReport* report = nullptr);

DetectorHandle train_reconstruction_detector(lora::AdaptedEncoder encoder, const std::vector<ImageTensor>& patches,
                                             const SyntheticDefectSpec& spec, std::size_t epochs, RandomSeed seed,
                                             DetectorConfig cfg = {}, TrainReport* report = nullptr);

/// Throws StateError when the handle is untrained, DimensionMismatch when
/// the patch is not patch_size² RGB.
ScoreMap score_patch(const DetectorHandle& handle, const ImageTensor& patch);

/// Mean over layers of per-token (1 − cos), bilinearly upsampled from the
/// token grid to out_size². Computed in double so identical features give 0.
ScoreMap feature_discrepancy_map(const std::vector<std::vector<float>>& reconstructed,
                                 const std::vector<std::vector<float>>& target, std::size_t grid, std::size_t dim,
                                 std::size_t out_size);

/// Per-pixel squared error averaged over channels.
ScoreMap reconstruction_error_map(const ImageTensor& output, const ImageTensor& input);

/// Mean training loss of the handle on `patches` without updating anything
/// (dropout disabled; reconstruction patches are corrupted with a fixed seed).
float evaluate_loss(const DetectorHandle& handle, const std::vector<ImageTensor>& patches);

// Forward passes, templated so gradient checks can run them in float64.
// `enc` holds encoder parameters, `head` the detector head.

template <class T>
struct FeatureForward {
  std::vector<nn::Var> reconstructed;
  std::vector<nn::Var> targets;
  nn::Var loss;
};

template <class T>
FeatureForward<T> feature_forward(nn::Graph<T>& g, nn::ParamMap<T>& enc, nn::ParamMap<T>& head,
                                  const encoder::EncoderConfig& ecfg, const FeatureHeadConfig& hcfg,
                                  const Tensor<T>& patch_rows, const encoder::AdapterBindings<T>* adapters,
                                  const Tensor<T>* dropout_mask);

/// Same head on precomputed encoder outputs (e.g. cached features).
/// `target_outputs` defaults to `layer_outputs`.
template <class T>
FeatureForward<T> feature_head_forward(nn::Graph<T>& g, nn::ParamMap<T>& head, const encoder::EncoderConfig& ecfg,
                                       const FeatureHeadConfig& hcfg, const std::vector<nn::Var>& layer_outputs,
                                       const Tensor<T>* dropout_mask,
                                       const std::vector<nn::Var>* target_outputs = nullptr);

template <class T>
struct ReconstructionForward {
  nn::Var output;  // [3, H, W]
  nn::Var loss;
};

/// `input_chw` is the (possibly corrupted) patch, `clean_chw` the target.
template <class T>
ReconstructionForward<T> reconstruction_forward(nn::Graph<T>& g, nn::ParamMap<T>& enc, nn::ParamMap<T>& head,
                                                const encoder::EncoderConfig& ecfg,
                                                const ReconstructionHeadConfig& hcfg, const Tensor<T>& input_chw,
                                                const Tensor<T>& clean_chw,
                                                const encoder::AdapterBindings<T>* adapters);

/// HWC image to [C, H, W].
Tensor<float> to_chw(const ImageTensor& img);

/// Writes config.json, encoder.pgtw, head.pgtw and (if present) adapters.pgtw.
void save_detector(const DetectorHandle& handle, const std::filesystem::path& dir);
DetectorHandle load_detector(const std::filesystem::path& dir);

}  // namespace patchguard::detectors
