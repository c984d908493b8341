#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "patchguard/core/random.hpp"
#include "patchguard/encoder/encoder.hpp"

namespace patchguard::lora {

enum class TargetKind { Qkv, Proj };

TargetKind parse_target(const std::string& s);
std::string to_string(TargetKind kind);

struct LoraConfig {
  std::size_t rank = 8;
  float alpha = 16.0f;
  std::set<TargetKind> targets{TargetKind::Qkv, TargetKind::Proj};
  float learning_rate = 1e-3f;
  std::size_t epochs = 10;

  void validate() const;
  nlohmann::json to_json() const;
  static LoraConfig from_json(const nlohmann::json& j);
};

/// Rank-r factor pair attached to one frozen linear weight W0 [d, k]:
/// A is [r, k] (random init), B is [d, r] (zero init), so ΔW = BA starts at 0.
struct LoraAdapter {
  nn::Param<float> a;
  nn::Param<float> b;
  std::size_t rank = 0;
  float alpha = 0.0f;
  std::string target_name;

  float scale() const { return alpha / static_cast<float>(rank); }
  std::size_t in_dim() const { return a.value.dim(1); }
  std::size_t out_dim() const { return b.value.dim(0); }
};

/// Frozen encoder plus its adapters. With no adapters it behaves exactly like
/// the base encoder, which is how detectors hold a plain encoder.
class AdaptedEncoder {
 public:
  AdaptedEncoder() = default;
  explicit AdaptedEncoder(encoder::EncoderWeights base);

  encoder::EncoderWeights& base() { return base_; }
  const encoder::EncoderWeights& base() const { return base_; }
  const encoder::EncoderConfig& config() const { return base_.config; }

  std::map<std::string, LoraAdapter>& adapters() { return adapters_; }
  const std::map<std::string, LoraAdapter>& adapters() const { return adapters_; }
  bool has_adapters() const { return !adapters_.empty(); }

  /// Graph bindings for encoder_forward.
  encoder::AdapterBindings<float> bindings();

  /// Full fine-tuning switch: makes every base parameter trainable.
  void unfreeze_base();
  void freeze_base();
  bool base_trainable() const;

  /// Optimizer-visible parameter count (adapters plus any unfrozen base).
  std::size_t trainable_parameter_count() const;
  /// Hash over the frozen base weights only.
  std::uint64_t frozen_hash() const { return base_.hash(); }

  /// Folds W0 + (alpha/r)·B·A into the base weights and returns them. The
  /// adapters are consumed; a second call throws StateError.
  encoder::EncoderWeights merge();
  bool merged() const { return merged_; }

  std::vector<encoder::FeatureMap> encode(const ImageTensor& img);

 private:
  encoder::EncoderWeights base_;
  std::map<std::string, LoraAdapter> adapters_;
  bool merged_ = false;
};

/// Target names ("blocks.i.attn.qkv" / "blocks.i.attn.proj") selected by cfg.
std::vector<std::string> target_names(const encoder::EncoderConfig& enc, const LoraConfig& cfg);

/// Attaches adapters to every selected projection and freezes the base.
AdaptedEncoder inject(encoder::EncoderWeights encoder, const LoraConfig& cfg, RandomSeed seed);

/// Σ over targets of r·(d + k); the reference the tally must equal.
std::size_t closed_form_trainable_count(const encoder::EncoderConfig& enc, const LoraConfig& cfg);

/// One frozen linear layer with an adapter.
struct AdaptedLinear {
  const Tensor<float>* weight = nullptr;  // W0 [d, k]
  const Tensor<float>* bias = nullptr;    // optional [d]
  const LoraAdapter* adapter = nullptr;
};

/// (W0 + (alpha/r)·B·A)·x (+ bias) computed as W0·x + scale·B·(A·x).
std::vector<float> adapted_forward(const AdaptedLinear& layer, std::span<const float> x);

void save_adapters(const AdaptedEncoder& model, const LoraConfig& cfg, const std::filesystem::path& path);
/// Loads adapters onto `model` (which must already hold the matching base).
LoraConfig load_adapters(AdaptedEncoder& model, const std::filesystem::path& path);

}  // namespace patchguard::lora
