#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchguard/core/image.hpp"
#include "patchguard/core/random.hpp"
#include "patchguard/nn/graph.hpp"

namespace patchguard::encoder {

struct EncoderConfig {
  std::size_t input_size = 256;
  std::size_t token_patch = 16;
  std::size_t embed_dim = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  /// Blocks whose outputs are exposed as features; empty = last two.
  std::vector<std::size_t> feature_layers;

  void validate() const;
  std::size_t grid() const { return input_size / token_patch; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return 3 * token_patch * token_patch; }
  std::size_t hidden_dim() const;
  std::vector<std::size_t> selected_layers() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// Parameter count implied by the config (patch embedding, positional
/// embedding, and L pre-norm blocks; no final norm).
std::size_t closed_form_parameter_count(const EncoderConfig& cfg);

struct EncoderWeights {
  EncoderConfig config;
  nn::ParamMap<float> params;

  std::size_t parameter_count() const;
  std::uint64_t hash() const;
  void set_trainable(bool trainable);
};

/// Grid of token vectors taken from one block output.
struct FeatureMap {
  std::size_t grid = 0;
  std::size_t dim = 0;
  std::size_t layer_index = 0;
  std::vector<float> tokens;  // grid*grid rows of `dim`, row-major
};

/// Truncated-normal (std 0.02) weights and positional embeddings, zero
/// biases, unit LayerNorm gains.
EncoderWeights init_pretrained_stub(RandomSeed seed, const EncoderConfig& cfg);

/// Short self-supervised warm start: a temporary linear pixel head
/// reconstructs every token's patch from the last block. Returns the
/// per-step losses.
std::vector<float> pretrain_reconstruction(EncoderWeights& weights, const std::vector<ImageTensor>& images,
                                           std::size_t steps, float learning_rate, RandomSeed seed);

/// [tokens, 3·p·p] patch rows, pixel order (py, px, c).
Tensor<float> image_to_patches(const ImageTensor& img, const EncoderConfig& cfg);

/// Optional low-rank path for a named linear layer, e.g. "blocks.0.attn.qkv".
template <class T>
struct LinearAdapter {
  nn::Param<T>* a = nullptr;  // [r, k]
  nn::Param<T>* b = nullptr;  // [d, r]
  T scale = T{1};
};

template <class T>
using AdapterBindings = std::map<std::string, LinearAdapter<T>>;

/// Builds the encoder on the graph and returns the output Var of every
/// block up to and including `last_layer`.
template <class T>
std::vector<nn::Var> encoder_forward(nn::Graph<T>& g, nn::ParamMap<T>& params, const EncoderConfig& cfg,
                                     nn::Var patches, const AdapterBindings<T>* adapters, std::size_t last_layer);

/// One pre-norm transformer block; also used by the feature detector's
/// decoder. `prefix` names the block parameters ("blocks.3").
template <class T>
nn::Var transformer_block(nn::Graph<T>& g, nn::ParamMap<T>& params, const std::string& prefix, nn::Var x,
                          std::size_t heads, const AdapterBindings<T>* adapters);

/// Adds the parameters of one block under `prefix` to `params`.
void init_block(nn::ParamMap<float>& params, const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng);

/// No-grad inference; returns the selected layers' feature maps.
std::vector<FeatureMap> encode(const ImageTensor& img, EncoderWeights& weights,
                               const AdapterBindings<float>* adapters = nullptr);

void save_encoder(const EncoderWeights& weights, const std::filesystem::path& path);
EncoderWeights load_encoder(const std::filesystem::path& path);

/// Converts float parameters to another precision (float64 gradient checks).
template <class T>
nn::ParamMap<T> cast_params(const nn::ParamMap<float>& params);

}  // namespace patchguard::encoder
