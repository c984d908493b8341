#include "patchguard/encoder/encoder.hpp"

#include <cmath>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/tensor_file.hpp"
#include "patchguard/nn/ops.hpp"
#include "patchguard/nn/optim.hpp"
#include "patchguard/simd/kernels.hpp"

namespace patchguard::encoder {

using nn::Graph;
using nn::Param;
using nn::ParamMap;
using nn::Var;

void EncoderConfig::validate() const {
  if (token_patch == 0 || input_size == 0 || input_size % token_patch != 0) {
    throw InvalidConfig("input_size must be a positive multiple of token_patch");
  }
  if (heads == 0 || embed_dim == 0 || embed_dim % heads != 0) throw InvalidConfig("embed_dim must be divisible by heads");
  if (layers == 0) throw InvalidConfig("encoder needs at least one layer");
  if (!(mlp_ratio > 0.0)) throw InvalidConfig("mlp_ratio must be positive");
  for (auto l : feature_layers)
    if (l >= layers) throw InvalidConfig("feature layer index out of range");
}

std::size_t EncoderConfig::hidden_dim() const {
  return static_cast<std::size_t>(std::lround(static_cast<double>(embed_dim) * mlp_ratio));
}

std::vector<std::size_t> EncoderConfig::selected_layers() const {
  if (!feature_layers.empty()) return feature_layers;
  if (layers == 1) return {0};
  return {layers - 2, layers - 1};
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"input_size", input_size}, {"token_patch", token_patch}, {"embed_dim", embed_dim}, {"layers", layers},
          {"heads", heads},           {"mlp_ratio", mlp_ratio},     {"feature_layers", feature_layers}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.input_size = j.value("input_size", c.input_size);
  c.token_patch = j.value("token_patch", c.token_patch);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.feature_layers = j.value("feature_layers", c.feature_layers);
  c.validate();
  return c;
}

std::size_t closed_form_parameter_count(const EncoderConfig& cfg) {
  const std::size_t d = cfg.embed_dim, h = cfg.hidden_dim();
  const std::size_t embed = d * cfg.patch_dim() + d + cfg.tokens() * d;
  const std::size_t block = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (h * d + h) + (d * h + d);
  return embed + cfg.layers * block;
}

std::size_t EncoderWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += p.value.numel();
  return n;
}

std::uint64_t EncoderWeights::hash() const {
  NamedTensors t;
  for (const auto& [name, p] : params) t.emplace(name, p.value);
  return hash_tensors(t);
}

void EncoderWeights::set_trainable(bool trainable) {
  for (auto& [name, p] : params) p.trainable = trainable;
}

namespace {

Tensor<float> trunc_normal(std::vector<std::size_t> shape, Rng& rng, double std = 0.02) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.truncated_normal(std));
  return t;
}

void add_linear(ParamMap<float>& params, const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
  params.emplace(name + ".weight", Param<float>(trunc_normal({out, in}, rng)));
  params.emplace(name + ".bias", Param<float>(Tensor<float>({out})));
}

void add_norm(ParamMap<float>& params, const std::string& name, std::size_t dim) {
  params.emplace(name + ".weight", Param<float>(Tensor<float>({dim}, 1.0f)));
  params.emplace(name + ".bias", Param<float>(Tensor<float>({dim})));
}

template <class T>
Param<T>& get(ParamMap<T>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw FormatError("missing parameter " + name);
  return it->second;
}

template <class T>
Var adapted_linear(Graph<T>& g, ParamMap<T>& params, const std::string& name, Var x,
                   const AdapterBindings<T>* adapters) {
  Var y = nn::linear(g, x, g.param(get(params, name + ".weight")), g.param(get(params, name + ".bias")));
  if (adapters) {
    auto it = adapters->find(name);
    if (it != adapters->end()) {
      const auto& ad = it->second;
      // Two low-rank products; ΔW = BA is never formed.
      Var h = nn::linear(g, x, g.param(*ad.a), Var{});
      Var u = nn::linear(g, h, g.param(*ad.b), Var{});
      y = nn::add_scaled(g, y, u, ad.scale);
    }
  }
  return y;
}

}  // namespace

void init_block(ParamMap<float>& params, const std::string& prefix, std::size_t dim, std::size_t hidden, Rng& rng) {
  add_norm(params, prefix + ".norm1", dim);
  add_linear(params, prefix + ".attn.qkv", 3 * dim, dim, rng);
  add_linear(params, prefix + ".attn.proj", dim, dim, rng);
  add_norm(params, prefix + ".norm2", dim);
  add_linear(params, prefix + ".mlp.fc1", hidden, dim, rng);
  add_linear(params, prefix + ".mlp.fc2", dim, hidden, rng);
}

EncoderWeights init_pretrained_stub(RandomSeed seed, const EncoderConfig& cfg) {
  cfg.validate();
  Rng rng(seed, 0x454E43);
  EncoderWeights w;
  w.config = cfg;
  const std::size_t d = cfg.embed_dim;
  add_linear(w.params, "patch_embed", d, cfg.patch_dim(), rng);
  w.params.emplace("pos_embed", Param<float>(trunc_normal({cfg.tokens(), d}, rng)));
  for (std::size_t i = 0; i < cfg.layers; ++i) init_block(w.params, "blocks." + std::to_string(i), d, cfg.hidden_dim(), rng);
  return w;
}

Tensor<float> image_to_patches(const ImageTensor& img, const EncoderConfig& cfg) {
  if (img.height() != cfg.input_size || img.width() != cfg.input_size || img.channels() != 3) {
    throw DimensionMismatch("encoder expects a " + std::to_string(cfg.input_size) + "x" +
                            std::to_string(cfg.input_size) + " RGB input");
  }
  const std::size_t p = cfg.token_patch, grid = cfg.grid(), pd = cfg.patch_dim();
  Tensor<float> out({cfg.tokens(), pd});
  auto src = img.data();
  for (std::size_t ty = 0; ty < grid; ++ty)
    for (std::size_t tx = 0; tx < grid; ++tx) {
      float* row = out.ptr() + (ty * grid + tx) * pd;
      for (std::size_t py = 0; py < p; ++py) {
        const float* s = src.data() + ((ty * p + py) * cfg.input_size + tx * p) * 3;
        std::copy(s, s + 3 * p, row + py * 3 * p);
      }
    }
  return out;
}

template <class T>
Var transformer_block(Graph<T>& g, ParamMap<T>& params, const std::string& prefix, Var x, std::size_t heads,
                      const AdapterBindings<T>* adapters) {
  auto P = [&](const std::string& n) { return g.param(get(params, prefix + n)); };
  Var h = nn::layer_norm(g, x, P(".norm1.weight"), P(".norm1.bias"));
  h = adapted_linear(g, params, prefix + ".attn.qkv", h, adapters);
  h = nn::attention(g, h, heads);
  h = adapted_linear(g, params, prefix + ".attn.proj", h, adapters);
  x = nn::add(g, x, h);
  Var m = nn::layer_norm(g, x, P(".norm2.weight"), P(".norm2.bias"));
  m = nn::linear(g, m, P(".mlp.fc1.weight"), P(".mlp.fc1.bias"));
  m = nn::gelu(g, m);
  m = nn::linear(g, m, P(".mlp.fc2.weight"), P(".mlp.fc2.bias"));
  return nn::add(g, x, m);
}

template <class T>
std::vector<Var> encoder_forward(Graph<T>& g, ParamMap<T>& params, const EncoderConfig& cfg, Var patches,
                                 const AdapterBindings<T>* adapters, std::size_t last_layer) {
  if (last_layer >= cfg.layers) throw InvalidConfig("last_layer out of range");
  Var x = nn::linear(g, patches, g.param(get(params, std::string("patch_embed.weight"))),
                     g.param(get(params, std::string("patch_embed.bias"))));
  x = nn::add(g, x, g.param(get(params, std::string("pos_embed"))));
  std::vector<Var> outs;
  for (std::size_t i = 0; i <= last_layer; ++i) {
    x = transformer_block(g, params, "blocks." + std::to_string(i), x, cfg.heads, adapters);
    outs.push_back(x);
  }
  return outs;
}

std::vector<FeatureMap> encode(const ImageTensor& img, EncoderWeights& weights, const AdapterBindings<float>* adapters) {
  const auto& cfg = weights.config;
  const auto layers = cfg.selected_layers();
  const std::size_t last = *std::max_element(layers.begin(), layers.end());
  Graph<float> g(false);
  Var in = g.input(image_to_patches(img, cfg));
  auto outs = encoder_forward(g, weights.params, cfg, in, adapters, last);
  std::vector<FeatureMap> maps;
  for (auto l : layers) {
    FeatureMap fm;
    fm.grid = cfg.grid();
    fm.dim = cfg.embed_dim;
    fm.layer_index = l;
    fm.tokens = g.value(outs[l]).data;
    maps.push_back(std::move(fm));
  }
  return maps;
}

std::vector<float> pretrain_reconstruction(EncoderWeights& weights, const std::vector<ImageTensor>& images,
                                           std::size_t steps, float learning_rate, RandomSeed seed) {
  std::vector<float> losses;
  if (images.empty() || steps == 0) return losses;
  const simd::FlushDenormals ftz;
  const auto& cfg = weights.config;
  Rng rng(seed, 0x505245);
  ParamMap<float> head;
  add_linear(head, "pixel_head", cfg.patch_dim(), cfg.embed_dim, rng);
  nn::Adam opt({learning_rate});
  opt.add_all(weights.params);
  opt.add_all(head);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto& img = images[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(images.size()) - 1))];
    Graph<float> g;
    Tensor<float> patches = image_to_patches(img, cfg);
    Var target = g.input(patches);
    Var in = g.input(std::move(patches));
    auto outs = encoder_forward(g, weights.params, cfg, in, static_cast<const AdapterBindings<float>*>(nullptr),
                                cfg.layers - 1);
    Var rec = nn::linear(g, outs.back(), g.param(head.at("pixel_head.weight")), g.param(head.at("pixel_head.bias")));
    Var loss = nn::mse(g, rec, target);
    losses.push_back(g.value(loss).data[0]);
    g.backward(loss);
    opt.step();
  }
  return losses;
}

void save_encoder(const EncoderWeights& weights, const std::filesystem::path& path) {
  TensorFile f;
  for (const auto& [name, p] : weights.params) f.tensors.emplace(name, p.value);
  f.meta = {{"encoder", weights.config.to_json()}};
  save_tensor_file(f, path);
}

EncoderWeights load_encoder(const std::filesystem::path& path) {
  TensorFile f = load_tensor_file(path);
  EncoderWeights w;
  w.config = EncoderConfig::from_json(f.meta.at("encoder"));
  for (auto& [name, t] : f.tensors) w.params.emplace(name, Param<float>(std::move(t)));
  if (w.parameter_count() != closed_form_parameter_count(w.config)) {
    throw FormatError("encoder checkpoint does not match its config");
  }
  return w;
}

template <class T>
ParamMap<T> cast_params(const ParamMap<float>& params) {
  ParamMap<T> out;
  for (const auto& [name, p] : params) out.emplace(name, Param<T>(p.value.template cast<T>(), p.trainable));
  return out;
}

template ParamMap<float> cast_params<float>(const ParamMap<float>&);
template ParamMap<double> cast_params<double>(const ParamMap<float>&);
template Var transformer_block<float>(Graph<float>&, ParamMap<float>&, const std::string&, Var, std::size_t,
                                      const AdapterBindings<float>*);
template Var transformer_block<double>(Graph<double>&, ParamMap<double>&, const std::string&, Var, std::size_t,
                                       const AdapterBindings<double>*);
template std::vector<Var> encoder_forward<float>(Graph<float>&, ParamMap<float>&, const EncoderConfig&, Var,
                                                 const AdapterBindings<float>*, std::size_t);
template std::vector<Var> encoder_forward<double>(Graph<double>&, ParamMap<double>&, const EncoderConfig&, Var,
                                                  const AdapterBindings<double>*, std::size_t);

}  // namespace patchguard::encoder
