#include "patchguard/lora/lora.hpp"

#include <algorithm>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/tensor_file.hpp"
#include "patchguard/simd/kernels.hpp"

namespace patchguard::lora {

TargetKind parse_target(const std::string& s) {
  if (s == "qkv") return TargetKind::Qkv;
  if (s == "proj") return TargetKind::Proj;
  throw InvalidConfig("unknown LoRA target '" + s + "' (expected qkv or proj)");
}

std::string to_string(TargetKind kind) { return kind == TargetKind::Qkv ? "qkv" : "proj"; }

void LoraConfig::validate() const {
  if (rank == 0) throw InvalidConfig("LoRA rank must be >= 1");
  if (targets.empty()) throw InvalidConfig("LoRA needs at least one target");
  if (!(alpha > 0.0f)) throw InvalidConfig("LoRA alpha must be positive");
}

nlohmann::json LoraConfig::to_json() const {
  std::vector<std::string> t;
  for (auto k : targets) t.push_back(to_string(k));
  return {{"rank", rank}, {"alpha", alpha}, {"targets", t}, {"learning_rate", learning_rate}, {"epochs", epochs}};
}

LoraConfig LoraConfig::from_json(const nlohmann::json& j) {
  LoraConfig c;
  c.rank = j.value("rank", c.rank);
  c.alpha = j.value("alpha", c.alpha);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("targets")) {
    c.targets.clear();
    for (const auto& t : j["targets"]) c.targets.insert(parse_target(t.get<std::string>()));
  }
  c.validate();
  return c;
}

AdaptedEncoder::AdaptedEncoder(encoder::EncoderWeights base) : base_(std::move(base)) { base_.set_trainable(false); }

encoder::AdapterBindings<float> AdaptedEncoder::bindings() {
  encoder::AdapterBindings<float> out;
  for (auto& [name, ad] : adapters_) out[name] = {&ad.a, &ad.b, ad.scale()};
  return out;
}

void AdaptedEncoder::unfreeze_base() { base_.set_trainable(true); }
void AdaptedEncoder::freeze_base() { base_.set_trainable(false); }

bool AdaptedEncoder::base_trainable() const {
  return std::any_of(base_.params.begin(), base_.params.end(), [](const auto& kv) { return kv.second.trainable; });
}

std::size_t AdaptedEncoder::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, ad] : adapters_) {
    if (ad.a.trainable) n += ad.a.value.numel();
    if (ad.b.trainable) n += ad.b.value.numel();
  }
  for (const auto& [name, p] : base_.params)
    if (p.trainable) n += p.value.numel();
  return n;
}

std::vector<std::string> target_names(const encoder::EncoderConfig& enc, const LoraConfig& cfg) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < enc.layers; ++i) {
    const std::string block = "blocks." + std::to_string(i) + ".attn.";
    for (auto t : cfg.targets) names.push_back(block + to_string(t));
  }
  return names;
}

AdaptedEncoder inject(encoder::EncoderWeights encoder, const LoraConfig& cfg, RandomSeed seed) {
  cfg.validate();
  AdaptedEncoder model(std::move(encoder));
  Rng rng(seed, 0x4C4F5241);
  for (const auto& name : target_names(model.config(), cfg)) {
    const auto& w = model.base().params.at(name + ".weight").value;
    const std::size_t d = w.dim(0), k = w.dim(1);
    if (cfg.rank > std::min(d, k)) throw InvalidConfig("LoRA rank exceeds min(d, k) for " + name);
    LoraAdapter ad;
    ad.rank = cfg.rank;
    ad.alpha = cfg.alpha;
    ad.target_name = name;
    Tensor<float> a({cfg.rank, k});
    for (auto& v : a.data) v = static_cast<float>(rng.normal(0.0, 0.02));
    ad.a = nn::Param<float>(std::move(a));
    ad.b = nn::Param<float>(Tensor<float>({d, cfg.rank}));
    model.adapters().emplace(name, std::move(ad));
  }
  return model;
}

std::size_t closed_form_trainable_count(const encoder::EncoderConfig& enc, const LoraConfig& cfg) {
  const std::size_t d = enc.embed_dim;
  std::size_t n = 0;
  for (auto t : cfg.targets) {
    const std::size_t out = t == TargetKind::Qkv ? 3 * d : d;
    n += enc.layers * cfg.rank * (out + d);
  }
  return n;
}

std::vector<float> adapted_forward(const AdaptedLinear& layer, std::span<const float> x) {
  if (!layer.weight || !layer.adapter) throw InvalidConfig("adapted layer is incomplete");
  const auto& w = *layer.weight;
  const auto& ad = *layer.adapter;
  const std::size_t d = w.dim(0), k = w.dim(1), r = ad.rank;
  if (x.size() != k || ad.a.value.dim(1) != k || ad.a.value.dim(0) != r || ad.b.value.dim(0) != d ||
      ad.b.value.dim(1) != r) {
    throw DimensionMismatch("adapted_forward: inconsistent dimensions");
  }
  std::vector<float> y(d);
  simd::gemm(false, true, 1, d, k, 1.0f, x.data(), k, w.ptr(), k, 0.0f, y.data(), d);
  std::vector<float> h(r);
  simd::gemm(false, true, 1, r, k, 1.0f, x.data(), k, ad.a.value.ptr(), k, 0.0f, h.data(), r);
  simd::gemm(false, true, 1, d, r, ad.scale(), h.data(), r, ad.b.value.ptr(), r, 1.0f, y.data(), d);
  if (layer.bias) {
    if (layer.bias->numel() != d) throw DimensionMismatch("adapted_forward: bias size");
    for (std::size_t i = 0; i < d; ++i) y[i] += layer.bias->data[i];
  }
  return y;
}

encoder::EncoderWeights AdaptedEncoder::merge() {
  if (merged_) throw StateError("adapters already merged");
  encoder::EncoderWeights out = base_;
  for (const auto& [name, ad] : adapters_) {
    auto& w = out.params.at(name + ".weight").value;
    const std::size_t d = w.dim(0), k = w.dim(1);
    // W += scale · B[d,r] · A[r,k]
    simd::gemm(false, false, d, k, ad.rank, ad.scale(), ad.b.value.ptr(), ad.rank, ad.a.value.ptr(), k, 1.0f, w.ptr(),
               k);
  }
  adapters_.clear();
  merged_ = true;
  return out;
}

std::vector<encoder::FeatureMap> AdaptedEncoder::encode(const ImageTensor& img) {
  if (adapters_.empty()) return encoder::encode(img, base_);
  auto b = bindings();
  return encoder::encode(img, base_, &b);
}

void save_adapters(const AdaptedEncoder& model, const LoraConfig& cfg, const std::filesystem::path& path) {
  TensorFile f;
  for (const auto& [name, ad] : model.adapters()) {
    f.tensors.emplace(name + ".lora_A", ad.a.value);
    f.tensors.emplace(name + ".lora_B", ad.b.value);
  }
  f.meta = {{"lora", cfg.to_json()}};
  save_tensor_file(f, path);
}

LoraConfig load_adapters(AdaptedEncoder& model, const std::filesystem::path& path) {
  TensorFile f = load_tensor_file(path);
  LoraConfig cfg = LoraConfig::from_json(f.meta.at("lora"));
  model.adapters().clear();
  for (const auto& name : target_names(model.config(), cfg)) {
    auto ia = f.tensors.find(name + ".lora_A");
    auto ib = f.tensors.find(name + ".lora_B");
    if (ia == f.tensors.end() || ib == f.tensors.end()) throw FormatError("adapter checkpoint lacks " + name);
    LoraAdapter ad;
    ad.rank = cfg.rank;
    ad.alpha = cfg.alpha;
    ad.target_name = name;
    ad.a = nn::Param<float>(ia->second);
    ad.b = nn::Param<float>(ib->second);
    if (ad.a.value.dim(0) != cfg.rank || ad.b.value.dim(1) != cfg.rank) throw FormatError("adapter rank mismatch");
    model.adapters().emplace(name, std::move(ad));
  }
  return cfg;
}

}  // namespace patchguard::lora
