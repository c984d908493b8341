#include "patchguard/detectors/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/resize.hpp"
#include "patchguard/core/tensor_file.hpp"
#include "patchguard/nn/ops.hpp"
#include "patchguard/nn/optim.hpp"
#include "patchguard/simd/kernels.hpp"

namespace patchguard::detectors {

using nn::Graph;
using nn::Param;
using nn::ParamMap;
using nn::Var;

DetectorKind parse_kind(const std::string& s) {
  if (s == "feature") return DetectorKind::Feature;
  if (s == "reconstruction") return DetectorKind::Reconstruction;
  throw InvalidConfig("unknown detector kind '" + s + "' (expected feature or reconstruction)");
}

std::string to_string(DetectorKind kind) { return kind == DetectorKind::Feature ? "feature" : "reconstruction"; }

nlohmann::json TrainOptions::to_json() const {
  return {{"epochs", epochs}, {"learning_rate", learning_rate}, {"batch", batch}, {"seed", seed.value}};
}

TrainOptions TrainOptions::from_json(const nlohmann::json& j) {
  TrainOptions t;
  t.epochs = j.value("epochs", t.epochs);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.batch = j.value("batch", t.batch);
  t.seed.value = j.value("seed", t.seed.value);
  if (t.batch == 0) throw InvalidConfig("batch must be >= 1");
  return t;
}

nlohmann::json DetectorConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"feature",
           {{"input_layers", feature.input_layers},
            {"bottleneck_ratio", feature.bottleneck_ratio},
            {"dropout", feature.dropout},
            {"decoder_mlp_ratio", feature.decoder_mlp_ratio},
            {"stop_target_gradient", feature.stop_target_gradient},
            {"adapter_free_targets", feature.adapter_free_targets}}},
          {"reconstruction", {{"channels", reconstruction.channels}, {"fuse_encoder", reconstruction.fuse_encoder}}},
          {"defect", defect.to_json()},
          {"train", train.to_json()}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.kind = parse_kind(j.value("kind", std::string("feature")));
  if (j.contains("feature")) {
    const auto& f = j["feature"];
    c.feature.input_layers = f.value("input_layers", c.feature.input_layers);
    c.feature.bottleneck_ratio = f.value("bottleneck_ratio", c.feature.bottleneck_ratio);
    c.feature.dropout = f.value("dropout", c.feature.dropout);
    c.feature.decoder_mlp_ratio = f.value("decoder_mlp_ratio", c.feature.decoder_mlp_ratio);
    c.feature.stop_target_gradient = f.value("stop_target_gradient", c.feature.stop_target_gradient);
    c.feature.adapter_free_targets = f.value("adapter_free_targets", c.feature.adapter_free_targets);
  }
  if (j.contains("reconstruction")) {
    const auto& r = j["reconstruction"];
    c.reconstruction.channels = r.value("channels", c.reconstruction.channels);
    c.reconstruction.fuse_encoder = r.value("fuse_encoder", c.reconstruction.fuse_encoder);
  }
  if (j.contains("defect")) c.defect = SyntheticDefectSpec::from_json(j["defect"]);
  if (j.contains("train")) c.train = TrainOptions::from_json(j["train"]);
  if (!(c.feature.dropout >= 0.0 && c.feature.dropout < 1.0)) throw InvalidConfig("dropout must be in [0, 1)");
  return c;
}

namespace {

template <class T>
Param<T>& get(ParamMap<T>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw FormatError("missing head parameter " + name);
  return it->second;
}

Tensor<float> random_tensor(std::vector<std::size_t> shape, Rng& rng, double std) {
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, std));
  return t;
}

void add_dense(ParamMap<float>& p, const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
  p.emplace(name + ".weight", Param<float>(random_tensor({out, in}, rng, std::sqrt(1.0 / static_cast<double>(in)))));
  p.emplace(name + ".bias", Param<float>(Tensor<float>({out})));
}

void add_conv(ParamMap<float>& p, const std::string& name, std::size_t out, std::size_t in, Rng& rng) {
  const double fan_in = static_cast<double>(in * 9);
  p.emplace(name + ".weight", Param<float>(random_tensor({out, in, 3, 3}, rng, std::sqrt(2.0 / fan_in))));
  p.emplace(name + ".bias", Param<float>(Tensor<float>({out})));
}

std::size_t bottleneck_dim(const FeatureHeadConfig& h, std::size_t d) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(d) * h.bottleneck_ratio)));
}

std::vector<std::size_t> input_layers(const FeatureHeadConfig& h, const encoder::EncoderConfig& e) {
  return h.input_layers.empty() ? e.selected_layers() : h.input_layers;
}

std::size_t last_needed_layer(const FeatureHeadConfig& h, const encoder::EncoderConfig& e) {
  std::size_t last = 0;
  for (auto l : e.selected_layers()) last = std::max(last, l);
  for (auto l : input_layers(h, e)) last = std::max(last, l);
  return last;
}

// [C,H,W] -> encoder patch rows (token order row-major, pixels (py, px, c)).
template <class T>
Tensor<T> chw_to_rows(const Tensor<T>& chw, const encoder::EncoderConfig& cfg) {
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (c != 3 || h != cfg.input_size || w != cfg.input_size) throw DimensionMismatch("patch does not match encoder input");
  const std::size_t p = cfg.token_patch, grid = cfg.grid(), pd = cfg.patch_dim();
  Tensor<T> rows({cfg.tokens(), pd});
  for (std::size_t ty = 0; ty < grid; ++ty)
    for (std::size_t tx = 0; tx < grid; ++tx)
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          for (std::size_t ch = 0; ch < 3; ++ch)
            rows.data[(ty * grid + tx) * pd + (py * p + px) * 3 + ch] =
                chw.data[(ch * h + ty * p + py) * w + tx * p + px];
  return rows;
}

ImageTensor from_chw(const Tensor<float>& chw) {
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  ImageTensor img(h, w, c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) img.at(y, x, ch) = chw.data[(ch * h + y) * w + x];
  return img;
}

void check_patch(const ImageTensor& patch, std::size_t size) {
  if (patch.height() != size || patch.width() != size || patch.channels() != 3) {
    throw DimensionMismatch("detector expects " + std::to_string(size) + "x" + std::to_string(size) + " RGB patches");
  }
}

template <class T>
Tensor<T> dropout_mask(std::size_t n, std::size_t d, double p, Rng& rng) {
  Tensor<T> m({n, d});
  const T keep = T(1) / T(1 - p);
  for (auto& v : m.data) v = rng.uniform() < p ? T(0) : keep;
  return m;
}

// Allowed region for training stains: nonzero pixels, so masked patches get
// stains on the instrument rather than on the zeroed background.
BinaryMask nonzero_pixels(const ImageTensor& img) {
  BinaryMask m(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < img.channels(); ++c)
        if (img.at(y, x, c) != 0.0f) {
          m.set(y, x, true);
          break;
        }
  return m;
}

DefectSample corrupt(const ImageTensor& clean, const SyntheticDefectSpec& base, std::uint64_t seed) {
  SyntheticDefectSpec spec = base;
  spec.seed.value = seed;
  const BinaryMask fg = nonzero_pixels(clean);
  return inject_defect(clean, spec, fg.count() > 0 ? &fg : nullptr);
}

lora::LoraConfig lora_config_of(const lora::AdaptedEncoder& enc) {
  lora::LoraConfig cfg;
  cfg.targets.clear();
  for (const auto& [name, ad] : enc.adapters()) {
    cfg.rank = ad.rank;
    cfg.alpha = ad.alpha;
    cfg.targets.insert(lora::parse_target(name.substr(name.rfind('.') + 1)));
  }
  return cfg;
}

}  // namespace

Tensor<float> to_chw(const ImageTensor& img) {
  const std::size_t c = img.channels(), h = img.height(), w = img.width();
  Tensor<float> t({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) t.data[(ch * h + y) * w + x] = img.at(y, x, ch);
  return t;
}

nn::ParamMap<float> init_head(const DetectorConfig& cfg, const encoder::EncoderConfig& enc, RandomSeed seed) {
  Rng rng(seed, 0x48454144);
  ParamMap<float> p;
  const std::size_t d = enc.embed_dim;
  if (cfg.kind == DetectorKind::Feature) {
    const std::size_t b = bottleneck_dim(cfg.feature, d);
    add_dense(p, "bottleneck.fc1", b, d, rng);
    add_dense(p, "bottleneck.fc2", d, b, rng);
    const auto hidden = static_cast<std::size_t>(std::lround(static_cast<double>(d) * cfg.feature.decoder_mlp_ratio));
    const auto targets = enc.selected_layers();
    for (std::size_t j = 0; j < targets.size(); ++j)
      encoder::init_block(p, "decoder.blocks." + std::to_string(j), d, std::max<std::size_t>(1, hidden), rng);
  } else {
    const auto& c = cfg.reconstruction.channels;
    if (enc.input_size % 16 != 0 || enc.input_size / 16 != enc.grid()) {
      throw InvalidConfig("reconstruction detector needs token_patch = 16 so the token grid matches the bottleneck");
    }
    add_conv(p, "enc1", c[0], 3, rng);
    add_conv(p, "enc2", c[1], c[0], rng);
    add_conv(p, "enc3", c[2], c[1], rng);
    add_conv(p, "enc4", c[3], c[2], rng);
    if (cfg.reconstruction.fuse_encoder) add_dense(p, "fuse", c[3], d, rng);
    add_conv(p, "dec3", c[2], c[3], rng);
    add_conv(p, "dec2", c[1], c[2], rng);
    add_conv(p, "dec1", c[0], c[1], rng);
    add_conv(p, "out", 3, c[0], rng);
  }
  return p;
}

template <class T>
FeatureForward<T> feature_head_forward(Graph<T>& g, ParamMap<T>& head, const encoder::EncoderConfig& ecfg,
                                       const FeatureHeadConfig& hcfg, const std::vector<Var>& layer_outputs,
                                       const Tensor<T>* mask, const std::vector<Var>* target_outputs) {
  const auto& tgt_outputs = target_outputs ? *target_outputs : layer_outputs;
  auto P = [&](const std::string& n) { return g.param(get(head, n)); };
  const auto ins = input_layers(hcfg, ecfg);
  Var x = layer_outputs.at(ins[0]);
  for (std::size_t i = 1; i < ins.size(); ++i) x = nn::add(g, x, layer_outputs.at(ins[i]));
  if (ins.size() > 1) x = nn::scale(g, x, T(1) / static_cast<T>(ins.size()));
  if (mask) x = nn::mul_constant(g, x, *mask);
  Var z = nn::gelu(g, nn::linear(g, x, P("bottleneck.fc1.weight"), P("bottleneck.fc1.bias")));
  z = nn::linear(g, z, P("bottleneck.fc2.weight"), P("bottleneck.fc2.bias"));

  FeatureForward<T> out;
  const auto targets = ecfg.selected_layers();
  Var total;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    z = encoder::transformer_block(g, head, "decoder.blocks." + std::to_string(j), z, ecfg.heads,
                                   static_cast<const encoder::AdapterBindings<T>*>(nullptr));
    Var t = tgt_outputs.at(targets[j]);
    if (hcfg.stop_target_gradient) t = nn::stop_gradient(g, t);
    out.reconstructed.push_back(z);
    out.targets.push_back(t);
    Var l = nn::mean(g, nn::cosine_distance_rows(g, z, t));
    total = total.valid() ? nn::add(g, total, l) : l;
  }
  out.loss = nn::scale(g, total, T(1) / static_cast<T>(targets.size()));
  return out;
}

template <class T>
FeatureForward<T> feature_forward(Graph<T>& g, ParamMap<T>& enc, ParamMap<T>& head, const encoder::EncoderConfig& ecfg,
                                  const FeatureHeadConfig& hcfg, const Tensor<T>& patch_rows,
                                  const encoder::AdapterBindings<T>* adapters, const Tensor<T>* mask) {
  Var in = g.input(patch_rows);
  const std::size_t last = last_needed_layer(hcfg, ecfg);
  auto outs = encoder::encoder_forward(g, enc, ecfg, in, adapters, last);
  if (adapters && !adapters->empty() && hcfg.adapter_free_targets) {
    auto ref = encoder::encoder_forward(g, enc, ecfg, in, static_cast<const encoder::AdapterBindings<T>*>(nullptr), last);
    return feature_head_forward(g, head, ecfg, hcfg, outs, mask, &ref);
  }
  return feature_head_forward(g, head, ecfg, hcfg, outs, mask);
}

template <class T>
ReconstructionForward<T> reconstruction_forward(Graph<T>& g, ParamMap<T>& enc, ParamMap<T>& head,
                                                const encoder::EncoderConfig& ecfg,
                                                const ReconstructionHeadConfig& hcfg, const Tensor<T>& input_chw,
                                                const Tensor<T>& clean_chw,
                                                const encoder::AdapterBindings<T>* adapters) {
  auto P = [&](const std::string& n) { return g.param(get(head, n)); };
  auto conv = [&](Var x, const std::string& n, std::size_t stride) {
    return nn::conv2d(g, x, P(n + ".weight"), P(n + ".bias"), stride, 1);
  };
  Var x = g.input(input_chw);
  Var e = x;
  // GELU rather than ReLU keeps the head smooth for finite-difference checks.
  for (const char* n : {"enc1", "enc2", "enc3", "enc4"}) e = nn::gelu(g, conv(e, n, 2));
  if (hcfg.fuse_encoder) {
    const std::size_t grid = ecfg.grid();
    if (g.value(e).dim(1) != grid) throw DimensionMismatch("encoder token grid does not match the bottleneck");
    Var rows = g.input(chw_to_rows(input_chw, ecfg));
    auto outs = encoder::encoder_forward(g, enc, ecfg, rows, adapters, ecfg.layers - 1);
    Var t = nn::linear(g, outs.back(), P("fuse.weight"), P("fuse.bias"));
    e = nn::add(g, e, nn::tokens_to_chw(g, t, grid, grid));
  }
  Var d = e;
  for (const char* n : {"dec3", "dec2", "dec1"}) d = nn::gelu(g, conv(nn::upsample2x(g, d), n, 1));
  ReconstructionForward<T> out;
  out.output = nn::sigmoid(g, conv(nn::upsample2x(g, d), "out", 1));
  out.loss = nn::mse(g, out.output, g.input(clean_chw));
  return out;
}

ScoreMap feature_discrepancy_map(const std::vector<std::vector<float>>& reconstructed,
                                 const std::vector<std::vector<float>>& target, std::size_t grid, std::size_t dim,
                                 std::size_t out_size) {
  if (reconstructed.size() != target.size() || reconstructed.empty()) {
    throw DimensionMismatch("feature_discrepancy_map: layer count mismatch");
  }
  const std::size_t n = grid * grid;
  std::vector<float> tokens(n, 0.0f);
  for (std::size_t l = 0; l < target.size(); ++l) {
    const auto& a = reconstructed[l];
    const auto& b = target[l];
    if (a.size() != n * dim || b.size() != n * dim) throw DimensionMismatch("feature_discrepancy_map: token size");
    for (std::size_t i = 0; i < n; ++i) {
      double ab = 0.0, aa = 0.0, bb = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double x = a[i * dim + k], y = b[i * dim + k];
        ab += x * y;
        aa += x * x;
        bb += y * y;
      }
      const double denom = std::sqrt(aa * bb);
      const double dist = denom > 0.0 ? 1.0 - ab / denom : (aa == bb ? 0.0 : 1.0);
      tokens[i] += static_cast<float>(std::max(0.0, dist) / static_cast<double>(target.size()));
    }
  }
  return resize_bilinear(ScoreMap(grid, grid, std::move(tokens)), out_size, out_size);
}

ScoreMap reconstruction_error_map(const ImageTensor& output, const ImageTensor& input) {
  if (output.height() != input.height() || output.width() != input.width() || output.channels() != input.channels()) {
    throw DimensionMismatch("reconstruction_error_map: shape mismatch");
  }
  ScoreMap m(input.height(), input.width());
  const std::size_t c = input.channels();
  auto o = output.data();
  auto in = input.data();
  for (std::size_t i = 0; i < m.pixels(); ++i) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double diff = static_cast<double>(o[i * c + ch]) - static_cast<double>(in[i * c + ch]);
      s += diff * diff;
    }
    m.data()[i] = static_cast<float>(s / static_cast<double>(c));
  }
  return m;
}

DetectorHandle::DetectorHandle(DetectorConfig cfg, lora::AdaptedEncoder encoder, RandomSeed init_seed)
    : config_(std::move(cfg)), encoder_(std::move(encoder)) {
  head_ = init_head(config_, encoder_.config(), init_seed);
}

ScoreMap DetectorHandle::score(const ImageTensor& patch) const {
  if (!trained_) throw StateError("detector is not trained");
  const auto& ecfg = encoder_.config();
  check_patch(patch, ecfg.input_size);
  const simd::FlushDenormals ftz;
  // A no-grad graph only reads parameters; the casts satisfy Graph::param.
  auto& enc = const_cast<lora::AdaptedEncoder&>(encoder_);
  auto& head = const_cast<ParamMap<float>&>(head_);
  auto bindings = enc.bindings();
  const auto* ad = bindings.empty() ? nullptr : &bindings;
  Graph<float> g(false);
  if (config_.kind == DetectorKind::Feature) {
    auto fw = feature_forward(g, enc.base().params, head, ecfg, config_.feature, encoder::image_to_patches(patch, ecfg),
                              ad, static_cast<const Tensor<float>*>(nullptr));
    std::vector<std::vector<float>> rec, tgt;
    for (std::size_t j = 0; j < fw.targets.size(); ++j) {
      rec.push_back(g.value(fw.reconstructed[j]).data);
      tgt.push_back(g.value(fw.targets[j]).data);
    }
    return feature_discrepancy_map(rec, tgt, ecfg.grid(), ecfg.embed_dim, ecfg.input_size);
  }
  const Tensor<float> chw = to_chw(patch);
  auto fw = reconstruction_forward(g, enc.base().params, head, ecfg, config_.reconstruction, chw, chw, ad);
  return reconstruction_error_map(from_chw(g.value(fw.output)), patch);
}

ScoreMap score_patch(const DetectorHandle& handle, const ImageTensor& patch) { return handle.score(patch); }

namespace {

// Features of the frozen encoder, keyed by layer, reused across epochs.
struct FeatureCache {
  std::vector<std::vector<Tensor<float>>> per_patch;  // [patch][layer]
};

FeatureCache build_cache(DetectorHandle& h, const std::vector<ImageTensor>& patches) {
  const auto& ecfg = h.encoder().config();
  const std::size_t last = last_needed_layer(h.config().feature, ecfg);
  FeatureCache cache;
  for (const auto& p : patches) {
    Graph<float> g(false);
    Var in = g.input(encoder::image_to_patches(p, ecfg));
    auto outs = encoder::encoder_forward(g, h.encoder().base().params, ecfg, in,
                                         static_cast<const encoder::AdapterBindings<float>*>(nullptr), last);
    std::vector<Tensor<float>> layers;
    for (auto v : outs) layers.push_back(g.value(v));
    cache.per_patch.push_back(std::move(layers));
  }
  return cache;
}

// One sample's loss (and gradients when `train`).
float sample_loss(DetectorHandle& h, const ImageTensor& patch, const FeatureCache* cache, std::size_t index,
                  Rng* dropout_rng, std::uint64_t corrupt_seed, bool train) {
  const auto& cfg = h.config();
  const auto& ecfg = h.encoder().config();
  auto bindings = h.encoder().bindings();
  const auto* ad = bindings.empty() ? nullptr : &bindings;
  Graph<float> g(train);
  Var loss;
  if (cfg.kind == DetectorKind::Feature) {
    Tensor<float> mask;
    const bool drop = dropout_rng && cfg.feature.dropout > 0.0;
    if (drop) mask = dropout_mask<float>(ecfg.tokens(), ecfg.embed_dim, cfg.feature.dropout, *dropout_rng);
    const Tensor<float>* mp = drop ? &mask : nullptr;
    const std::size_t last = last_needed_layer(cfg.feature, ecfg);
    if (cache && ad) {
      // Cached frozen targets; only the adapted input path is rebuilt.
      std::vector<Var> targets;
      for (const auto& t : cache->per_patch[index]) targets.push_back(g.constant(t));
      auto inputs = encoder::encoder_forward(g, h.encoder().base().params, ecfg,
                                             g.input(encoder::image_to_patches(patch, ecfg)), ad, last);
      loss = feature_head_forward(g, h.head(), ecfg, cfg.feature, inputs, mp, &targets).loss;
    } else if (cache) {
      std::vector<Var> layers;
      for (const auto& t : cache->per_patch[index]) layers.push_back(g.constant(t));
      loss = feature_head_forward(g, h.head(), ecfg, cfg.feature, layers, mp).loss;
    } else {
      loss = feature_forward(g, h.encoder().base().params, h.head(), ecfg, cfg.feature,
                             encoder::image_to_patches(patch, ecfg), ad, mp)
                 .loss;
    }
  } else {
    const auto sample = corrupt(patch, cfg.defect, corrupt_seed);
    loss = reconstruction_forward(g, h.encoder().base().params, h.head(), ecfg, cfg.reconstruction,
                                  to_chw(sample.image), to_chw(patch), ad)
               .loss;
  }
  const float v = g.value(loss).data[0];
  if (train) g.backward(loss);
  return v;
}

}  // namespace

TrainReport train_detector(DetectorHandle& h, const std::vector<ImageTensor>& patches) {
  if (patches.empty()) throw InvalidConfig("training stream is empty");
  const auto& ecfg = h.encoder().config();
  for (const auto& p : patches) check_patch(p, ecfg.input_size);
  const auto& opts = h.config().train;
  const simd::FlushDenormals ftz;

  nn::Adam opt({opts.learning_rate});
  opt.add_all(h.head(), "head.");
  for (auto& [name, ad] : h.encoder().adapters()) {
    opt.add(name + ".lora_A", ad.a);
    opt.add(name + ".lora_B", ad.b);
  }
  opt.add_all(h.encoder().base().params, "encoder.");

  FeatureCache cache;
  // A frozen base encoder's features are fixed: they are the whole input
  // without adapters, and the targets when targets are adapter-free.
  const bool cached = h.kind() == DetectorKind::Feature && !h.encoder().base_trainable() &&
                      (!h.encoder().has_adapters() || h.config().feature.adapter_free_targets);
  if (cached && opts.epochs > 0) cache = build_cache(h, patches);

  Rng rng(opts.seed, 0x545241494E);
  TrainReport report;
  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t sample_counter = 0;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double sum = 0.0;
    std::size_t in_batch = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t idx = order[i];
      sum += sample_loss(h, patches[idx], cached ? &cache : nullptr, idx, &rng,
                         mix_seed(opts.seed.value, 0x10000 + sample_counter++), true);
      if (++in_batch == opts.batch || i + 1 == order.size()) {
        opt.step(in_batch);
        ++report.steps;
        in_batch = 0;
      }
    }
    report.epoch_loss.push_back(static_cast<float>(sum / static_cast<double>(order.size())));
  }
  h.set_trained(true);
  return report;
}

float evaluate_loss(const DetectorHandle& handle, const std::vector<ImageTensor>& patches) {
  if (patches.empty()) throw InvalidConfig("no patches to evaluate");
  auto& h = const_cast<DetectorHandle&>(handle);
  double sum = 0.0;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    check_patch(patches[i], h.patch_size());
    sum += sample_loss(h, patches[i], nullptr, i, nullptr, mix_seed(h.config().train.seed.value, 0xE7A1 + i), false);
  }
  return static_cast<float>(sum / static_cast<double>(patches.size()));
}

DetectorHandle train_feature_detector(lora::AdaptedEncoder encoder, const std::vector<ImageTensor>& patches,
                                      std::size_t epochs, RandomSeed seed, DetectorConfig cfg, TrainReport* report) {
  if (patches.empty()) throw InvalidConfig("training stream is empty");
  cfg.kind = DetectorKind::Feature;
  cfg.train.epochs = epochs;
  cfg.train.seed = seed;
  DetectorHandle h(cfg, std::move(encoder), seed);
  auto r = train_detector(h, patches);
  if (report) *report = std::move(r);
  return h;
}

DetectorHandle train_reconstruction_detector(lora::AdaptedEncoder encoder, const std::vector<ImageTensor>& patches,
                                             const SyntheticDefectSpec& spec, std::size_t epochs, RandomSeed seed,
                                             DetectorConfig cfg, TrainReport* report) {
  if (patches.empty()) throw InvalidConfig("training stream is empty");
  spec.validate();
  cfg.kind = DetectorKind::Reconstruction;
  cfg.defect = spec;
  cfg.train.epochs = epochs;
  cfg.train.seed = seed;
  DetectorHandle h(cfg, std::move(encoder), seed);
  auto r = train_detector(h, patches);
  if (report) *report = std::move(r);
  return h;
}

void save_detector(const DetectorHandle& handle, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  encoder::save_encoder(handle.encoder().base(), dir / "encoder.pgtw");
  TensorFile head;
  for (const auto& [name, p] : handle.head()) head.tensors.emplace(name, p.value);
  head.meta = {{"detector", to_string(handle.kind())}};
  save_tensor_file(head, dir / "head.pgtw");
  if (handle.encoder().has_adapters()) {
    lora::save_adapters(handle.encoder(), lora_config_of(handle.encoder()), dir / "adapters.pgtw");
  } else {
    std::filesystem::remove(dir / "adapters.pgtw", ec);
  }
  nlohmann::json j = {{"detector", handle.config().to_json()},
                      {"trained", handle.trained()},
                      {"encoder", handle.encoder().config().to_json()},
                      {"adapters", handle.encoder().has_adapters()}};
  std::ofstream out(dir / "config.json");
  if (!out) throw IoError("cannot write " + (dir / "config.json").string());
  out << j.dump(2) << "\n";
}

DetectorHandle load_detector(const std::filesystem::path& dir) {
  std::ifstream in(dir / "config.json");
  if (!in) throw IoError("no detector at " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("detector config: ") + e.what());
  }
  DetectorConfig cfg = DetectorConfig::from_json(j.at("detector"));
  lora::AdaptedEncoder enc(encoder::load_encoder(dir / "encoder.pgtw"));
  if (j.value("adapters", false)) lora::load_adapters(enc, dir / "adapters.pgtw");
  DetectorHandle h(cfg, std::move(enc), RandomSeed{0});
  TensorFile head = load_tensor_file(dir / "head.pgtw");
  for (auto& [name, p] : h.head()) {
    auto it = head.tensors.find(name);
    if (it == head.tensors.end() || it->second.shape != p.value.shape) {
      throw FormatError("head checkpoint does not match config at " + name);
    }
    p = Param<float>(std::move(it->second));
  }
  h.set_trained(j.value("trained", false));
  return h;
}

#define PATCHGUARD_INSTANTIATE_DETECTORS(T)                                                                           \
  template FeatureForward<T> feature_head_forward<T>(Graph<T>&, ParamMap<T>&, const encoder::EncoderConfig&,         \
                                                     const FeatureHeadConfig&, const std::vector<Var>&,              \
                                                     const Tensor<T>*, const std::vector<Var>*);                      \
  template FeatureForward<T> feature_forward<T>(Graph<T>&, ParamMap<T>&, ParamMap<T>&, const encoder::EncoderConfig&, \
                                                const FeatureHeadConfig&, const Tensor<T>&,                           \
                                                const encoder::AdapterBindings<T>*, const Tensor<T>*);                \
  template ReconstructionForward<T> reconstruction_forward<T>(                                                        \
      Graph<T>&, ParamMap<T>&, ParamMap<T>&, const encoder::EncoderConfig&, const ReconstructionHeadConfig&,          \
      const Tensor<T>&, const Tensor<T>&, const encoder::AdapterBindings<T>*);

PATCHGUARD_INSTANTIATE_DETECTORS(float)
PATCHGUARD_INSTANTIATE_DETECTORS(double)

}  // namespace patchguard::detectors
