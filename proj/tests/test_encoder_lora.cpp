#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "patchguard/core/errors.hpp"
#include "patchguard/detectors/detectors.hpp"
#include "patchguard/encoder/encoder.hpp"
#include "patchguard/lora/lora.hpp"
#include "patchguard/lora/train.hpp"
#include "patchguard/nn/ops.hpp"
#include "support/gradcheck.hpp"

using namespace patchguard;
using namespace patchguard::encoder;
using patchguard::testing::check_param_gradient;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.input_size = 32;
  c.token_patch = 16;
  c.embed_dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  return c;
}

ImageTensor random_image(std::size_t n, Rng& rng) {
  ImageTensor img(n, n, 3);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

// Layer-by-layer tally written out independently of the library.
std::size_t tally(const EncoderConfig& c) {
  const std::size_t d = c.embed_dim;
  const auto h = static_cast<std::size_t>(std::llround(static_cast<double>(d) * c.mlp_ratio));
  const std::size_t embed = c.patch_dim() * d + d;
  const std::size_t pos = c.tokens() * d;
  const std::size_t ln = 2 * d;
  const std::size_t qkv = d * 3 * d + 3 * d;
  const std::size_t proj = d * d + d;
  const std::size_t fc1 = d * h + h;
  const std::size_t fc2 = h * d + d;
  return embed + pos + c.layers * (2 * ln + qkv + proj + fc1 + fc2);
}

void randomize_b(lora::AdaptedEncoder& m, Rng& rng, double scale = 0.05) {
  for (auto& [name, ad] : m.adapters())
    for (auto& v : ad.b.value.data) v = static_cast<float>(rng.uniform(-scale, scale));
}

double max_feature_diff(const std::vector<FeatureMap>& a, const std::vector<FeatureMap>& b) {
  double m = 0.0;
  REQUIRE(a.size() == b.size());
  for (std::size_t l = 0; l < a.size(); ++l) {
    REQUIRE(a[l].tokens.size() == b[l].tokens.size());
    for (std::size_t i = 0; i < a[l].tokens.size(); ++i)
      m = std::max(m, static_cast<double>(std::abs(a[l].tokens[i] - b[l].tokens[i])));
  }
  return m;
}

}  // namespace

TEST_CASE("default encoder has the tallied parameter count") {
  EncoderConfig c;
  CHECK(tally(c) == 924288);
  CHECK(closed_form_parameter_count(c) == 924288);
  CHECK(init_pretrained_stub(RandomSeed{1}, c).parameter_count() == 924288);
  CHECK(init_pretrained_stub(RandomSeed{1}, tiny_config()).parameter_count() == tally(tiny_config()));
}

TEST_CASE("encoder init and forward are deterministic") {
  const auto a = init_pretrained_stub(RandomSeed{4}, tiny_config());
  const auto b = init_pretrained_stub(RandomSeed{4}, tiny_config());
  const auto c = init_pretrained_stub(RandomSeed{5}, tiny_config());
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());

  Rng rng(RandomSeed{1});
  const auto img = random_image(32, rng);
  auto w = a;
  const auto f1 = encode(img, w);
  const auto f2 = encode(img, w);
  REQUIRE(f1.size() == 2);  // last two blocks by default
  CHECK(f1[0].grid == 2);
  CHECK(f1[0].dim == 16);
  CHECK(f1[0].tokens == f2[0].tokens);
  CHECK(f1[1].tokens == f2[1].tokens);
}

TEST_CASE("zero image with zero embedding bias is independent of the patch weights") {
  auto w = init_pretrained_stub(RandomSeed{2}, tiny_config());
  for (auto& v : w.params.at("patch_embed.bias").value.data) v = 0.0f;
  const ImageTensor zero(32, 32, 3, 0.0f);
  const auto patches = image_to_patches(zero, w.config);
  CHECK(patches.dim(0) == 4);
  CHECK(patches.dim(1) == 3 * 16 * 16);
  const auto before = encode(zero, w);
  Rng rng(RandomSeed{3});
  for (auto& v : w.params.at("patch_embed.weight").value.data) v = static_cast<float>(rng.normal());
  const auto after = encode(zero, w);
  CHECK(before[0].tokens == after[0].tokens);
  CHECK(before[1].tokens == after[1].tokens);
  // ...but not of the positional embedding.
  w.params.at("pos_embed").value.data[0] += 1.0f;
  CHECK_FALSE(encode(zero, w)[0].tokens == before[0].tokens);
}

TEST_CASE("grid depends only on input_size / token_patch; width follows embed_dim") {
  Rng rng(RandomSeed{3});
  auto c = tiny_config();
  c.embed_dim = 32;
  auto w = init_pretrained_stub(RandomSeed{1}, c);
  const auto f = encode(random_image(32, rng), w);
  CHECK(f[0].grid == 2);
  CHECK(f[0].dim == 32);
  CHECK(f[0].tokens.size() == 4 * 32);
  c.input_size = 64;
  auto w2 = init_pretrained_stub(RandomSeed{1}, c);
  CHECK(encode(random_image(64, rng), w2)[0].grid == 4);
}

TEST_CASE("encoder and adapter gradients match float64 central differences") {
  const auto cfg = tiny_config();
  auto base = init_pretrained_stub(RandomSeed{6}, cfg);
  auto params = cast_params<double>(base.params);
  Rng rng(RandomSeed{12});

  // Adapters live in the same map so the checker can perturb them.
  AdapterBindings<double> bindings;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    for (const auto& [mod, out] : {std::pair{"qkv", 3 * cfg.embed_dim}, std::pair{"proj", cfg.embed_dim}}) {
      const std::string name = "blocks." + std::to_string(l) + ".attn." + mod;
      Tensor<double> a({2, cfg.embed_dim}), b({out, 2});
      for (auto& v : a.data) v = rng.normal(0.0, 0.2);
      for (auto& v : b.data) v = rng.normal(0.0, 0.2);
      auto& pa = params.emplace(name + ".lora_A", nn::Param<double>(a)).first->second;
      auto& pb = params.emplace(name + ".lora_B", nn::Param<double>(b)).first->second;
      bindings[name] = {&pa, &pb, 1.0};
    }
  }

  const auto patches64 = [&] {
    const auto p = image_to_patches(random_image(32, rng), cfg);
    Tensor<double> t(p.shape);
    for (std::size_t i = 0; i < p.numel(); ++i) t.data[i] = p.data[i];
    return t;
  }();
  Tensor<double> target({cfg.tokens(), cfg.embed_dim});
  for (auto& v : target.data) v = rng.normal();

  auto loss = [&](nn::ParamMap<double>& p, bool backward) {
    nn::Graph<double> g(backward);
    const auto outs = encoder_forward(g, p, cfg, g.input(patches64), &bindings, cfg.layers - 1);
    nn::Var l = nn::mse(g, outs.back(), g.input(target));
    if (backward) g.backward(l);
    return g.value(l).data[0];
  };
  for (const std::string name : {"patch_embed.weight", "pos_embed", "blocks.0.attn.qkv.weight", "blocks.1.mlp.fc1.weight",
                                 "blocks.0.norm1.weight", "blocks.0.attn.qkv.lora_A", "blocks.1.attn.proj.lora_B"}) {
    for (const auto& r : check_param_gradient(params, name, loss, 5, rng)) {
      CAPTURE(r.name);
      CAPTURE(r.index);
      CAPTURE(r.analytic);
      CAPTURE(r.numeric);
      CHECK(r.rel_error < 1e-4);
    }
  }
}

TEST_CASE("trainable count equals sum of r(d+k)") {
  struct Case {
    EncoderConfig enc;
    lora::LoraConfig lora;
    std::size_t expected;
  };
  EncoderConfig small;
  small.embed_dim = 64;
  small.layers = 2;
  lora::LoraConfig qkv_only;
  qkv_only.rank = 4;
  qkv_only.targets = {lora::TargetKind::Qkv};
  lora::LoraConfig r2;
  r2.rank = 2;
  const std::vector<Case> cases{
      {EncoderConfig{}, lora::LoraConfig{}, 4 * 8 * (128 + 384) + 4 * 8 * (128 + 128)},
      {EncoderConfig{}, qkv_only, 4 * 4 * (128 + 384)},
      {small, r2, 2 * 2 * (64 + 192) + 2 * 2 * (64 + 64)},
  };
  CHECK(cases[0].expected == 24576);
  for (const auto& c : cases) {
    auto m = lora::inject(init_pretrained_stub(RandomSeed{1}, c.enc), c.lora, RandomSeed{2});
    CHECK(m.trainable_parameter_count() == c.expected);
    CHECK(lora::closed_form_trainable_count(c.enc, c.lora) == c.expected);
    CHECK_FALSE(m.base_trainable());
  }
  // One 768x768 layer at r = 8: 48x fewer parameters than the dense update.
  CHECK(768 * 768 / (8 * (768 + 768)) == 48);
}

TEST_CASE("lora config validation") {
  CHECK_THROWS_AS(lora::parse_target("mlp"), InvalidConfig);
  lora::LoraConfig c;
  c.rank = 0;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c.rank = 200;  // > min(d, k) for the default encoder
  CHECK_THROWS_AS(lora::inject(init_pretrained_stub(RandomSeed{1}, EncoderConfig{}), c, RandomSeed{1}),
                  InvalidConfig);
}

TEST_CASE("freshly injected adapters leave outputs bit-identical") {
  auto base = init_pretrained_stub(RandomSeed{8}, tiny_config());
  auto model = lora::inject(base, lora::LoraConfig{}, RandomSeed{9});
  for (const auto& [name, ad] : model.adapters()) {
    for (float v : ad.b.value.data) REQUIRE(v == 0.0f);
    CHECK(ad.a.value.dim(0) == 8);
  }
  Rng rng(RandomSeed{10});
  for (int i = 0; i < 20; ++i) {
    const auto img = random_image(32, rng);
    const auto ref = encode(img, base);
    const auto got = model.encode(img);
    for (std::size_t l = 0; l < ref.size(); ++l) REQUIRE(ref[l].tokens == got[l].tokens);
  }
}

TEST_CASE("adapted_forward examples") {
  Rng rng(RandomSeed{13});
  auto make = [&](std::size_t d, std::size_t k, std::size_t r, float alpha) {
    lora::LoraAdapter ad;
    ad.a = nn::Param<float>(Tensor<float>({r, k}));
    ad.b = nn::Param<float>(Tensor<float>({d, r}));
    ad.rank = r;
    ad.alpha = alpha;
    return ad;
  };
  SUBCASE("zero B is exactly W0 x") {
    Tensor<float> w({3, 4});
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1, 1));
    auto ad = make(3, 4, 2, 4.0f);
    for (auto& v : ad.a.value.data) v = 1.0f;
    const std::vector<float> x{0.5f, -1.0f, 2.0f, 0.25f};
    const auto y = lora::adapted_forward({&w, nullptr, &ad}, x);
    for (std::size_t i = 0; i < 3; ++i) {
      float ref = 0.0f;
      for (std::size_t j = 0; j < 4; ++j) ref += w.data[i * 4 + j] * x[j];
      CHECK(y[i] == doctest::Approx(ref).epsilon(1e-6));
    }
  }
  SUBCASE("rank-1 one-hot factors add x[j] at output i") {
    Tensor<float> w({4, 5});
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1, 1));
    auto ad = make(4, 5, 1, 1.0f);
    ad.a.value.data[3] = 1.0f;  // j = 3
    ad.b.value.data[1] = 1.0f;  // i = 1
    std::vector<float> x{0.1f, 0.2f, 0.3f, 0.7f, -0.4f};
    const auto zero = make(4, 5, 1, 1.0f);
    const auto base = lora::adapted_forward({&w, nullptr, &zero}, x);
    const auto y = lora::adapted_forward({&w, nullptr, &ad}, x);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(base[i] + (i == 1 ? 0.7f : 0.0f)));
  }
  SUBCASE("dense materialization oracle, d = k = 6, r = 2") {
    for (int trial = 0; trial < 10; ++trial) {
      Tensor<float> w({6, 6});
      Tensor<float> bias({6});
      for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1, 1));
      for (auto& v : bias.data) v = static_cast<float>(rng.uniform(-1, 1));
      auto ad = make(6, 6, 2, 3.0f);
      for (auto& v : ad.a.value.data) v = static_cast<float>(rng.uniform(-1, 1));
      for (auto& v : ad.b.value.data) v = static_cast<float>(rng.uniform(-1, 1));
      std::vector<float> x(6);
      for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
      const auto y = lora::adapted_forward({&w, &bias, &ad}, x);
      for (std::size_t i = 0; i < 6; ++i) {
        double ref = bias.data[i];
        for (std::size_t j = 0; j < 6; ++j) {
          double dw = 0.0;
          for (std::size_t r = 0; r < 2; ++r) dw += double(ad.b.value.data[i * 2 + r]) * ad.a.value.data[r * 6 + j];
          ref += (w.data[i * 6 + j] + 1.5 * dw) * x[j];
        }
        CHECK(std::abs(y[i] - ref) < 1e-6 * std::max(1.0, std::abs(ref)));
      }
    }
  }
  SUBCASE("dimension mismatch") {
    Tensor<float> w({6, 6});
    auto ad = make(6, 6, 2, 2.0f);
    CHECK_THROWS_AS(lora::adapted_forward({&w, nullptr, &ad}, std::vector<float>(5)), DimensionMismatch);
  }
}

TEST_CASE("merge matches the adapted forward and consumes the adapters") {
  auto base = init_pretrained_stub(RandomSeed{21}, tiny_config());
  Rng rng(RandomSeed{22});

  auto zero = lora::inject(base, lora::LoraConfig{}, RandomSeed{1});
  CHECK(zero.merge().hash() == base.hash());

  auto model = lora::inject(base, lora::LoraConfig{}, RandomSeed{23});
  randomize_b(model, rng);
  auto adapted = model;
  auto merged = model.merge();
  CHECK(model.merged());
  CHECK(merged.hash() != base.hash());
  for (int i = 0; i < 10; ++i) {
    const auto img = random_image(32, rng);
    CHECK(max_feature_diff(adapted.encode(img), encode(img, merged)) < 1e-5);
  }
  CHECK_THROWS_AS(model.merge(), StateError);
}

TEST_CASE("encoder and adapter checkpoints round-trip") {
  const auto dir = fs::temp_directory_path() / "patchguard_test_encoder";
  fs::create_directories(dir);
  auto base = init_pretrained_stub(RandomSeed{31}, tiny_config());
  save_encoder(base, dir / "enc.pgtw");
  auto back = load_encoder(dir / "enc.pgtw");
  CHECK(back.hash() == base.hash());
  CHECK(back.config.to_json() == base.config.to_json());

  lora::LoraConfig cfg;
  cfg.rank = 4;
  cfg.targets = {lora::TargetKind::Proj};
  auto model = lora::inject(base, cfg, RandomSeed{32});
  Rng rng(RandomSeed{33});
  randomize_b(model, rng);
  lora::save_adapters(model, cfg, dir / "ad.pgtw");
  lora::AdaptedEncoder fresh(back);
  const auto cfg_back = lora::load_adapters(fresh, dir / "ad.pgtw");
  CHECK(cfg_back.rank == 4);
  CHECK(cfg_back.targets == cfg.targets);
  const auto img = random_image(32, rng);
  CHECK(max_feature_diff(model.encode(img), fresh.encode(img)) == 0.0);
}

TEST_CASE("train_adapters keeps the base frozen and lowers the loss") {
  auto base = init_pretrained_stub(RandomSeed{41}, tiny_config());
  const auto base_hash = base.hash();
  lora::LoraConfig cfg;
  cfg.rank = 2;
  cfg.learning_rate = 3e-3f;
  detectors::DetectorConfig dcfg;
  Rng rng(RandomSeed{42});
  std::vector<ImageTensor> inputs;
  for (int i = 0; i < 6; ++i) inputs.push_back(random_image(32, rng));

  SUBCASE("zero epochs is a no-op") {
    cfg.epochs = 0;
    detectors::DetectorHandle det(dcfg, lora::inject(base, cfg, RandomSeed{43}), RandomSeed{44});
    const auto before = det.encoder().adapters().begin()->second.a.value.data;
    const auto r = lora::train_adapters(det, inputs, cfg, RandomSeed{45});
    CHECK(r.report.epoch_loss.empty());
    CHECK(det.encoder().adapters().begin()->second.a.value.data == before);
  }
  SUBCASE("twenty epochs") {
    cfg.epochs = 20;
    detectors::DetectorHandle det(dcfg, lora::inject(base, cfg, RandomSeed{43}), RandomSeed{44});
    const auto r = lora::train_adapters(det, inputs, cfg, RandomSeed{45});
    REQUIRE(r.report.epoch_loss.size() == 20);
    CHECK(r.report.epoch_loss.back() < r.report.epoch_loss.front());
    CHECK(r.frozen_hash == base_hash);
    CHECK(det.encoder().frozen_hash() == base_hash);
    bool moved = false;
    for (const auto& [n, ad] : det.encoder().adapters())
      for (float v : ad.b.value.data) moved = moved || v != 0.0f;
    CHECK(moved);
  }
  SUBCASE("requires adapters and a frozen base") {
    detectors::DetectorHandle plain(dcfg, lora::AdaptedEncoder(base), RandomSeed{44});
    CHECK_THROWS_AS(lora::train_adapters(plain, inputs, cfg, RandomSeed{45}), StateError);
  }
}
