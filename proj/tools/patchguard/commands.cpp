#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include <spdlog/spdlog.h>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/io.hpp"
#include "patchguard/core/manifest.hpp"
#include "patchguard/core/random.hpp"
#include "patchguard/core/resize.hpp"
#include "patchguard/core/tensor_file.hpp"
#include "patchguard/detectors/detectors.hpp"
#include "patchguard/encoder/encoder.hpp"
#include "patchguard/eval/ablation.hpp"
#include "patchguard/eval/evaluate.hpp"
#include "patchguard/lora/lora.hpp"
#include "patchguard/lora/train.hpp"
#include "patchguard/masking/masking.hpp"
#include "patchguard/patching/patching.hpp"
#include "patchguard/synthgen/synthgen.hpp"

namespace patchguard::cli {

namespace fs = std::filesystem;

namespace {

// Seed streams; the ablation runner derives its arms the same way, so a
// train/adapt run reproduces the matching ablation arm.
constexpr std::uint64_t kTrainStream = 0x41524D;
constexpr std::uint64_t kHeadStream = 0x48454144;
constexpr std::uint64_t kLoraStream = 0x4C4F;
constexpr std::uint64_t kPretrainStream = 0x5054;

void write_json(const nlohmann::json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

masking::SegmenterConfig segmenter(const std::string& backend, const std::string& endpoint) {
  masking::SegmenterConfig cfg;
  cfg.backend = masking::parse_backend(backend);
  cfg.external_endpoint = endpoint;
  cfg.validate();
  return cfg;
}

encoder::EncoderConfig encoder_config(const ModelArgs& m) {
  encoder::EncoderConfig cfg;
  cfg.input_size = m.patch_size;
  cfg.embed_dim = m.embed_dim;
  cfg.layers = m.layers;
  cfg.heads = m.heads;
  cfg.validate();
  return cfg;
}

std::optional<fs::path> cache_dir() {
  const char* env = std::getenv("PATCHGUARD_CACHE");
  if (!env || !*env) return std::nullopt;
  return fs::path(env);
}

/// Stub encoder warm-started on the train split, reused from
/// $PATCHGUARD_CACHE when an identical run already produced it.
encoder::EncoderWeights base_encoder(const DatasetManifest& manifest, const encoder::EncoderConfig& ecfg,
                                     std::size_t steps, RandomSeed seed) {
  std::vector<ImageTensor> imgs;
  std::uint64_t key = fnv1a(&seed.value, sizeof(seed.value));
  const std::string cfg_text = ecfg.to_json().dump() + "/" + std::to_string(steps);
  key = fnv1a(cfg_text.data(), cfg_text.size(), key);
  if (steps > 0) {
    for (const auto& e : manifest.select(Split::Train)) {
      auto img = load_image(manifest.resolve(e.image_path));
      key = fnv1a(img.data().data(), img.data().size() * sizeof(float), key);
      imgs.push_back(resize_bilinear(img, ecfg.input_size, ecfg.input_size));
    }
  }

  std::optional<fs::path> cached;
  if (auto dir = cache_dir()) {
    std::ostringstream name;
    name << "encoder_" << std::hex << key << ".pgtw";
    cached = *dir / name.str();
    if (fs::exists(*cached)) {
      spdlog::info("using cached encoder {}", cached->string());
      return encoder::load_encoder(*cached);
    }
  }

  auto base = encoder::init_pretrained_stub(seed, ecfg);
  if (steps > 0) {
    spdlog::info("pretraining encoder on {} images for {} steps", imgs.size(), steps);
    encoder::pretrain_reconstruction(base, imgs, steps, 1e-3f, RandomSeed{mix_seed(seed.value, kPretrainStream)});
  }
  if (cached) {
    fs::create_directories(cached->parent_path());
    encoder::save_encoder(base, *cached);
  }
  return base;
}

patching::ScoringMode scoring_mode(bool whole_image, bool no_mask) { return {!no_mask, !whole_image}; }

std::vector<ImageTensor> training_set(const DatasetManifest& manifest, const ModelArgs& m) {
  auto inputs = patching::prepare_training_patches(manifest, scoring_mode(m.whole_image, m.no_mask),
                                                   segmenter(m.mask_backend, m.endpoint), m.patch_size);
  if (inputs.empty()) throw InvalidConfig("no training inputs in " + m.manifest);
  return inputs;
}

std::size_t epochs_for(const ModelArgs& m, std::size_t inputs) {
  if (m.epochs > 0) return m.epochs;
  const double e = static_cast<double>(m.sample_budget) / static_cast<double>(inputs);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(e)));
}

void write_training_summary(const fs::path& dir, const detectors::DetectorHandle& det, std::size_t inputs,
                            std::size_t epochs, const std::vector<float>& losses) {
  write_json({{"training_inputs", inputs},
              {"epochs", epochs},
              {"trainable_parameters", det.encoder().trainable_parameter_count()},
              {"loss_curve", losses}},
             dir / "train_report.json");
}

ImageTensor overlay(const ImageTensor& img, const ScoreMap& map, double threshold) {
  const ImageTensor rgb = to_rgb(img);
  float peak = 0.0f;
  for (float v : map.data()) peak = std::max(peak, v);
  ImageTensor out = rgb;
  for (std::size_t y = 0; y < rgb.height(); ++y)
    for (std::size_t x = 0; x < rgb.width(); ++x) {
      const float s = map.at(y, x);
      float a = 0.0f;
      if (threshold > 0.0)
        a = s >= threshold ? 0.55f : 0.0f;
      else if (peak > 0.0f)
        a = 0.55f * s / peak;
      out.at(y, x, 0) = (1.0f - a) * rgb.at(y, x, 0) + a;
      out.at(y, x, 1) = (1.0f - a) * rgb.at(y, x, 1);
      out.at(y, x, 2) = (1.0f - a) * rgb.at(y, x, 2);
    }
  return out;
}

std::vector<Split> parse_splits(const std::string& s) {
  std::vector<Split> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "all") return {Split::Train, Split::Val, Split::Test};
    out.push_back(parse_split(tok));
  }
  if (out.empty()) throw InvalidConfig("no splits selected");
  return out;
}

std::set<lora::TargetKind> parse_targets(const std::string& s) {
  std::set<lora::TargetKind> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.insert(lora::parse_target(tok));
  return out;
}

}  // namespace

fs::path run_synthgen(const Global& g, const SynthgenArgs& a) {
  synthgen::SceneSpec spec;
  spec.image_size = a.image_size;
  spec.background = synthgen::parse_background(a.background);
  spec.texture_scale = a.texture_scale;
  auto manifest = synthgen::generate_corpus(a.normal, a.defective, spec, a.out, RandomSeed{g.seed});
  spdlog::info("wrote {} images and {}", manifest.entries.size(), (fs::path(a.out) / "manifest.json").string());
  return a.out;
}

fs::path run_segment(const Global&, const SegmentArgs& a) {
  auto cfg = segmenter(a.backend, a.endpoint);
  cfg.downsize_width = a.downsize_width;
  cfg.timeout_seconds = a.timeout;
  cfg.validate();
  const auto img = load_image(a.input);
  const auto mask = masking::segment(img, cfg);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_mask(mask, a.out);
  spdlog::info("foreground {} of {} pixels", mask.count(), mask.pixels());
  return a.out;
}

fs::path run_train(const Global& g, const TrainArgs& a) {
  const auto manifest = load_manifest(a.model.manifest);
  const auto ecfg = encoder_config(a.model);
  const RandomSeed seed{g.seed};
  auto base = base_encoder(manifest, ecfg, a.model.pretrain_steps, seed);
  const auto inputs = training_set(manifest, a.model);

  detectors::DetectorConfig dcfg;
  dcfg.kind = detectors::parse_kind(a.kind);
  dcfg.train.epochs = epochs_for(a.model, inputs.size());
  dcfg.train.learning_rate = static_cast<float>(a.model.learning_rate);
  dcfg.train.seed = RandomSeed{mix_seed(g.seed, kTrainStream)};
  lora::AdaptedEncoder enc(std::move(base));
  if (a.finetune) enc.unfreeze_base();
  detectors::DetectorHandle det(dcfg, std::move(enc), RandomSeed{mix_seed(g.seed, kHeadStream)});
  spdlog::info("training {} detector on {} inputs for {} epochs", a.kind, inputs.size(), dcfg.train.epochs);
  const auto report = detectors::train_detector(det, inputs);
  if (!report.epoch_loss.empty()) spdlog::info("final loss {}", report.epoch_loss.back());

  detectors::save_detector(det, a.model.out);
  write_training_summary(a.model.out, det, inputs.size(), dcfg.train.epochs, report.epoch_loss);
  return a.model.out;
}

fs::path run_adapt(const Global& g, const AdaptArgs& a) {
  const auto manifest = load_manifest(a.model.manifest);
  const RandomSeed seed{g.seed};

  // Either start from a trained detector (its base encoder and head) or
  // build a fresh one of the named kind.
  std::optional<detectors::DetectorHandle> init;
  detectors::DetectorConfig dcfg;
  encoder::EncoderWeights base;
  if (fs::is_directory(a.detector)) {
    init = detectors::load_detector(a.detector);
    if (init->encoder().has_adapters()) throw StateError("detector " + a.detector + " already carries adapters");
    if (init->patch_size() != a.model.patch_size)
      throw InvalidConfig("--patch-size " + std::to_string(a.model.patch_size) + " does not match detector input " +
                          std::to_string(init->patch_size()));
    dcfg = init->config();
    base = init->encoder().base();
  } else {
    dcfg.kind = detectors::parse_kind(a.detector);
    base = base_encoder(manifest, encoder_config(a.model), a.model.pretrain_steps, seed);
  }
  const auto inputs = training_set(manifest, a.model);

  lora::LoraConfig lcfg;
  lcfg.rank = a.rank;
  lcfg.alpha = static_cast<float>(a.alpha);
  lcfg.targets = parse_targets(a.targets);
  lcfg.epochs = epochs_for(a.model, inputs.size());
  lcfg.learning_rate = static_cast<float>(a.model.learning_rate);
  lcfg.validate();
  dcfg.train.epochs = lcfg.epochs;
  dcfg.train.learning_rate = lcfg.learning_rate;
  dcfg.train.seed = RandomSeed{mix_seed(g.seed, kTrainStream)};

  detectors::DetectorHandle det(dcfg, lora::inject(std::move(base), lcfg, RandomSeed{mix_seed(g.seed, kLoraStream)}),
                                RandomSeed{mix_seed(g.seed, kHeadStream)});
  if (init) det.head() = init->head();
  spdlog::info("adapting {} detector: {} trainable adapter parameters, {} inputs, {} epochs",
               detectors::to_string(dcfg.kind), det.encoder().trainable_parameter_count(), inputs.size(), lcfg.epochs);
  const auto result = lora::train_adapters(det, inputs, lcfg, dcfg.train.seed);
  if (!result.report.epoch_loss.empty()) spdlog::info("final loss {}", result.report.epoch_loss.back());

  detectors::save_detector(det, a.model.out);
  write_training_summary(a.model.out, det, inputs.size(), lcfg.epochs, result.report.epoch_loss);
  return a.model.out;
}

fs::path run_infer(const Global& g, const InferArgs& a) {
  const auto manifest = load_manifest(a.manifest);
  const auto det = detectors::load_detector(a.detector);
  if (!det.trained()) throw StateError("detector " + a.detector + " is untrained");
  if (a.patch_size != 0 && a.patch_size != det.patch_size())
    throw InvalidConfig("--patch-size " + std::to_string(a.patch_size) + " does not match detector input " +
                        std::to_string(det.patch_size()));
  if (a.threshold < 0.0) throw InvalidConfig("--threshold must be nonnegative");
  const auto seg = segmenter(a.mask_backend, a.endpoint);
  const auto mode = scoring_mode(a.whole_image, a.no_mask);
  patching::PipelineOptions opts;
  opts.jobs = g.jobs;

  fs::create_directories(a.out);
  std::size_t n = 0;
  for (Split split : parse_splits(a.splits)) {
    for (const auto& e : manifest.select(split)) {
      const auto img = load_image(manifest.resolve(e.image_path));
      std::optional<BinaryMask> mask;
      if (mode.use_mask) mask = masking::segment(img, seg);
      const auto map = patching::score_image(img, mask ? &*mask : nullptr, det, mode, opts);

      const auto smap = eval::prediction_path(a.out, e);
      save_scoremap(map, smap);
      const auto stem = smap.stem().string();
      save_image(overlay(img, map, a.threshold), fs::path(a.out) / (stem + "_overlay.png"));
      if (a.binarize) {
        // Thresholded binary prediction, background forced to 0.
        BinaryMask pred(map.height(), map.width());
        for (std::size_t y = 0; y < map.height(); ++y)
          for (std::size_t x = 0; x < map.width(); ++x)
            pred.set(y, x, map.at(y, x) >= a.threshold && map.at(y, x) > 0.0f);
        save_mask(pred, fs::path(a.out) / (stem + "_mask.png"));
      }
      ++n;
      spdlog::debug("scored {}", e.image_path);
    }
  }
  spdlog::info("wrote {} score maps to {}", n, a.out);
  return a.out;
}

fs::path run_eval(const Global&, const EvalArgs& a) {
  const auto manifest = load_manifest(a.manifest);
  const auto result = eval::evaluate_predictions(manifest, a.pred_dir);
  write_json(result.to_json(), a.out);
  spdlog::info("P-AUROC {:.4f}, best F1 {:.4f} at {:.4g} ({} split)", result.p_auroc, result.best_f1,
               result.best_threshold, result.threshold_split);
  return a.out;
}

fs::path run_ablate(const Global& g, const AblateArgs& a) {
  const fs::path manifest_path =
      fs::is_directory(a.corpus) ? fs::path(a.corpus) / "manifest.json" : fs::path(a.corpus);
  const auto manifest = load_manifest(manifest_path);

  eval::AblationConfig cfg;
  if (!a.settings.empty()) {
    std::ifstream in(a.settings);
    if (!in) throw IoError("cannot read " + a.settings);
    try {
      cfg = eval::AblationConfig::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(a.settings + ": " + e.what());
    }
  }
  cfg.detector.kind = detectors::parse_kind(a.kind);
  cfg.pretrain_steps = a.pretrain_steps;
  cfg.sample_budget = a.sample_budget;
  cfg.segmenter = segmenter(a.mask_backend, a.endpoint);
  cfg.jobs = g.jobs;
  cfg.seed = RandomSeed{g.seed};

  const auto report =
      eval::run_ablation(manifest, eval::parse_arms(a.arms), cfg, [](const std::string& msg) { spdlog::info(msg); });
  auto j = report.to_json(false);
  std::ostringstream h;
  h << std::hex << report.hash();
  j["report_hash"] = h.str();
  j["config"] = cfg.to_json();
  write_json(j, a.out);
  for (const auto& row : report.rows)
    spdlog::info("{:<12} P-AUROC {:.4f}  ({:.0f} s)", eval::to_string(row.arm), row.eval.p_auroc, row.seconds);
  return a.out;
}

}  // namespace patchguard::cli
