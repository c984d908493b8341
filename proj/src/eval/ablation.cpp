#include "patchguard/eval/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/io.hpp"
#include "patchguard/core/resize.hpp"
#include "patchguard/core/tensor_file.hpp"
#include "patchguard/lora/train.hpp"
#include "patchguard/patching/patching.hpp"

namespace patchguard::eval {

Arm parse_arm(const std::string& s) {
  if (s == "baseline") return Arm::Baseline;
  if (s == "finetune") return Arm::Finetune;
  if (s == "+mask" || s == "mask") return Arm::Mask;
  if (s == "+mask+patch" || s == "mask+patch") return Arm::MaskPatch;
  if (s == "full") return Arm::Full;
  throw InvalidConfig("unknown ablation arm '" + s + "'");
}

std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::Baseline: return "baseline";
    case Arm::Finetune: return "finetune";
    case Arm::Mask: return "+mask";
    case Arm::MaskPatch: return "+mask+patch";
    case Arm::Full: return "full";
  }
  return "?";
}

std::set<Arm> parse_arms(const std::string& s) {
  if (s == "all") return {Arm::Baseline, Arm::Finetune, Arm::Mask, Arm::MaskPatch, Arm::Full};
  std::set<Arm> arms;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) arms.insert(parse_arm(item));
  if (arms.empty()) throw InvalidConfig("no ablation arms selected");
  return arms;
}

nlohmann::json AblationConfig::to_json() const {
  return {{"detector", detector.to_json()},   {"encoder", encoder.to_json()},
          {"lora", lora.to_json()},           {"segmenter", segmenter.to_json()},
          {"pretrain_steps", pretrain_steps}, {"sample_budget", sample_budget},
          {"seed", seed.value}};
}

AblationConfig AblationConfig::from_json(const nlohmann::json& j) {
  AblationConfig c;
  if (j.contains("detector")) c.detector = detectors::DetectorConfig::from_json(j["detector"]);
  if (j.contains("encoder")) c.encoder = encoder::EncoderConfig::from_json(j["encoder"]);
  if (j.contains("lora")) c.lora = lora::LoraConfig::from_json(j["lora"]);
  if (j.contains("segmenter")) c.segmenter = masking::SegmenterConfig::from_json(j["segmenter"]);
  c.pretrain_steps = j.value("pretrain_steps", c.pretrain_steps);
  c.sample_budget = j.value("sample_budget", c.sample_budget);
  c.seed.value = j.value("seed", c.seed.value);
  return c;
}

const ArmResult& AblationReport::row(Arm arm) const {
  for (const auto& r : rows)
    if (r.arm == arm) return r;
  throw InvalidConfig("arm " + to_string(arm) + " not in report");
}

nlohmann::json AblationReport::to_json(bool timings) const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"arm", to_string(r.arm)},
                        {"p_auroc", r.eval.p_auroc},
                        {"best_f1", r.eval.best_f1},
                        {"best_threshold", r.eval.best_threshold},
                        {"foreground_auroc", r.eval.foreground_auroc ? nlohmann::json(*r.eval.foreground_auroc)
                                                                     : nlohmann::json(nullptr)},
                        {"loss_curve", r.loss_curve},
                        {"training_inputs", r.training_inputs},
                        {"epochs", r.epochs},
                        {"trainable_parameters", r.trainable_parameters},
                        {"score_hash", r.score_hash}};
    if (timings) j["seconds"] = r.seconds;
    arr.push_back(std::move(j));
  }
  return {{"rows", arr}};
}

std::uint64_t AblationReport::hash() const {
  const std::string s = to_json(false).dump();
  return fnv1a(s.data(), s.size());
}

namespace {

struct Sample {
  std::string id;
  ImageTensor image;
  BinaryMask gt;
  std::optional<BinaryMask> foreground_gt;
  std::optional<BinaryMask> predicted_mask;  // filled lazily
};

struct Corpus {
  std::vector<Sample> train, val, test;
};

Corpus load_corpus(const DatasetManifest& m) {
  m.validate();
  Corpus c;
  auto load = [&](Split split, std::vector<Sample>& out) {
    for (const auto& e : m.select(split)) {
      Sample s;
      s.id = std::filesystem::path(e.image_path).stem().string();
      s.image = load_image(m.resolve(e.image_path));
      if (split != Split::Train) s.gt = load_ground_truth(m, e, s.image.height(), s.image.width());
      const auto fg = m.resolve("masks/" + s.id + "_fg.png");
      if (std::filesystem::exists(fg)) s.foreground_gt = load_mask(fg);
      out.push_back(std::move(s));
    }
  };
  load(Split::Train, c.train);
  load(Split::Val, c.val);
  load(Split::Test, c.test);
  if (c.train.empty()) throw InvalidConfig("corpus has no training images");
  if (c.test.empty()) throw InvalidConfig("corpus has no test images");
  return c;
}

patching::ScoringMode mode_of(Arm arm) {
  switch (arm) {
    case Arm::Baseline:
    case Arm::Finetune: return {false, false};
    case Arm::Mask: return {true, false};
    case Arm::MaskPatch:
    case Arm::Full: return {true, true};
  }
  return {};
}

void ensure_masks(std::vector<Sample>& samples, const masking::SegmenterConfig& seg) {
  for (auto& s : samples)
    if (!s.predicted_mask) s.predicted_mask = masking::segment(s.image, seg);
}

}  // namespace

AblationReport run_ablation(const DatasetManifest& corpus, const std::set<Arm>& arms, const AblationConfig& cfg,
                            const ProgressFn& progress) {
  if (arms.empty()) throw InvalidConfig("no ablation arms selected");
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  Corpus data = load_corpus(corpus);
  say("loaded " + std::to_string(data.train.size()) + " train, " + std::to_string(data.val.size()) + " val, " +
      std::to_string(data.test.size()) + " test images");

  encoder::EncoderWeights base = encoder::init_pretrained_stub(cfg.seed, cfg.encoder);
  if (cfg.pretrain_steps > 0) {
    std::vector<ImageTensor> imgs;
    for (const auto& s : data.train) imgs.push_back(resize_bilinear(s.image, cfg.encoder.input_size, cfg.encoder.input_size));
    encoder::pretrain_reconstruction(base, imgs, cfg.pretrain_steps, 1e-3f, RandomSeed{mix_seed(cfg.seed.value, 0x5054)});
    say("pretrained stub encoder for " + std::to_string(cfg.pretrain_steps) + " steps");
  }

  AblationReport report;
  for (Arm arm : arms) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto mode = mode_of(arm);
    if (mode.use_mask) {
      ensure_masks(data.train, cfg.segmenter);
      ensure_masks(data.val, cfg.segmenter);
      ensure_masks(data.test, cfg.segmenter);
    }

    std::vector<ImageTensor> inputs;
    for (const auto& s : data.train) {
      for (auto& p : patching::training_inputs(s.image, s.predicted_mask ? &*s.predicted_mask : nullptr,
                                               cfg.encoder.input_size, mode))
        inputs.push_back(std::move(p));
    }

    ArmResult row;
    row.arm = arm;
    row.training_inputs = inputs.size();
    row.epochs = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(static_cast<double>(cfg.sample_budget) / static_cast<double>(inputs.size()))));

    detectors::DetectorConfig dcfg = cfg.detector;
    dcfg.train.epochs = row.epochs;
    dcfg.train.seed = RandomSeed{mix_seed(cfg.seed.value, 0x41524D)};
    const RandomSeed head_seed{mix_seed(cfg.seed.value, 0x48454144)};
    std::optional<detectors::DetectorHandle> det;
    if (arm == Arm::Full) {
      lora::LoraConfig lcfg = cfg.lora;
      lcfg.epochs = row.epochs;
      lcfg.learning_rate = dcfg.train.learning_rate;
      det.emplace(dcfg, lora::inject(base, lcfg, RandomSeed{mix_seed(cfg.seed.value, 0x4C4F)}), head_seed);
      row.trainable_parameters = det->encoder().trainable_parameter_count();
      row.loss_curve = lora::train_adapters(*det, inputs, lcfg, dcfg.train.seed).report.epoch_loss;
    } else {
      lora::AdaptedEncoder enc(base);
      if (arm == Arm::Finetune) enc.unfreeze_base();
      det.emplace(dcfg, std::move(enc), head_seed);
      row.trainable_parameters = det->encoder().trainable_parameter_count();
      row.loss_curve = detectors::train_detector(*det, inputs).epoch_loss;
    }
    say(to_string(arm) + ": trained on " + std::to_string(inputs.size()) + " inputs for " + std::to_string(row.epochs) +
        " epochs, final loss " + (row.loss_curve.empty() ? "n/a" : std::to_string(row.loss_curve.back())));

    patching::PipelineOptions opts;
    opts.jobs = cfg.jobs;
    std::uint64_t h = kFnvOffset;
    auto score = [&](std::vector<Sample>& samples) {
      std::vector<ScoredImage> out;
      for (auto& s : samples) {
        ScoredImage si;
        si.id = s.id;
        si.map = patching::score_image(s.image, s.predicted_mask ? &*s.predicted_mask : nullptr, *det, mode, opts);
        si.gt = s.gt;
        si.foreground = s.foreground_gt;
        h = fnv1a(si.map.data().data(), si.map.pixels() * sizeof(float), h);
        out.push_back(std::move(si));
      }
      return out;
    };
    const auto val = score(data.val);
    const auto test = score(data.test);
    row.eval = evaluate(val, test);
    row.score_hash = h;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    say(to_string(arm) + ": P-AUROC " + std::to_string(row.eval.p_auroc) + " (" + std::to_string(row.seconds) + " s)");
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace patchguard::eval
