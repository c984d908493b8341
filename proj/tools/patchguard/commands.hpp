#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace patchguard::cli {

struct Global {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string device = "cpu";  // recorded only; everything runs on the CPU
  std::string log_level = "info";
};

struct SynthgenArgs {
  std::size_t normal = 40;
  std::size_t defective = 12;
  std::string background = "textured";
  std::size_t image_size = 768;
  double texture_scale = 1.0;
  std::string out;
};

struct SegmentArgs {
  std::string input;
  std::string backend = "builtin";
  std::string endpoint;
  std::size_t downsize_width = 512;
  double timeout = 30.0;
  std::string out;
};

/// Encoder, masking and budget settings shared by train and adapt.
struct ModelArgs {
  std::string manifest;
  std::size_t patch_size = 256;
  std::size_t embed_dim = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t pretrain_steps = 300;
  std::string mask_backend = "builtin";
  std::string endpoint;
  bool whole_image = false;
  bool no_mask = false;
  std::size_t epochs = 0;  // 0: derived from sample_budget
  std::size_t sample_budget = 1500;
  double learning_rate = 1e-3;
  std::string out;
};

struct TrainArgs {
  ModelArgs model;
  std::string kind = "feature";
  bool finetune = false;
};

struct AdaptArgs {
  ModelArgs model;
  std::string detector = "feature";  // a kind, or a trained detector directory
  std::size_t rank = 8;
  double alpha = 16.0;
  std::string targets = "qkv,proj";
};

struct InferArgs {
  std::string manifest;
  std::string detector;
  std::string mask_backend = "builtin";
  std::string endpoint;
  std::size_t patch_size = 0;  // 0: the detector's own
  double threshold = 0.0;
  bool binarize = false;
  bool whole_image = false;
  bool no_mask = false;
  std::string splits = "val,test";
  std::string out;
};

struct EvalArgs {
  std::string manifest;
  std::string pred_dir;
  std::string out;
};

struct AblateArgs {
  std::string corpus;
  std::string arms = "all";
  std::string kind = "feature";
  std::size_t pretrain_steps = 300;
  std::size_t sample_budget = 1500;
  std::string settings;  // optional JSON with further ablation settings
  std::string mask_backend = "builtin";
  std::string endpoint;
  std::string out;
};

// Each returns the path holding the command's outputs.
std::filesystem::path run_synthgen(const Global& g, const SynthgenArgs& a);
std::filesystem::path run_segment(const Global& g, const SegmentArgs& a);
std::filesystem::path run_train(const Global& g, const TrainArgs& a);
std::filesystem::path run_adapt(const Global& g, const AdaptArgs& a);
std::filesystem::path run_infer(const Global& g, const InferArgs& a);
std::filesystem::path run_eval(const Global& g, const EvalArgs& a);
std::filesystem::path run_ablate(const Global& g, const AblateArgs& a);

}  // namespace patchguard::cli
