// patchguard command-line front end.
//
// Exit codes: 0 success, 1 domain error (bad data, failed I/O, invalid
// configuration values), 2 usage error (unknown command or flag, malformed
// config file).

#include <iostream>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "options.hpp"
#include "patchguard/core/errors.hpp"

namespace cli = patchguard::cli;

namespace {

constexpr int kDomainError = 1;
constexpr int kUsageError = 2;

void add_model_options(cli::OptionRegistry& reg, CLI::App* sub, cli::ModelArgs& m) {
  reg.add(sub, "manifest", m.manifest, "Dataset manifest (train split is used)")->required();
  reg.add(sub, "patch-size", m.patch_size, "Native patch size = encoder input");
  reg.add(sub, "embed-dim", m.embed_dim, "Encoder width");
  reg.add(sub, "layers", m.layers, "Encoder blocks");
  reg.add(sub, "heads", m.heads, "Attention heads");
  reg.add(sub, "pretrain-steps", m.pretrain_steps, "Warm-start steps for the stub encoder");
  reg.add(sub, "mask-backend", m.mask_backend, "Foreground segmenter")
      ->check(CLI::IsMember({"builtin", "external"}));
  reg.add(sub, "endpoint", m.endpoint, "External segmenter URL");
  reg.flag(sub, "whole-image", m.whole_image, "Resize whole images instead of patching");
  reg.flag(sub, "no-mask", m.no_mask, "Skip foreground masking");
  reg.add(sub, "epochs", m.epochs, "Epochs (0: sample-budget / #inputs)");
  reg.add(sub, "sample-budget", m.sample_budget, "Training samples when --epochs is 0");
  reg.add(sub, "learning-rate", m.learning_rate, "Adam learning rate");
  reg.add(sub, "out", m.out, "Output detector directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patchguard: foreground-aware anomaly segmentation for surgical instruments"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "JSON config; keys are flag names (explicit flags take precedence)");
  app.config_formatter(std::make_shared<cli::JsonConfig>(&app));

  cli::OptionRegistry reg;
  cli::Global g;
  reg.add(&app, "seed", g.seed, "Random seed");
  reg.add(&app, "jobs", g.jobs, "Worker threads for scoring")->check(CLI::PositiveNumber);
  reg.add(&app, "device", g.device, "Compute device (recorded; CPU only)");
  reg.add(&app, "log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  cli::SynthgenArgs syn;
  auto* synthgen = app.add_subcommand("synthgen", "Generate a synthetic instrument corpus");
  reg.add(synthgen, "normal", syn.normal, "Normal images");
  reg.add(synthgen, "defective", syn.defective, "Defective images");
  reg.add(synthgen, "background", syn.background, "textured|plain")->check(CLI::IsMember({"textured", "plain"}));
  reg.add(synthgen, "image-size", syn.image_size, "Square image side in pixels");
  reg.add(synthgen, "texture-scale", syn.texture_scale, "Background texture frequency multiplier");
  reg.add(synthgen, "out", syn.out, "Corpus directory")->required();

  cli::SegmentArgs segargs;
  auto* segment = app.add_subcommand("segment", "Predict a foreground mask for one image");
  reg.add(segment, "input", segargs.input, "Input image")->required();
  reg.add(segment, "backend", segargs.backend, "builtin|external")->check(CLI::IsMember({"builtin", "external"}));
  reg.add(segment, "endpoint", segargs.endpoint, "External segmenter URL");
  reg.add(segment, "downsize-width", segargs.downsize_width, "Width the image is reduced to before segmenting");
  reg.add(segment, "timeout", segargs.timeout, "External request timeout in seconds");
  reg.add(segment, "out", segargs.out, "Output mask PNG")->required();

  cli::TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a detector on the normal train split");
  reg.add(train, "kind", tr.kind, "feature|reconstruction")->check(CLI::IsMember({"feature", "reconstruction"}));
  reg.flag(train, "finetune", tr.finetune, "Unfreeze the whole encoder");
  add_model_options(reg, train, tr.model);

  cli::AdaptArgs ad;
  auto* adapt = app.add_subcommand("adapt", "Train LoRA adapters jointly with a detector head");
  reg.add(adapt, "detector", ad.detector, "Detector kind, or a trained detector directory to start from");
  reg.add(adapt, "rank", ad.rank, "Adapter rank");
  reg.add(adapt, "alpha", ad.alpha, "Adapter scale numerator (scale = alpha / rank)");
  reg.add(adapt, "targets", ad.targets, "Comma-separated projections: qkv,proj");
  add_model_options(reg, adapt, ad.model);

  cli::InferArgs inf;
  auto* infer = app.add_subcommand("infer", "Score manifest images; writes .smap, heatmap and overlay PNGs");
  reg.add(infer, "manifest", inf.manifest, "Dataset manifest")->required();
  reg.add(infer, "detector", inf.detector, "Trained detector directory")->required();
  reg.add(infer, "mask-backend", inf.mask_backend, "builtin|external")->check(CLI::IsMember({"builtin", "external"}));
  reg.add(infer, "endpoint", inf.endpoint, "External segmenter URL");
  reg.add(infer, "patch-size", inf.patch_size, "Must match the detector input (0: take it from the detector)");
  reg.add(infer, "threshold", inf.threshold, "Overlay/binarization threshold (0: continuous heat overlay)");
  reg.flag(infer, "binarize", inf.binarize, "Also write <id>_mask.png with pixels >= threshold");
  reg.flag(infer, "whole-image", inf.whole_image, "Score whole resized images instead of patches");
  reg.flag(infer, "no-mask", inf.no_mask, "Skip foreground masking");
  reg.add(infer, "splits", inf.splits, "Comma-separated splits to score, or all");
  reg.add(infer, "out", inf.out, "Prediction directory")->required();

  cli::EvalArgs ev;
  auto* evalc = app.add_subcommand("eval", "Pixel AUROC and best F1 of predictions against ground truth");
  reg.add(evalc, "manifest", ev.manifest, "Dataset manifest")->required();
  reg.add(evalc, "pred-dir", ev.pred_dir, "Directory written by infer")->required();
  reg.add(evalc, "out", ev.out, "Report JSON")->required();

  cli::AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "Run the ablation arms on a corpus");
  reg.add(ablate, "corpus", ab.corpus, "Corpus directory or manifest")->required();
  reg.add(ablate, "arms", ab.arms, "all, or a comma list of baseline,finetune,+mask,+mask+patch,full");
  reg.add(ablate, "kind", ab.kind, "feature|reconstruction")->check(CLI::IsMember({"feature", "reconstruction"}));
  reg.add(ablate, "pretrain-steps", ab.pretrain_steps, "Warm-start steps for the stub encoder");
  reg.add(ablate, "sample-budget", ab.sample_budget, "Training samples per arm");
  reg.add(ablate, "settings", ab.settings, "JSON file with further ablation settings");
  reg.add(ablate, "mask-backend", ab.mask_backend, "builtin|external")->check(CLI::IsMember({"builtin", "external"}));
  reg.add(ablate, "endpoint", ab.endpoint, "External segmenter URL");
  reg.add(ablate, "out", ab.out, "Table JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  auto logger = spdlog::stderr_color_mt("patchguard");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  if (g.device != "cpu") spdlog::warn("--device {} requested; running on the CPU", g.device);

  CLI::App* sub = app.get_subcommands().front();
  try {
    std::filesystem::path produced;
    std::filesystem::path config_path;
    const std::string name = sub->get_name();
    // run_config.json lands in the output directory; a single-file output
    // gets <file>.run_config.json beside it so commands sharing a directory
    // do not overwrite each other's record.
    auto in_dir = [](const std::string& dir) { return std::filesystem::path(dir) / "run_config.json"; };
    auto beside = [](const std::string& file) { return std::filesystem::path(file + ".run_config.json"); };
    if (name == "synthgen") {
      produced = cli::run_synthgen(g, syn);
      config_path = in_dir(syn.out);
    } else if (name == "segment") {
      produced = cli::run_segment(g, segargs);
      config_path = beside(segargs.out);
    } else if (name == "train") {
      produced = cli::run_train(g, tr);
      config_path = in_dir(tr.model.out);
    } else if (name == "adapt") {
      produced = cli::run_adapt(g, ad);
      config_path = in_dir(ad.model.out);
    } else if (name == "infer") {
      produced = cli::run_infer(g, inf);
      config_path = in_dir(inf.out);
    } else if (name == "eval") {
      produced = cli::run_eval(g, ev);
      config_path = beside(ev.out);
    } else {
      produced = cli::run_ablate(g, ab);
      config_path = beside(ab.out);
    }
    cli::write_run_config(reg.resolved(&app, sub), config_path);

    std::ostringstream hash;
    hash << std::hex << cli::hash_outputs(produced);
    std::cout << nlohmann::json{{"command", name}, {"output", produced.string()}, {"output_hash", hash.str()}}.dump()
              << "\n";
  } catch (const patchguard::Error& e) {
    spdlog::error("{}", e.what());
    return kDomainError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDomainError;
  }
  return 0;
}
