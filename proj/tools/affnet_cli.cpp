// Command-line front end: composite generation, synthetic data, training,
// person-independent and cross-dataset evaluation, parameter audit, and
// activation export.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "affnet/ami.hpp"
#include "affnet/checkpoint.hpp"
#include "affnet/dataset.hpp"
#include "affnet/network.hpp"
#include "affnet/synthetic.hpp"
#include "affnet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string variant = "affectivenet";
  int input_size = 112;
  int class_count = 4;
  int depth_divisor = 1;
  int epochs = 50;
  int batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string weight_rule = "suffix_sum";
  std::string augment = "full";
  int threads = 0;
};

void add_network_flags(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--variant", opt.variant,
                  "affectivenet|ks1|ks2|lfc|womfl|all3x3|all1x1");
  cmd->add_option("--input-size", opt.input_size, "square input edge");
  cmd->add_option("--classes", opt.class_count, "number of classes");
  cmd->add_option("--depth-div", opt.depth_divisor,
                  "divide every feature depth (keeps topology)");
  cmd->add_option("--seed", opt.seed, "master random seed");
}

void add_train_flags(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--epochs", opt.epochs, "training epochs");
  cmd->add_option("--batch", opt.batch, "batch size (>= 2)");
  cmd->add_option("--lr", opt.lr, "SGD learning rate");
  cmd->add_option("--weight-rule", opt.weight_rule, "suffix_sum|literal");
  cmd->add_option("--augment", opt.augment, "none|flip|full");
  cmd->add_option("--threads", opt.threads,
                  "parallel folds (0: AFFNET_THREADS or hardware)");
}

affnet::NetworkSpec spec_from(const CommonOptions& opt) {
  affnet::NetworkSpec spec =
      affnet::make_spec(affnet::parse_variant(opt.variant));
  spec.input_height = opt.input_size;
  spec.input_width = opt.input_size;
  spec.class_count = opt.class_count;
  spec.depth_divisor = opt.depth_divisor;
  spec.seed = opt.seed;
  return spec;
}

affnet::eval::TrainConfig train_config_from(const CommonOptions& opt) {
  affnet::eval::TrainConfig config;
  config.epochs = opt.epochs;
  config.batch_size = opt.batch;
  config.learning_rate = opt.lr;
  config.seed = opt.seed;
  config.augment = affnet::eval::parse_augment_mode(opt.augment);
  config.weight_rule = affnet::ami::parse_weight_rule(opt.weight_rule);
  config.max_threads = opt.threads;
  return config;
}

// Every run leaves its fully resolved configuration next to its outputs.
void write_config(const fs::path& out_dir, const std::string& command,
                  const json& extra, const CommonOptions& opt) {
  fs::create_directories(out_dir);
  json config;
  config["command"] = command;
  config["network"] = spec_from(opt);
  config["training"] = train_config_from(opt);
  for (auto it = extra.begin(); it != extra.end(); ++it)
    config[it.key()] = it.value();
  const std::string text = config.dump(2) + "\n";
  affnet::img::write_file_atomic(out_dir / "config.json", text.data(),
                                 text.size());
}

void write_loss_csv(const fs::path& out_dir,
                    const std::vector<std::vector<double>>& curves) {
  const std::string text = affnet::eval::loss_curve_csv(curves);
  affnet::img::write_file_atomic(out_dir / "loss.csv", text.data(),
                                 text.size());
}

int run_ami(const std::string& clip, const std::string& out,
            const std::string& rule_name, bool skip_png) {
  affnet::ami::WeightRule rule = affnet::ami::parse_weight_rule(rule_name);
  affnet::ami::FrameSequence seq = affnet::ami::load_frame_sequence(clip);
  affnet::ami::AffectiveImage image = affnet::ami::compose(seq, rule);

  fs::path ami_path(out);
  if (ami_path.extension() != ".ami1") ami_path += ".ami1";
  if (ami_path.has_parent_path()) fs::create_directories(ami_path.parent_path());
  affnet::img::write_ami1(ami_path, image.pixels.cast<float>());
  if (!skip_png) {
    fs::path png_path = ami_path;
    png_path.replace_extension(".png");
    affnet::img::write_png(png_path,
                           affnet::ami::normalize_for_export(image.pixels));
  }
  std::cout << "composited " << seq.frame_count() << " frames -> "
            << ami_path.string() << "\n";
  return 0;
}

int run_params(const std::string& variant_arg, int input_size, int classes,
               int depth_divisor, bool as_json) {
  std::vector<affnet::Variant> variants;
  if (variant_arg == "all") {
    variants.assign(affnet::all_variants().begin(),
                    affnet::all_variants().end());
  } else {
    variants.push_back(affnet::parse_variant(variant_arg));
  }
  json rows = json::array();
  if (!as_json)
    std::printf("%-14s %12s %12s %8s\n", "variant", "params", "bytes", "check");
  for (affnet::Variant v : variants) {
    affnet::NetworkSpec spec = affnet::make_spec(v);
    spec.input_height = input_size;
    spec.input_width = input_size;
    spec.class_count = classes;
    spec.depth_divisor = depth_divisor;
    affnet::ParamLedger ledger = affnet::param_ledger(spec);
    auto net = affnet::build_network<float>(spec);
    auto [total, bytes] = affnet::count_params(net);
    const bool consistent = total == ledger.total && bytes == ledger.bytes;
    if (as_json) {
      rows.push_back({{"variant", affnet::variant_name(v)},
                      {"params", total},
                      {"bytes", bytes},
                      {"ledger_total", ledger.total},
                      {"consistent", consistent}});
    } else {
      std::printf("%-14s %12lld %12lld %8s\n", affnet::variant_name(v), total,
                  bytes, consistent ? "ok" : "MISMATCH");
    }
    if (!consistent)
      throw std::runtime_error("parameter ledger does not match built network");
  }
  if (as_json) std::cout << rows.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"micro-expression toolkit: motion-composite images and the "
               "multi-scale classifier family"};
  app.require_subcommand(1);
  CommonOptions opt;

  // ami
  auto* ami_cmd = app.add_subcommand(
      "ami", "composite a clip's frames into one image (AMI1 + PNG)");
  std::string ami_clip, ami_out;
  bool ami_no_png = false;
  ami_cmd->add_option("--clip", ami_clip, "frame directory")->required();
  ami_cmd->add_option("--out", ami_out, "output path (.ami1)")->required();
  ami_cmd->add_option("--weight-rule", opt.weight_rule, "suffix_sum|literal");
  ami_cmd->add_flag("--no-png", ami_no_png, "skip the PNG preview");

  // synth
  auto* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic frame-folder dataset");
  std::string synth_out, synth_name = "synthetic";
  int synth_subjects = 6, synth_clips = 8, synth_frames = 8, synth_size = 112;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--subjects", synth_subjects, "subject count (>= 2)");
  synth_cmd->add_option("--clips", synth_clips, "clips per subject");
  synth_cmd->add_option("--frames", synth_frames, "frames per clip (>= 3)");
  synth_cmd->add_option("--size", synth_size, "square frame edge");
  synth_cmd->add_option("--seed", opt.seed, "generator seed");
  synth_cmd->add_option("--name", synth_name, "dataset name");

  // train
  auto* train_cmd =
      app.add_subcommand("train", "train one network on a whole manifest");
  std::string train_manifest, train_out;
  train_cmd->add_option("--manifest", train_manifest, "dataset CSV")->required();
  train_cmd->add_option("--out", train_out, "run directory")->required();
  add_network_flags(train_cmd, opt);
  add_train_flags(train_cmd, opt);

  // eval-loso
  auto* loso_cmd = app.add_subcommand(
      "eval-loso", "leave-one-subject-out evaluation over a manifest");
  std::string loso_manifest, loso_out;
  loso_cmd->add_option("--manifest", loso_manifest, "dataset CSV")->required();
  loso_cmd->add_option("--out", loso_out, "run directory")->required();
  add_network_flags(loso_cmd, opt);
  add_train_flags(loso_cmd, opt);

  // eval-cde
  auto* cde_cmd = app.add_subcommand(
      "eval-cde", "train on one manifest, evaluate on another");
  std::string cde_train, cde_test, cde_out;
  cde_cmd->add_option("--train-manifest", cde_train, "training CSV")->required();
  cde_cmd->add_option("--test-manifest", cde_test, "test CSV")->required();
  cde_cmd->add_option("--out", cde_out, "run directory")->required();
  add_network_flags(cde_cmd, opt);
  add_train_flags(cde_cmd, opt);

  // params
  auto* params_cmd = app.add_subcommand(
      "params", "per-variant parameter and memory audit");
  std::string params_variant = "affectivenet";
  bool params_json = false;
  params_cmd->add_option("--variant", params_variant, "variant name or 'all'");
  params_cmd->add_option("--input-size", opt.input_size, "square input edge");
  params_cmd->add_option("--classes", opt.class_count, "number of classes");
  params_cmd->add_option("--depth-div", opt.depth_divisor, "depth divisor");
  params_cmd->add_flag("--json", params_json, "machine-readable output");

  // activations
  auto* act_cmd = app.add_subcommand(
      "activations", "export per-channel activation maps as PNGs");
  std::string act_model, act_input, act_layers, act_out;
  act_cmd->add_option("--model", act_model, "checkpoint (.afnw)");
  act_cmd->add_option("--input", act_input, "AMI1 file or clip directory")
      ->required();
  act_cmd->add_option("--layers", act_layers, "comma-separated layer names")
      ->required();
  act_cmd->add_option("--out", act_out, "output directory")->required();
  add_network_flags(act_cmd, opt);
  act_cmd->add_option("--weight-rule", opt.weight_rule, "suffix_sum|literal");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*ami_cmd) return run_ami(ami_clip, ami_out, opt.weight_rule, ami_no_png);

    if (*synth_cmd) {
      affnet::eval::SyntheticConfig config;
      config.subjects = synth_subjects;
      config.clips_per_subject = synth_clips;
      config.frame_count = synth_frames;
      config.image_size = synth_size;
      config.seed = opt.seed;
      config.dataset_name = synth_name;
      affnet::eval::DatasetManifest manifest =
          affnet::eval::generate_synthetic(config, synth_out);
      json extra{{"subjects", config.subjects},
                 {"clips_per_subject", config.clips_per_subject},
                 {"frames", config.frame_count},
                 {"size", config.image_size},
                 {"name", config.dataset_name}};
      write_config(synth_out, "synth", extra, opt);
      std::cout << "wrote " << manifest.entries.size() << " clips under "
                << synth_out << "\n";
      return 0;
    }

    if (*train_cmd) {
      auto manifest = affnet::eval::load_manifest(train_manifest);
      affnet::NetworkSpec spec = spec_from(opt);
      spec.class_count = static_cast<int>(manifest.label_set.size());
      affnet::eval::TrainConfig config = train_config_from(opt);
      write_config(train_out, "train", {{"manifest", train_manifest}}, opt);
      affnet::eval::TrainResult result =
          affnet::eval::train_network(manifest, {}, spec, config);
      affnet::save_checkpoint(fs::path(train_out) / "model.afnw", result.net);
      write_loss_csv(train_out, {result.epoch_loss});
      double acc = affnet::eval::training_accuracy(result.net, manifest, {},
                                                   config);
      std::printf("training accuracy %.2f%% over %zu clips\n", acc,
                  manifest.entries.size());
      return 0;
    }

    if (*loso_cmd) {
      auto manifest = affnet::eval::load_manifest(loso_manifest);
      affnet::NetworkSpec spec = spec_from(opt);
      spec.class_count = static_cast<int>(manifest.label_set.size());
      affnet::eval::TrainConfig config = train_config_from(opt);
      write_config(loso_out, "eval-loso", {{"manifest", loso_manifest}}, opt);
      affnet::eval::LosoResult result =
          affnet::eval::loso_eval(manifest, spec, config);
      affnet::eval::write_report(loso_out, result.report);
      write_loss_csv(loso_out, result.fold_losses);
      std::printf("%s: aggregate %.2f%% over %zu folds\n",
                  result.report.name.c_str(), result.report.aggregate_accuracy,
                  result.report.per_fold_accuracy.size());
      return 0;
    }

    if (*cde_cmd) {
      auto train_set = affnet::eval::load_manifest(cde_train);
      auto test_set = affnet::eval::load_manifest(cde_test);
      affnet::NetworkSpec spec = spec_from(opt);
      spec.class_count = static_cast<int>(train_set.label_set.size());
      affnet::eval::TrainConfig config = train_config_from(opt);
      write_config(cde_out, "eval-cde",
                   {{"train_manifest", cde_train}, {"test_manifest", cde_test}},
                   opt);
      affnet::eval::CrossDatasetResult result =
          affnet::eval::cross_dataset_eval(train_set, test_set, spec, config);
      affnet::save_checkpoint(fs::path(cde_out) / "model.afnw", result.net);
      affnet::eval::write_report(cde_out, result.report);
      write_loss_csv(cde_out, {result.losses});
      std::printf("%s: %.2f%%\n", result.report.name.c_str(),
                  result.report.aggregate_accuracy);
      return 0;
    }

    if (*params_cmd)
      return run_params(params_variant, opt.input_size, opt.class_count,
                        opt.depth_divisor, params_json);

    if (*act_cmd) {
      affnet::Network<float> net =
          act_model.empty() ? affnet::build_network<float>(spec_from(opt))
                            : affnet::load_checkpoint(act_model);
      affnet::Tensor<float> image;
      if (fs::is_directory(act_input)) {
        auto seq = affnet::ami::load_frame_sequence(act_input);
        image = affnet::ami::compose(
                    seq, affnet::ami::parse_weight_rule(opt.weight_rule))
                    .pixels.cast<float>();
      } else {
        image = affnet::img::read_ami1(act_input);
      }
      std::vector<std::string> names;
      std::stringstream ss(act_layers);
      std::string item;
      while (std::getline(ss, item, ',')) names.push_back(item);
      int written = affnet::export_activations(net, image, names, act_out);
      std::cout << "wrote " << written << " channel images to " << act_out
                << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
