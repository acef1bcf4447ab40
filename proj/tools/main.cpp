// agfa: batch CLI over the segmentation library.
//
//   agfa phantom  --count N --seed S --out-dir DIR ...
//   agfa train    --config NAME|FILE --data-manifest M --out DIR ...
//   agfa infer    --checkpoint C --volume V --out MASK ...
//   agfa eval     --pred P --truth T [--report BASE]
//   agfa ablate   --data-manifest M --out DIR ...
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include <agfa/config_io.hpp>
#include <agfa/error.hpp>
#include <agfa/folds.hpp>
#include <agfa/metrics.hpp>
#include <agfa/phantom.hpp>
#include <agfa/rng.hpp>
#include <agfa/trainer.hpp>
#include <agfa/volume.hpp>

namespace fs = std::filesystem;
using namespace agfa;

namespace {

int exit_code_for(const Error& e) { return e.kind() == ErrorKind::kNumeric ? 3 : 2; }

template <typename F>
int run_guarded(F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

std::string zero_pad(int value, int width) {
  char buf[32];
  snprintf(buf, sizeof(buf), "%0*d", width, value);
  return buf;
}

// --------------------------------------------------------------------------
// phantom

struct PhantomArgs {
  int count = 4;
  uint64_t seed = 0;
  std::vector<int> extents{32, 32, 32};
  std::vector<double> spacing{0.5, 0.35, 0.35};
  std::string out_dir;
  int branch_count = 3;
  double radius_min = 0.8;
  double radius_max = 1.8;
  double curvature = 0.3;
  double vessel_intensity = 1.0;
  double background_intensity = 0.0;
  double noise_sigma = 0.05;
};

int cmd_phantom(const PhantomArgs& args) {
  fs::create_directories(args.out_dir);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < args.count; ++i) {
    PhantomSpec spec;
    spec.seed = Rng::mix(args.seed, static_cast<uint64_t>(i));
    spec.extents = {args.extents[0], args.extents[1], args.extents[2]};
    spec.spacing = {args.spacing[0], args.spacing[1], args.spacing[2]};
    spec.branch_count = args.branch_count;
    spec.radius_min_mm = args.radius_min;
    spec.radius_max_mm = args.radius_max;
    spec.curvature = args.curvature;
    spec.vessel_intensity = args.vessel_intensity;
    spec.background_intensity = args.background_intensity;
    spec.noise_sigma = args.noise_sigma;

    Sample sample = generate_phantom(spec);
    const std::string id = "phantom_" + zero_pad(i, 3);
    sample.id = id;
    const std::string vol_name = id + "_vol.agv";
    const std::string msk_name = id + "_msk.agv";
    save_volume((fs::path(args.out_dir) / vol_name).string(), sample.volume);
    save_mask((fs::path(args.out_dir) / msk_name).string(), sample.mask);
    entries.push_back({id, vol_name, msk_name});
  }
  const std::string manifest = (fs::path(args.out_dir) / "manifest.json").string();
  write_manifest(manifest, entries);
  std::cout << "wrote " << args.count << " samples and " << manifest << "\n";
  return 0;
}

// --------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config = "baseline";
  std::string manifest;
  int folds = 1;
  int epochs = 500;
  uint64_t seed = 0;
  std::string out_dir;
  int batch_size = 2;
  int base_channels = 0;  // 0 = take it from the config
  std::vector<int> crop{32, 32, 32};
  bool no_augment = false;
  double val_fraction = 0.15;
  double lr = 0.003;
  int val_interval = 10;
  double target_train_dice = -1.0;
};

TrainOptions make_train_options(const TrainArgs& args, uint64_t run_seed) {
  TrainOptions o;
  o.epochs = args.epochs;
  o.batch_size = args.batch_size;
  o.adam.lr = args.lr;
  o.schedule.base_lr = args.lr;
  o.augment_enabled = !args.no_augment;
  o.augment.crop_extents = {args.crop[0], args.crop[1], args.crop[2]};
  o.val_interval = args.val_interval;
  o.stop_at_train_dice = args.target_train_dice;
  o.seed = run_seed;
  return o;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::kIo, "cannot open for write: " + path);
  os << text;
}

void train_one_fold(const ModelConfig& config, const TrainArgs& args, int fold,
                    const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                    const std::vector<Sample>& test_set) {
  const uint64_t run_seed = Rng::mix(args.seed, static_cast<uint64_t>(fold));
  const uint64_t net_seed = Rng::mix(args.seed, 0x9000u + static_cast<uint64_t>(fold));
  Trainer trainer(AgfaNet(config, net_seed), make_train_options(args, run_seed));
  trainer.run(train_set, val_set);

  const fs::path out(args.out_dir);
  const std::string tag = "fold" + std::to_string(fold);
  trainer.save_checkpoint((out / (tag + ".agck")).string());
  write_text((out / (tag + ".log")).string(), history_to_log(trainer.history()));

  if (!test_set.empty()) {
    EvaluateResult result = evaluate(trainer.net(), test_set, make_eval_options(trainer.options()));
    write_text((out / (tag + "_report.txt")).string(), report_to_text(result.raw));
    write_text((out / (tag + "_report.json")).string(), report_to_json(result.raw));
  }
  std::cout << tag << ": " << trainer.completed_epochs() << " epochs";
  if (trainer.best_val_dice() >= 0) std::cout << ", best val dice " << trainer.best_val_dice();
  std::cout << "\n";
}

int cmd_train(const TrainArgs& args) {
  ModelConfig config = resolve_config(args.config);
  if (args.base_channels > 0) config.base_channels = args.base_channels;
  validate_config(config);

  std::vector<Sample> samples = load_samples(args.manifest);
  if (samples.empty()) fail(ErrorKind::kInvalidArgument, "manifest lists no samples");
  fs::create_directories(args.out_dir);
  write_text((fs::path(args.out_dir) / "config.txt").string(), config_to_text(config));

  if (args.folds <= 1) {
    // single run: optional validation carve-out, no test fold
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::mix(args.seed, 0xABCDu));
    rng.shuffle(order);
    const int val_count =
        static_cast<int>(std::llround(args.val_fraction * static_cast<double>(samples.size())));
    std::vector<Sample> val_set, train_set;
    for (size_t k = 0; k < order.size(); ++k) {
      (static_cast<int>(k) < val_count ? val_set : train_set).push_back(samples[order[k]]);
    }
    if (train_set.empty())
      fail(ErrorKind::kInvalidArgument, "validation fraction leaves no training samples");
    train_one_fold(config, args, 0, train_set, val_set, {});
    return 0;
  }

  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  auto folds = kfold_split(ids, args.folds, args.seed, args.val_fraction);
  auto by_id = [&](const std::vector<std::string>& want) {
    std::vector<Sample> out;
    for (const auto& id : want)
      for (const auto& s : samples)
        if (s.id == id) out.push_back(s);
    return out;
  };
  for (int f = 0; f < args.folds; ++f)
    train_one_fold(config, args, f, by_id(folds[f].train), by_id(folds[f].val),
                   by_id(folds[f].test));
  return 0;
}

// --------------------------------------------------------------------------
// infer

struct InferArgs {
  std::string checkpoint;
  std::string volume;
  std::string out;
  bool postprocess_output = false;
  double threshold = 0.5;
  int closing_radius = 1;
};

int cmd_infer(const InferArgs& args) {
  Trainer trainer = Trainer::load_checkpoint(args.checkpoint);
  Volume volume = load_volume(args.volume);
  // inherit the checkpoint's normalization policy so inference sees the
  // same input distribution as training; threshold/radius come from flags
  EvalOptions opts = make_eval_options(trainer.options());
  opts.threshold = args.threshold;
  opts.closing_radius = args.closing_radius;
  LabelMask mask = infer_mask(trainer.net(), volume, opts, args.postprocess_output);
  save_mask(args.out, mask);
  std::cout << "wrote " << args.out << " (" << mask.foreground_count() << " foreground voxels)\n";
  return 0;
}

// --------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string pred;
  std::string truth;
  std::string report;  // base path; empty = stdout only
};

int cmd_eval(const EvalArgs& args) {
  LabelMask pred = load_mask(args.pred);
  LabelMask truth = load_mask(args.truth);
  if (!(pred.geom == truth.geom))
    fail(ErrorKind::kShapeMismatch, "prediction and truth geometries differ");
  MetricsReport report = evaluate_prediction(pred, truth);
  const std::string text = report_to_text(report);
  std::cout << text;
  if (!args.report.empty()) {
    write_text(args.report + ".txt", text);
    write_text(args.report + ".json", report_to_json(report));
  }
  return 0;
}

// --------------------------------------------------------------------------
// ablate

struct AblateArgs {
  std::string manifest;
  int epochs = 3;
  uint64_t seed = 0;
  std::string out_dir;
  int base_channels = 8;
  int batch_size = 2;
  bool no_augment = false;
  std::vector<int> crop{32, 32, 32};
  double lr = 0.003;
};

int cmd_ablate(const AblateArgs& args) {
  std::vector<Sample> samples = load_samples(args.manifest);
  if (samples.empty()) fail(ErrorKind::kInvalidArgument, "manifest lists no samples");
  fs::create_directories(args.out_dir);

  struct Row {
    std::string name;
    bool ok = false;
    MetricsReport metrics;
    std::string error;
    int severity = 0;
  };
  std::vector<Row> rows;

  int config_index = 0;
  for (const auto& [name, config] : ablation_configs(args.base_channels)) {
    Row row;
    row.name = name;
    try {
      TrainArgs targs;
      targs.epochs = args.epochs;
      targs.batch_size = args.batch_size;
      targs.no_augment = args.no_augment;
      targs.crop = args.crop;
      targs.lr = args.lr;
      const uint64_t run_seed = Rng::mix(args.seed, static_cast<uint64_t>(config_index));
      Trainer trainer(AgfaNet(config, run_seed), make_train_options(targs, run_seed));
      trainer.run(samples, {});
      // desk-scale harness: metrics over the training set demonstrate that
      // each configuration trains and evaluates end to end
      row.metrics = evaluate(trainer.net(), samples, make_eval_options(trainer.options())).raw;
      row.ok = true;
    } catch (const Error& e) {
      row.error = e.what();
      row.severity = exit_code_for(e);
    } catch (const std::exception& e) {
      row.error = e.what();
      row.severity = 2;
    }
    rows.push_back(std::move(row));
    ++config_index;
  }

  std::ostringstream table;
  char line[256];
  snprintf(line, sizeof(line), "%-12s %8s %8s %10s\n", "network", "dice", "recall", "precision");
  table << line;
  nlohmann::json doc = nlohmann::json::array();
  int exit_code = 0;
  for (const auto& row : rows) {
    if (row.ok) {
      snprintf(line, sizeof(line), "%-12s %8.4f %8.4f %10.4f\n", row.name.c_str(),
               row.metrics.dice, row.metrics.recall, row.metrics.precision);
      doc.push_back({{"network", row.name},
                     {"dice", row.metrics.dice},
                     {"recall", row.metrics.recall},
                     {"precision", row.metrics.precision}});
    } else {
      snprintf(line, sizeof(line), "%-12s FAILED: %s\n", row.name.c_str(), row.error.c_str());
      doc.push_back({{"network", row.name}, {"error", row.error}});
      exit_code = std::max(exit_code, row.severity);
    }
    table << line;
  }
  std::cout << table.str();
  write_text((fs::path(args.out_dir) / "ablation.txt").string(), table.str());
  write_text((fs::path(args.out_dir) / "ablation.json").string(), doc.dump(2) + "\n");
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale 3D coronary-vessel segmentation toolkit"};
  app.require_subcommand(1);

  PhantomArgs phantom_args;
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic vessel dataset");
  phantom->add_option("--count", phantom_args.count, "number of samples")->capture_default_str();
  phantom->add_option("--seed", phantom_args.seed, "master seed")->capture_default_str();
  phantom->add_option("--extents", phantom_args.extents, "volume extents D H W")
      ->expected(3)
      ->capture_default_str();
  phantom->add_option("--spacing", phantom_args.spacing, "voxel spacing in mm, D H W order")
      ->expected(3)
      ->capture_default_str();
  phantom->add_option("--out-dir", phantom_args.out_dir, "output directory")->required();
  phantom->add_option("--branch-count", phantom_args.branch_count, "centerline tips per phantom")
      ->capture_default_str();
  phantom->add_option("--radius-min", phantom_args.radius_min, "minimum vessel radius (mm)")
      ->capture_default_str();
  phantom->add_option("--radius-max", phantom_args.radius_max, "maximum vessel radius (mm)")
      ->capture_default_str();
  phantom->add_option("--curvature", phantom_args.curvature, "centerline curvature")
      ->capture_default_str();
  phantom->add_option("--vessel-intensity", phantom_args.vessel_intensity, "foreground level")
      ->capture_default_str();
  phantom->add_option("--background-intensity", phantom_args.background_intensity,
                      "background level")
      ->capture_default_str();
  phantom->add_option("--noise-sigma", phantom_args.noise_sigma, "additive Gaussian noise sigma")
      ->capture_default_str();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a configuration on a dataset");
  train->add_option("--config", train_args.config,
                    "ablation row name (baseline, net1..net9, agfa) or config file path")
      ->capture_default_str();
  train->add_option("--data-manifest", train_args.manifest, "dataset manifest")->required();
  train->add_option("--folds", train_args.folds, "1 = single run, k>=2 = k-fold cross-validation")
      ->capture_default_str();
  train->add_option("--epochs", train_args.epochs, "training epochs")->capture_default_str();
  train->add_option("--seed", train_args.seed, "master seed")->capture_default_str();
  train->add_option("--out", train_args.out_dir, "output directory")->required();
  train->add_option("--batch-size", train_args.batch_size, "samples per optimizer step")
      ->capture_default_str();
  train->add_option("--base-channels", train_args.base_channels,
                    "override the config's base channel width (0 keeps it)")
      ->capture_default_str();
  train->add_option("--crop", train_args.crop, "augmentation crop extents D H W")
      ->expected(3)
      ->capture_default_str();
  train->add_flag("--no-augment", train_args.no_augment, "train on full volumes, no augmentation");
  train->add_option("--val-fraction", train_args.val_fraction,
                    "fraction of non-test ids used for validation")
      ->capture_default_str();
  train->add_option("--lr", train_args.lr, "base learning rate")->capture_default_str();
  train->add_option("--val-interval", train_args.val_interval, "epochs between validations")
      ->capture_default_str();
  train->add_option("--target-train-dice", train_args.target_train_dice,
                    "stop early once training Dice reaches this value (negative disables)")
      ->capture_default_str();

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "predict a mask for one volume");
  infer->add_option("--checkpoint", infer_args.checkpoint, "trained checkpoint")->required();
  infer->add_option("--volume", infer_args.volume, "input volume (.agv)")->required();
  infer->add_option("--out", infer_args.out, "output mask path")->required();
  infer->add_flag("--postprocess", infer_args.postprocess_output,
                  "apply morphological closing and largest-component selection");
  infer->add_option("--threshold", infer_args.threshold, "probability threshold")
      ->capture_default_str();
  infer->add_option("--closing-radius", infer_args.closing_radius, "closing radius in voxels")
      ->capture_default_str();

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "score a predicted mask against ground truth");
  eval->add_option("--pred", eval_args.pred, "predicted mask")->required();
  eval->add_option("--truth", eval_args.truth, "ground-truth mask")->required();
  eval->add_option("--report", eval_args.report, "report base path (writes .txt and .json)");

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate", "train and score all eleven ablation rows");
  ablate->add_option("--data-manifest", ablate_args.manifest, "dataset manifest")->required();
  ablate->add_option("--epochs", ablate_args.epochs, "epochs per configuration")
      ->capture_default_str();
  ablate->add_option("--seed", ablate_args.seed, "shared seed")->capture_default_str();
  ablate->add_option("--out", ablate_args.out_dir, "output directory")->required();
  ablate->add_option("--base-channels", ablate_args.base_channels, "channel width for every row")
      ->capture_default_str();
  ablate->add_option("--batch-size", ablate_args.batch_size, "samples per optimizer step")
      ->capture_default_str();
  ablate->add_flag("--no-augment", ablate_args.no_augment, "train on full volumes");
  ablate->add_option("--crop", ablate_args.crop, "augmentation crop extents D H W")
      ->expected(3)
      ->capture_default_str();
  ablate->add_option("--lr", ablate_args.lr, "base learning rate")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  if (app.got_subcommand(phantom)) return run_guarded([&] { return cmd_phantom(phantom_args); });
  if (app.got_subcommand(train)) return run_guarded([&] { return cmd_train(train_args); });
  if (app.got_subcommand(infer)) return run_guarded([&] { return cmd_infer(infer_args); });
  if (app.got_subcommand(eval)) return run_guarded([&] { return cmd_eval(eval_args); });
  if (app.got_subcommand(ablate)) return run_guarded([&] { return cmd_ablate(ablate_args); });
  return 1;
}
