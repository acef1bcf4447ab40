#pragma once

#include <limits>
#include <string>
#include <vector>

#include "agfa/augment.hpp"
#include "agfa/loss.hpp"
#include "agfa/metrics.hpp"
#include "agfa/model.hpp"
#include "agfa/optimizer.hpp"
#include "agfa/volume.hpp"

namespace agfa {

// Training protocol: per epoch, a seeded shuffle, optional augmentation,
// forward, combined loss, backward with gradient accumulation over the
// batch, one Adam step per batch, and a per-epoch cosine-warm-restart
// learning rate. Shuffle and augmentation streams derive from
// (seed, epoch [, sample]) so a resumed run replays the identical
// trajectory.
struct TrainOptions {
  int epochs = 500;
  int batch_size = 16;  // desk-scale runs override this downward
  double lambda = kDefaultLossLambda;
  double epsilon = kDefaultLossEpsilon;
  AdamOptions adam;
  CosineRestartSchedule schedule;

  bool augment_enabled = true;
  AugmentOptions augment;
  bool normalize_inputs = true;
  NormalizeOptions normalize;

  int val_interval = 10;  // epochs between validation passes
  double threshold = 0.5;
  int closing_radius = 1;

  // Early stop once the training-set Dice reaches this value (checked
  // every train_dice_interval epochs); negative disables the check.
  double stop_at_train_dice = -1.0;
  int train_dice_interval = 5;

  uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double l_wce = 0.0;
  double l_dice = 0.0;
  double total = 0.0;
  double val_dice = std::numeric_limits<double>::quiet_NaN();
  double train_dice = std::numeric_limits<double>::quiet_NaN();
};

std::string history_to_log(const std::vector<EpochRecord>& history);

struct EvalOptions {
  double threshold = 0.5;
  int closing_radius = 1;
  bool normalize_inputs = true;
  NormalizeOptions normalize;
};

// Inference settings matching what a training run used (normalization
// window, threshold, closing radius).
EvalOptions make_eval_options(const TrainOptions& options);

struct EvaluateResult {
  MetricsReport raw;            // mean over samples, no post-processing
  MetricsReport postprocessed;  // with closing + largest-component
  std::vector<MetricsReport> per_sample_raw;
  std::vector<MetricsReport> per_sample_post;
};

// Eval-mode inference over each sample: sigmoid, threshold, optional
// post-processing, metrics against the sample's mask.
EvaluateResult evaluate(const AgfaNet& net, const std::vector<Sample>& samples,
                        const EvalOptions& opts = {});

// Single-volume inference to a binary mask.
LabelMask infer_mask(const AgfaNet& net, const Volume& volume, const EvalOptions& opts = {},
                     bool postprocess_output = false);

class Trainer {
 public:
  Trainer(AgfaNet net, TrainOptions options);

  // Runs from the last completed epoch up to options.epochs. Aborts with a
  // numeric error naming the epoch and batch if the loss goes non-finite.
  void run(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set);

  const std::vector<EpochRecord>& history() const { return history_; }
  int completed_epochs() const { return completed_epochs_; }
  AgfaNet& net() { return net_; }
  const AgfaNet& net() const { return net_; }
  TrainOptions& options() { return options_; }
  double best_val_dice() const { return best_val_dice_; }
  // Parameters of the best-validation epoch (empty until a validation ran).
  const std::vector<std::pair<std::string, std::vector<double>>>& best_parameters() const {
    return best_params_;
  }

  // Versioned checkpoint: config + options + parameters + batch-norm
  // statistics + optimizer moments + history. A save/load round trip
  // resumes with a bitwise-identical trajectory.
  void save_checkpoint(const std::string& path) const;
  static Trainer load_checkpoint(const std::string& path);

 private:
  double mean_dice(const std::vector<Sample>& samples) const;

  AgfaNet net_;
  TrainOptions options_;
  AdamState adam_;
  std::vector<EpochRecord> history_;
  int completed_epochs_ = 0;
  double best_val_dice_ = -1.0;
  std::vector<std::pair<std::string, std::vector<double>>> best_params_;
};

}  // namespace agfa
