#include "agfa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "agfa/error.hpp"
#include "agfa/rng.hpp"

namespace agfa {

namespace {

Tensor prepare_input(const Volume& volume, bool normalize_inputs, const NormalizeOptions& norm) {
  return volume_to_tensor(normalize_inputs ? normalize(volume, norm) : volume);
}

}  // namespace

std::string history_to_log(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& r : history) {
    os << "epoch=" << r.epoch << " lr=" << r.lr << " l_wce=" << r.l_wce << " l_dice=" << r.l_dice
       << " total=" << r.total;
    if (!std::isnan(r.val_dice)) os << " val_dice=" << r.val_dice;
    if (!std::isnan(r.train_dice)) os << " train_dice=" << r.train_dice;
    os << "\n";
  }
  return os.str();
}

EvalOptions make_eval_options(const TrainOptions& options) {
  EvalOptions opts;
  opts.threshold = options.threshold;
  opts.closing_radius = options.closing_radius;
  opts.normalize_inputs = options.normalize_inputs;
  opts.normalize = options.normalize;
  return opts;
}

EvaluateResult evaluate(const AgfaNet& net, const std::vector<Sample>& samples,
                        const EvalOptions& opts) {
  if (samples.empty()) fail(ErrorKind::kInvalidArgument, "evaluate: no samples");
  EvaluateResult result;
  for (const Sample& sample : samples) {
    LabelMask raw = infer_mask(net, sample.volume, opts, /*postprocess_output=*/false);
    LabelMask post = postprocess(raw, opts.closing_radius);
    result.per_sample_raw.push_back(evaluate_prediction(raw, sample.mask));
    result.per_sample_post.push_back(evaluate_prediction(post, sample.mask));
  }
  result.raw = aggregate_reports(result.per_sample_raw);
  result.postprocessed = aggregate_reports(result.per_sample_post);
  return result;
}

LabelMask infer_mask(const AgfaNet& net, const Volume& volume, const EvalOptions& opts,
                     bool postprocess_output) {
  Tensor input = prepare_input(volume, opts.normalize_inputs, opts.normalize);
  Tensor probabilities = sigmoid(net.forward(input, BnMode::kEval));
  LabelMask mask = tensor_to_mask(probabilities, volume.geom, opts.threshold);
  if (postprocess_output) mask = postprocess(mask, opts.closing_radius);
  return mask;
}

Trainer::Trainer(AgfaNet net, TrainOptions options)
    : net_(std::move(net)), options_(std::move(options)) {
  if (options_.epochs < 0) fail(ErrorKind::kInvalidArgument, "trainer: epochs must be >= 0");
  if (options_.batch_size < 1) fail(ErrorKind::kInvalidArgument, "trainer: batch_size must be >= 1");
  adam_.options = options_.adam;
  adam_.initialize(net_.named_parameters());
}

double Trainer::mean_dice(const std::vector<Sample>& samples) const {
  EvalOptions eval_opts = make_eval_options(options_);
  double acc = 0.0;
  for (const Sample& s : samples) {
    LabelMask pred = infer_mask(net_, s.volume, eval_opts, false);
    acc += overlap_metrics(confusion(pred, s.mask)).dice;
  }
  return acc / static_cast<double>(samples.size());
}

void Trainer::run(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set) {
  if (train_set.empty()) fail(ErrorKind::kInvalidArgument, "trainer: empty training set");

  for (int epoch = completed_epochs_; epoch < options_.epochs; ++epoch) {
    const double lr = lr_at(options_.schedule, epoch);

    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::mix(options_.seed, 0x5u + 2 * static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double sum_wce = 0.0, sum_dice = 0.0, sum_total = 0.0;
    int64_t batches = 0;
    for (size_t begin = 0; begin < order.size(); begin += options_.batch_size) {
      const size_t end = std::min(order.size(), begin + options_.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - begin);
      net_.zero_grad();
      for (size_t k = begin; k < end; ++k) {
        const size_t idx = order[k];
        const Sample* sample = &train_set[idx];
        Sample augmented;
        if (options_.augment_enabled) {
          Rng aug_rng(Rng::mix(Rng::mix(options_.seed, static_cast<uint64_t>(epoch)),
                               0x1000u + static_cast<uint64_t>(idx)));
          augmented = augment(*sample, aug_rng, options_.augment);
          sample = &augmented;
        }
        Tensor input = prepare_input(sample->volume, options_.normalize_inputs, options_.normalize);
        Tensor logits = net_.forward(input, BnMode::kTrain);
        LossTerms terms = combined_loss(logits, sample->mask, options_.lambda, options_.epsilon);
        if (!std::isfinite(terms.total.value()))
          fail(ErrorKind::kNumeric,
               "training loss is not finite at epoch " + std::to_string(epoch + 1) + ", batch " +
                   std::to_string(batches + 1) + " (sample '" + sample->id + "')");
        sum_wce += terms.l_wce;
        sum_dice += terms.l_dice;
        sum_total += terms.total.value();
        backward(mul_scalar(terms.total, inv_batch));
      }
      adam_step(net_.named_parameters(), adam_, lr);
      ++batches;
    }

    EpochRecord record;
    record.epoch = epoch + 1;
    record.lr = lr;
    record.l_wce = sum_wce / static_cast<double>(order.size());
    record.l_dice = sum_dice / static_cast<double>(order.size());
    record.total = sum_total / static_cast<double>(order.size());

    const bool last_epoch = epoch + 1 == options_.epochs;
    if (!val_set.empty() &&
        (((epoch + 1) % options_.val_interval == 0) || last_epoch)) {
      record.val_dice = mean_dice(val_set);
      if (record.val_dice > best_val_dice_) {
        best_val_dice_ = record.val_dice;
        best_params_.clear();
        for (const auto& [name, t] : net_.named_parameters())
          best_params_.emplace_back(name, t.values());
      }
    }

    bool stop = false;
    if (options_.stop_at_train_dice > 0.0 &&
        ((epoch + 1) % options_.train_dice_interval == 0 || last_epoch)) {
      record.train_dice = mean_dice(train_set);
      stop = record.train_dice >= options_.stop_at_train_dice;
    }

    history_.push_back(record);
    completed_epochs_ = epoch + 1;
    if (stop) break;
  }
}

}  // namespace agfa
