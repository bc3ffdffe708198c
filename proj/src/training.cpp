#include "dlm/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dlm/masking.hpp"
#include "dlm/ops.hpp"
#include "dlm/optimizer.hpp"

namespace dlm {
namespace {

// Subsystem seed streams derived from TrainConfig::seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kDropoutStream = 2;
constexpr std::uint64_t kHeadStream = 3;
constexpr std::uint64_t kHoldoutStream = 4;
constexpr std::uint64_t kShuffleStream = 1000;
constexpr std::uint64_t kMaskStream = 2000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_sequences(std::span<const TokenizedSequence> seqs, const ModelConfig& model_config, std::size_t max_len) {
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& ids = seqs[i].ids;
    if (ids.empty()) throw std::invalid_argument(fmt::format("sequence {} is empty", i));
    if (ids.size() > max_len || ids.size() > model_config.max_position) {
      throw std::invalid_argument(fmt::format("sequence {} has {} ids; max_len is {} and max_position {}", i,
                                              ids.size(), max_len, model_config.max_position));
    }
    for (TokenId id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= model_config.vocab_size) {
        throw std::invalid_argument(fmt::format("sequence {} holds id {} outside the model vocabulary of size {}", i,
                                                id, model_config.vocab_size));
      }
    }
  }
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

struct StepContext {
  EncoderModel<float>& model;
  AdamW<float>& optimizer;
  const LinearSchedule& schedule;
  const TrainConfig& config;
  TrainLog& log;
  std::int64_t& step;
};

// One optimizer update from a scalar loss recorded on `tape`.
double apply_step(StepContext& ctx, Tape<float>& tape, const Tensorf& loss, std::size_t epoch) {
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw TrainingError(fmt::format("non-finite loss {} at step {} (epoch {})", value, ctx.step + 1, epoch + 1));
  }
  auto& params = ctx.model.parameters();
  if (loss.requires_grad()) tape.backward(loss);
  clip_grad_norm(params, ctx.config.grad_clip_norm);
  ctx.optimizer.step(params, ctx.schedule.at(static_cast<std::size_t>(ctx.step)));
  params.zero_grad();
  ++ctx.step;
  ctx.log.steps.push_back({ctx.step, value});
  return value;
}

LinearSchedule make_schedule(const TrainConfig& config, std::size_t steps_per_epoch) {
  const std::size_t total = steps_per_epoch * config.epochs;
  const auto warmup = static_cast<std::size_t>(std::floor(config.warmup_fraction * static_cast<double>(total)));
  return LinearSchedule(config.learning_rate, warmup, total);
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (max_len < 3) fail("max_len must be at least 3");
  if (epochs < 1) fail("epochs must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) fail("warmup_fraction must lie in [0, 1]");
  if (!(grad_clip_norm > 0.0)) fail("grad_clip_norm must be positive");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) fail("mask_rate must lie in [0, 1]");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) fail("holdout_fraction must lie in [0, 1)");
}

std::string TrainLog::serialize() const {
  std::string out;
  for (const auto& s : steps) out += fmt::format("step={} loss={}\n", s.step, s.loss);
  return out;
}

void TrainLog::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TrainingError("cannot write training log " + path.string());
  out << serialize();
}

TokenBatch pad_batch(std::span<const TokenizedSequence> sequences) {
  TokenBatch batch;
  batch.batch = sequences.size();
  for (const auto& s : sequences) batch.length = std::max(batch.length, s.ids.size());
  batch.input_ids.assign(batch.batch * batch.length, Vocab::kPad);
  batch.attention_mask.assign(batch.batch * batch.length, 0);
  for (std::size_t r = 0; r < sequences.size(); ++r) {
    const auto& ids = sequences[r].ids;
    std::copy(ids.begin(), ids.end(), batch.input_ids.begin() + static_cast<std::ptrdiff_t>(r * batch.length));
    std::fill_n(batch.attention_mask.begin() + static_cast<std::ptrdiff_t>(r * batch.length), ids.size(), 1);
  }
  return batch;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::size_t n, double fraction,
                                                                            std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t held = 0;
  if (n >= 2 && fraction > 0.0) {
    held = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n - 1);
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::size_t> holdout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(holdout.begin(), holdout.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(holdout)};
}

TrainResult pretrain(std::span<const TokenizedSequence> corpus, const TrainConfig& config,
                     const ModelConfig& model_config, const PretrainOptions& options) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("pretrain: corpus is empty");
  const auto start_time = Clock::now();

  EncoderModel<float> model = options.init ? load_model<float>(*options.init)
                                           : EncoderModel<float>(model_config, derive_seed(config.seed, kInitStream));
  const ModelConfig& mc = model.config();
  if (options.init && mc.vocab_size != model_config.vocab_size) {
    throw std::invalid_argument(fmt::format("pretrain: initial checkpoint has vocabulary {}, expected {}",
                                            mc.vocab_size, model_config.vocab_size));
  }
  check_sequences(corpus, mc, config.max_len);

  AdamW<float> optimizer(model.parameters(), AdamWConfig{.weight_decay = config.weight_decay});
  const std::size_t steps_per_epoch = ceil_div(corpus.size(), config.batch_size);
  const LinearSchedule schedule = make_schedule(config, steps_per_epoch);
  Rng dropout_rng(derive_seed(config.seed, kDropoutStream));

  MaskingConfig masking;
  masking.mask_rate = config.mask_rate;
  masking.max_len = config.max_len;

  TrainResult result;
  std::int64_t step = options.init ? options.init->step : 0;
  StepContext ctx{model, optimizer, schedule, config, result.log, step};
  const std::int64_t first_step = step;

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffler(derive_seed(config.seed, kShuffleStream + epoch));
    shuffler.shuffle(std::span<std::size_t>(order));
    const std::uint64_t mask_seed = derive_seed(config.seed, kMaskStream + epoch);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<MaskedExample> examples;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      examples.clear();
      for (std::size_t i = begin; i < end; ++i) {
        examples.push_back(make_example(corpus[order[i]], mc.vocab_size, masking, sequence_seed(mask_seed, order[i])));
      }
      const MlmBatch batch = trim_padding(make_batches(examples, examples.size()).front());

      Tape<float> tape;
      Tensorf loss;
      {
        TapeScope<float> scope(tape);
        const ForwardOptions fwd{.training = true, .rng = &dropout_rng};
        const Tensorf hidden = model.encode(batch.tokens, fwd);
        loss = ops::cross_entropy(model.mlm_logits(hidden), std::span<const std::int32_t>(batch.labels),
                                  masking.ignore_index);
      }
      loss_sum += apply_step(ctx, tape, loss, epoch);
      ++batches;
    }
    result.log.epoch_mean_loss.push_back(loss_sum / static_cast<double>(batches));

    Checkpoint ckpt = make_checkpoint(model, step);
    ckpt.optimizer = optimizer.snapshot(model.parameters());
    ckpt.optimizer->step = step - first_step;
    ckpt.metadata["stage"] = "pretrain";
    ckpt.metadata["epoch"] = std::to_string(epoch + 1);
    if (options.out_dir) ckpt.save(*options.out_dir / fmt::format("ckpt-epoch{}", epoch + 1));
    if (options.on_epoch) options.on_epoch(epoch + 1, ckpt, result.log);
    result.checkpoint = std::move(ckpt);
  }
  result.log.wall_seconds = seconds_since(start_time);
  return result;
}

std::vector<std::vector<double>> predict_proba(const EncoderModel<float>& model,
                                               std::span<const TokenizedSequence> sequences, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("predict: batch_size must be positive");
  std::vector<std::vector<double>> probs;
  probs.reserve(sequences.size());
  const std::size_t classes = model.config().num_labels;
  for (std::size_t begin = 0; begin < sequences.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, sequences.size() - begin);
    const TokenBatch batch = pad_batch(sequences.subspan(begin, count));
    const Tensorf logits = model.classify(model.encode(batch));
    const auto data = logits.data();
    for (std::size_t r = 0; r < count; ++r) {
      std::vector<double> row(classes);
      double peak = -INFINITY;
      for (std::size_t c = 0; c < classes; ++c) peak = std::max(peak, static_cast<double>(data[r * classes + c]));
      double total = 0.0;
      for (std::size_t c = 0; c < classes; ++c) total += row[c] = std::exp(data[r * classes + c] - peak);
      for (double& p : row) p /= total;
      probs.push_back(std::move(row));
    }
  }
  return probs;
}

std::vector<std::int32_t> predict(const EncoderModel<float>& model, std::span<const TokenizedSequence> sequences,
                                  std::size_t batch_size) {
  std::vector<std::int32_t> labels;
  labels.reserve(sequences.size());
  for (const auto& row : predict_proba(model, sequences, batch_size)) {
    labels.push_back(static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return labels;
}

FinetuneResult finetune(const Checkpoint& start, const LabeledSequences& data, const TrainConfig& config,
                        std::size_t num_labels, const FinetuneOptions& options) {
  config.validate();
  if (num_labels < 2) throw std::invalid_argument(fmt::format("finetune: num_labels must be >= 2, got {}", num_labels));
  if (data.size() == 0) throw std::invalid_argument("finetune: dataset is empty");
  if (data.labels.size() != data.sequences.size()) throw std::invalid_argument("finetune: labels/sequences differ");
  auto check_labels = [&](const LabeledSequences& set, const char* which) {
    for (std::size_t i = 0; i < set.labels.size(); ++i) {
      const auto label = set.labels[i];
      if (label < 0 || static_cast<std::size_t>(label) >= num_labels) {
        throw std::invalid_argument(
            fmt::format("finetune: {} label {} at row {} outside [0, {})", which, label, i, num_labels));
      }
    }
  };
  check_labels(data, "training");
  if (options.dev) {
    if (options.dev->labels.size() != options.dev->sequences.size()) throw std::invalid_argument("finetune: dev labels/sequences differ");
    check_labels(*options.dev, "dev");
  }
  const auto start_time = Clock::now();

  EncoderModel<float> model = load_model<float>(start);
  check_sequences(data.sequences, model.config(), config.max_len);
  model.reset_classifier(num_labels, derive_seed(config.seed, kHeadStream));

  LabeledSequences selection;
  std::vector<std::size_t> train_idx;
  if (options.dev && options.dev->size() > 0) {
    train_idx.resize(data.size());
    std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
    selection = *options.dev;
  } else {
    auto [train, held] = holdout_split(data.size(), config.holdout_fraction, derive_seed(config.seed, kHoldoutStream));
    if (held.empty()) held = train;
    train_idx = std::move(train);
    for (std::size_t i : held) {
      selection.sequences.push_back(data.sequences[i]);
      selection.labels.push_back(data.labels[i]);
    }
  }
  check_sequences(selection.sequences, model.config(), model.config().max_position);

  AdamW<float> optimizer(model.parameters(), AdamWConfig{.weight_decay = config.weight_decay});
  const std::size_t steps_per_epoch = ceil_div(train_idx.size(), config.batch_size);
  const LinearSchedule schedule = make_schedule(config, steps_per_epoch);
  Rng dropout_rng(derive_seed(config.seed, kDropoutStream));

  FinetuneResult result;
  std::int64_t step = 0;
  StepContext ctx{model, optimizer, schedule, config, result.log, step};
  bool have_best = false;

  std::vector<TokenizedSequence> batch_seqs;
  std::vector<std::int32_t> batch_labels;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffler(derive_seed(config.seed, kShuffleStream + epoch));
    shuffler.shuffle(std::span<std::size_t>(train_idx));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < train_idx.size(); begin += config.batch_size) {
      const std::size_t end = std::min(train_idx.size(), begin + config.batch_size);
      batch_seqs.clear();
      batch_labels.clear();
      for (std::size_t i = begin; i < end; ++i) {
        batch_seqs.push_back(data.sequences[train_idx[i]]);
        batch_labels.push_back(data.labels[train_idx[i]]);
      }
      const TokenBatch tokens = pad_batch(batch_seqs);
      Tape<float> tape;
      Tensorf loss;
      {
        TapeScope<float> scope(tape);
        const ForwardOptions fwd{.training = true, .rng = &dropout_rng};
        loss = ops::cross_entropy(model.classify(model.encode(tokens, fwd)),
                                  std::span<const std::int32_t>(batch_labels), kDefaultIgnoreIndex);
      }
      loss_sum += apply_step(ctx, tape, loss, epoch);
      ++batches;
    }
    result.log.epoch_mean_loss.push_back(loss_sum / static_cast<double>(batches));

    const auto preds = predict(model, selection.sequences, config.batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == selection.labels[i];
    const double accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
    result.epoch_accuracy.push_back(accuracy);

    Checkpoint ckpt = make_checkpoint(model, step);
    ckpt.metadata["stage"] = "finetune";
    ckpt.metadata["epoch"] = std::to_string(epoch + 1);
    ckpt.metadata["selection_accuracy"] = fmt::format("{}", accuracy);
    if (options.on_epoch) options.on_epoch(epoch + 1, ckpt, result.log);
    if (!have_best || accuracy > result.best_accuracy) {
      have_best = true;
      result.best_accuracy = accuracy;
      result.best_epoch = epoch + 1;
      result.checkpoint = std::move(ckpt);
    }
  }
  if (options.out_dir) result.checkpoint.save(*options.out_dir / "ckpt-best");
  result.log.wall_seconds = seconds_since(start_time);
  return result;
}

}  // namespace dlm
