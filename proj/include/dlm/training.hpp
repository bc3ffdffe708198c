#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlm/checkpoint.hpp"
#include "dlm/model.hpp"
#include "dlm/tokenizer.hpp"

namespace dlm {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t max_len = 128;
  std::size_t epochs = 5;
  double learning_rate = 5e-5;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  double mask_rate = 0.15;
  double holdout_fraction = 0.1;  // fine-tuning, when no dev split is given

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainLog {
  struct Step {
    std::int64_t step;
    double loss;
  };
  std::vector<Step> steps;
  std::vector<double> epoch_mean_loss;
  double wall_seconds = 0.0;

  // "step=<n> loss=<float>" per line.
  std::string serialize() const;
  void write(const std::filesystem::path& path) const;
};

// Per-epoch hook: epoch index (1-based) and the checkpoint just taken.
using EpochCallback = std::function<void(std::size_t epoch, const Checkpoint&, const TrainLog&)>;

struct PretrainOptions {
  // When set, ckpt-epoch<k> is written here after every epoch.
  std::optional<std::filesystem::path> out_dir;
  EpochCallback on_epoch;
  // Starting weights; a fresh model seeded from TrainConfig::seed otherwise.
  const Checkpoint* init = nullptr;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

// Masked-LM pretraining. Sequences are re-masked every epoch (seeded) and
// visited in a seeded shuffled order.
TrainResult pretrain(std::span<const TokenizedSequence> corpus, const TrainConfig& config,
                     const ModelConfig& model_config, const PretrainOptions& options = {});

struct LabeledSequences {
  std::vector<TokenizedSequence> sequences;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return sequences.size(); }
};

struct FinetuneOptions {
  // Selection split; a seeded holdout of the training data otherwise.
  const LabeledSequences* dev = nullptr;
  std::optional<std::filesystem::path> out_dir;  // receives ckpt-best
  EpochCallback on_epoch;
};

struct FinetuneResult {
  Checkpoint checkpoint;  // best epoch by selection accuracy
  TrainLog log;
  std::size_t best_epoch = 0;
  double best_accuracy = 0.0;
  std::vector<double> epoch_accuracy;
};

// Installs a fresh classification head on the start checkpoint and trains
// every parameter jointly with cross-entropy on the labels.
FinetuneResult finetune(const Checkpoint& start, const LabeledSequences& data, const TrainConfig& config,
                        std::size_t num_labels, const FinetuneOptions& options = {});

// Class probabilities [n][num_labels], batches padded to their longest sequence.
std::vector<std::vector<double>> predict_proba(const EncoderModel<float>& model,
                                               std::span<const TokenizedSequence> sequences,
                                               std::size_t batch_size = 64);
std::vector<std::int32_t> predict(const EncoderModel<float>& model, std::span<const TokenizedSequence> sequences,
                                  std::size_t batch_size = 64);

// Rows padded to the longest sequence in the span.
TokenBatch pad_batch(std::span<const TokenizedSequence> sequences);

// Deterministic disjoint split of [0, n): (train, holdout) index lists.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::size_t n, double fraction,
                                                                            std::uint64_t seed);

}  // namespace dlm
