#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dlm/checkpoint.hpp"
#include "dlm/metrics.hpp"
#include "dlm/tokenizer.hpp"
#include "dlm/training.hpp"

namespace dlm {

struct LabeledText {
  std::string text;
  std::int32_t label = 0;
};

struct LabeledDataset {
  std::string name;
  std::vector<std::string> label_names;  // id order
  std::vector<LabeledText> train;
  std::optional<std::vector<LabeledText>> dev;
  std::vector<LabeledText> test;

  std::size_t num_labels() const { return label_names.size(); }
};

struct TsvRow {
  std::string text;
  std::string label;
};

// Header "text<TAB>label"; the label is the field after the last tab.
std::vector<TsvRow> read_tsv(std::istream& in, const std::string& source);
std::vector<TsvRow> read_tsv(const std::filesystem::path& path);
void write_tsv(const std::filesystem::path& path, std::span<const TsvRow> rows);

// Labels take ids in order of first appearance in `train`; dev/test labels
// must occur in train.
LabeledDataset make_dataset(std::string name, std::span<const TsvRow> train, const std::vector<TsvRow>* dev,
                            std::span<const TsvRow> test);

// A directory with train.tsv, test.tsv and optionally dev.tsv, or a single
// TSV split deterministically into 80% train and 20% test.
LabeledDataset load_dataset(const std::filesystem::path& path);

inline constexpr double kSignificanceLevel = 0.05;

struct SeedRun {
  std::uint64_t seed = 0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::size_t best_epoch = 0;
};

struct Comparison {
  std::string baseline;
  std::vector<double> baseline_scores;  // macro-F1 per seed
  bool paired = false;
  TTestResult test;
  bool significant = false;
};

struct EvalReport {
  std::string dataset;
  std::string model;
  std::vector<SeedRun> runs;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::optional<Comparison> comparison;
  std::vector<std::string> warnings;

  std::vector<double> f1_scores() const;
  std::vector<double> accuracy_scores() const;
  // Readable summary followed by a [results] block of key=value lines.
  std::string serialize() const;
  // Reads the key=value block of serialize().
  static EvalReport parse(std::string_view text);
};

class EvalError : public std::runtime_error {
 public:
  EvalError(const std::string& what, EvalReport partial) : std::runtime_error(what), partial_(std::move(partial)) {}
  const EvalReport& partial() const { return partial_; }

 private:
  EvalReport partial_;
};

inline const std::vector<std::uint64_t>& default_seeds() {
  static const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  return seeds;
}

struct EvalOptions {
  std::string model_name;
  // Comparison against another model's per-seed macro-F1.
  std::optional<std::string> baseline_name;
  std::vector<double> baseline_scores;
  bool paired = false;
  std::function<void(const SeedRun&)> on_run;
};

// Fills mean/std and the optional comparison from `runs`.
void summarize(EvalReport& report, const EvalOptions& options);

// One fine-tune and test evaluation per seed; config.seed is replaced by each seed.
EvalReport run_multiseed(const LabeledDataset& dataset, const Checkpoint& start, const Vocab& vocab,
                         const TrainConfig& config, std::span<const std::uint64_t> seeds,
                         const EvalOptions& options = {});

}  // namespace dlm
