#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dlm/checkpoint.hpp"
#include "dlm/tokenizer.hpp"
#include "dlm/training.hpp"

namespace dlm {

struct CorpusStats {
  std::size_t sentence_count = 0;  // dialect sentences kept
  std::size_t token_count = 0;     // whitespace tokens in kept sentences
  std::size_t duplicate_count = 0;
  std::size_t msa_filtered_count = 0;
  std::size_t byte_size = 0;       // kept sentences, newline-terminated
  std::size_t input_count = 0;     // non-blank sentences ingested
  std::size_t repaired_count = 0;  // malformed UTF-8 sequences replaced

  // "sentences=<n> tokens=<n> duplicates=<n> msa_filtered=<n> bytes=<n>"
  std::string line() const;
  bool operator==(const CorpusStats&) const = default;
};

struct IngestResult {
  std::vector<std::string> sentences;  // normalized, non-empty
  std::size_t repaired = 0;
  std::size_t blank = 0;
};

// One sentence per line; CRLF and LF are equivalent; blank lines dropped.
void ingest_stream(std::istream& in, IngestResult& result);
IngestResult ingest(std::span<const std::filesystem::path> paths);

struct DedupResult {
  std::vector<std::string> sentences;
  std::size_t duplicates = 0;
};

// Exact match; first occurrence kept, order otherwise preserved.
DedupResult dedup(std::vector<std::string> sentences);

struct FilterModel {
  static constexpr std::int32_t kMsa = 0;
  static constexpr std::int32_t kDialect = 1;

  Checkpoint checkpoint;  // num_labels = 2
  Vocab vocab;
  double threshold = 0.5;
  std::size_t max_len = 128;

  // Throws when checkpoint and vocab disagree or the head is not binary.
  void validate() const;
};

// Dialect iff P(dialect) >= threshold, except that threshold 0 sends
// everything to dialect and threshold 1 everything to MSA.
bool route_to_dialect(double p_dialect, double threshold);

struct FilterTrainConfig {
  TrainConfig train;
  ModelConfig model;                  // used when no start checkpoint is given
  const Checkpoint* start = nullptr;  // pretrained encoder
  const Vocab* vocab = nullptr;       // trained from both corpora otherwise
  std::size_t vocab_size = 8000;
  double test_fraction = 0.1;
  double threshold = 0.5;

  FilterTrainConfig();
};

struct FilterTrainResult {
  FilterModel model;
  double heldout_accuracy = 0.0;
  std::size_t train_examples = 0;
  std::size_t test_examples = 0;
  std::vector<std::string> warnings;
};

// Balances the classes by seeded downsampling, holds out a test split and
// fine-tunes a binary MSA(0)/Dialect(1) classifier on the rest.
FilterTrainResult train_filter(std::span<const std::string> msa, std::span<const std::string> dialect,
                               const FilterTrainConfig& config);

struct FilterResult {
  std::vector<std::string> dialect;
  std::vector<std::string> msa;
  std::vector<double> p_dialect;  // per input sentence, input order
};

// Routing preserves input order within each output stream.
FilterResult filter_dialect(std::span<const std::string> sentences, const FilterModel& model,
                            std::size_t batch_size = 128);

struct PipelineResult {
  std::vector<std::string> dialect;
  std::vector<std::string> msa;
  CorpusStats stats;
};

// ingest -> dedup -> filter, with statistics.
PipelineResult run_corpus_pipeline(IngestResult ingested, const FilterModel& model, std::size_t batch_size = 128);

CorpusStats compute_stats(std::span<const std::string> kept, std::size_t duplicates, std::size_t msa_filtered,
                          std::size_t input_count, std::size_t repaired);

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace dlm
