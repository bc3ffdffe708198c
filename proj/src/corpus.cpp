#include "dlm/corpus.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <stdexcept>
#include <string_view>
#include <unordered_set>

#include "dlm/normalize.hpp"

namespace dlm {

std::string CorpusStats::line() const {
  return fmt::format("sentences={} tokens={} duplicates={} msa_filtered={} bytes={}", sentence_count, token_count,
                     duplicate_count, msa_filtered_count, byte_size);
}

void ingest_stream(std::istream& in, IngestResult& result) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    NormalizedText norm = normalize_counted(line);
    result.repaired += norm.repaired;
    if (norm.text.empty()) {
      ++result.blank;
      continue;
    }
    result.sentences.push_back(std::move(norm.text));
  }
}

IngestResult ingest(std::span<const std::filesystem::path> paths) {
  IngestResult result;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read corpus file: " + path.string());
    ingest_stream(in, result);
    if (in.bad()) throw std::runtime_error("error while reading corpus file: " + path.string());
  }
  return result;
}

DedupResult dedup(std::vector<std::string> sentences) {
  DedupResult result;
  std::unordered_set<std::string_view> seen;
  seen.reserve(sentences.size());
  std::vector<bool> keep(sentences.size(), false);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    keep[i] = seen.insert(sentences[i]).second;
  }
  seen.clear();
  result.sentences.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (keep[i]) {
      result.sentences.push_back(std::move(sentences[i]));
    } else {
      ++result.duplicates;
    }
  }
  return result;
}

void FilterModel::validate() const {
  const ModelConfig& c = checkpoint.config;
  if (c.num_labels != 2) {
    throw std::invalid_argument(fmt::format("filter checkpoint must have a 2-class head, found num_labels={}", c.num_labels));
  }
  if (c.vocab_size != vocab.size()) {
    throw std::invalid_argument(
        fmt::format("filter checkpoint expects a vocabulary of {} tokens, vocab has {}", c.vocab_size, vocab.size()));
  }
  if (max_len < 3 || max_len > c.max_position) {
    throw std::invalid_argument(fmt::format("filter max_len {} outside [3, {}]", max_len, c.max_position));
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("filter threshold must lie in [0, 1]");
}

bool route_to_dialect(double p_dialect, double threshold) {
  if (threshold <= 0.0) return true;
  if (threshold >= 1.0) return false;
  return p_dialect >= threshold;
}

FilterTrainConfig::FilterTrainConfig() {
  model.num_layers = 1;
  model.hidden_size = 32;
  model.num_heads = 2;
  model.intermediate_size = 64;
  model.max_position = 128;
  model.dropout_rate = 0.1;
  train.epochs = 3;
  train.batch_size = 32;
  train.learning_rate = 1e-3;
}

namespace {

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (k < n) {
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

double sentence_overlap(std::span<const std::string> a, std::span<const std::string> b) {
  std::unordered_set<std::string_view> sa(a.begin(), a.end());
  std::unordered_set<std::string_view> sb(b.begin(), b.end());
  std::size_t shared = 0;
  for (auto s : sa) shared += sb.count(s);
  const std::size_t smaller = std::min(sa.size(), sb.size());
  return smaller == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(smaller);
}

}  // namespace

FilterTrainResult train_filter(std::span<const std::string> msa, std::span<const std::string> dialect,
                               const FilterTrainConfig& config) {
  if (msa.empty()) throw std::invalid_argument("train_filter: MSA corpus is empty");
  if (dialect.empty()) throw std::invalid_argument("train_filter: dialect corpus is empty");
  config.train.validate();
  const std::uint64_t seed = config.train.seed;

  FilterTrainResult result;
  const double overlap = sentence_overlap(msa, dialect);
  if (overlap >= 0.5) {
    result.warnings.push_back(
        fmt::format("degenerate data: {:.1f}% of sentences appear in both classes", 100.0 * overlap));
  }

  const std::size_t per_class = std::min(msa.size(), dialect.size());
  std::vector<std::string> texts;
  std::vector<std::int32_t> labels;
  for (std::size_t i : sample_indices(msa.size(), per_class, derive_seed(seed, 11))) {
    texts.push_back(msa[i]);
    labels.push_back(FilterModel::kMsa);
  }
  for (std::size_t i : sample_indices(dialect.size(), per_class, derive_seed(seed, 12))) {
    texts.push_back(dialect[i]);
    labels.push_back(FilterModel::kDialect);
  }

  FilterModel& filter = result.model;
  filter.threshold = config.threshold;
  filter.max_len = config.train.max_len;
  if (config.vocab) {
    filter.vocab = *config.vocab;
  } else {
    filter.vocab = train_vocab(texts, VocabTrainOptions{.target_size = std::max(config.vocab_size,
                                                                                 alphabet_size(texts) + Vocab::kNumSpecial + 1),
                                                        .min_frequency = 2});
  }

  Checkpoint start;
  if (config.start) {
    start = *config.start;
    if (start.config.vocab_size != filter.vocab.size()) {
      throw std::invalid_argument(fmt::format("train_filter: start checkpoint vocabulary {} does not match vocab {}",
                                              start.config.vocab_size, filter.vocab.size()));
    }
  } else {
    ModelConfig mc = config.model;
    mc.vocab_size = filter.vocab.size();
    mc.num_labels = 0;
    mc.max_position = std::max(mc.max_position, config.train.max_len);
    start = make_checkpoint(EncoderModel<float>(mc, derive_seed(seed, 13)));
  }

  auto [train_idx, test_idx] = holdout_split(texts.size(), config.test_fraction, derive_seed(seed, 14));
  LabeledSequences train_set;
  LabeledSequences test_set;
  for (std::size_t i : train_idx) {
    train_set.sequences.push_back(encode(texts[i], filter.vocab, filter.max_len));
    train_set.labels.push_back(labels[i]);
  }
  for (std::size_t i : test_idx) {
    test_set.sequences.push_back(encode(texts[i], filter.vocab, filter.max_len));
    test_set.labels.push_back(labels[i]);
  }
  result.train_examples = train_set.size();
  result.test_examples = test_set.size();

  FinetuneResult tuned = finetune(start, train_set, config.train, 2);
  filter.checkpoint = std::move(tuned.checkpoint);
  filter.checkpoint.metadata["stage"] = "filter";

  const LabeledSequences& eval_set = test_set.size() > 0 ? test_set : train_set;
  const EncoderModel<float> model = load_model<float>(filter.checkpoint);
  const auto probs = predict_proba(model, eval_set.sequences, 128);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool dialect_pred = route_to_dialect(probs[i][FilterModel::kDialect], filter.threshold);
    correct += dialect_pred == (eval_set.labels[i] == FilterModel::kDialect);
  }
  result.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(probs.size());
  if (result.heldout_accuracy <= 0.6) {
    result.warnings.push_back(
        fmt::format("degenerate data: held-out accuracy {:.3f} is near chance", result.heldout_accuracy));
  }
  return result;
}

FilterResult filter_dialect(std::span<const std::string> sentences, const FilterModel& model, std::size_t batch_size) {
  model.validate();
  if (batch_size == 0) throw std::invalid_argument("filter_dialect: batch_size must be positive");
  const EncoderModel<float> encoder = load_model<float>(model.checkpoint);

  FilterResult result;
  result.p_dialect.assign(sentences.size(), 0.0);
  // Classify in length-sorted chunks to limit padding; results are written
  // back by index so routing keeps input order.
  constexpr std::size_t kChunk = 1 << 14;
  std::vector<TokenizedSequence> encoded;
  std::vector<std::size_t> order;
  std::vector<TokenizedSequence> sorted;
  for (std::size_t base = 0; base < sentences.size(); base += kChunk) {
    const std::size_t count = std::min(kChunk, sentences.size() - base);
    encoded.clear();
    for (std::size_t i = 0; i < count; ++i) encoded.push_back(encode(sentences[base + i], model.vocab, model.max_len));
    order.resize(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return encoded[a].ids.size() < encoded[b].ids.size(); });
    sorted.clear();
    for (std::size_t i : order) sorted.push_back(std::move(encoded[i]));
    const auto probs = predict_proba(encoder, sorted, batch_size);
    for (std::size_t k = 0; k < count; ++k) result.p_dialect[base + order[k]] = probs[k][FilterModel::kDialect];
  }
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    (route_to_dialect(result.p_dialect[i], model.threshold) ? result.dialect : result.msa).push_back(sentences[i]);
  }
  return result;
}

CorpusStats compute_stats(std::span<const std::string> kept, std::size_t duplicates, std::size_t msa_filtered,
                          std::size_t input_count, std::size_t repaired) {
  CorpusStats stats;
  stats.sentence_count = kept.size();
  stats.duplicate_count = duplicates;
  stats.msa_filtered_count = msa_filtered;
  stats.input_count = input_count;
  stats.repaired_count = repaired;
  for (const auto& s : kept) {
    stats.token_count += split_words(s).size();
    stats.byte_size += s.size() + 1;
  }
  return stats;
}

PipelineResult run_corpus_pipeline(IngestResult ingested, const FilterModel& model, std::size_t batch_size) {
  const std::size_t input_count = ingested.sentences.size();
  DedupResult unique = dedup(std::move(ingested.sentences));
  FilterResult routed = filter_dialect(unique.sentences, model, batch_size);
  PipelineResult result;
  result.stats = compute_stats(routed.dialect, unique.duplicates, routed.msa.size(), input_count, ingested.repaired);
  result.dialect = std::move(routed.dialect);
  result.msa = std::move(routed.msa);
  return result;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace dlm
