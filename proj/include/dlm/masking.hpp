#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "dlm/model.hpp"
#include "dlm/rng.hpp"
#include "dlm/tokenizer.hpp"

namespace dlm {

inline constexpr std::int32_t kDefaultIgnoreIndex = -100;

struct MaskingConfig {
  double mask_rate = 0.15;
  double replace_with_mask = 0.8;
  double replace_with_random = 0.1;  // the remainder keeps the original
  std::size_t max_len = 128;
  std::int32_t ignore_index = kDefaultIgnoreIndex;
};

struct MaskedExample {
  std::vector<TokenId> input_ids;        // max_len, PAD-filled
  std::vector<std::int32_t> attention_mask;  // 1 on non-PAD positions
  std::vector<std::int32_t> labels;      // original id where selected, else ignore_index
};

// Running counts of masking decisions, for frequency checks.
struct MaskTally {
  std::size_t maskable = 0;
  std::size_t selected = 0;
  std::size_t masked = 0;
  std::size_t randomized = 0;
  std::size_t kept = 0;
};

// Whole-word masking. Words are visited in a seeded random order and taken
// whole until at least ceil(mask_rate * N) of the N maskable tokens are
// selected; each selected token then independently becomes [MASK]
// (80%), a uniformly drawn non-special id (10%) or stays (10%).
MaskedExample make_example(const TokenizedSequence& seq, std::size_t vocab_size, const MaskingConfig& config,
                           Rng& rng, MaskTally* tally = nullptr);

// Same sequence and seed give the same example.
MaskedExample make_example(const TokenizedSequence& seq, std::size_t vocab_size, const MaskingConfig& config,
                           std::uint64_t seed, MaskTally* tally = nullptr);

// Per-sequence seed for parallel generation: global_seed XOR index.
constexpr std::uint64_t sequence_seed(std::uint64_t global_seed, std::uint64_t index) { return global_seed ^ index; }

// Token budget ceil(mask_rate * maskable), clamped to maskable.
std::size_t mask_budget(double mask_rate, std::size_t maskable);

struct MlmBatch {
  TokenBatch tokens;
  std::vector<std::int32_t> labels;  // batch * length
};

// Stacks examples into [batch, max_len] arrays; the last batch may be short.
std::vector<MlmBatch> make_batches(std::span<const MaskedExample> examples, std::size_t batch_size);

// Drops trailing columns that are PAD in every row.
MlmBatch trim_padding(const MlmBatch& batch);

// Debug dump: one example per line, "ids|mask|labels" with space-separated integers.
void write_dump(std::ostream& out, std::span<const MaskedExample> examples);
std::vector<MaskedExample> read_dump(std::istream& in);

}  // namespace dlm
