#include "dlm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dlm {

std::size_t mask_budget(double mask_rate, std::size_t maskable) {
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw std::invalid_argument("mask_rate must lie in [0, 1]");
  const double exact = mask_rate * static_cast<double>(maskable);
  // 0.15 * 20 is 3.0000000000000004 in binary; snap products that are
  // integral up to rounding before taking the ceiling.
  const double nearest = std::round(exact);
  const double target = std::abs(exact - nearest) <= 1e-9 * std::max(1.0, exact) ? nearest : std::ceil(exact);
  return std::min(maskable, static_cast<std::size_t>(target));
}

MaskedExample make_example(const TokenizedSequence& seq, std::size_t vocab_size, const MaskingConfig& config,
                           Rng& rng, MaskTally* tally) {
  if (seq.ids.size() > config.max_len) {
    throw std::invalid_argument("make_example: sequence of " + std::to_string(seq.ids.size()) +
                                " ids exceeds max_len " + std::to_string(config.max_len));
  }
  if (vocab_size <= Vocab::kNumSpecial) throw std::invalid_argument("make_example: vocabulary has no regular tokens");
  const std::size_t maskable = seq.maskable_count();
  const std::size_t budget = mask_budget(config.mask_rate, maskable);

  MaskedExample ex;
  ex.input_ids.assign(config.max_len, Vocab::kPad);
  std::copy(seq.ids.begin(), seq.ids.end(), ex.input_ids.begin());
  ex.attention_mask.assign(config.max_len, 0);
  std::fill_n(ex.attention_mask.begin(), seq.ids.size(), 1);
  ex.labels.assign(config.max_len, config.ignore_index);

  std::vector<std::size_t> order(seq.word_spans.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));

  const double mask_cut = config.replace_with_mask;
  const double random_cut = config.replace_with_mask + config.replace_with_random;
  const std::size_t regular = vocab_size - Vocab::kNumSpecial;
  std::size_t selected = 0;
  for (std::size_t w : order) {
    if (selected >= budget) break;
    const WordSpan& span = seq.word_spans[w];
    for (std::size_t pos = span.begin; pos < span.end; ++pos) {
      ex.labels[pos] = seq.ids[pos];
      const double u = rng.uniform();
      if (u < mask_cut) {
        ex.input_ids[pos] = Vocab::kMask;
        if (tally) ++tally->masked;
      } else if (u < random_cut) {
        ex.input_ids[pos] = static_cast<TokenId>(Vocab::kNumSpecial + rng.uniform_index(regular));
        if (tally) ++tally->randomized;
      } else if (tally) {
        ++tally->kept;
      }
    }
    selected += span.size();
  }
  if (tally) {
    tally->maskable += maskable;
    tally->selected += selected;
  }
  return ex;
}

MaskedExample make_example(const TokenizedSequence& seq, std::size_t vocab_size, const MaskingConfig& config,
                           std::uint64_t seed, MaskTally* tally) {
  Rng rng(seed);
  return make_example(seq, vocab_size, config, rng, tally);
}

std::vector<MlmBatch> make_batches(std::span<const MaskedExample> examples, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be positive");
  std::vector<MlmBatch> batches;
  if (examples.empty()) return batches;
  const std::size_t length = examples.front().input_ids.size();
  for (const auto& ex : examples) {
    if (ex.input_ids.size() != length || ex.attention_mask.size() != length || ex.labels.size() != length) {
      throw std::invalid_argument("make_batches: examples have mixed max_len (" + std::to_string(length) + " vs " +
                                  std::to_string(ex.input_ids.size()) + ")");
    }
  }
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, examples.size() - start);
    MlmBatch batch;
    batch.tokens.batch = count;
    batch.tokens.length = length;
    batch.tokens.input_ids.reserve(count * length);
    batch.tokens.attention_mask.reserve(count * length);
    batch.labels.reserve(count * length);
    for (std::size_t i = start; i < start + count; ++i) {
      const auto& ex = examples[i];
      batch.tokens.input_ids.insert(batch.tokens.input_ids.end(), ex.input_ids.begin(), ex.input_ids.end());
      batch.tokens.attention_mask.insert(batch.tokens.attention_mask.end(), ex.attention_mask.begin(),
                                         ex.attention_mask.end());
      batch.labels.insert(batch.labels.end(), ex.labels.begin(), ex.labels.end());
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

MlmBatch trim_padding(const MlmBatch& batch) {
  const std::size_t rows = batch.tokens.batch;
  const std::size_t length = batch.tokens.length;
  std::size_t used = 1;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = length; c-- > 0;) {
      if (batch.tokens.attention_mask[r * length + c]) {
        used = std::max(used, c + 1);
        break;
      }
    }
  }
  if (used == length) return batch;
  MlmBatch out;
  out.tokens.batch = rows;
  out.tokens.length = used;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto first = static_cast<std::ptrdiff_t>(r * length);
    const auto last = first + static_cast<std::ptrdiff_t>(used);
    out.tokens.input_ids.insert(out.tokens.input_ids.end(), batch.tokens.input_ids.begin() + first,
                                batch.tokens.input_ids.begin() + last);
    out.tokens.attention_mask.insert(out.tokens.attention_mask.end(), batch.tokens.attention_mask.begin() + first,
                                     batch.tokens.attention_mask.begin() + last);
    out.labels.insert(out.labels.end(), batch.labels.begin() + first, batch.labels.begin() + last);
  }
  return out;
}

namespace {

template <typename Int>
void write_ints(std::ostream& out, const std::vector<Int>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ' ';
    out << values[i];
  }
}

std::vector<std::int32_t> parse_ints(const std::string& field, std::size_t line_no) {
  std::vector<std::int32_t> values;
  std::istringstream in(field);
  long long v = 0;
  while (in >> v) values.push_back(static_cast<std::int32_t>(v));
  if (!in.eof()) throw std::invalid_argument("dump line " + std::to_string(line_no) + ": non-integer field");
  return values;
}

}  // namespace

void write_dump(std::ostream& out, std::span<const MaskedExample> examples) {
  for (const auto& ex : examples) {
    write_ints(out, ex.input_ids);
    out << '|';
    write_ints(out, ex.attention_mask);
    out << '|';
    write_ints(out, ex.labels);
    out << '\n';
  }
}

std::vector<MaskedExample> read_dump(std::istream& in) {
  std::vector<MaskedExample> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t a = line.find('|');
    const std::size_t b = a == std::string::npos ? a : line.find('|', a + 1);
    if (b == std::string::npos) throw std::invalid_argument("dump line " + std::to_string(line_no) + ": expected ids|mask|labels");
    MaskedExample ex;
    ex.input_ids = parse_ints(line.substr(0, a), line_no);
    ex.attention_mask = parse_ints(line.substr(a + 1, b - a - 1), line_no);
    ex.labels = parse_ints(line.substr(b + 1), line_no);
    if (ex.attention_mask.size() != ex.input_ids.size() || ex.labels.size() != ex.input_ids.size()) {
      throw std::invalid_argument("dump line " + std::to_string(line_no) + ": field lengths differ");
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

}  // namespace dlm
