#include "scenarios.hpp"

#include "synthetic.hpp"

namespace dlm::testing {

std::vector<TokenizedSequence> encode_all(const std::vector<std::string>& texts, const Vocab& vocab,
                                          std::size_t max_len) {
  std::vector<TokenizedSequence> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(encode(t, vocab, max_len));
  return out;
}

PretrainSetup pretrain_setup() {
  PretrainSetup s;
  Rng rng(101);
  const auto lexicon = make_lexicon(50, rng);
  s.sentences = markov_corpus(lexicon, 1000, 6, 14, 2, 102);
  s.vocab = train_vocab(s.sentences, {.target_size = 10000, .min_frequency = 1});

  s.model.num_layers = 2;
  s.model.hidden_size = 32;
  s.model.num_heads = 2;
  s.model.intermediate_size = 64;
  s.model.vocab_size = s.vocab.size();
  s.model.max_position = 32;
  s.model.dropout_rate = 0.0;

  s.train.batch_size = 32;
  s.train.max_len = 32;
  s.train.epochs = 20;
  s.train.learning_rate = 2e-3;
  s.train.seed = 7;
  s.corpus = encode_all(s.sentences, s.vocab, s.train.max_len);
  return s;
}

FinetuneSetup finetune_setup(std::size_t per_class, std::uint64_t seed) {
  FinetuneSetup s;
  // One draw split in two: same lexicons, independent sentences.
  const auto all = separable_corpus(per_class + per_class / 4 + 1, 2, seed);
  LabeledCorpus train, test;
  for (std::size_t i = 0; i < all.texts.size(); ++i) {
    auto& part = i < 2 * per_class ? train : test;
    part.texts.push_back(all.texts[i]);
    part.labels.push_back(all.labels[i]);
  }
  s.vocab = train_vocab(train.texts, {.target_size = 2000, .min_frequency = 1});

  s.model.num_layers = 1;
  s.model.hidden_size = 32;
  s.model.num_heads = 2;
  s.model.intermediate_size = 64;
  s.model.vocab_size = s.vocab.size();
  s.model.max_position = 32;
  s.model.dropout_rate = 0.1;

  s.config.batch_size = 32;
  s.config.max_len = 32;
  s.config.epochs = 5;
  s.config.learning_rate = 1e-3;
  s.config.seed = seed;

  s.train.sequences = encode_all(train.texts, s.vocab, s.config.max_len);
  s.train.labels = train.labels;
  s.test.sequences = encode_all(test.texts, s.vocab, s.config.max_len);
  s.test.labels = test.labels;
  return s;
}

}  // namespace dlm::testing
