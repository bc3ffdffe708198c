#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dlm/rng.hpp"
#include "dlm/tensor.hpp"

namespace dlm {

struct ModelConfig {
  std::size_t num_layers = 12;
  std::size_t hidden_size = 768;
  std::size_t num_heads = 12;
  std::size_t intermediate_size = 3072;
  std::size_t vocab_size = 50000;
  std::size_t max_position = 512;
  std::size_t num_labels = 0;  // 0: no classification head
  double dropout_rate = 0.1;
  bool tie_mlm_weights = true;
  double layer_norm_eps = 1e-12;
  double init_std = 0.02;

  // 12 layers, 768 hidden, 12 heads, 3072 intermediate, 512 positions.
  static ModelConfig base(std::size_t vocab_size);

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Analytic parameter count: embeddings (+ embedding norm), per-layer
// attention / feed-forward / norms, MLM output bias (+ projection when
// untied), classification head.
std::size_t count_params(const ModelConfig& config);

struct ParameterSpec {
  std::string name;
  Shape shape;
  enum class Init { kNormal, kZeros, kOnes } init;
  bool decay;  // weight decay applies (matrices only)
};

// Names and shapes fully determined by the config, in allocation order.
std::vector<ParameterSpec> parameter_layout(const ModelConfig& config);

// Row-major [batch, length] token ids and 0/1 attention mask.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> input_ids;
  std::vector<std::int32_t> attention_mask;
};

template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool decay = true;
  };

  // Inserts or replaces.
  Tensor<T> set(std::string name, Tensor<T> value, bool decay);
  Tensor<T> get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // dropout source; required when training with dropout
};

template <typename T>
struct EncoderOutput {
  Tensor<T> hidden;      // [B, L, H]
  Tensor<T> mlm_logits;  // [B, L, V]
};

inline constexpr double kMaskedAttentionBias = -1e9;

// Post-norm transformer encoder with an MLM projection and an optional
// [CLS] classification head.
template <typename T>
class EncoderModel {
 public:
  // Allocates and initializes every parameter of parameter_layout(config).
  EncoderModel(const ModelConfig& config, std::uint64_t init_seed);
  // Adopts existing parameter values; layout must match the config exactly.
  EncoderModel(const ModelConfig& config, ParameterStore<T> params);

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }

  Tensor<T> encode(const TokenBatch& batch, const ForwardOptions& options = {}) const;
  Tensor<T> mlm_logits(const Tensor<T>& hidden) const;
  EncoderOutput<T> forward(const TokenBatch& batch, const ForwardOptions& options = {}) const;

  // Affine head over the position-0 hidden state: [B, num_labels] logits.
  Tensor<T> classify(const Tensor<T>& hidden) const;

  // Installs a freshly initialized classification head.
  void reset_classifier(std::size_t num_labels, std::uint64_t seed);

 private:
  Tensor<T> linear(const Tensor<T>& x, const std::string& prefix) const;
  Tensor<T> attention_block(const Tensor<T>& x, const Tensor<T>& mask_bias, std::size_t layer,
                            const ForwardOptions& options) const;
  Tensor<T> feed_forward_block(const Tensor<T>& x, std::size_t layer, const ForwardOptions& options) const;
  Tensor<T> maybe_dropout(const Tensor<T>& x, const ForwardOptions& options) const;

  ModelConfig config_;
  ParameterStore<T> params_;
};

}  // namespace dlm
