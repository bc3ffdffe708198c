#include "dlm/model.hpp"

#include <cmath>
#include <stdexcept>

#include "dlm/ops.hpp"

namespace dlm {

ModelConfig ModelConfig::base(std::size_t vocab_size) {
  ModelConfig config;
  config.num_layers = 12;
  config.hidden_size = 768;
  config.num_heads = 12;
  config.intermediate_size = 3072;
  config.vocab_size = vocab_size;
  config.max_position = 512;
  config.num_labels = 0;
  config.dropout_rate = 0.1;
  return config;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (hidden_size == 0 || num_heads == 0 || intermediate_size == 0) fail("hidden, heads and intermediate sizes must be positive");
  if (hidden_size % num_heads != 0) {
    fail("hidden_size " + std::to_string(hidden_size) + " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (max_position == 0) fail("max_position must be positive");
  if (num_labels == 1) fail("num_labels must be 0 (no head) or at least 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

std::size_t count_params(const ModelConfig& c) {
  const std::size_t h = c.hidden_size;
  const std::size_t embeddings = c.vocab_size * h + c.max_position * h + 2 * h;
  const std::size_t attention = 4 * (h * h + h) + 2 * h;
  const std::size_t feed_forward = (h * c.intermediate_size + c.intermediate_size) + (c.intermediate_size * h + h) + 2 * h;
  const std::size_t mlm = c.vocab_size + (c.tie_mlm_weights ? 0 : h * c.vocab_size);
  const std::size_t head = c.num_labels ? h * c.num_labels + c.num_labels : 0;
  return embeddings + c.num_layers * (attention + feed_forward) + mlm + head;
}

std::vector<ParameterSpec> parameter_layout(const ModelConfig& c) {
  using Init = ParameterSpec::Init;
  const std::size_t h = c.hidden_size;
  std::vector<ParameterSpec> specs;
  auto norm = [&](const std::string& prefix) {
    specs.push_back({prefix + ".gamma", {h}, Init::kOnes, false});
    specs.push_back({prefix + ".beta", {h}, Init::kZeros, false});
  };
  auto affine = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    specs.push_back({prefix + ".weight", {in, out}, Init::kNormal, true});
    specs.push_back({prefix + ".bias", {out}, Init::kZeros, false});
  };
  specs.push_back({"embeddings.word", {c.vocab_size, h}, Init::kNormal, true});
  specs.push_back({"embeddings.position", {c.max_position, h}, Init::kNormal, true});
  norm("embeddings.norm");
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    const std::string p = "layer." + std::to_string(l);
    affine(p + ".attention.query", h, h);
    affine(p + ".attention.key", h, h);
    affine(p + ".attention.value", h, h);
    affine(p + ".attention.output", h, h);
    norm(p + ".attention.norm");
    affine(p + ".ffn.inner", h, c.intermediate_size);
    affine(p + ".ffn.outer", c.intermediate_size, h);
    norm(p + ".ffn.norm");
  }
  if (!c.tie_mlm_weights) specs.push_back({"mlm.weight", {h, c.vocab_size}, Init::kNormal, true});
  specs.push_back({"mlm.bias", {c.vocab_size}, Init::kZeros, false});
  if (c.num_labels) affine("classifier", h, c.num_labels);
  return specs;
}

template <typename T>
Tensor<T> ParameterStore<T>::set(std::string name, Tensor<T> value, bool decay) {
  value.set_requires_grad(true);
  if (const auto it = index_.find(name); it != index_.end()) {
    entries_[it->second].value = value;
    entries_[it->second].decay = decay;
    return value;
  }
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), value, decay});
  return value;
}

template <typename T>
Tensor<T> ParameterStore<T>::get(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].value;
}

template <typename T>
bool ParameterStore<T>::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
std::size_t ParameterStore<T>::total_elements() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.value.numel();
  return total;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

namespace {

template <typename T>
Tensor<T> initialize(const ParameterSpec& spec, double stddev, Rng& rng) {
  switch (spec.init) {
    case ParameterSpec::Init::kOnes:
      return Tensor<T>::full(spec.shape, T{1});
    case ParameterSpec::Init::kZeros:
      return Tensor<T>::zeros(spec.shape);
    case ParameterSpec::Init::kNormal:
      break;
  }
  std::vector<T> data(shape_numel(spec.shape));
  for (T& v : data) v = static_cast<T>(rng.truncated_normal(stddev));
  return Tensor<T>(spec.shape, std::move(data));
}

}  // namespace

template <typename T>
EncoderModel<T>::EncoderModel(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  Rng rng(init_seed);
  for (const auto& spec : parameter_layout(config_)) {
    params_.set(spec.name, initialize<T>(spec, config_.init_std, rng), spec.decay);
  }
}

template <typename T>
EncoderModel<T>::EncoderModel(const ModelConfig& config, ParameterStore<T> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const auto layout = parameter_layout(config_);
  if (layout.size() != params_.size()) {
    throw std::invalid_argument("parameter set has " + std::to_string(params_.size()) + " tensors, config expects " +
                                std::to_string(layout.size()));
  }
  for (const auto& spec : layout) {
    if (!params_.contains(spec.name)) throw std::invalid_argument("missing parameter '" + spec.name + "'");
    const Tensor<T> t = params_.get(spec.name);
    if (t.shape() != spec.shape) {
      throw std::invalid_argument("parameter '" + spec.name + "' has shape " + shape_to_string(t.shape()) +
                                  ", config expects " + shape_to_string(spec.shape));
    }
  }
}

template <typename T>
Tensor<T> EncoderModel<T>::maybe_dropout(const Tensor<T>& x, const ForwardOptions& options) const {
  if (!options.training || config_.dropout_rate == 0.0) return x;
  if (!options.rng) throw std::invalid_argument("training forward with dropout needs an rng");
  return ops::dropout(x, config_.dropout_rate, *options.rng, true);
}

template <typename T>
Tensor<T> EncoderModel<T>::linear(const Tensor<T>& x, const std::string& prefix) const {
  return ops::add(ops::matmul(x, params_.get(prefix + ".weight")), params_.get(prefix + ".bias"));
}

template <typename T>
Tensor<T> EncoderModel<T>::attention_block(const Tensor<T>& x, const Tensor<T>& mask_bias, std::size_t layer,
                                           const ForwardOptions& options) const {
  const std::string p = "layer." + std::to_string(layer) + ".attention";
  const std::size_t b = x.dim(0), l = x.dim(1), h = config_.hidden_size;
  const std::size_t heads = config_.num_heads, head_dim = h / heads;

  auto split_heads = [&](const Tensor<T>& t) {
    return ops::permute(ops::reshape(t, {b, l, heads, head_dim}), {0, 2, 1, 3});  // [B, nh, L, hd]
  };
  const Tensor<T> q = split_heads(linear(x, p + ".query"));
  const Tensor<T> k = split_heads(linear(x, p + ".key"));
  const Tensor<T> v = split_heads(linear(x, p + ".value"));

  Tensor<T> scores = ops::matmul(q, ops::transpose(k, 2, 3));  // [B, nh, L, L]
  scores = ops::scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim))));
  scores = ops::add(scores, mask_bias);
  const Tensor<T> probs = maybe_dropout(ops::softmax(scores, -1), options);
  const Tensor<T> context = ops::reshape(ops::permute(ops::matmul(probs, v), {0, 2, 1, 3}), {b, l, h});
  const Tensor<T> out = maybe_dropout(linear(context, p + ".output"), options);
  return ops::layer_norm(ops::add(x, out), params_.get(p + ".norm.gamma"), params_.get(p + ".norm.beta"),
                         static_cast<T>(config_.layer_norm_eps));
}

template <typename T>
Tensor<T> EncoderModel<T>::feed_forward_block(const Tensor<T>& x, std::size_t layer,
                                              const ForwardOptions& options) const {
  const std::string p = "layer." + std::to_string(layer) + ".ffn";
  const Tensor<T> inner = ops::gelu(linear(x, p + ".inner"));
  const Tensor<T> out = maybe_dropout(linear(inner, p + ".outer"), options);
  return ops::layer_norm(ops::add(x, out), params_.get(p + ".norm.gamma"), params_.get(p + ".norm.beta"),
                         static_cast<T>(config_.layer_norm_eps));
}

template <typename T>
Tensor<T> EncoderModel<T>::encode(const TokenBatch& batch, const ForwardOptions& options) const {
  const std::size_t b = batch.batch, l = batch.length;
  if (b == 0 || l == 0) throw ShapeError("encode: empty batch");
  if (batch.input_ids.size() != b * l || batch.attention_mask.size() != b * l) {
    throw ShapeError("encode: ids (" + std::to_string(batch.input_ids.size()) + ") / mask (" +
                     std::to_string(batch.attention_mask.size()) + ") do not match batch shape [" +
                     std::to_string(b) + "," + std::to_string(l) + "]");
  }
  if (l > config_.max_position) {
    throw std::out_of_range("encode: length " + std::to_string(l) + " exceeds max_position " +
                            std::to_string(config_.max_position));
  }
  for (std::int32_t id : batch.input_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw std::out_of_range("encode: token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(config_.vocab_size));
    }
  }

  std::vector<std::int32_t> positions(l);
  for (std::size_t i = 0; i < l; ++i) positions[i] = static_cast<std::int32_t>(i);
  Tensor<T> x = ops::embedding(params_.get("embeddings.word"), batch.input_ids, {b, l});
  x = ops::add(x, ops::embedding(params_.get("embeddings.position"), positions, {l}));
  x = ops::layer_norm(x, params_.get("embeddings.norm.gamma"), params_.get("embeddings.norm.beta"),
                      static_cast<T>(config_.layer_norm_eps));
  x = maybe_dropout(x, options);

  std::vector<T> bias(b * l);
  for (std::size_t i = 0; i < bias.size(); ++i) {
    bias[i] = batch.attention_mask[i] ? T{0} : static_cast<T>(kMaskedAttentionBias);
  }
  const Tensor<T> mask_bias({b, 1, 1, l}, std::move(bias));

  for (std::size_t layer = 0; layer < config_.num_layers; ++layer) {
    x = attention_block(x, mask_bias, layer, options);
    x = feed_forward_block(x, layer, options);
  }
  return x;
}

template <typename T>
Tensor<T> EncoderModel<T>::mlm_logits(const Tensor<T>& hidden) const {
  const Tensor<T> projection = config_.tie_mlm_weights ? ops::transpose(params_.get("embeddings.word"), 0, 1)
                                                       : params_.get("mlm.weight");
  return ops::add(ops::matmul(hidden, projection), params_.get("mlm.bias"));
}

template <typename T>
EncoderOutput<T> EncoderModel<T>::forward(const TokenBatch& batch, const ForwardOptions& options) const {
  EncoderOutput<T> out;
  out.hidden = encode(batch, options);
  out.mlm_logits = mlm_logits(out.hidden);
  return out;
}

template <typename T>
Tensor<T> EncoderModel<T>::classify(const Tensor<T>& hidden) const {
  if (config_.num_labels == 0) throw std::logic_error("classify: model has no classification head (num_labels = 0)");
  const Tensor<T> cls = ops::select(hidden, 1, 0);  // [B, H]
  return linear(cls, "classifier");
}

template <typename T>
void EncoderModel<T>::reset_classifier(std::size_t num_labels, std::uint64_t seed) {
  if (num_labels < 2) throw std::invalid_argument("classifier needs num_labels >= 2, got " + std::to_string(num_labels));
  ModelConfig next = config_;
  next.num_labels = num_labels;
  Rng rng(seed);
  for (const auto& spec : parameter_layout(next)) {
    if (spec.name.rfind("classifier.", 0) != 0) continue;
    params_.set(spec.name, initialize<T>(spec, next.init_std, rng), spec.decay);
  }
  config_ = next;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class EncoderModel<float>;
template class EncoderModel<double>;

}  // namespace dlm
