#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dlm/model.hpp"

namespace dlm {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
  bool operator==(const NamedArray&) const = default;
};

struct OptimizerSnapshot {
  std::int64_t step = 0;
  std::vector<NamedArray> first_moment;   // same order and shapes as parameters
  std::vector<NamedArray> second_moment;
  bool operator==(const OptimizerSnapshot&) const = default;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// On disk: a text manifest (magic, version, config, metadata and one line
// per tensor giving name, shape, byte offset and count) closed by its CRC-32,
// followed by the payload of little-endian float32 values.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr std::string_view kMagic = "dlm-checkpoint";

  ModelConfig config;
  std::vector<NamedArray> parameters;
  std::optional<OptimizerSnapshot> optimizer;
  std::int64_t step = 0;
  std::map<std::string, std::string> metadata;

  std::string serialize() const;
  static Checkpoint parse(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  bool operator==(const Checkpoint&) const = default;
};

template <typename T>
Checkpoint make_checkpoint(const EncoderModel<T>& model, std::int64_t step = 0);

// Rebuilds a model; the checkpoint's tensors must match its config's layout.
template <typename T>
EncoderModel<T> load_model(const Checkpoint& checkpoint);

}  // namespace dlm
