#include "dlm/checkpoint.hpp"

#include <fmt/format.h>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dlm {
namespace {

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(chunk));
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string shape_field(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out.empty() ? "scalar" : out;
}

Shape parse_shape(const std::string& field) {
  Shape shape;
  if (field == "scalar") return shape;
  std::size_t pos = 0;
  while (pos <= field.size()) {
    std::size_t end = field.find('x', pos);
    if (end == std::string::npos) end = field.size();
    shape.push_back(std::stoull(field.substr(pos, end - pos)));
    pos = end + 1;
  }
  return shape;
}

void append_floats(std::string& payload, const std::vector<float>& values) {
  const std::size_t start = payload.size();
  payload.resize(start + values.size() * 4);
  char* out = payload.data() + start;
  for (float v : values) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    out[0] = static_cast<char>(bits & 0xFF);
    out[1] = static_cast<char>((bits >> 8) & 0xFF);
    out[2] = static_cast<char>((bits >> 16) & 0xFF);
    out[3] = static_cast<char>((bits >> 24) & 0xFF);
    out += 4;
  }
}

std::vector<float> read_floats(std::string_view payload, std::size_t offset, std::size_t count) {
  if (offset + count * 4 > payload.size()) throw CheckpointError("checkpoint payload truncated");
  std::vector<float> values(count);
  const auto* in = reinterpret_cast<const unsigned char*>(payload.data() + offset);
  for (std::size_t i = 0; i < count; ++i, in += 4) {
    const std::uint32_t bits = std::uint32_t{in[0]} | (std::uint32_t{in[1]} << 8) | (std::uint32_t{in[2]} << 16) |
                               (std::uint32_t{in[3]} << 24);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

void write_config(std::string& out, const ModelConfig& c) {
  out += fmt::format("config.num_layers={}\n", c.num_layers);
  out += fmt::format("config.hidden_size={}\n", c.hidden_size);
  out += fmt::format("config.num_heads={}\n", c.num_heads);
  out += fmt::format("config.intermediate_size={}\n", c.intermediate_size);
  out += fmt::format("config.vocab_size={}\n", c.vocab_size);
  out += fmt::format("config.max_position={}\n", c.max_position);
  out += fmt::format("config.num_labels={}\n", c.num_labels);
  out += fmt::format("config.dropout_rate={}\n", c.dropout_rate);
  out += fmt::format("config.tie_mlm_weights={}\n", c.tie_mlm_weights ? 1 : 0);
  out += fmt::format("config.layer_norm_eps={}\n", c.layer_norm_eps);
  out += fmt::format("config.init_std={}\n", c.init_std);
}

void read_config_key(ModelConfig& c, const std::string& key, const std::string& value) {
  if (key == "num_layers") c.num_layers = std::stoull(value);
  else if (key == "hidden_size") c.hidden_size = std::stoull(value);
  else if (key == "num_heads") c.num_heads = std::stoull(value);
  else if (key == "intermediate_size") c.intermediate_size = std::stoull(value);
  else if (key == "vocab_size") c.vocab_size = std::stoull(value);
  else if (key == "max_position") c.max_position = std::stoull(value);
  else if (key == "num_labels") c.num_labels = std::stoull(value);
  else if (key == "dropout_rate") c.dropout_rate = std::stod(value);
  else if (key == "tie_mlm_weights") c.tie_mlm_weights = value == "1";
  else if (key == "layer_norm_eps") c.layer_norm_eps = std::stod(value);
  else if (key == "init_std") c.init_std = std::stod(value);
  else throw CheckpointError("unknown config key in checkpoint: " + key);
}

struct TensorRecord {
  std::string group;  // param | adam.m | adam.v
  NamedArray* target;
};

}  // namespace

std::string Checkpoint::serialize() const {
  std::string manifest;
  manifest += std::string(kMagic) + "\n";
  manifest += fmt::format("format_version={}\n", kFormatVersion);
  write_config(manifest, config);
  manifest += fmt::format("step={}\n", step);
  for (const auto& [key, value] : metadata) {
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw CheckpointError("metadata entry '" + key + "' contains a reserved character");
    }
    manifest += fmt::format("meta.{}={}\n", key, value);
  }
  if (optimizer) manifest += fmt::format("optimizer.step={}\n", optimizer->step);

  std::string payload;
  auto emit = [&](std::string_view group, const NamedArray& array) {
    if (shape_numel(array.shape) != array.values.size()) {
      throw CheckpointError("tensor '" + array.name + "' shape does not match its value count");
    }
    manifest += fmt::format("tensor {} {} shape={} offset={} count={}\n", group, array.name, shape_field(array.shape),
                            payload.size(), array.values.size());
    append_floats(payload, array.values);
  };
  for (const auto& p : parameters) emit("param", p);
  if (optimizer) {
    for (const auto& m : optimizer->first_moment) emit("adam.m", m);
    for (const auto& v : optimizer->second_moment) emit("adam.v", v);
  }
  manifest += fmt::format("payload_bytes={}\n", payload.size());
  manifest += fmt::format("payload_crc32={:08x}\n", crc32_of(payload));
  const std::uint32_t manifest_crc = crc32_of(manifest);
  manifest += fmt::format("manifest_crc32={:08x}\n", manifest_crc);
  return manifest + payload;
}

Checkpoint Checkpoint::parse(std::string_view bytes) {
  Checkpoint ckpt;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string_view::npos) throw CheckpointError("checkpoint manifest is truncated");
    std::string line(bytes.substr(pos, end - pos));
    pos = end + 1;
    return line;
  };

  if (next_line() != kMagic) throw CheckpointError("not a checkpoint file (bad magic)");
  struct PendingTensor {
    std::string group, name, shape;
    std::size_t offset = 0, count = 0;
  };
  std::vector<PendingTensor> tensors;
  std::size_t payload_bytes = 0;
  std::uint32_t payload_crc = 0;
  bool have_version = false;
  try {
    for (;;) {
      const std::size_t line_start = pos;
      const std::string line = next_line();
      if (line.rfind("manifest_crc32=", 0) == 0) {
        const auto expected = static_cast<std::uint32_t>(std::stoul(line.substr(15), nullptr, 16));
        if (crc32_of(bytes.substr(0, line_start)) != expected) throw CheckpointError("checkpoint manifest checksum mismatch");
        break;
      }
      if (line.rfind("tensor ", 0) == 0) {
        std::istringstream in(line.substr(7));
        PendingTensor t;
        std::string shape, offset, count;
        in >> t.group >> t.name >> shape >> offset >> count;
        if (shape.rfind("shape=", 0) != 0 || offset.rfind("offset=", 0) != 0 || count.rfind("count=", 0) != 0) {
          throw CheckpointError("malformed tensor line: " + line);
        }
        t.shape = shape.substr(6);
        t.offset = std::stoull(offset.substr(7));
        t.count = std::stoull(count.substr(6));
        tensors.push_back(std::move(t));
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) throw CheckpointError("malformed manifest line: " + line);
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "format_version") {
        if (std::stoul(value) != kFormatVersion) throw CheckpointError("unsupported checkpoint version " + value);
        have_version = true;
      } else if (key.rfind("config.", 0) == 0) {
        read_config_key(ckpt.config, key.substr(7), value);
      } else if (key == "step") {
        ckpt.step = std::stoll(value);
      } else if (key.rfind("meta.", 0) == 0) {
        ckpt.metadata[key.substr(5)] = value;
      } else if (key == "optimizer.step") {
        ckpt.optimizer.emplace();
        ckpt.optimizer->step = std::stoll(value);
      } else if (key == "payload_bytes") {
        payload_bytes = std::stoull(value);
      } else if (key == "payload_crc32") {
        payload_crc = static_cast<std::uint32_t>(std::stoul(value, nullptr, 16));
      } else {
        throw CheckpointError("unknown manifest key: " + key);
      }
    }
  } catch (const std::logic_error& e) {  // stoul & co.
    throw CheckpointError(std::string("unparseable checkpoint manifest value: ") + e.what());
  }
  if (!have_version) throw CheckpointError("checkpoint manifest lacks format_version");

  const std::string_view payload = bytes.substr(pos);
  if (payload.size() != payload_bytes) {
    throw CheckpointError("checkpoint payload is " + std::to_string(payload.size()) + " bytes, manifest declares " +
                          std::to_string(payload_bytes));
  }
  if (crc32_of(payload) != payload_crc) throw CheckpointError("checkpoint payload checksum mismatch");

  for (const auto& t : tensors) {
    NamedArray array{t.name, parse_shape(t.shape), read_floats(payload, t.offset, t.count)};
    if (shape_numel(array.shape) != t.count) throw CheckpointError("tensor '" + t.name + "' count disagrees with shape");
    if (t.group == "param") {
      ckpt.parameters.push_back(std::move(array));
    } else if (t.group == "adam.m" || t.group == "adam.v") {
      if (!ckpt.optimizer) throw CheckpointError("optimizer tensors without optimizer.step");
      (t.group == "adam.m" ? ckpt.optimizer->first_moment : ckpt.optimizer->second_moment).push_back(std::move(array));
    } else {
      throw CheckpointError("unknown tensor group '" + t.group + "'");
    }
  }
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

template <typename T>
Checkpoint make_checkpoint(const EncoderModel<T>& model, std::int64_t step) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.step = step;
  for (const auto& entry : model.parameters().entries()) {
    const auto data = entry.value.data();
    ckpt.parameters.push_back(NamedArray{entry.name, entry.value.shape(), std::vector<float>(data.begin(), data.end())});
  }
  return ckpt;
}

template <typename T>
EncoderModel<T> load_model(const Checkpoint& checkpoint) {
  ParameterStore<T> params;
  const auto layout = parameter_layout(checkpoint.config);
  for (const auto& array : checkpoint.parameters) {
    const auto spec = std::find_if(layout.begin(), layout.end(), [&](const auto& s) { return s.name == array.name; });
    if (spec == layout.end()) throw CheckpointError("checkpoint tensor '" + array.name + "' is not part of its config");
    params.set(array.name, Tensor<T>(array.shape, std::vector<T>(array.values.begin(), array.values.end())), spec->decay);
  }
  try {
    return EncoderModel<T>(checkpoint.config, std::move(params));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint/config mismatch: ") + e.what());
  }
}

template Checkpoint make_checkpoint<float>(const EncoderModel<float>&, std::int64_t);
template Checkpoint make_checkpoint<double>(const EncoderModel<double>&, std::int64_t);
template EncoderModel<float> load_model<float>(const Checkpoint&);
template EncoderModel<double> load_model<double>(const Checkpoint&);

}  // namespace dlm
