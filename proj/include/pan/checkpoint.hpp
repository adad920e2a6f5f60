#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pan/error.hpp"
#include "pan/model.hpp"
#include "pan/tensor.hpp"
#include "pan/wire.hpp"

namespace pan {

// Checkpoint layout:
//   "PANCKPT1"                         8-byte magic
//   u64 digest of the canonical config text (FNV-1a)
//   u32 config text length, then the text itself
//   u32 tensor count
//   count * { u16 name length, name, u32 rank, rank * u64 dims, f64 data }
//   u32 CRC32 over everything between the magic and this field
// Tensors are stored in model traversal order, learned parameters first and
// then batchnorm running statistics, so saving the same weights twice
// produces identical bytes.

inline constexpr std::string_view kCheckpointMagic = "PANCKPT1";

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct LoadedCheckpoint {
  std::uint64_t digest = 0;
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

/// Everything a checkpoint persists: learned parameters, then batchnorm
/// running statistics, both in model traversal order. Eval mode is broken
/// without the running statistics, so they ride along with the weights.
inline std::vector<std::pair<std::string, Tensor*>> checkpoint_tensors(PainAttnNet& model) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (const ParamRef& p : model.parameters()) out.emplace_back(p.name, p.value);
  for (const BufferRef& b : model.buffers()) out.emplace_back(b.name, b.value);
  return out;
}

inline std::string serialize_checkpoint(
    const std::string& config_text,
    const std::vector<std::pair<std::string, Tensor*>>& tensors) {
  std::string buf(kCheckpointMagic);
  wire::append_u64(buf, fnv1a64(config_text));
  wire::append_u32(buf, static_cast<std::uint32_t>(config_text.size()));
  buf += config_text;
  wire::append_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    wire::append_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf += name;
    wire::append_u32(buf, static_cast<std::uint32_t>(tensor->rank()));
    for (std::size_t d : tensor->shape()) wire::append_u64(buf, d);
    for (double v : tensor->vec()) wire::append_f64(buf, v);
  }
  wire::append_u32(buf,
                   wire::crc32_of(std::string_view(buf).substr(kCheckpointMagic.size())));
  return buf;
}

inline void save_checkpoint(const std::string& path, PainAttnNet& model) {
  wire::write_file(path, serialize_checkpoint(model.config().canonical_string(),
                                              checkpoint_tensors(model)));
}

inline LoadedCheckpoint parse_checkpoint(std::string_view image, const std::string& origin) {
  wire::Reader r(image, origin);
  if (r.bytes(kCheckpointMagic.size(), "magic") != kCheckpointMagic) {
    throw FormatError(origin + ": bad magic, not a checkpoint file");
  }
  LoadedCheckpoint out;
  out.digest = r.u64("config digest");
  const std::uint32_t cfg_len = r.u32("config length");
  out.config_text = std::string(r.bytes(cfg_len, "config text"));
  if (fnv1a64(out.config_text) != out.digest) {
    throw FormatError(origin + ": config digest does not match the embedded config text");
  }
  const std::uint32_t count = r.u32("tensor count");
  out.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16("tensor name length");
    std::string name(r.bytes(name_len, "tensor name"));
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) r.fail("tensor '" + name + "' has implausible rank");
    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.u64("tensor dim");
      if (dim == 0 || dim > (1ULL << 32)) r.fail("tensor '" + name + "' has implausible dim");
      shape[d] = static_cast<std::size_t>(dim);
      total *= shape[d];
    }
    std::vector<double> data(total);
    for (std::size_t k = 0; k < total; ++k) data[k] = r.f64("tensor data");
    out.tensors.emplace_back(std::move(name), Tensor::from_vector(shape, std::move(data)));
  }
  const std::size_t payload_end = r.pos();
  const std::uint32_t stored = r.u32("checksum");
  if (r.remaining() != 0) r.fail("trailing garbage after checksum");
  const std::uint32_t actual = wire::crc32_of(
      image.substr(kCheckpointMagic.size(), payload_end - kCheckpointMagic.size()));
  if (stored != actual) {
    throw FormatError(origin + ": checksum mismatch at byte " + std::to_string(payload_end));
  }
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(wire::read_file(path), path);
}

/// Installs saved weights into a model built with the same configuration.
/// The digest guards against silently loading weights into a different
/// architecture; names and shapes are still checked individually.
inline void apply_checkpoint(PainAttnNet& model, const LoadedCheckpoint& ckpt) {
  const std::string expect = model.config().canonical_string();
  if (fnv1a64(expect) != ckpt.digest) {
    throw ConfigError("checkpoint was saved from a different model configuration:\n  saved:  " +
                      ckpt.config_text + "\n  target: " + expect);
  }
  std::vector<std::pair<std::string, Tensor*>> slots = checkpoint_tensors(model);
  if (slots.size() != ckpt.tensors.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                      " tensors, model has " + std::to_string(slots.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& [name, tensor] = ckpt.tensors[i];
    if (name != slots[i].first) {
      throw FormatError("checkpoint tensor " + std::to_string(i) + " is '" + name +
                        "', model expects '" + slots[i].first + "'");
    }
    if (!tensor.same_shape(*slots[i].second)) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + tensor.shape_str() +
                        ", model expects " + slots[i].second->shape_str());
    }
    *slots[i].second = tensor;
  }
}

}  // namespace pan
