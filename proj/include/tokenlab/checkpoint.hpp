#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "tokenlab/io.hpp"
#include "tokenlab/optimizer.hpp"
#include "tokenlab/tensor.hpp"

namespace tokenlab {

// Binary model container. Layout, all little-endian:
//
//   "TKLB"                       magic
//   u32  version                 currently 1
//   u32  diffusion_steps         schedule parameter T (0 when not applicable)
//   u32  array_count
//   per array, in name order:
//     u32  name_len, name bytes
//     u32  dtype tag             1 = f64 (the only tag defined)
//     u32  rank, u32 dims[rank]
//     f64  payload[numel]
//   u32  crc32                   over every byte above
//
// The map keeps arrays name-sorted, so serialization is canonical and a
// save/load round trip is bit-identical.
struct Checkpoint {
  std::uint32_t version = 1;
  std::uint32_t diffusion_steps = 0;
  std::map<std::string, Tensor> arrays;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDtypeF64 = 1;

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = "TKLB";
  put_u32(out, ckpt.version);
  put_u32(out, ckpt.diffusion_steps);
  put_u32(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, tensor] : ckpt.arrays) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, kDtypeF64);
    put_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (std::size_t d : tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.data) put_f64(out, v);
  }
  put_u32(out, crc32(out));
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 + 4 + 4 + 4 + 4)
    throw TkError("checkpoint", "size", "file too short to be a model container", 1);
  std::uint32_t stored = 0;
  {
    ByteReader tail(bytes);
    tail.pos = bytes.size() - 4;
    stored = tail.u32();
  }
  std::uint32_t actual = crc32(bytes.substr(0, bytes.size() - 4));
  if (stored != actual)
    throw TkError("checkpoint", "crc", "checksum mismatch; file is corrupt or truncated", 1);

  ByteReader r(bytes);
  if (r.bytes(4) != "TKLB")
    throw TkError("checkpoint", "magic", "not a model container (bad magic)", 1);
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kCheckpointVersion)
    throw TkError("checkpoint", "version",
                  "unsupported version " + std::to_string(ckpt.version), 1);
  ckpt.diffusion_steps = r.u32();
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    std::uint32_t dtype = r.u32();
    if (dtype != kDtypeF64)
      throw TkError("checkpoint", name, "unknown dtype tag " + std::to_string(dtype), 1);
    std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (std::uint32_t a = 0; a < rank; ++a) shape[a] = r.u32();
    Tensor t(shape);
    for (double& v : t.data) v = r.f64();
    if (!ckpt.arrays.emplace(name, std::move(t)).second)
      throw TkError("checkpoint", name, "duplicate array name", 1);
  }
  if (r.pos != bytes.size() - 4)  // only the crc trailer may remain
    throw TkError("checkpoint", "trailer", "trailing bytes after declared arrays", 1);
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  atomic_write_file(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path));
}

// ParamStore bridging: training code keeps parameters in a store; the
// container holds them plus any bookkeeping arrays the caller adds.
inline Checkpoint checkpoint_from_store(const ParamStore& store, std::uint32_t diffusion_steps) {
  Checkpoint ckpt;
  ckpt.diffusion_steps = diffusion_steps;
  for (const auto& [name, tensor] : store.params) ckpt.arrays.emplace(name, tensor);
  return ckpt;
}

inline void store_from_checkpoint(const Checkpoint& ckpt, ParamStore& store,
                                  const std::string& prefix) {
  for (const auto& [name, tensor] : ckpt.arrays)
    if (name.rfind(prefix, 0) == 0) store.params[name] = tensor;
}

}  // namespace tokenlab
