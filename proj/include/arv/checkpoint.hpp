#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "arv/common.hpp"
#include "arv/config.hpp"
#include "arv/model.hpp"

namespace arv {

// Checkpoint container: magic "ARVC", u16 LE version, then length-prefixed
// named sections (u32 LE name length, name bytes, u64 LE payload length,
// payload). All content is canonical, so save -> load -> save is
// byte-identical.
struct Checkpoint {
  TrainConfig config;
  uint64_t step = 0;
  uint64_t opt_step = 0;
  uint64_t rng_seed = 0;
  std::vector<uint8_t> params_blob;
  std::vector<uint8_t> adam_m_blob;
  std::vector<uint8_t> adam_v_blob;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Tensor blob codec. Per tensor: u32 name length, name, u8 dtype size (4 or
// 8), u8 rank, rank x u32 dims, then the raw little-endian payload.
namespace ckpt_detail {

inline void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

struct Cursor {
  const uint8_t* p;
  size_t remaining;
  void need(size_t n) const {
    if (n > remaining) throw parse_error("checkpoint: truncated payload");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
    p += 4;
    remaining -= 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
    p += 8;
    remaining -= 8;
    return v;
  }
  uint8_t u8() {
    need(1);
    uint8_t v = *p;
    ++p;
    --remaining;
    return v;
  }
  const uint8_t* bytes(size_t n) {
    need(n);
    const uint8_t* q = p;
    p += n;
    remaining -= n;
    return q;
  }
};

}  // namespace ckpt_detail

template <typename T>
std::vector<uint8_t> encode_tensor_blob(const std::vector<std::string>& names,
                                        const std::vector<TensorData<T>>& tensors) {
  std::vector<uint8_t> out;
  for (size_t i = 0; i < names.size(); ++i) {
    ckpt_detail::put_u32(out, static_cast<uint32_t>(names[i].size()));
    out.insert(out.end(), names[i].begin(), names[i].end());
    out.push_back(static_cast<uint8_t>(sizeof(T)));
    out.push_back(static_cast<uint8_t>(tensors[i].shape.size()));
    for (int64_t d : tensors[i].shape)
      ckpt_detail::put_u32(out, static_cast<uint32_t>(d));
    const size_t nbytes = tensors[i].data.size() * sizeof(T);
    const size_t off = out.size();
    out.resize(off + nbytes);
    std::memcpy(out.data() + off, tensors[i].data.data(), nbytes);
  }
  return out;
}

template <typename T>
void decode_tensor_blob(const std::vector<uint8_t>& blob, std::vector<std::string>& names,
                        std::vector<TensorData<T>>& tensors) {
  names.clear();
  tensors.clear();
  ckpt_detail::Cursor c{blob.data(), blob.size()};
  while (c.remaining > 0) {
    const uint32_t name_len = c.u32();
    const uint8_t* nb = c.bytes(name_len);
    std::string name(reinterpret_cast<const char*>(nb), name_len);
    const uint8_t dtype = c.u8();
    if (dtype != sizeof(T))
      throw parse_error(cat("checkpoint: tensor '", name, "' has dtype size ", int(dtype),
                            ", expected ", sizeof(T)));
    const uint8_t rank = c.u8();
    TensorData<T> t;
    for (int i = 0; i < rank; ++i) t.shape.push_back(static_cast<int64_t>(c.u32()));
    const int64_t n = t.numel();
    const uint8_t* payload = c.bytes(static_cast<size_t>(n) * sizeof(T));
    t.data.resize(static_cast<size_t>(n));
    std::memcpy(t.data.data(), payload, static_cast<size_t>(n) * sizeof(T));
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
  }
}

template <typename T>
ModelParams<T> decode_params_blob(const std::vector<uint8_t>& blob) {
  ModelParams<T> p;
  decode_tensor_blob(blob, p.names, p.tensors);
  for (size_t i = 0; i < p.names.size(); ++i) p.index[p.names[i]] = i;
  return p;
}

}  // namespace arv
