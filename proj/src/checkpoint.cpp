#include "arv/checkpoint.hpp"

#include <fstream>

namespace arv {

namespace {
constexpr uint8_t kMagic[4] = {'A', 'R', 'V', 'C'};
constexpr uint16_t kVersion = 1;

void append_section(std::vector<uint8_t>& out, const std::string& name,
                    const std::vector<uint8_t>& payload) {
  ckpt_detail::put_u32(out, static_cast<uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  ckpt_detail::put_u64(out, payload.size());
  out.insert(out.end(), payload.begin(), payload.end());
}

std::vector<uint8_t> u64_payload(uint64_t v) {
  std::vector<uint8_t> b;
  ckpt_detail::put_u64(b, v);
  return b;
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(static_cast<uint8_t>(kVersion & 0xff));
  out.push_back(static_cast<uint8_t>(kVersion >> 8));

  const std::string cfg_text = serialize_config(ckpt.config);
  append_section(out, "config", std::vector<uint8_t>(cfg_text.begin(), cfg_text.end()));
  append_section(out, "step", u64_payload(ckpt.step));
  append_section(out, "opt_step", u64_payload(ckpt.opt_step));
  append_section(out, "rng", u64_payload(ckpt.rng_seed));
  append_section(out, "params", ckpt.params_blob);
  append_section(out, "adam_m", ckpt.adam_m_blob);
  append_section(out, "adam_v", ckpt.adam_v_blob);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error(cat("cannot open for writing: ", path));
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw io_error(cat("write failed: ", path));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error(cat("cannot open for reading: ", path));
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw parse_error("checkpoint: bad magic");
  const uint16_t version = static_cast<uint16_t>(bytes[4] | (uint16_t(bytes[5]) << 8));
  if (version != kVersion)
    throw parse_error(cat("unsupported checkpoint version: ", version));

  Checkpoint ckpt;
  bool have_config = false, have_params = false;
  ckpt_detail::Cursor c{bytes.data() + 6, bytes.size() - 6};
  while (c.remaining > 0) {
    const uint32_t name_len = c.u32();
    const uint8_t* nb = c.bytes(name_len);
    const std::string name(reinterpret_cast<const char*>(nb), name_len);
    const uint64_t payload_len = c.u64();
    const uint8_t* pb = c.bytes(static_cast<size_t>(payload_len));
    std::vector<uint8_t> payload(pb, pb + payload_len);

    if (name == "config") {
      ckpt.config = parse_config_text(std::string(payload.begin(), payload.end()));
      have_config = true;
    } else if (name == "step") {
      ckpt_detail::Cursor pc{payload.data(), payload.size()};
      ckpt.step = pc.u64();
    } else if (name == "opt_step") {
      ckpt_detail::Cursor pc{payload.data(), payload.size()};
      ckpt.opt_step = pc.u64();
    } else if (name == "rng") {
      ckpt_detail::Cursor pc{payload.data(), payload.size()};
      ckpt.rng_seed = pc.u64();
    } else if (name == "params") {
      ckpt.params_blob = std::move(payload);
      have_params = true;
    } else if (name == "adam_m") {
      ckpt.adam_m_blob = std::move(payload);
    } else if (name == "adam_v") {
      ckpt.adam_v_blob = std::move(payload);
    } else {
      throw parse_error(cat("checkpoint: unknown section '", name, "'"));
    }
  }
  if (!have_config || !have_params)
    throw parse_error("checkpoint: missing required section");
  return ckpt;
}

}  // namespace arv
