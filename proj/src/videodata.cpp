#include "arv/videodata.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "arv/rng.hpp"

namespace arv {

namespace {
constexpr double kPi = 3.14159265358979323846;

// Euclidean modulo for possibly-negative coordinates.
inline int32_t wrap(int64_t x, int32_t m) {
  int64_t r = x % m;
  if (r < 0) r += m;
  return static_cast<int32_t>(r);
}
}  // namespace

void validate(const MotionTaskSpec& spec) {
  if (spec.t_frames < 1) throw config_error("MotionTaskSpec.t_frames must be >= 1");
  if (spec.height < 1) throw config_error("MotionTaskSpec.height must be >= 1");
  if (spec.width < 1) throw config_error("MotionTaskSpec.width must be >= 1");
  if (spec.channels < 1) throw config_error("MotionTaskSpec.channels must be >= 1");
  if (spec.num_directions != 4 && spec.num_directions != 8)
    throw config_error("MotionTaskSpec.num_directions must be 4 or 8");
  if (spec.shape_size < 1) throw config_error("MotionTaskSpec.shape_size must be >= 1");
  if (spec.shape_size >= std::min(spec.height, spec.width))
    throw config_error("MotionTaskSpec.shape_size must be < min(height, width)");
  if (!(spec.speed >= 0.0) || !std::isfinite(spec.speed))
    throw config_error("MotionTaskSpec.speed must be finite and >= 0");
  if (!(spec.noise >= 0.0 && spec.noise <= 0.1))
    throw config_error("MotionTaskSpec.noise must be in [0, 0.1]");
}

MotionSample motion_params(const MotionTaskSpec& spec, int64_t index) {
  validate(spec);
  MotionSample s;
  s.label = static_cast<int32_t>(index % spec.num_directions);
  Rng rng = Rng(spec.seed).fork(static_cast<uint64_t>(index));
  s.y0 = static_cast<double>(rng.below(static_cast<uint64_t>(spec.height)));
  s.x0 = static_cast<double>(rng.below(static_cast<uint64_t>(spec.width)));
  const double angle = 2.0 * kPi * s.label / spec.num_directions;
  s.vx = spec.speed * std::cos(angle);
  s.vy = spec.speed * std::sin(angle);
  return s;
}

LabeledVideo generate_moving_shape(const MotionTaskSpec& spec, int64_t index) {
  const MotionSample mp = motion_params(spec, index);

  LabeledVideo out;
  out.label = mp.label;
  VideoTensor& v = out.video;
  v.t_frames = spec.t_frames;
  v.height = spec.height;
  v.width = spec.width;
  v.channels = spec.channels;
  v.data.assign(static_cast<size_t>(v.numel()), 0.0f);

  const int32_t s = spec.shape_size;
  for (int32_t t = 0; t < spec.t_frames; ++t) {
    const int64_t cy = std::llround(mp.y0 + mp.vy * t);
    const int64_t cx = std::llround(mp.x0 + mp.vx * t);
    for (int32_t dy = 0; dy < s; ++dy) {
      const int32_t y = wrap(cy - s / 2 + dy, spec.height);
      for (int32_t dx = 0; dx < s; ++dx) {
        const int32_t x = wrap(cx - s / 2 + dx, spec.width);
        for (int32_t c = 0; c < spec.channels; ++c) v.at(t, y, x, c) = 1.0f;
      }
    }
  }

  if (spec.noise > 0.0) {
    // Static spatial noise, identical across frames, drawn from the same
    // stream that produced the start position (after it).
    Rng rng = Rng(spec.seed).fork(static_cast<uint64_t>(index));
    rng.below(static_cast<uint64_t>(spec.height));
    rng.below(static_cast<uint64_t>(spec.width));
    for (int32_t h = 0; h < spec.height; ++h)
      for (int32_t w = 0; w < spec.width; ++w)
        for (int32_t c = 0; c < spec.channels; ++c) {
          const float n = static_cast<float>(rng.uniform01() * spec.noise);
          for (int32_t t = 0; t < spec.t_frames; ++t) {
            float& px = v.at(t, h, w, c);
            px = std::min(1.0f, px + n);
          }
        }
  }
  return out;
}

namespace {

constexpr uint8_t kMagic[4] = {0x41, 0x52, 0x56, 0x56};  // "ARVV"
constexpr uint8_t kVersion = 0x01;
constexpr uint8_t kDtypeF32 = 0x01;
constexpr int64_t kMaxElements = int64_t(1) << 31;

void put_u32le(std::vector<uint8_t>& buf, uint32_t v) {
  buf.push_back(static_cast<uint8_t>(v & 0xff));
  buf.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  buf.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  buf.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

uint32_t get_u32le(const uint8_t* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

}  // namespace

void write_video_file(const std::string& path, const VideoTensor& v) {
  if (v.numel() != static_cast<int64_t>(v.data.size()))
    throw contract_error("write_video_file: data length does not match dimensions");
  if (v.numel() > kMaxElements) throw contract_error("write_video_file: dimension overflow");
  for (float x : v.data)
    if (!std::isfinite(x) || x < 0.0f || x > 1.0f)
      throw contract_error("write_video_file: values must be finite and in [0, 1]");

  std::vector<uint8_t> header;
  header.insert(header.end(), kMagic, kMagic + 4);
  header.push_back(kVersion);
  header.push_back(kDtypeF32);
  header.push_back(0);
  header.push_back(0);
  put_u32le(header, static_cast<uint32_t>(v.t_frames));
  put_u32le(header, static_cast<uint32_t>(v.height));
  put_u32le(header, static_cast<uint32_t>(v.width));
  put_u32le(header, static_cast<uint32_t>(v.channels));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error(cat("cannot open for writing: ", path));
  f.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  static_assert(sizeof(float) == 4);
  f.write(reinterpret_cast<const char*>(v.data.data()),
          static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!f) throw io_error(cat("write failed: ", path));
}

VideoTensor read_video_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error(cat("cannot open for reading: ", path));

  uint8_t header[24];
  f.read(reinterpret_cast<char*>(header), sizeof(header));
  if (f.gcount() != static_cast<std::streamsize>(sizeof(header)))
    throw parse_error("truncated payload: header too short");
  if (std::memcmp(header, kMagic, 4) != 0) throw parse_error("bad magic");
  if (header[4] != kVersion) throw parse_error(cat("unsupported version: ", int(header[4])));
  if (header[5] != kDtypeF32) throw parse_error(cat("unsupported dtype code: ", int(header[5])));

  VideoTensor v;
  v.t_frames = static_cast<int32_t>(get_u32le(header + 8));
  v.height = static_cast<int32_t>(get_u32le(header + 12));
  v.width = static_cast<int32_t>(get_u32le(header + 16));
  v.channels = static_cast<int32_t>(get_u32le(header + 20));
  if (v.t_frames <= 0 || v.height <= 0 || v.width <= 0 || v.channels <= 0 ||
      v.numel() > kMaxElements)
    throw parse_error("dimension overflow");

  v.data.resize(static_cast<size_t>(v.numel()));
  f.read(reinterpret_cast<char*>(v.data.data()),
         static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(v.data.size() * sizeof(float)))
    throw parse_error("truncated payload");
  for (float x : v.data)
    if (!std::isfinite(x)) throw parse_error("non-finite value in payload");
  return v;
}

}  // namespace arv
