#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arv/common.hpp"

namespace arv {

// Raw video as a dense (t, h, w, c) row-major float array, values in [0, 1].
struct VideoTensor {
  int32_t t_frames = 0;
  int32_t height = 0;
  int32_t width = 0;
  int32_t channels = 0;
  std::vector<float> data;

  int64_t numel() const {
    return int64_t(t_frames) * height * width * channels;
  }
  size_t index(int32_t t, int32_t h, int32_t w, int32_t c) const {
    return static_cast<size_t>(((int64_t(t) * height + h) * width + w) * channels + c);
  }
  float at(int32_t t, int32_t h, int32_t w, int32_t c) const { return data[index(t, h, w, c)]; }
  float& at(int32_t t, int32_t h, int32_t w, int32_t c) { return data[index(t, h, w, c)]; }

  bool operator==(const VideoTensor& o) const {
    return t_frames == o.t_frames && height == o.height && width == o.width &&
           channels == o.channels && data == o.data;
  }
};

struct LabeledVideo {
  VideoTensor video;
  int32_t label = 0;
};

// Parameters of the synthetic moving-square task. A bright square of side
// shape_size moves at constant speed in one of num_directions directions
// (direction index = class label), wrapping toroidally.
struct MotionTaskSpec {
  int32_t t_frames = 8;
  int32_t height = 32;
  int32_t width = 32;
  int32_t channels = 1;
  int32_t num_directions = 8;
  int32_t shape_size = 12;
  double speed = 2.0;       // pixels per frame
  double noise = 0.0;       // static additive noise amplitude, in [0, 0.1]
  uint64_t seed = 0;
};

void validate(const MotionTaskSpec& spec);

// Per-sample kinematics, deterministic in (spec.seed, index). Exposed so
// tests can recompute frames independently of the rasterizer.
struct MotionSample {
  int32_t label = 0;
  double y0 = 0.0, x0 = 0.0;  // center at frame 0
  double vy = 0.0, vx = 0.0;  // pixels per frame
};

MotionSample motion_params(const MotionTaskSpec& spec, int64_t index);

// Pure function of (spec, index). Label is index mod num_directions so class
// balance over a contiguous index range is exact.
LabeledVideo generate_moving_shape(const MotionTaskSpec& spec, int64_t index);

// "ARVV1" raw video file format:
//   bytes 0-3  magic 41 52 56 56
//   byte  4    version 01
//   byte  5    dtype code (01 = little-endian IEEE float32)
//   bytes 6-7  reserved, zero
//   4 x u32 LE: T, H, W, C
//   T*H*W*C    float32 LE in (t, h, w, c) row-major order
void write_video_file(const std::string& path, const VideoTensor& v);
VideoTensor read_video_file(const std::string& path);

}  // namespace arv
