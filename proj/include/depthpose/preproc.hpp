#pragma once

// Depth-map pre-processing: foreground thresholding around the person's
// depth, morphological closing, bilinear resize and [0,1] scaling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthpose/core.hpp"

namespace depthpose {

enum class ScaleMode { PerFrame, Global };

struct PreprocConfig {
  bool segment = true; ///< run foreground segmentation before resizing
  double depth_halfwidth = 0.5;
  int morph_kernel = 3;
  int target_h = 100;
  int target_w = 100;
  double center_window_frac = 0.25;
  ScaleMode scale_mode = ScaleMode::PerFrame;
  double global_max_depth = 10.0; ///< divisor in ScaleMode::Global

  void validate() const {
    detail::require(depth_halfwidth > 0, "preproc: depth_halfwidth must be > 0");
    detail::require(morph_kernel >= 1 && morph_kernel % 2 == 1, "preproc: morph_kernel must be odd and >= 1");
    detail::require(target_h >= 8 && target_w >= 8, "preproc: target size must be >= 8");
    detail::require(center_window_frac > 0 && center_window_frac <= 1, "preproc: center_window_frac out of (0, 1]");
    detail::require(global_max_depth > 0, "preproc: global_max_depth must be > 0");
  }
};

/// Network input: target_h x target_w values in [0, 1], row-major.
struct InputImage {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float at(int r, int c) const {
    return values[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)];
  }
};

struct SegmentResult {
  DepthFrame frame;
  bool empty_input = false; ///< warning: the frame had no returns and was passed through
  double person_depth = 0.0;
};

using Mask = std::vector<std::uint8_t>;

namespace detail {

// Square dilation or erosion of a binary h x w mask; pixels outside the
// image read as `outside`.
inline Mask morph(const Mask &in, int h, int w, int radius, bool dilate) {
  // Separable: rows then columns.
  Mask tmp(in.size()), out(in.size());
  const std::uint8_t outside = dilate ? 0 : 1;
  auto idx = [w](int r, int c) { return static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + static_cast<std::size_t>(c); };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      std::uint8_t acc = dilate ? 0 : 1;
      for (int k = -radius; k <= radius; ++k) {
        const int cc = c + k;
        const std::uint8_t v = (cc < 0 || cc >= w) ? outside : in[idx(r, cc)];
        acc = dilate ? (acc | v) : (acc & v);
      }
      tmp[idx(r, c)] = acc;
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      std::uint8_t acc = dilate ? 0 : 1;
      for (int k = -radius; k <= radius; ++k) {
        const int rr = r + k;
        const std::uint8_t v = (rr < 0 || rr >= h) ? outside : tmp[idx(rr, c)];
        acc = dilate ? (acc | v) : (acc & v);
      }
      out[idx(r, c)] = acc;
    }
  return out;
}

} // namespace detail

/// Morphological closing (dilate then erode) of a binary mask with a square
/// kernel x kernel element. Computed on a zero-padded canvas so the result
/// equals the unbounded-plane closing restricted to the image; this makes it
/// idempotent.
inline Mask close_mask(const Mask &mask, int h, int w, int kernel) {
  detail::require(kernel >= 1 && kernel % 2 == 1, "closing kernel must be odd and >= 1");
  detail::require(mask.size() == static_cast<std::size_t>(h) * static_cast<std::size_t>(w), "mask size mismatch");
  const int r = kernel / 2;
  if (r == 0)
    return mask;
  const int pad = 2 * r;
  const int ph = h + 2 * pad, pw = w + 2 * pad;
  Mask padded(static_cast<std::size_t>(ph) * static_cast<std::size_t>(pw), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      padded[static_cast<std::size_t>(y + pad) * static_cast<std::size_t>(pw) + static_cast<std::size_t>(x + pad)] =
          mask[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
  const Mask closed = detail::morph(detail::morph(padded, ph, pw, r, true), ph, pw, r, false);
  Mask out(mask.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] =
          closed[static_cast<std::size_t>(y + pad) * static_cast<std::size_t>(pw) + static_cast<std::size_t>(x + pad)];
  return out;
}

inline Mask foreground_mask(const DepthFrame &f) {
  Mask m(f.depth.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = f.depth[i] > 0.0f ? 1 : 0;
  return m;
}

/// Closes the foreground mask of `frame`. Pixels that the closing adds are
/// filled with the depth of the nearest surviving pixel (4-connected BFS
/// distance; ties resolved by scan order). Pixels removed by the closing
/// cannot exist since closing is extensive.
inline DepthFrame morph_close(const DepthFrame &frame, int kernel) {
  const int h = frame.height, w = frame.width;
  const Mask closed = close_mask(foreground_mask(frame), h, w, kernel);
  DepthFrame out = frame;
  std::vector<int> source(frame.depth.size(), -1);
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < frame.depth.size(); ++i)
    if (frame.depth[i] > 0.0f) {
      source[i] = static_cast<int>(i);
      queue.push_back(i);
    }
  bool need_fill = false;
  for (std::size_t i = 0; i < closed.size(); ++i)
    need_fill = need_fill || (closed[i] && frame.depth[i] <= 0.0f);
  if (!need_fill)
    return out;
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    const int r = static_cast<int>(i) / w, c = static_cast<int>(i) % w;
    const int nbr[4][2] = {{r - 1, c}, {r, c - 1}, {r, c + 1}, {r + 1, c}};
    for (const auto &n : nbr) {
      if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w)
        continue;
      const auto j = static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(w) + static_cast<std::size_t>(n[1]);
      if (source[j] >= 0)
        continue;
      source[j] = source[i];
      queue.push_back(j);
    }
  }
  for (std::size_t i = 0; i < closed.size(); ++i)
    if (closed[i] && frame.depth[i] <= 0.0f && source[i] >= 0)
      out.depth[i] = frame.depth[static_cast<std::size_t>(source[i])];
  return out;
}

/// Mean of the non-zero depths in the centred square window of side
/// center_window_frac * min(H, W) (at least one pixel); 0 if none.
inline double estimate_person_depth(const DepthFrame &frame, double window_frac) {
  const int side = std::max(1, static_cast<int>(std::lround(window_frac * std::min(frame.height, frame.width))));
  const int r0 = (frame.height - side) / 2, c0 = (frame.width - side) / 2;
  double sum = 0.0;
  std::size_t n = 0;
  for (int r = r0; r < r0 + side; ++r)
    for (int c = c0; c < c0 + side; ++c) {
      const float d = frame.at(r, c);
      if (d > 0.0f) {
        sum += d;
        ++n;
      }
    }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

/// Keeps pixels within person_depth +- depth_halfwidth, then closes the mask.
inline SegmentResult segment_foreground(const DepthFrame &frame, const PreprocConfig &cfg) {
  cfg.validate();
  detail::require(!frame.empty(), "segment_foreground: empty frame");
  SegmentResult res{frame, false, 0.0};
  double person = estimate_person_depth(frame, cfg.center_window_frac);
  if (person <= 0.0) {
    // Nothing in the centre window: fall back to the whole frame.
    person = estimate_person_depth(frame, 1.0);
    if (person <= 0.0) {
      res.empty_input = true;
      return res;
    }
  }
  res.person_depth = person;
  const double lo = person - cfg.depth_halfwidth, hi = person + cfg.depth_halfwidth;
  for (auto &d : res.frame.depth)
    if (d < lo || d > hi)
      d = 0.0f;
  res.frame = morph_close(res.frame, cfg.morph_kernel);
  return res;
}

/// Bilinear resize on a half-pixel-centred grid: output pixel (r, c) samples
/// the source at ((r + 0.5) * H / th - 0.5, (c + 0.5) * W / tw - 0.5), with
/// coordinates clamped to the image.
inline std::vector<float> resize_bilinear(std::span<const float> src, int h, int w, int th, int tw) {
  detail::require(src.size() == static_cast<std::size_t>(h) * static_cast<std::size_t>(w), "resize: size mismatch");
  std::vector<float> out(static_cast<std::size_t>(th) * static_cast<std::size_t>(tw));
  const double sy = static_cast<double>(h) / th, sx = static_cast<double>(w) / tw;
  for (int r = 0; r < th; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = y - y0;
    for (int c = 0; c < tw; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = x - x0;
      auto at = [&](int rr, int cc) {
        return static_cast<double>(src[static_cast<std::size_t>(rr) * static_cast<std::size_t>(w) + static_cast<std::size_t>(cc)]);
      };
      const double top = (1 - fx) * at(y0, x0) + fx * at(y0, x1);
      const double bot = (1 - fx) * at(y1, x0) + fx * at(y1, x1);
      out[static_cast<std::size_t>(r) * static_cast<std::size_t>(tw) + static_cast<std::size_t>(c)] =
          static_cast<float>((1 - fy) * top + fy * bot);
    }
  }
  return out;
}

/// Resize to the network input size and divide by the frame's maximum depth
/// (or the configured global maximum), clamping into [0, 1].
inline InputImage resize_and_scale(const DepthFrame &frame, const PreprocConfig &cfg) {
  cfg.validate();
  const float max_depth = frame.empty() ? 0.0f : *std::max_element(frame.depth.begin(), frame.depth.end());
  detail::require(max_depth > 0.0f, "resize_and_scale: frame has no depth returns");
  InputImage img{cfg.target_h, cfg.target_w,
                 resize_bilinear(frame.depth, frame.height, frame.width, cfg.target_h, cfg.target_w)};
  const double scale = cfg.scale_mode == ScaleMode::PerFrame ? static_cast<double>(max_depth) : cfg.global_max_depth;
  for (auto &v : img.values)
    v = static_cast<float>(std::clamp(static_cast<double>(v) / scale, 0.0, 1.0));
  return img;
}

/// Full pipeline. Segmentation is skipped when cfg.segment is false or when
/// it would leave the frame empty.
inline InputImage preprocess(const DepthFrame &frame, const PreprocConfig &cfg) {
  if (!cfg.segment)
    return resize_and_scale(frame, cfg);
  const SegmentResult seg = segment_foreground(frame, cfg);
  const bool any = std::any_of(seg.frame.depth.begin(), seg.frame.depth.end(), [](float d) { return d > 0.0f; });
  return resize_and_scale(any ? seg.frame : frame, cfg);
}

inline void to_json(nlohmann::json &j, const PreprocConfig &c) {
  j = {{"segment", c.segment},
       {"depth_halfwidth", c.depth_halfwidth},
       {"morph_kernel", c.morph_kernel},
       {"target_h", c.target_h},
       {"target_w", c.target_w},
       {"center_window_frac", c.center_window_frac},
       {"scale_mode", c.scale_mode == ScaleMode::PerFrame ? "per-frame" : "global"},
       {"global_max_depth", c.global_max_depth}};
}

inline void from_json(const nlohmann::json &j, PreprocConfig &c) {
  auto opt = [&](const char *key, auto &field) {
    if (j.contains(key))
      j.at(key).get_to(field);
  };
  opt("segment", c.segment);
  opt("depth_halfwidth", c.depth_halfwidth);
  opt("morph_kernel", c.morph_kernel);
  opt("target_h", c.target_h);
  opt("target_w", c.target_w);
  opt("center_window_frac", c.center_window_frac);
  opt("global_max_depth", c.global_max_depth);
  if (j.contains("scale_mode")) {
    const auto m = j.at("scale_mode").get<std::string>();
    if (m == "per-frame")
      c.scale_mode = ScaleMode::PerFrame;
    else if (m == "global")
      c.scale_mode = ScaleMode::Global;
    else
      throw ValidationError("unknown scale_mode '" + m + "'");
  }
}

} // namespace depthpose
