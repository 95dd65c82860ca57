#include <gtest/gtest.h>

#include "depthpose/preproc.hpp"
#include "depthpose/synth.hpp"

using namespace depthpose;

namespace {

DepthFrame filled(int h, int w, float v) { return DepthFrame(0, h, w, v); }

Mask random_mask(Rng &rng, int h, int w, double p) {
  Mask m(static_cast<std::size_t>(h * w));
  for (auto &x : m)
    x = uniform01(rng) < p ? 1 : 0;
  return m;
}

} // namespace

TEST(Segment, ConstantFrameUnchanged) {
  PreprocConfig cfg;
  const DepthFrame f = filled(20, 24, 2.0f);
  const auto res = segment_foreground(f, cfg);
  EXPECT_FALSE(res.empty_input);
  EXPECT_EQ(res.frame, f);
  EXPECT_DOUBLE_EQ(res.person_depth, 2.0);
}

TEST(Segment, WallBehindPersonIsRemoved) {
  PreprocConfig cfg;
  DepthFrame f = filled(40, 40, 4.0f);
  for (int r = 12; r < 28; ++r)
    for (int c = 15; c < 25; ++c)
      f.at(r, c) = 2.0f;
  const auto res = segment_foreground(f, cfg);
  for (int r = 0; r < 40; ++r)
    for (int c = 0; c < 40; ++c) {
      const bool person = r >= 12 && r < 28 && c >= 15 && c < 25;
      EXPECT_EQ(res.frame.at(r, c), person ? 2.0f : 0.0f) << r << "," << c;
    }
}

TEST(Segment, AllZeroFrameIsPassedThroughWithWarning) {
  PreprocConfig cfg;
  const DepthFrame f = filled(10, 10, 0.0f);
  const auto res = segment_foreground(f, cfg);
  EXPECT_TRUE(res.empty_input);
  EXPECT_EQ(res.frame, f);
}

TEST(Segment, NeverAddsPixelsBeforeClosing) {
  PreprocConfig cfg;
  cfg.morph_kernel = 1; // no closing
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    DepthFrame f(0, 24, 24);
    for (auto &d : f.depth)
      d = uniform01(rng) < 0.3 ? 0.0f : static_cast<float>(uniform(rng, 1.0, 4.0));
    const auto res = segment_foreground(f, cfg);
    std::size_t before = 0, after = 0;
    for (std::size_t i = 0; i < f.depth.size(); ++i) {
      before += f.depth[i] > 0.0f;
      after += res.frame.depth[i] > 0.0f;
    }
    EXPECT_LE(after, before);
  }
}

TEST(Segment, SyntheticBackgroundIsRemovedAndBodyKept) {
  // Close-up of a subject standing at the ring centre, which is what the
  // centre-window depth estimate assumes. With the default framing the thin
  // capsule body covers a third of the window and the wall drags the mean off.
  SynthConfig cfg;
  cfg.scenes = 50;
  cfg.cameras = 1;
  cfg.seed = 12;
  cfg.ring_radius = 1.3;
  cfg.camera_height = 1.1;
  cfg.look_at_height = 1.1;
  auto sampler = default_sampler_config(skeleton_preset(cfg.skeleton), cfg.seed);
  sampler.root_min.x = sampler.root_max.x = 0.0;
  sampler.root_min.y = sampler.root_max.y = 0.0;
  cfg.sampler = sampler;
  const Dataset clean = generate_dataset(cfg);
  cfg.background_depth = 3.8;
  const Dataset walled = generate_dataset(cfg);
  ASSERT_EQ(clean.samples.size(), walled.samples.size());
  PreprocConfig pre;
  std::size_t bg = 0, bg_zeroed = 0, body = 0, body_kept = 0;
  for (std::size_t i = 0; i < clean.samples.size(); ++i) {
    const auto &mask_frame = clean.samples[i].views[0];
    const auto seg = segment_foreground(walled.samples[i].views[0], pre);
    for (std::size_t p = 0; p < mask_frame.depth.size(); ++p) {
      if (mask_frame.depth[p] > 0.0f) {
        ++body;
        body_kept += seg.frame.depth[p] > 0.0f;
      } else {
        ++bg;
        bg_zeroed += seg.frame.depth[p] == 0.0f;
      }
    }
  }
  EXPECT_GE(static_cast<double>(bg_zeroed) / static_cast<double>(bg), 0.99);
  EXPECT_GE(static_cast<double>(body_kept) / static_cast<double>(body), 0.90);
}

TEST(Closing, SolidSquareUnchanged) {
  DepthFrame f(0, 16, 16);
  for (int r = 4; r < 12; ++r)
    for (int c = 4; c < 12; ++c)
      f.at(r, c) = 1.5f;
  EXPECT_EQ(morph_close(f, 3), f);
  EXPECT_EQ(morph_close(f, 5), f);
}

TEST(Closing, FillsSinglePixelHoleFromNeighbour) {
  DepthFrame f = filled(9, 9, 2.5f);
  f.at(4, 4) = 0.0f;
  const DepthFrame out = morph_close(f, 3);
  EXPECT_EQ(out.at(4, 4), 2.5f);
  for (std::size_t i = 0; i < f.depth.size(); ++i)
    if (i != 4 * 9 + 4)
      EXPECT_EQ(out.depth[i], f.depth[i]);
}

TEST(Closing, IdempotentOnRandomSpeckle) {
  Rng rng(77);
  for (int k : {3, 5}) {
    for (int t = 0; t < 20; ++t) {
      const int h = 15 + t % 7, w = 20 - t % 5;
      const Mask m = random_mask(rng, h, w, 0.4);
      const Mask once = close_mask(m, h, w, k);
      EXPECT_EQ(close_mask(once, h, w, k), once);
      for (std::size_t i = 0; i < m.size(); ++i)
        EXPECT_GE(once[i], m[i]); // extensive
    }
  }
}

TEST(Closing, BruteForceOracle) {
  // Closing = complement of the union of all k x k squares (placed anywhere on
  // the unbounded plane) that avoid the foreground.
  Rng rng(5);
  const int h = 11, w = 13, k = 3;
  for (int t = 0; t < 30; ++t) {
    const Mask m = random_mask(rng, h, w, 0.5);
    Mask expected(m.size(), 1);
    for (int y0 = -k; y0 <= h; ++y0)
      for (int x0 = -k; x0 <= w; ++x0) {
        bool empty = true;
        for (int y = y0; y < y0 + k && empty; ++y)
          for (int x = x0; x < x0 + k && empty; ++x)
            if (y >= 0 && y < h && x >= 0 && x < w && m[static_cast<std::size_t>(y * w + x)])
              empty = false;
        if (!empty)
          continue;
        for (int y = y0; y < y0 + k; ++y)
          for (int x = x0; x < x0 + k; ++x)
            if (y >= 0 && y < h && x >= 0 && x < w)
              expected[static_cast<std::size_t>(y * w + x)] = 0;
      }
    EXPECT_EQ(close_mask(m, h, w, k), expected);
  }
}

TEST(ResizeAndScale, ConstantFrameScalesToOne) {
  PreprocConfig cfg;
  cfg.target_h = cfg.target_w = 16;
  const auto img = resize_and_scale(filled(40, 30, 3.0f), cfg);
  ASSERT_EQ(img.values.size(), 256u);
  for (float v : img.values)
    EXPECT_FLOAT_EQ(v, 1.0f);
}

TEST(ResizeAndScale, SameSizeIsIdentity) {
  Rng rng(2);
  std::vector<float> src(24 * 18);
  for (auto &v : src)
    v = static_cast<float>(uniform(rng, 0.5, 4.0));
  const auto out = resize_bilinear(src, 24, 18, 24, 18);
  for (std::size_t i = 0; i < src.size(); ++i)
    EXPECT_NEAR(out[i], src[i], 1e-6);
}

TEST(ResizeAndScale, CheckerboardDecimationAverages) {
  std::vector<float> src(200 * 200);
  for (int r = 0; r < 200; ++r)
    for (int c = 0; c < 200; ++c)
      src[static_cast<std::size_t>(r * 200 + c)] = (r + c) % 2 == 0 ? 1.0f : 3.0f;
  const auto out = resize_bilinear(src, 200, 200, 100, 100);
  for (int r = 1; r < 99; ++r)
    for (int c = 1; c < 99; ++c)
      EXPECT_NEAR(out[static_cast<std::size_t>(r * 100 + c)], 2.0, 1e-6);
}

TEST(ResizeAndScale, OutputRangeShapeAndZeros) {
  PreprocConfig cfg;
  cfg.target_h = 12;
  cfg.target_w = 20;
  DepthFrame f(0, 33, 47);
  Rng rng(8);
  for (auto &d : f.depth)
    d = uniform01(rng) < 0.5 ? 0.0f : static_cast<float>(uniform(rng, 1, 6));
  for (auto mode : {ScaleMode::PerFrame, ScaleMode::Global}) {
    cfg.scale_mode = mode;
    cfg.global_max_depth = 4.0; // smaller than some depths: clamped
    const auto img = resize_and_scale(f, cfg);
    EXPECT_EQ(img.height, 12);
    EXPECT_EQ(img.width, 20);
    for (float v : img.values) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_THROW(resize_and_scale(filled(10, 10, 0.0f), cfg), ValidationError);
}

TEST(PreprocConfig, ValidationAndJson) {
  PreprocConfig cfg;
  cfg.morph_kernel = 4;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.depth_halfwidth = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.target_h = 4;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.scale_mode = ScaleMode::Global;
  cfg.target_w = 64;
  const nlohmann::json j = cfg;
  EXPECT_EQ(nlohmann::json(j.get<PreprocConfig>()), j);
}
