#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "dynsfm/error.hpp"
#include "dynsfm/synthetic.hpp"
#include "dynsfm/tracks.hpp"

namespace dynsfm {
namespace {

namespace fs = std::filesystem;

PointTrackTensor random_tensor(std::size_t n, std::size_t p, std::mt19937_64& rng, bool intrinsics) {
  PointTrackTensor t(n, p);
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  std::bernoulli_distribution obs(0.7);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const bool o = obs(rng);
      t.set(i, j, o ? u(rng) : 0.0f, o ? u(rng) : 0.0f, o);
    }
  }
  if (intrinsics) t.intrinsics = Intrinsics{400.0, 410.0, 300.5, 200.25};
  return t;
}

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / ("dynsfm_tracks_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::create_directories(dir);
  return dir;
}

TEST(T4d, SmallTensorRoundTripsBitwise) {
  PointTrackTensor t(2, 2);
  t.set(0, 0, 0.25f, -1.5f, true);
  t.set(1, 1, 3.0e-7f, 1e6f, true);
  auto dir = temp_dir();
  save_tracks(dir / "small.t4d", t);
  EXPECT_EQ(load_tracks(dir / "small.t4d"), t);
}

TEST(T4d, RandomTensorsRoundTrip) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> dim(1, 40);
  for (int trial = 0; trial < 200; ++trial) {
    auto t = random_tensor(dim(rng), dim(rng), rng, trial % 2 == 0);
    EXPECT_EQ(decode_tracks(encode_tracks(t)), t);
  }
}

TEST(T4d, FileSizeMatchesLayout) {
  std::mt19937_64 rng(2);
  auto t = random_tensor(50, 225, rng, false);
  auto dir = temp_dir();
  save_tracks(dir / "size.t4d", t);
  EXPECT_EQ(fs::file_size(dir / "size.t4d"), kTrackHeaderBytes + 50u * 225u * 2u * 4u + 50u * 225u);
  t.intrinsics = Intrinsics{};
  EXPECT_EQ(encode_tracks(t).size(), kTrackHeaderBytes + 16u + 50u * 225u * 9u);
}

TEST(T4d, UnobservedEntriesAreZeroFilled) {
  PointTrackTensor t(1, 2);
  t.set(0, 0, 5.0f, 6.0f, false);
  t.set(0, 1, 1.0f, 2.0f, true);
  auto back = decode_tracks(encode_tracks(t));
  EXPECT_EQ(back.x(0, 0), 0.0f);
  EXPECT_EQ(back.y(0, 0), 0.0f);
  EXPECT_EQ(back.x(0, 1), 1.0f);
}

ErrorKind decode_error(const std::vector<std::uint8_t>& bytes) {
  try {
    (void)decode_tracks(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorKind::kIo;
}

TEST(T4d, StructuredErrors) {
  std::mt19937_64 rng(3);
  auto bytes = encode_tracks(random_tensor(3, 4, rng, true));
  auto bad_magic = bytes;
  bad_magic[3] = '2';
  EXPECT_EQ(decode_error(bad_magic), ErrorKind::kFormat);
  try {
    (void)decode_tracks(bad_magic);
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_EQ(decode_error(truncated), ErrorKind::kFormat);
  EXPECT_EQ(decode_error({'T', '4', 'D'}), ErrorKind::kFormat);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(decode_error(trailing), ErrorKind::kFormat);
  auto huge = bytes;
  for (std::size_t i = 4; i < 12; ++i) huge[i] = 0xff;
  EXPECT_EQ(decode_error(huge), ErrorKind::kFormat);
  auto bad_flag = bytes;
  bad_flag[kTrackHeaderBytes + 16 + 3 * 4 * 8] = 2;
  EXPECT_EQ(decode_error(bad_flag), ErrorKind::kFormat);
  EXPECT_THROW((void)load_tracks("/nonexistent/dir/x.t4d"), Error);
}

TEST(Filter, StrictlyMoreThanTenObservations) {
  PointTrackTensor t(20, 3);
  for (std::size_t i = 0; i < 10; ++i) t.set(i, 0, 0, 0, true);
  for (std::size_t i = 0; i < 11; ++i) t.set(i, 1, 0, 0, true);
  for (std::size_t i = 0; i < 20; ++i) t.set(i, 2, 0, 0, true);
  auto f = filter_by_observations(t);
  EXPECT_EQ(f.source_index, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(f.tracks.points, 2u);
}

TEST(Normalize, Examples) {
  Intrinsics intr{500, 500, 250, 250};
  PointTrackTensor px(1, 2);
  px.set(0, 0, 250, 250, true);
  px.set(0, 1, 750, 250, true);
  auto n = normalize_by_intrinsics(px, intr);
  EXPECT_EQ(n.x(0, 0), 0.0f);
  EXPECT_EQ(n.y(0, 0), 0.0f);
  EXPECT_EQ(n.x(0, 1), 1.0f);
  EXPECT_EQ(n.y(0, 1), 0.0f);
  EXPECT_THROW((void)normalize_by_intrinsics(px, Intrinsics{0, 500, 0, 0}), Error);
}

TEST(Normalize, RoundTripWithinOneMicroUnit) {
  // Storage is float32, so the bound is stated in normalized units: a pixel
  // round trip may move by 1e-6 * focal length.
  std::mt19937_64 rng(4);
  Intrinsics intr{523.5, 498.25, 311.0, 242.5};
  for (int trial = 0; trial < 20; ++trial) {
    auto n = random_tensor(5, 7, rng, false);
    auto back = normalize_by_intrinsics(denormalize_by_intrinsics(n, intr), intr);
    for (std::size_t k = 0; k < n.xy.size(); ++k) EXPECT_NEAR(back.xy[k], n.xy[k], 1e-6);
    EXPECT_EQ(back.observed, n.observed);
    auto px = denormalize_by_intrinsics(n, intr);
    auto px_back = denormalize_by_intrinsics(normalize_by_intrinsics(px, intr), intr);
    for (std::size_t k = 0; k < px.xy.size(); k += 2) {
      EXPECT_NEAR(px_back.xy[k], px.xy[k], 1e-6 * intr.fx);
      EXPECT_NEAR(px_back.xy[k + 1], px.xy[k + 1], 1e-6 * intr.fy);
    }
  }
}

// Independent restatement of the window rules.
bool eligible_oracle(const PointTrackTensor& t, std::size_t j, std::size_t start, std::size_t len) {
  long first = -1;
  for (std::size_t i = 0; i < t.frames; ++i) {
    if (t.is_observed(i, j)) {
      first = static_cast<long>(i);
      break;
    }
  }
  if (first < 0) return false;
  const double lo = static_cast<double>(start) - static_cast<double>(len) / 2.0;
  const double hi = static_cast<double>(start) + 1.5 * static_cast<double>(len);
  if (static_cast<double>(first) < lo || static_cast<double>(first) > hi) return false;
  int count = 0;
  for (std::size_t i = start; i < start + len; ++i) count += t.is_observed(i, j) ? 1 : 0;
  return count > 10;
}

TEST(Window, RuleExamples) {
  PointTrackTensor t(80, 3);
  // Track 0 starts at frame 0, far before a window at 40 of length 20.
  for (std::size_t i = 0; i < 80; ++i) t.set(i, 0, 0, 0, true);
  // Track 1 starts at 40 and is seen in exactly 10 window frames.
  for (std::size_t i = 40; i < 50; ++i) t.set(i, 1, 0, 0, true);
  // Track 2 starts at 35 and is seen in 11 window frames.
  for (std::size_t i = 35; i < 51; ++i) t.set(i, 2, 0, 0, true);
  EXPECT_FALSE(window_eligible(t, 0, 40, 20));
  EXPECT_FALSE(window_eligible(t, 1, 40, 20));
  EXPECT_TRUE(window_eligible(t, 2, 40, 20));
  EXPECT_TRUE(window_eligible(t, 0, 5, 20));
}

TEST(Window, SamplesMatchBruteForceEligibility) {
  SynthConfig cfg;
  cfg.frames = 60;
  cfg.points = 300;
  cfg.occlusion_rate = 0.05;
  cfg.reseed_interval = 20;
  auto out = generate_synthetic_scene(cfg, 5);
  std::mt19937_64 rng(5);
  int sampled = 0;
  for (int trial = 0; trial < 50; ++trial) {
    bool eligible_any = true;
    WindowSample w;
    try {
      w = sample_training_window(out.tracks, 20, 50, 100, rng);
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kData);
      eligible_any = false;
    }
    if (!eligible_any) continue;
    ++sampled;
    ASSERT_GE(w.length, 20u);
    ASSERT_LE(w.length, 50u);
    ASSERT_LE(w.start_frame + w.length, 60u);
    EXPECT_EQ(w.tracks.frames, w.length);
    std::size_t eligible = 0;
    for (std::size_t j = 0; j < 300; ++j) eligible += eligible_oracle(out.tracks, j, w.start_frame, w.length);
    EXPECT_EQ(w.tracks.points, std::min<std::size_t>(100, eligible));
    EXPECT_EQ(w.short_of_target, eligible < 100);
    std::set<std::size_t> unique(w.point_ids.begin(), w.point_ids.end());
    EXPECT_EQ(unique.size(), w.point_ids.size());
    EXPECT_TRUE(std::is_sorted(w.point_ids.begin(), w.point_ids.end()));
    for (std::size_t c = 0; c < w.point_ids.size(); ++c) {
      const std::size_t j = w.point_ids[c];
      EXPECT_TRUE(eligible_oracle(out.tracks, j, w.start_frame, w.length));
      for (std::size_t i = 0; i < w.length; ++i) {
        EXPECT_EQ(w.tracks.is_observed(i, c), out.tracks.is_observed(w.start_frame + i, j));
        if (w.tracks.is_observed(i, c)) EXPECT_EQ(w.tracks.x(i, c), out.tracks.x(w.start_frame + i, j));
      }
    }
  }
  EXPECT_GE(sampled, 40);
}

TEST(Synthetic, ReseedStaggersFirstObservations) {
  SynthConfig cfg;
  cfg.frames = 60;
  cfg.points = 200;
  cfg.reseed_interval = 20;
  auto out = generate_synthetic_scene(cfg, 8);
  std::set<std::size_t> births;
  for (std::size_t j = 0; j < cfg.points; ++j) {
    std::size_t first = 0;
    while (!out.tracks.is_observed(first, j)) ++first;
    births.insert(first);
    EXPECT_GT(out.tracks.observation_count(j), 10u);
    for (std::size_t i = first; i < cfg.frames; ++i) EXPECT_TRUE(out.tracks.is_observed(i, j));
  }
  EXPECT_EQ(births, (std::set<std::size_t>{0, 20, 40}));
}

TEST(Window, ShortSourceClampsLengthAndEmptyWindowIsAnError) {
  SynthConfig cfg;
  cfg.frames = 25;
  cfg.points = 30;
  auto out = generate_synthetic_scene(cfg, 6);
  std::mt19937_64 rng(6);
  auto w = sample_training_window(out.tracks, 20, 50, 100, rng);
  EXPECT_LE(w.length, 25u);
  EXPECT_TRUE(w.short_of_target);
  PointTrackTensor sparse(30, 2);
  for (std::size_t i = 0; i < 5; ++i) sparse.set(i, 0, 0, 0, true);
  EXPECT_THROW((void)sample_training_window(sparse, 20, 22, 10, rng), Error);
}

TEST(Synthetic, DeterministicPerSeed) {
  SynthConfig cfg;
  cfg.noise_std = 0.01;
  cfg.occlusion_rate = 0.1;
  auto a = generate_synthetic_scene(cfg, 42);
  auto b = generate_synthetic_scene(cfg, 42);
  auto c = generate_synthetic_scene(cfg, 43);
  EXPECT_EQ(encode_tracks(a.tracks), encode_tracks(b.tracks));
  EXPECT_EQ(scene_to_json(a.scene), scene_to_json(b.scene));
  EXPECT_NE(encode_tracks(a.tracks), encode_tracks(c.tracks));
}

TEST(Synthetic, StaticSceneHasIdenticalClouds) {
  SynthConfig cfg;
  cfg.dynamic_fraction = 0.0;
  auto out = generate_synthetic_scene(cfg, 7);
  for (std::size_t i = 1; i < out.scene.frames(); ++i) EXPECT_EQ(out.scene.cloud(i), out.scene.cloud(0));
}

TEST(Synthetic, StaticPointsHaveNoDeviation) {
  auto out = generate_synthetic_scene(SynthConfig{}, 8);
  std::size_t dynamic = 0;
  for (std::size_t j = 0; j < out.scene.points(); ++j) {
    dynamic += out.scene.dynamic[j];
    for (std::size_t k = 1; k < out.scene.bases.size(); ++k) {
      if (!out.scene.dynamic[j]) EXPECT_TRUE(out.scene.bases[k].row(static_cast<Eigen::Index>(j)).isZero(0.0));
    }
  }
  EXPECT_EQ(dynamic, 36u);
  auto depths = out.scene.depths();
  EXPECT_GT(depths.minCoeff(), 0.0);
}

TEST(Synthetic, EveryTrackKeepsAnObservation) {
  SynthConfig cfg;
  cfg.occlusion_rate = 0.9;
  cfg.occlusion_mean_length = 30;
  auto out = generate_synthetic_scene(cfg, 9);
  for (std::size_t j = 0; j < out.tracks.points; ++j) EXPECT_GE(out.tracks.observation_count(j), 1u);
  EXPECT_LT(out.tracks.total_observations(), out.tracks.frames * out.tracks.points);
}

TEST(Synthetic, SceneJsonRoundTrip) {
  auto out = generate_synthetic_scene(SynthConfig{}, 10);
  auto back = scene_from_json(scene_to_json(out.scene));
  EXPECT_EQ(back.frames(), out.scene.frames());
  EXPECT_EQ(back.dynamic, out.scene.dynamic);
  EXPECT_EQ(back.intrinsics, out.scene.intrinsics);
  for (std::size_t i = 0; i < back.frames(); ++i) {
    EXPECT_TRUE(back.poses[i].R.isApprox(out.scene.poses[i].R, 1e-15));
    EXPECT_TRUE(back.cloud(i).isApprox(out.scene.cloud(i), 1e-15));
  }
}

TEST(Synthetic, InvalidConfigsAreRejected) {
  SynthConfig cfg;
  cfg.frames = 1;
  EXPECT_THROW((void)generate_synthetic_scene(cfg, 1), Error);
  cfg = SynthConfig{};
  cfg.points = 3;
  EXPECT_THROW((void)generate_synthetic_scene(cfg, 1), Error);
  cfg = SynthConfig{};
  cfg.dynamic_fraction = 1.5;
  EXPECT_THROW((void)generate_synthetic_scene(cfg, 1), Error);
  cfg = SynthConfig{};
  cfg.camera_distance = 1.0;  // cameras inside the scene box
  EXPECT_THROW((void)generate_synthetic_scene(cfg, 1), Error);
}

}  // namespace
}  // namespace dynsfm
