#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dynsfm {

struct Intrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;

  bool operator==(const Intrinsics&) const = default;
};

/// N frames x P tracks of (x, y, observed). Coordinates at unobserved entries
/// carry no meaning and are zero-filled on save.
struct PointTrackTensor {
  std::size_t frames = 0;
  std::size_t points = 0;
  std::vector<float> xy;               // frame-major, point-minor, 2 per entry
  std::vector<std::uint8_t> observed;  // frame-major, point-minor
  std::optional<Intrinsics> intrinsics;

  PointTrackTensor() = default;
  PointTrackTensor(std::size_t n, std::size_t p);

  std::size_t index(std::size_t frame, std::size_t point) const { return frame * points + point; }
  float x(std::size_t frame, std::size_t point) const { return xy[2 * index(frame, point)]; }
  float y(std::size_t frame, std::size_t point) const { return xy[2 * index(frame, point) + 1]; }
  bool is_observed(std::size_t frame, std::size_t point) const { return observed[index(frame, point)] != 0; }
  void set(std::size_t frame, std::size_t point, float x, float y, bool obs);

  std::size_t observation_count(std::size_t point) const;
  std::size_t total_observations() const;
  /// First frame in which the track is observed, or `frames` if never.
  std::size_t first_observed_frame(std::size_t point) const;

  /// Throws kData if observation flags are not 0/1 or shapes disagree.
  void validate() const;

  bool operator==(const PointTrackTensor&) const = default;
};

/// Tracks restricted to a subset of columns, in the given order.
PointTrackTensor select_points(const PointTrackTensor& tracks, const std::vector<std::size_t>& point_ids);

/// Result of dropping tracks with too few observations.
struct FilteredTracks {
  PointTrackTensor tracks;
  std::vector<std::size_t> source_index;  // output column -> input column
};

/// Keeps tracks observed in strictly more than `min_observations` frames.
FilteredTracks filter_by_observations(const PointTrackTensor& tracks, std::size_t min_observations = 10);

/// Keeps every `stride`-th track; emulates coarser tracking grids.
PointTrackTensor subsample_points(const PointTrackTensor& tracks, std::size_t stride);

PointTrackTensor normalize_by_intrinsics(const PointTrackTensor& pixels, const Intrinsics& intr);
PointTrackTensor denormalize_by_intrinsics(const PointTrackTensor& normalized, const Intrinsics& intr);

// ---- training windows ------------------------------------------------------

struct WindowSample {
  PointTrackTensor tracks;
  std::size_t start_frame = 0;
  std::size_t length = 0;
  std::vector<std::size_t> point_ids;  // selected source columns, ascending
  bool short_of_target = false;        // fewer eligible tracks than requested
};

/// True when a track may enter a window starting at `start` of `length`
/// frames: its first observed frame lies in [start - length/2,
/// start + 3 length/2] and it is observed in more than 10 window frames.
bool window_eligible(const PointTrackTensor& tracks, std::size_t point, std::size_t start, std::size_t length);

/// Samples a contiguous window of N in [n_lo, n_hi] frames (clamped to the
/// source length) at a uniform start, then p_target eligible tracks uniformly
/// without replacement.
WindowSample sample_training_window(const PointTrackTensor& tracks, std::size_t n_lo, std::size_t n_hi,
                                    std::size_t p_target, std::mt19937_64& rng);

// ---- T4D binary format -----------------------------------------------------

inline constexpr char kTrackMagic[4] = {'T', '4', 'D', '1'};
inline constexpr std::size_t kTrackHeaderBytes = 20;
/// Upper bound on N*P accepted by the decoder (about 9 TB of payload).
inline constexpr std::uint64_t kMaxTrackEntries = std::uint64_t{1} << 40;

std::vector<std::uint8_t> encode_tracks(const PointTrackTensor& tracks);
PointTrackTensor decode_tracks(const std::vector<std::uint8_t>& bytes);

void save_tracks(const std::filesystem::path& path, const PointTrackTensor& tracks);
PointTrackTensor load_tracks(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace dynsfm
