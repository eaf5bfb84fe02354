#include "dynsfm/tracks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "dynsfm/binary_io.hpp"
#include "dynsfm/error.hpp"

namespace dynsfm {

PointTrackTensor::PointTrackTensor(std::size_t n, std::size_t p)
    : frames(n), points(p), xy(2 * n * p, 0.0f), observed(n * p, 0) {}

void PointTrackTensor::set(std::size_t frame, std::size_t point, float x, float y, bool obs) {
  const std::size_t k = index(frame, point);
  xy[2 * k] = x;
  xy[2 * k + 1] = y;
  observed[k] = obs ? 1 : 0;
}

std::size_t PointTrackTensor::observation_count(std::size_t point) const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < frames; ++i) c += observed[index(i, point)];
  return c;
}

std::size_t PointTrackTensor::total_observations() const {
  return static_cast<std::size_t>(std::count(observed.begin(), observed.end(), std::uint8_t{1}));
}

std::size_t PointTrackTensor::first_observed_frame(std::size_t point) const {
  for (std::size_t i = 0; i < frames; ++i) {
    if (observed[index(i, point)]) return i;
  }
  return frames;
}

void PointTrackTensor::validate() const {
  if (xy.size() != 2 * frames * points || observed.size() != frames * points) {
    fail(ErrorKind::kData, "track tensor storage does not match " + std::to_string(frames) + "x" +
                               std::to_string(points));
  }
  for (std::size_t k = 0; k < observed.size(); ++k) {
    if (observed[k] > 1) fail(ErrorKind::kData, "observation flag not in {0,1} at entry " + std::to_string(k));
    if (observed[k] && (!std::isfinite(xy[2 * k]) || !std::isfinite(xy[2 * k + 1]))) {
      fail(ErrorKind::kData, "non-finite observed coordinate at entry " + std::to_string(k));
    }
  }
}

PointTrackTensor select_points(const PointTrackTensor& tracks, const std::vector<std::size_t>& point_ids) {
  PointTrackTensor out(tracks.frames, point_ids.size());
  out.intrinsics = tracks.intrinsics;
  for (std::size_t i = 0; i < tracks.frames; ++i) {
    for (std::size_t j = 0; j < point_ids.size(); ++j) {
      const std::size_t src = point_ids[j];
      out.set(i, j, tracks.x(i, src), tracks.y(i, src), tracks.is_observed(i, src));
    }
  }
  return out;
}

FilteredTracks filter_by_observations(const PointTrackTensor& tracks, std::size_t min_observations) {
  FilteredTracks out;
  for (std::size_t j = 0; j < tracks.points; ++j) {
    if (tracks.observation_count(j) > min_observations) out.source_index.push_back(j);
  }
  out.tracks = select_points(tracks, out.source_index);
  return out;
}

PointTrackTensor subsample_points(const PointTrackTensor& tracks, std::size_t stride) {
  if (stride == 0) fail(ErrorKind::kInvalidArgument, "subsample stride must be positive");
  std::vector<std::size_t> ids;
  for (std::size_t j = 0; j < tracks.points; j += stride) ids.push_back(j);
  return select_points(tracks, ids);
}

namespace {

void check_intrinsics(const Intrinsics& intr) {
  if (!(intr.fx > 0.0) || !(intr.fy > 0.0)) {
    fail(ErrorKind::kInvalidArgument, "intrinsics need positive focal lengths");
  }
}

}  // namespace

PointTrackTensor normalize_by_intrinsics(const PointTrackTensor& pixels, const Intrinsics& intr) {
  check_intrinsics(intr);
  PointTrackTensor out = pixels;
  for (std::size_t k = 0; k < out.observed.size(); ++k) {
    out.xy[2 * k] = static_cast<float>((pixels.xy[2 * k] - intr.cx) / intr.fx);
    out.xy[2 * k + 1] = static_cast<float>((pixels.xy[2 * k + 1] - intr.cy) / intr.fy);
  }
  out.intrinsics = intr;
  return out;
}

PointTrackTensor denormalize_by_intrinsics(const PointTrackTensor& normalized, const Intrinsics& intr) {
  check_intrinsics(intr);
  PointTrackTensor out = normalized;
  for (std::size_t k = 0; k < out.observed.size(); ++k) {
    out.xy[2 * k] = static_cast<float>(normalized.xy[2 * k] * intr.fx + intr.cx);
    out.xy[2 * k + 1] = static_cast<float>(normalized.xy[2 * k + 1] * intr.fy + intr.cy);
  }
  out.intrinsics = intr;
  return out;
}

bool window_eligible(const PointTrackTensor& tracks, std::size_t point, std::size_t start, std::size_t length) {
  const std::size_t first = tracks.first_observed_frame(point);
  if (first >= tracks.frames) return false;
  const double f = static_cast<double>(first);
  const double t = static_cast<double>(start);
  const double n = static_cast<double>(length);
  if (f < t - n / 2.0 || f > t + 1.5 * n) return false;
  std::size_t count = 0;
  for (std::size_t i = start; i < start + length && i < tracks.frames; ++i) count += tracks.is_observed(i, point);
  return count > 10;
}

WindowSample sample_training_window(const PointTrackTensor& tracks, std::size_t n_lo, std::size_t n_hi,
                                    std::size_t p_target, std::mt19937_64& rng) {
  if (n_lo == 0 || n_lo > n_hi) fail(ErrorKind::kInvalidArgument, "invalid frame range for window sampling");
  if (tracks.frames < n_lo) {
    fail(ErrorKind::kData, "source has " + std::to_string(tracks.frames) + " frames, window needs at least " +
                               std::to_string(n_lo));
  }
  const std::size_t hi = std::min(n_hi, tracks.frames);
  const std::size_t length = std::uniform_int_distribution<std::size_t>(n_lo, hi)(rng);
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, tracks.frames - length)(rng);

  std::vector<std::size_t> eligible;
  for (std::size_t j = 0; j < tracks.points; ++j) {
    if (window_eligible(tracks, j, start, length)) eligible.push_back(j);
  }
  if (eligible.empty()) {
    fail(ErrorKind::kData, "no eligible tracks in window [" + std::to_string(start) + ", " +
                               std::to_string(start + length) + ")");
  }

  WindowSample out;
  out.start_frame = start;
  out.length = length;
  if (eligible.size() <= p_target) {
    out.point_ids = eligible;
    out.short_of_target = eligible.size() < p_target;
  } else {
    // Partial Fisher-Yates: uniform subset without replacement.
    for (std::size_t k = 0; k < p_target; ++k) {
      const std::size_t r = std::uniform_int_distribution<std::size_t>(k, eligible.size() - 1)(rng);
      std::swap(eligible[k], eligible[r]);
    }
    out.point_ids.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(p_target));
    std::sort(out.point_ids.begin(), out.point_ids.end());
  }

  out.tracks = PointTrackTensor(length, out.point_ids.size());
  out.tracks.intrinsics = tracks.intrinsics;
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j < out.point_ids.size(); ++j) {
      const std::size_t src = out.point_ids[j];
      out.tracks.set(i, j, tracks.x(start + i, src), tracks.y(start + i, src), tracks.is_observed(start + i, src));
    }
  }
  return out;
}

// ---- T4D ------------------------------------------------------------------

std::vector<std::uint8_t> encode_tracks(const PointTrackTensor& tracks) {
  tracks.validate();
  io::ByteWriter w;
  w.bytes(kTrackMagic, 4);
  w.u32(static_cast<std::uint32_t>(tracks.frames));
  w.u32(static_cast<std::uint32_t>(tracks.points));
  w.u32(tracks.intrinsics ? 1u : 0u);
  w.u32(0);
  if (tracks.intrinsics) {
    w.f32(static_cast<float>(tracks.intrinsics->fx));
    w.f32(static_cast<float>(tracks.intrinsics->fy));
    w.f32(static_cast<float>(tracks.intrinsics->cx));
    w.f32(static_cast<float>(tracks.intrinsics->cy));
  }
  for (std::size_t k = 0; k < tracks.observed.size(); ++k) {
    const bool obs = tracks.observed[k] != 0;
    w.f32(obs ? tracks.xy[2 * k] : 0.0f);
    w.f32(obs ? tracks.xy[2 * k + 1] : 0.0f);
  }
  w.bytes(tracks.observed.data(), tracks.observed.size());
  return std::move(w.buffer());
}

PointTrackTensor decode_tracks(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "T4D");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kTrackMagic, 4) != 0) fail(ErrorKind::kFormat, "T4D: magic mismatch");
  const std::uint64_t n = r.u32();
  const std::uint64_t p = r.u32();
  const std::uint32_t flags = r.u32();
  const std::uint32_t reserved = r.u32();
  if (reserved != 0) fail(ErrorKind::kFormat, "T4D: reserved header field is not zero");
  if ((flags & ~1u) != 0) fail(ErrorKind::kFormat, "T4D: unknown flag bits");
  const std::uint64_t entries = n * p;  // u32 x u32 fits in u64
  const std::uint64_t need = entries * 9 + ((flags & 1u) ? 16 : 0);
  if (entries > kMaxTrackEntries) {
    fail(ErrorKind::kFormat, "T4D: dimension overflow " + std::to_string(n) + "x" + std::to_string(p));
  }
  if (need > r.remaining()) {
    fail(ErrorKind::kFormat, "T4D: truncated payload (" + std::to_string(r.remaining()) + " of " +
                                 std::to_string(need) + " bytes)");
  }
  PointTrackTensor out(static_cast<std::size_t>(n), static_cast<std::size_t>(p));
  if (flags & 1u) {
    Intrinsics intr;
    intr.fx = r.f32();
    intr.fy = r.f32();
    intr.cx = r.f32();
    intr.cy = r.f32();
    out.intrinsics = intr;
  }
  r.bytes(out.xy.data(), out.xy.size() * sizeof(float));
  r.bytes(out.observed.data(), out.observed.size());
  if (r.remaining() != 0) fail(ErrorKind::kFormat, "T4D: trailing bytes after payload");
  for (std::size_t k = 0; k < out.observed.size(); ++k) {
    if (out.observed[k] > 1) fail(ErrorKind::kFormat, "T4D: observation flag not in {0,1}");
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

void save_tracks(const std::filesystem::path& path, const PointTrackTensor& tracks) {
  write_file(path, encode_tracks(tracks));
}

PointTrackTensor load_tracks(const std::filesystem::path& path) {
  return decode_tracks(read_file(path));
}

}  // namespace dynsfm
