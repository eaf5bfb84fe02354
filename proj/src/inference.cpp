#include "dynsfm/inference.hpp"

#include <cstring>
#include <sstream>

#include <json.hpp>

#include "dynsfm/binary_io.hpp"

namespace dynsfm {

using nlohmann::json;

InferenceResult infer(const PointTrackTensor& tracks, const ParamStore<float>& params, const NetworkConfig& cfg) {
  tracks.validate();
  auto kept = filter_by_observations(tracks, 10);
  if (kept.tracks.frames < 2 || kept.tracks.points < 2) {
    fail(ErrorKind::kData, "inference needs at least 2 frames and 2 tracks observed in more than 10 frames (have " +
                               std::to_string(kept.tracks.frames) + " frames, " + std::to_string(kept.tracks.points) +
                               " tracks)");
  }
  InferenceResult r;
  r.outputs = forward<float>(kept.tracks, params, cfg);
  r.tracks = std::move(kept.tracks);
  r.source_index = std::move(kept.source_index);
  return r;
}

StaticSubset select_static(const NetworkOutputs& outputs, double threshold) {
  StaticSubset s;
  s.threshold = threshold;
  for (Eigen::Index j = 0; j < outputs.gamma.size(); ++j) {
    if (outputs.gamma[j] < threshold) {
      s.indices.push_back(static_cast<std::size_t>(j));
      s.points.push_back(outputs.bases.at(0).row(j).transpose());
    }
  }
  return s;
}

BAProblem build_ba_problem(const StaticSubset& subset, const CameraTrajectory& poses, const PointTrackTensor& tracks,
                           double pixel_gate, const Intrinsics& intr) {
  if (!(pixel_gate > 0.0)) fail(ErrorKind::kInvalidArgument, "pixel gate must be positive");
  if (!(intr.fx > 0.0 && intr.fy > 0.0)) fail(ErrorKind::kInvalidArgument, "focal lengths must be positive");
  if (poses.size() != tracks.frames) {
    fail(ErrorKind::kShapeMismatch, "BA: " + std::to_string(poses.size()) + " poses for " +
                                        std::to_string(tracks.frames) + " frames");
  }
  BAProblem prob;
  prob.poses = poses;
  prob.gate = pixel_gate / std::max(intr.fx, intr.fy);
  for (std::size_t s = 0; s < subset.indices.size(); ++s) {
    const std::size_t col = subset.indices[s];
    if (col >= tracks.points) fail(ErrorKind::kShapeMismatch, "BA: static index out of range");
    const Eigen::Vector3d& X = subset.points[s];
    std::vector<BAResidual> kept;
    for (std::size_t i = 0; i < tracks.frames; ++i) {
      if (!tracks.is_observed(i, col)) continue;
      ++prob.candidates;
      const Eigen::Vector2d m(tracks.x(i, col), tracks.y(i, col));
      const Eigen::Vector3d c = camera_point(X, poses[i]);
      const bool in_front = c.z() > 0.0;
      if (in_front && (c.head<2>() / c.z() - m).norm() < prob.gate) {
        kept.push_back({i, prob.points.size(), m});
      } else {
        ++prob.gated_out;
      }
    }
    if (kept.empty()) {
      ++prob.dropped_points;
      continue;
    }
    prob.points.push_back(X);
    prob.point_ids.push_back(col);
    prob.residuals.insert(prob.residuals.end(), kept.begin(), kept.end());
  }
  if (prob.residuals.empty()) {
    fail(ErrorKind::kData, "BA: no residual passed the gate (" + std::to_string(subset.indices.size()) +
                               " static points, " + std::to_string(prob.candidates) + " observed pairs)");
  }
  return prob;
}

// ---- exports -------------------------------------------------------------------------

std::string trajectory_to_json(const CameraTrajectory& poses) {
  json arr = json::array();
  for (const auto& p : poses) {
    json R = json::array();
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) R.push_back(p.R(r, c));
    }
    arr.push_back({{"R", R}, {"t", {p.t.x(), p.t.y(), p.t.z()}}});
  }
  return json{{"frames", poses.size()}, {"poses", arr}}.dump(1);
}

CameraTrajectory trajectory_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    CameraTrajectory out;
    for (const auto& p : j.at("poses")) {
      CameraPose pose;
      const auto R = p.at("R").get<std::vector<double>>();
      const auto t = p.at("t").get<std::vector<double>>();
      if (R.size() != 9 || t.size() != 3) fail(ErrorKind::kFormat, "trajectory: pose needs 9 R and 3 t values");
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) pose.R(r, c) = R[static_cast<std::size_t>(3 * r + c)];
      }
      pose.t = Eigen::Vector3d(t[0], t[1], t[2]);
      out.push_back(pose);
    }
    if (j.contains("frames") && j.at("frames").get<std::size_t>() != out.size()) {
      fail(ErrorKind::kFormat, "trajectory: 'frames' disagrees with the pose count");
    }
    return out;
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("trajectory: ") + e.what());
  }
}

void save_trajectory(const std::filesystem::path& path, const CameraTrajectory& poses) {
  const std::string text = trajectory_to_json(poses);
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

CameraTrajectory load_trajectory(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return trajectory_from_json(std::string(bytes.begin(), bytes.end()));
}

std::vector<std::uint8_t> encode_ply(const std::vector<Eigen::Vector3d>& points,
                                     const std::optional<std::vector<double>>& quality) {
  if (quality && quality->size() != points.size()) {
    fail(ErrorKind::kShapeMismatch, "PLY: quality count differs from vertex count");
  }
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\nelement vertex " << points.size()
         << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (quality) header << "property float quality\n";
  header << "end_header\n";
  io::ByteWriter w;
  const std::string h = header.str();
  w.bytes(h.data(), h.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int c = 0; c < 3; ++c) w.f32(static_cast<float>(points[i][c]));
    if (quality) w.f32(static_cast<float>((*quality)[i]));
  }
  return std::move(w.buffer());
}

PlyCloud decode_ply(const std::vector<std::uint8_t>& bytes) {
  const std::string marker = "end_header\n";
  const std::string head(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(bytes.size(), 4096)));
  const auto end = head.find(marker);
  if (head.rfind("ply\n", 0) != 0 || end == std::string::npos) fail(ErrorKind::kFormat, "PLY: missing header");
  std::istringstream in(head.substr(0, end));
  std::string line;
  std::size_t count = 0;
  std::vector<std::string> props;
  bool binary_le = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (word == "element") {
      std::string name;
      ls >> name >> count;
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      if (type != "float") fail(ErrorKind::kFormat, "PLY: only float properties are supported");
      props.push_back(name);
    }
  }
  if (!binary_le) fail(ErrorKind::kFormat, "PLY: expected binary_little_endian");
  const bool has_q = props.size() == 4 && props[3] == "quality";
  if (!(props.size() == 3 || has_q) || props[0] != "x" || props[1] != "y" || props[2] != "z") {
    fail(ErrorKind::kFormat, "PLY: expected x, y, z [, quality]");
  }
  io::ByteReader r(bytes, "PLY");
  std::vector<std::uint8_t> skip(end + marker.size());
  r.bytes(skip.data(), skip.size());
  PlyCloud cloud;
  if (has_q) cloud.quality.emplace();
  for (std::size_t i = 0; i < count; ++i) {
    Eigen::Vector3f p;
    for (int c = 0; c < 3; ++c) p[c] = r.f32();
    cloud.points.push_back(p);
    if (has_q) cloud.quality->push_back(r.f32());
  }
  if (r.remaining() != 0) fail(ErrorKind::kFormat, "PLY: trailing bytes");
  return cloud;
}

std::string cost_trace_csv(const std::vector<double>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,cost\n";
  for (std::size_t i = 0; i < trace.size(); ++i) os << i << "," << trace[i] << "\n";
  return os.str();
}

}  // namespace dynsfm
