#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dynsfm/error.hpp"
#include "dynsfm/eval.hpp"
#include "dynsfm/geometry.hpp"
#include "dynsfm/inference.hpp"
#include "dynsfm/synthetic.hpp"
#include "dynsfm/training.hpp"

namespace py = pybind11;
using namespace dynsfm;

namespace {

py::dict loss_dict(const LossBreakdown& l) {
  py::dict d;
  d["total"] = l.total;
  d["reproject"] = l.reproject;
  d["static"] = l.static_term;
  d["negative"] = l.negative;
  d["sparse"] = l.sparse;
  return d;
}

py::array_t<float> tracks_xy(const PointTrackTensor& t) {
  py::array_t<float> a({t.frames, t.points, std::size_t{2}});
  std::copy(t.xy.begin(), t.xy.end(), a.mutable_data());
  return a;
}

py::array_t<bool> tracks_observed(const PointTrackTensor& t) {
  py::array_t<bool> a({t.frames, t.points});
  auto* out = a.mutable_data();
  for (std::size_t i = 0; i < t.observed.size(); ++i) out[i] = t.observed[i] != 0;
  return a;
}

PointTrackTensor make_tracks(py::array_t<float, py::array::c_style | py::array::forcecast> xy,
                             py::array_t<bool, py::array::c_style | py::array::forcecast> observed,
                             std::optional<Intrinsics> intrinsics) {
  if (xy.ndim() != 3 || xy.shape(2) != 2) fail(ErrorKind::kShapeMismatch, "xy must have shape (N, P, 2)");
  if (observed.ndim() != 2 || observed.shape(0) != xy.shape(0) || observed.shape(1) != xy.shape(1)) {
    fail(ErrorKind::kShapeMismatch, "observed must have shape (N, P)");
  }
  PointTrackTensor t(static_cast<std::size_t>(xy.shape(0)), static_cast<std::size_t>(xy.shape(1)));
  std::copy(xy.data(), xy.data() + xy.size(), t.xy.begin());
  for (std::size_t i = 0; i < t.observed.size(); ++i) t.observed[i] = observed.data()[i] ? 1 : 0;
  t.intrinsics = intrinsics;
  return t;
}

template <typename C>
void bind_key_values(py::class_<C>& cls) {
  cls.def("set", &C::set, py::arg("key"), py::arg("value"))
      .def("items", &C::key_values)
      .def("__repr__", [](const C& c) {
        std::string s = "{";
        for (const auto& [k, v] : c.key_values()) s += (s.size() > 1 ? ", " : "") + k + ": " + v;
        return s + "}";
      });
}

}  // namespace

PYBIND11_MODULE(_dynsfm, m) {
  m.doc() = "Dynamic structure from motion from 2-D point tracks";

  static py::handle error = py::exception<Error>(m, "Error", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  py::class_<Intrinsics>(m, "Intrinsics")
      .def(py::init([](double fx, double fy, double cx, double cy) { return Intrinsics{fx, fy, cx, cy}; }),
           py::arg("fx") = 500.0, py::arg("fy") = 500.0, py::arg("cx") = 320.0, py::arg("cy") = 240.0)
      .def_readwrite("fx", &Intrinsics::fx)
      .def_readwrite("fy", &Intrinsics::fy)
      .def_readwrite("cx", &Intrinsics::cx)
      .def_readwrite("cy", &Intrinsics::cy);

  py::class_<CameraPose>(m, "CameraPose")
      .def(py::init([](const Eigen::Matrix3d& R, const Eigen::Vector3d& t) { return CameraPose{R, t}; }),
           py::arg("R"), py::arg("t"))
      .def_readwrite("R", &CameraPose::R)
      .def_readwrite("t", &CameraPose::t);

  py::class_<PointTrackTensor>(m, "Tracks")
      .def(py::init(&make_tracks), py::arg("xy"), py::arg("observed"), py::arg("intrinsics") = std::nullopt)
      .def_readonly("frames", &PointTrackTensor::frames)
      .def_readonly("points", &PointTrackTensor::points)
      .def_property_readonly("xy", &tracks_xy)
      .def_property_readonly("observed", &tracks_observed)
      .def_readwrite("intrinsics", &PointTrackTensor::intrinsics)
      .def("__eq__", [](const PointTrackTensor& a, const PointTrackTensor& b) { return a == b; });
  m.def("load_tracks", &load_tracks, py::arg("path"));
  m.def("save_tracks", &save_tracks, py::arg("path"), py::arg("tracks"));
  m.def("filter_by_observations", &filter_by_observations, py::arg("tracks"), py::arg("min_observations") = 10);
  py::class_<FilteredTracks>(m, "FilteredTracks")
      .def_readonly("tracks", &FilteredTracks::tracks)
      .def_readonly("source_index", &FilteredTracks::source_index);

  // ---- synthetic data ----
  py::class_<SynthConfig> synth(m, "SynthConfig");
  synth.def(py::init<>());
  bind_key_values(synth);
  py::class_<SyntheticScene>(m, "SyntheticScene")
      .def_readonly("poses", &SyntheticScene::poses)
      .def_readonly("bases", &SyntheticScene::bases)
      .def_readonly("coeffs", &SyntheticScene::coeffs)
      .def_readonly("dynamic", &SyntheticScene::dynamic)
      .def_readonly("intrinsics", &SyntheticScene::intrinsics)
      .def("cloud", &SyntheticScene::cloud, py::arg("frame"))
      .def("depths", &SyntheticScene::depths);
  m.def(
      "generate_synthetic_scene",
      [](const SynthConfig& cfg, std::uint64_t seed) {
        auto out = generate_synthetic_scene(cfg, seed);
        return py::make_tuple(out.scene, out.tracks);
      },
      py::arg("config"), py::arg("seed"), "Returns (scene, tracks).");
  m.def("save_scene", &save_scene, py::arg("path"), py::arg("scene"));
  m.def("load_scene", &load_scene, py::arg("path"));

  // ---- geometry ----
  m.def("rotation_from_6d", [](const Vector6d& v) { return rotation_from_6d<double>(v); }, py::arg("v"));
  m.def("project", [](const Eigen::Vector3d& X, const CameraPose& pose) { return project(X, pose); }, py::arg("X"),
        py::arg("pose"));

  // ---- network and training ----
  py::class_<NetworkConfig>(m, "NetworkConfig")
      .def(py::init<>())
      .def_static("tiny", &NetworkConfig::tiny)
      .def_readwrite("d_model", &NetworkConfig::d_model)
      .def_readwrite("heads", &NetworkConfig::heads)
      .def_readwrite("bases", &NetworkConfig::bases)
      .def_readwrite("layer_pairs", &NetworkConfig::layer_pairs);

  py::class_<TrainingConfig> tcfg(m, "TrainingConfig");
  tcfg.def(py::init<>())
      .def_readwrite("network", &TrainingConfig::network)
      .def("validate", &TrainingConfig::validate)
      .def("to_json", [](const TrainingConfig& c) { return c.to_json().dump(); });
  bind_key_values(tcfg);
  m.def("apply_ablation", &apply_ablation, py::arg("config"), py::arg("name"));
  m.def("ablation_names", &ablation_names);
  m.def("parse_training_config", &parse_training_config, py::arg("text"), py::arg("base") = TrainingConfig{});

  py::class_<TrainingState>(m, "TrainingState")
      .def_readonly("step", &TrainingState::step)
      .def_readonly("pretrained", &TrainingState::pretrained)
      .def_readonly("pretrain_steps", &TrainingState::pretrain_steps)
      .def("__eq__", [](const TrainingState& a, const TrainingState& b) { return a == b; });
  m.def("init_training", &init_training, py::arg("config"));
  m.def(
      "pretrain",
      [](TrainingState& state, const std::vector<PointTrackTensor>& corpus, const TrainingConfig& cfg) {
        py::gil_scoped_release release;
        const auto r = pretrain(state, corpus, cfg);
        return std::make_pair(r.steps, r.final_loss);
      },
      py::arg("state"), py::arg("corpus"), py::arg("config"), "Returns (steps, final_loss).");
  m.def(
      "train",
      [](TrainingState& state, const std::vector<PointTrackTensor>& corpus, const TrainingConfig& cfg,
         std::uint64_t stop_after) {
        TrainingLog log;
        {
          py::gil_scoped_release release;
          TrainHooks hooks;
          hooks.stop_after = stop_after;
          log = train(state, corpus, cfg, hooks);
        }
        py::list out;
        for (const auto& r : log.steps) {
          py::dict d = loss_dict(r.loss);
          d["step"] = r.step;
          d["epoch"] = r.epoch;
          d["scene"] = r.scene;
          d["frames"] = r.frames;
          d["points"] = r.points;
          out.append(d);
        }
        return out;
      },
      py::arg("state"), py::arg("corpus"), py::arg("config"), py::arg("stop_after") = 0,
      "Runs training steps and returns one loss record per step.");
  m.def(
      "finetune",
      [](TrainingState& state, const PointTrackTensor& tracks, const TrainingConfig& cfg, std::size_t iters) {
        std::vector<LossBreakdown> trace;
        {
          py::gil_scoped_release release;
          trace = finetune(state.params, tracks, cfg, iters);
        }
        py::list out;
        for (const auto& l : trace) out.append(loss_dict(l));
        return out;
      },
      py::arg("state"), py::arg("tracks"), py::arg("config"), py::arg("iters"));
  m.def(
      "save_checkpoint",
      [](const std::filesystem::path& path, const TrainingConfig& cfg, const TrainingState& state) {
        save_checkpoint(path, Checkpoint{cfg, state});
      },
      py::arg("path"), py::arg("config"), py::arg("state"));
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        auto ck = load_checkpoint(path);
        return py::make_tuple(ck.config, ck.state);
      },
      py::arg("path"), "Returns (config, state).");

  // ---- inference and bundle adjustment ----
  py::class_<NetworkOutputs>(m, "NetworkOutputs")
      .def_readonly("bases", &NetworkOutputs::bases)
      .def_readonly("coeffs", &NetworkOutputs::coeffs)
      .def_readonly("gamma", &NetworkOutputs::gamma)
      .def_readonly("poses", &NetworkOutputs::poses)
      .def_readonly("clouds", &NetworkOutputs::clouds);
  py::class_<InferenceResult>(m, "InferenceResult")
      .def_readonly("outputs", &InferenceResult::outputs)
      .def_readonly("tracks", &InferenceResult::tracks)
      .def_readonly("source_index", &InferenceResult::source_index);
  m.def(
      "infer",
      [](const PointTrackTensor& tracks, const TrainingState& state, const TrainingConfig& cfg) {
        py::gil_scoped_release release;
        return infer(tracks, state.params, cfg.network);
      },
      py::arg("tracks"), py::arg("state"), py::arg("config"));

  py::class_<BAResult>(m, "BAResult")
      .def_readonly("poses", &BAResult::poses)
      .def_readonly("points", &BAResult::points)
      .def_readonly("cost_trace", &BAResult::cost_trace)
      .def_readonly("iterations", &BAResult::iterations)
      .def_readonly("converged", &BAResult::converged);
  m.def(
      "refine",
      [](const InferenceResult& res, double gamma_thresh, double pixel_gate, const Intrinsics& intr,
         bool use_schur) {
        const auto subset = select_static(res.outputs, gamma_thresh);
        const auto prob = build_ba_problem(subset, res.outputs.poses, res.tracks, pixel_gate, intr);
        BAOptions opts;
        opts.use_schur = use_schur;
        auto ba = bundle_adjust(prob, opts);
        return py::make_tuple(ba, ba_mean_error(prob, prob.poses, prob.points), ba_mean_error(prob, ba.poses, ba.points));
      },
      py::arg("result"), py::arg("gamma_thresh") = 0.008, py::arg("pixel_gate") = 10.0,
      py::arg("intrinsics") = Intrinsics{}, py::arg("use_schur") = true,
      "Bundle-adjusts the low-gamma points; returns (result, initial_mean_error, final_mean_error).");

  // ---- evaluation ----
  py::class_<SimilarityTransform>(m, "SimilarityTransform")
      .def_readonly("s", &SimilarityTransform::s)
      .def_readonly("R", &SimilarityTransform::R)
      .def_readonly("t", &SimilarityTransform::t)
      .def("apply", [](const SimilarityTransform& s, const Eigen::Vector3d& x) { return s.apply(x); });
  m.def("align_similarity", &align_similarity, py::arg("est"), py::arg("gt"));
  m.def("ate", &ate, py::arg("est"), py::arg("gt"));
  m.def(
      "rpe",
      [](const CameraTrajectory& est, const CameraTrajectory& gt, std::size_t delta) {
        const auto r = rpe(est, gt, delta);
        return std::make_pair(r.trans, r.rot_deg);
      },
      py::arg("est"), py::arg("gt"), py::arg("delta") = 1, "Returns (translation, rotation in degrees).");
  m.def("trajectory_diameter", &trajectory_diameter, py::arg("poses"));
  m.def(
      "depth_metrics",
      [](const std::vector<double>& est, const std::vector<double>& gt, const std::vector<bool>& dynamic) {
        const auto d = depth_metrics(est, gt, dynamic);
        auto group = [](const DepthGroup& g) {
          py::dict out;
          out["count"] = g.count;
          out["abs_rel"] = g.abs_rel;
          out["delta"] = py::make_tuple(g.delta[0], g.delta[1], g.delta[2]);
          return out;
        };
        py::dict out;
        out["scale"] = d.scale;
        out["all"] = group(d.all);
        out["dynamic"] = group(d.dynamic);
        return out;
      },
      py::arg("est"), py::arg("gt"), py::arg("dynamic"));
}
