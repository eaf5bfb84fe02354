// dynsfm command-line front end.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "dynsfm/autodiff/gradcheck.hpp"
#include "dynsfm/error.hpp"
#include "dynsfm/eval.hpp"
#include "dynsfm/inference.hpp"
#include "dynsfm/losses.hpp"
#include "dynsfm/synthetic.hpp"
#include "dynsfm/training.hpp"

#ifndef DYNSFM_GIT_DESCRIBE
#define DYNSFM_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dynsfm;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidArgument:
      return kExitUsage;
    case ErrorKind::kData:
    case ErrorKind::kFormat:
    case ErrorKind::kIo:
    case ErrorKind::kShapeMismatch:
      return kExitData;
    case ErrorKind::kNonFinite:
    case ErrorKind::kDegenerate:
    case ErrorKind::kNumerical:
      return kExitNumerical;
  }
  return kExitData;
}

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, what + ": " + e.what());
  }
}

json key_values_json(const std::vector<std::pair<std::string, std::string>>& kvs) {
  json j = json::object();
  for (const auto& [k, v] : kvs) j[k] = v;
  return j;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create directory " + dir.string() + ": " + ec.message());
}

/// Provenance record written next to every command's outputs.
struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::uint64_t seed = 0;
  json inputs = json::object();
  json outputs = json::object();
  json extra = json::object();
  std::string started = utc_now();
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void write(const fs::path& path) const {
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["git"] = DYNSFM_GIT_DESCRIBE;
    j["started_utc"] = started;
    j["elapsed_seconds"] = elapsed;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    write_text(path, j.dump(2) + "\n");
  }
};

void apply_kv_lines(const std::string& text, const std::function<void(const std::string&, const std::string&)>& set) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kConfig, "line " + std::to_string(lineno) + ": expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_overrides(const std::vector<std::string>& sets,
                     const std::function<void(const std::string&, const std::string&)>& set) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kConfig, "--set expects key=value, got '" + s + "'");
    set(s.substr(0, eq), s.substr(eq + 1));
  }
}

std::vector<fs::path> list_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kIo, "corpus directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".t4d") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorKind::kData, "no .t4d files in " + dir.string());
  return files;
}

std::string frame_name(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04zu%s", stem, i, ext);
  return buf;
}

std::string training_defaults_footer() {
  std::ostringstream ss;
  ss << "Training configuration keys (defaults):\n";
  for (const auto& [k, v] : TrainingConfig{}.key_values()) ss << "  " << k << " = " << v << "\n";
  ss << "Ablations: ";
  const auto names = ablation_names();
  for (std::size_t i = 0; i < names.size(); ++i) ss << (i ? ", " : "") << names[i];
  ss << "\n";
  return ss.str();
}

std::string synth_defaults_footer() {
  std::ostringstream ss;
  ss << "Synthetic configuration keys (defaults):\n";
  for (const auto& [k, v] : SynthConfig{}.key_values()) ss << "  " << k << " = " << v << "\n";
  return ss.str();
}

Intrinsics intrinsics_from_json(const json& j) {
  try {
    return Intrinsics{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                      j.at("cy").get<double>()};
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("intrinsics: ") + e.what());
  }
}

// ---- synth -------------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  std::uint64_t seed = 0;
  std::size_t scenes = 1;
  fs::path config;
  std::vector<std::string> sets;
};

int run_synth(const SynthArgs& a, Manifest& m) {
  SynthConfig cfg;
  auto set = [&](const std::string& k, const std::string& v) { cfg.set(k, v); };
  if (!a.config.empty()) apply_kv_lines(read_text(a.config), set);
  apply_overrides(a.sets, set);
  if (a.scenes == 0) fail(ErrorKind::kConfig, "--scenes must be positive");
  ensure_dir(a.out);
  m.config = key_values_json(cfg.key_values());
  m.seed = a.seed;
  json files = json::array();
  for (std::size_t s = 0; s < a.scenes; ++s) {
    const auto gen = generate_synthetic_scene(cfg, a.seed + s);
    const auto t4d = a.out / frame_name("scene", s, ".t4d");
    const auto gt = a.out / frame_name("scene", s, ".json");
    save_tracks(t4d, gen.tracks);
    save_scene(gt, gen.scene);
    files.push_back({{"tracks", t4d.string()}, {"ground_truth", gt.string()}, {"seed", a.seed + s}});
  }
  m.outputs["scenes"] = files;
  m.write(a.out / "manifest.json");
  std::cout << "wrote " << a.scenes << " scene(s) to " << a.out.string() << "\n";
  return 0;
}

// ---- train -------------------------------------------------------------------------

struct TrainArgs {
  fs::path corpus;
  fs::path out;
  fs::path config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  fs::path resume;
  std::string ablation;
  fs::path log;
};

int run_train(const TrainArgs& a, Manifest& m) {
  tune_allocator();
  std::vector<PointTrackTensor> corpus;
  json inputs = json::array();
  for (const auto& f : list_corpus(a.corpus)) {
    corpus.push_back(load_tracks(f));
    inputs.push_back(f.string());
  }
  m.inputs["corpus"] = inputs;

  Checkpoint ck;
  if (!a.resume.empty()) {
    if (!a.config.empty() || !a.sets.empty() || a.seed || !a.ablation.empty()) {
      fail(ErrorKind::kConfig, "--resume takes its configuration from the checkpoint");
    }
    ck = load_checkpoint(a.resume);
    m.inputs["resume"] = a.resume.string();
  } else {
    TrainingConfig cfg;
    if (!a.ablation.empty()) cfg = apply_ablation(cfg, a.ablation);
    if (!a.config.empty()) cfg = load_training_config(a.config, cfg);
    apply_overrides(a.sets, [&](const std::string& k, const std::string& v) { cfg.set(k, v); });
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    ck.config = cfg;
    ck.state = init_training(cfg);
  }
  const TrainingConfig& cfg = ck.config;
  m.config = cfg.to_json();
  m.seed = cfg.seed;
  if (!a.ablation.empty()) m.extra["ablation"] = a.ablation;

  const fs::path log_path = a.log.empty() ? fs::path(a.out.string() + ".log.jsonl") : a.log;
  std::ofstream log(log_path, a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) fail(ErrorKind::kIo, "cannot write " + log_path.string());

  if (!ck.state.pretrained) {
    const auto pr = pretrain(ck.state, corpus, cfg);
    m.extra["pretrain"] = {{"steps", pr.steps}, {"final_loss", pr.final_loss}};
    log << json{{"pretrain_steps", pr.steps}, {"pretrain_loss", pr.final_loss}}.dump() << "\n";
    std::cout << "pretrained in " << pr.steps << " steps (loss " << pr.final_loss << ")\n";
  }

  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    json j = to_json(r);
    j["scene"] = r.scene;
    j["frames"] = r.frames;
    j["points"] = r.points;
    log << j.dump() << "\n";
  };
  hooks.on_checkpoint = [&](const TrainingState& s) {
    save_checkpoint(a.out, Checkpoint{cfg, s});
    log.flush();
  };
  const auto result = train(ck.state, corpus, cfg, hooks);
  save_checkpoint(a.out, ck);

  m.outputs["checkpoint"] = a.out.string();
  m.outputs["log"] = log_path.string();
  m.extra["steps"] = ck.state.step;
  m.extra["epoch_mean_total"] = result.epoch_mean_total;
  m.write(fs::path(a.out.string() + ".manifest.json"));
  std::cout << "trained to step " << ck.state.step << "; checkpoint " << a.out.string() << "\n";
  return 0;
}

// ---- finetune ----------------------------------------------------------------------

struct FinetuneArgs {
  fs::path checkpoint;
  fs::path tracks;
  fs::path out;
  std::optional<std::size_t> iters;
};

int run_finetune(const FinetuneArgs& a, Manifest& m) {
  m.inputs = {{"checkpoint", a.checkpoint.string()}, {"tracks", a.tracks.string()}};
  m.outputs["checkpoint"] = a.out.string();
  auto ck = load_checkpoint(a.checkpoint);
  const auto tracks = load_tracks(a.tracks);
  const std::size_t iters = a.iters.value_or(ck.config.finetune_iters);
  m.config = ck.config.to_json();
  m.seed = ck.config.seed;
  m.extra["iters"] = iters;
  if (iters == 0) {
    write_file(a.out, read_file(a.checkpoint));
  } else {
    tune_allocator();
    const auto trace = finetune(ck.state.params, tracks, ck.config, iters);
    save_checkpoint(a.out, ck);
    m.extra["loss_first"] = trace.front().total;
    m.extra["loss_last"] = trace.back().total;
    m.extra["reproject_first"] = trace.front().reproject;
    m.extra["reproject_last"] = trace.back().reproject;
  }
  m.write(fs::path(a.out.string() + ".manifest.json"));
  std::cout << "finetuned " << iters << " iteration(s); checkpoint " << a.out.string() << "\n";
  return 0;
}

// ---- infer -------------------------------------------------------------------------

struct InferArgs {
  fs::path checkpoint;
  fs::path tracks;
  fs::path out;
  bool ba = false;
  double gamma_thresh = 0.008;
  double pixel_gate = 10.0;
  fs::path intrinsics;
};

int run_infer(const InferArgs& a, Manifest& m) {
  m.inputs = {{"checkpoint", a.checkpoint.string()}, {"tracks", a.tracks.string()}};
  const auto ck = load_checkpoint(a.checkpoint);
  const auto tracks = load_tracks(a.tracks);
  m.config = ck.config.to_json();
  m.seed = ck.config.seed;
  m.extra["gamma_thresh"] = a.gamma_thresh;
  m.extra["pixel_gate"] = a.pixel_gate;

  const auto res = infer(tracks, ck.state.params, ck.config.network);
  ensure_dir(a.out);
  save_trajectory(a.out / "trajectory.json", res.outputs.poses);
  std::vector<double> gamma(res.outputs.gamma.data(), res.outputs.gamma.data() + res.outputs.gamma.size());
  for (std::size_t i = 0; i < res.outputs.clouds.size(); ++i) {
    const auto& C = res.outputs.clouds[i];
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(static_cast<std::size_t>(C.rows()));
    for (Eigen::Index r = 0; r < C.rows(); ++r) pts.push_back(C.row(r).transpose());
    write_file(a.out / frame_name("cloud", i, ".ply"), encode_ply(pts, gamma));
  }
  {
    std::ostringstream g, idx;
    g.precision(9);
    for (double v : gamma) g << v << "\n";
    for (auto s : res.source_index) idx << s << "\n";
    write_text(a.out / "gamma.txt", g.str());
    write_text(a.out / "track_index.txt", idx.str());
  }
  m.outputs = {{"trajectory", (a.out / "trajectory.json").string()},
               {"clouds", res.outputs.clouds.size()},
               {"gamma", (a.out / "gamma.txt").string()},
               {"track_index", (a.out / "track_index.txt").string()}};
  m.extra["frames"] = res.tracks.frames;
  m.extra["tracks_used"] = res.tracks.points;
  m.extra["tracks_input"] = tracks.points;

  if (a.ba) {
    Intrinsics intr;
    if (!a.intrinsics.empty()) {
      intr = intrinsics_from_json(parse_json(read_text(a.intrinsics), a.intrinsics.string()));
    } else if (tracks.intrinsics) {
      intr = *tracks.intrinsics;
    } else {
      fail(ErrorKind::kConfig, "--ba needs intrinsics: pass --intrinsics or use tracks that carry them");
    }
    const auto subset = select_static(res.outputs, a.gamma_thresh);
    if (subset.indices.empty()) fail(ErrorKind::kData, "no point has gamma below the threshold");
    const auto prob = build_ba_problem(subset, res.outputs.poses, res.tracks, a.pixel_gate, intr);
    const auto ba = bundle_adjust(prob);
    save_trajectory(a.out / "trajectory_ba.json", ba.poses);
    write_file(a.out / "static_ba.ply", encode_ply(ba.points));
    write_text(a.out / "ba_cost.csv", cost_trace_csv(ba.cost_trace));
    m.outputs["trajectory_ba"] = (a.out / "trajectory_ba.json").string();
    m.outputs["static_ba"] = (a.out / "static_ba.ply").string();
    m.outputs["ba_cost"] = (a.out / "ba_cost.csv").string();
    m.extra["ba"] = {{"static_points", subset.indices.size()},
                     {"points", prob.points.size()},
                     {"residuals", prob.residuals.size()},
                     {"candidates", prob.candidates},
                     {"gated_out", prob.gated_out},
                     {"dropped_points", prob.dropped_points},
                     {"iterations", ba.iterations},
                     {"converged", ba.converged},
                     {"initial_cost", ba.cost_trace.front()},
                     {"final_cost", ba.cost_trace.back()},
                     {"initial_mean_error", ba_mean_error(prob, prob.poses, prob.points)},
                     {"final_mean_error", ba_mean_error(prob, ba.poses, ba.points)}};
  }
  m.write(a.out / "manifest.json");
  std::cout << "inferred " << res.tracks.frames << " frames x " << res.tracks.points << " tracks into "
            << a.out.string() << "\n";
  return 0;
}

// ---- eval --------------------------------------------------------------------------

struct EvalArgs {
  fs::path pred;
  fs::path gt;
  fs::path tracks;
  fs::path out;
  std::string trajectory = "trajectory.json";
  bool self_check = false;
};

std::vector<std::size_t> read_index(const fs::path& path) {
  std::vector<std::size_t> idx;
  std::istringstream in(read_text(path));
  std::size_t v = 0;
  while (in >> v) idx.push_back(v);
  if (!in.eof()) fail(ErrorKind::kFormat, path.string() + ": expected one integer per line");
  return idx;
}

int run_eval(const EvalArgs& a, Manifest& m) {
  const auto scene = load_scene(a.gt);
  m.inputs["ground_truth"] = a.gt.string();
  std::optional<PointTrackTensor> tracks;
  if (!a.tracks.empty()) {
    tracks = load_tracks(a.tracks);
    m.inputs["tracks"] = a.tracks.string();
    if (tracks->frames != scene.frames() || tracks->points != scene.points()) {
      fail(ErrorKind::kShapeMismatch, "tracks and ground truth disagree in shape");
    }
  }
  const auto gt_depth = scene.depths();

  CameraTrajectory est;
  std::vector<double> d_est, d_gt;
  std::vector<bool> dyn;
  auto observed = [&](std::size_t i, std::size_t j) { return !tracks || tracks->is_observed(i, j); };

  if (a.self_check) {
    est = scene.poses;
    for (std::size_t i = 0; i < scene.frames(); ++i) {
      for (std::size_t j = 0; j < scene.points(); ++j) {
        if (!observed(i, j)) continue;
        d_est.push_back(gt_depth(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        d_gt.push_back(d_est.back());
        dyn.push_back(scene.dynamic[j]);
      }
    }
  } else {
    if (a.pred.empty()) fail(ErrorKind::kConfig, "--pred is required unless --self-check is given");
    m.inputs["pred"] = a.pred.string();
    est = load_trajectory(a.pred / a.trajectory);
    if (est.size() != scene.frames()) {
      fail(ErrorKind::kShapeMismatch, "prediction has " + std::to_string(est.size()) + " frames, ground truth " +
                                          std::to_string(scene.frames()));
    }
    const auto index = read_index(a.pred / "track_index.txt");
    for (std::size_t i = 0; i < est.size(); ++i) {
      const auto cloud = decode_ply(read_file(a.pred / frame_name("cloud", i, ".ply")));
      if (cloud.points.size() != index.size()) fail(ErrorKind::kShapeMismatch, "cloud and track index disagree");
      for (std::size_t c = 0; c < index.size(); ++c) {
        const std::size_t j = index[c];
        if (j >= scene.points()) fail(ErrorKind::kShapeMismatch, "track index out of range");
        if (!observed(i, j)) continue;
        d_est.push_back(camera_point(cloud.points[c].cast<double>(), est[i]).z());
        d_gt.push_back(gt_depth(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        dyn.push_back(scene.dynamic[j]);
      }
    }
  }

  MetricReport report;
  report.ate = ate(est, scene.poses);
  const auto r = rpe(est, scene.poses);
  report.rpe_trans = r.trans;
  report.rpe_rot = r.rot_deg;
  report.depth = depth_metrics(d_est, d_gt, dyn);
  json j = report.to_json();
  j["trajectory_diameter"] = trajectory_diameter(scene.poses);
  j["depth_scale"] = report.depth->scale;
  ensure_dir(a.out.parent_path().empty() ? fs::path(".") : a.out.parent_path());
  write_text(a.out, j.dump(2) + "\n");
  m.outputs["report"] = a.out.string();
  m.extra["self_check"] = a.self_check;
  m.write(fs::path(a.out.string() + ".manifest.json"));
  std::cout << j.dump(2) << "\n";

  if (a.self_check) {
    const double diam = trajectory_diameter(scene.poses);
    const bool ok = report.ate <= 1e-9 * std::max(diam, 1.0) && report.rpe_rot <= 1e-9 &&
                    report.depth->all.abs_rel <= 1e-12 && report.depth->all.delta[0] == 1.0;
    if (!ok) {
      std::cerr << "self-check failed: ground truth does not score as a perfect prediction\n";
      return kExitNumerical;
    }
  }
  return 0;
}

// ---- gradcheck ---------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  fs::path out;
};

int run_gradcheck(const GradcheckArgs& a, Manifest& m) {
  NetworkConfig cfg;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.head_dim = 8;
  cfg.ffn_dim = 32;
  cfg.layer_pairs = 1;
  cfg.bases = 3;
  cfg.frequencies = 2;
  cfg.temporal_kernel = 3;
  SynthConfig sc;
  sc.frames = 4;
  sc.points = 6;
  const auto scene = generate_synthetic_scene(sc, a.seed);
  auto params = init_params<double>(cfg, a.seed);

  ad::Graph<double> g;
  ParamLeaves<double> leaves(g, params);
  const auto net = build_forward(g, leaves, scene.tracks, cfg);
  const auto obs = make_observations(g, scene.tracks);
  LossOptions opts;
  opts.detach = false;
  const auto terms = total_loss(net, obs, LossWeights{}, opts);
  const auto rep = ad::check_gradients(g, terms.total);

  json j = {{"max_relative_error", rep.max_relative_error},
            {"worst_leaf", rep.worst_leaf},
            {"worst_index", rep.worst_index},
            {"analytic", rep.worst_analytic},
            {"numeric", rep.worst_numeric},
            {"checked", rep.checked},
            {"tolerance", 1e-4}};
  const bool ok = rep.max_relative_error < 1e-4;
  j["pass"] = ok;
  std::cout << j.dump(2) << "\n";
  m.seed = a.seed;
  m.config = {{"d_model", cfg.d_model}, {"bases", cfg.bases}, {"frames", sc.frames}, {"points", sc.points}};
  m.extra["report"] = j;
  if (!a.out.empty()) {
    write_text(a.out, j.dump(2) + "\n");
    m.outputs["report"] = a.out.string();
    m.write(fs::path(a.out.string() + ".manifest.json"));
  }
  return ok ? 0 : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic structure from motion from 2-D point tracks."};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(DYNSFM_GIT_DESCRIBE));

  Manifest manifest;
  manifest.argv.assign(argv, argv + argc);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate synthetic scenes with ground truth");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.seed, "Seed of the first scene; scene k uses seed + k")->capture_default_str();
  c_synth->add_option("--scenes", synth.scenes, "Number of scenes")->capture_default_str();
  c_synth->add_option("--config", synth.config, "key = value file");
  c_synth->add_option("--set", synth.sets, "Override one key (key=value); repeatable");
  c_synth->footer(synth_defaults_footer());

  TrainArgs train_args;
  std::uint64_t train_seed = 0;
  auto* c_train = app.add_subcommand("train", "Pretrain the pose heads, then train on a corpus");
  c_train->add_option("--corpus", train_args.corpus, "Directory of .t4d track files")->required();
  c_train->add_option("--out", train_args.out, "Checkpoint path; periodic checkpoints overwrite it")->required();
  c_train->add_option("--config", train_args.config, "key = value file");
  c_train->add_option("--set", train_args.sets, "Override one key (key=value); repeatable");
  auto* o_seed = c_train->add_option("--seed", train_seed, "Overrides the configured seed");
  c_train->add_option("--resume", train_args.resume, "Continue from a checkpoint");
  c_train->add_option("--ablation", train_args.ablation, "Start from a named preset");
  c_train->add_option("--log", train_args.log, "JSONL step log (default: <out>.log.jsonl)");
  c_train->footer(training_defaults_footer());

  FinetuneArgs ft;
  std::size_t ft_iters = 0;
  auto* c_ft = app.add_subcommand("finetune", "Adapt a checkpoint to one video");
  c_ft->add_option("--checkpoint", ft.checkpoint, "Input checkpoint")->required();
  c_ft->add_option("--tracks", ft.tracks, "Track file of the video")->required();
  c_ft->add_option("--out", ft.out, "Output checkpoint")->required();
  auto* o_iters = c_ft->add_option("--iters", ft_iters, "Iterations (default: finetune_iters of the checkpoint, 500)");

  InferArgs inf;
  auto* c_inf = app.add_subcommand("infer", "Predict cameras, clouds and gamma; optionally bundle adjust");
  c_inf->add_option("--checkpoint", inf.checkpoint, "Checkpoint")->required();
  c_inf->add_option("--tracks", inf.tracks, "Track file")->required();
  c_inf->add_option("--out", inf.out, "Output directory")->required();
  c_inf->add_flag("--ba", inf.ba, "Refine static points and cameras with bundle adjustment");
  c_inf->add_option("--gamma-thresh", inf.gamma_thresh, "Static selection threshold on gamma")->capture_default_str();
  c_inf->add_option("--pixel-gate", inf.pixel_gate, "Reprojection gate in pixels")->capture_default_str();
  c_inf->add_option("--intrinsics", inf.intrinsics, "JSON with fx, fy, cx, cy");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Score a prediction against synthetic ground truth");
  c_ev->add_option("--pred", ev.pred, "Directory written by infer");
  c_ev->add_option("--gt", ev.gt, "Ground-truth scene JSON")->required();
  c_ev->add_option("--tracks", ev.tracks, "Track file; restricts depth metrics to observed entries");
  c_ev->add_option("--out", ev.out, "Report JSON")->required();
  c_ev->add_option("--trajectory", ev.trajectory, "Trajectory file inside --pred")->capture_default_str();
  c_ev->add_flag("--self-check", ev.self_check, "Score the ground truth against itself");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of the full objective on a tiny network");
  c_gc->add_option("--seed", gc.seed, "Seed")->capture_default_str();
  c_gc->add_option("--out", gc.out, "Report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (c_synth->parsed()) {
      manifest.command = "synth";
      return run_synth(synth, manifest);
    }
    if (c_train->parsed()) {
      manifest.command = "train";
      if (o_seed->count() > 0) train_args.seed = train_seed;
      return run_train(train_args, manifest);
    }
    if (c_ft->parsed()) {
      manifest.command = "finetune";
      if (o_iters->count() > 0) ft.iters = ft_iters;
      return run_finetune(ft, manifest);
    }
    if (c_inf->parsed()) {
      manifest.command = "infer";
      return run_infer(inf, manifest);
    }
    if (c_ev->parsed()) {
      manifest.command = "eval";
      return run_eval(ev, manifest);
    }
    if (c_gc->parsed()) {
      manifest.command = "gradcheck";
      return run_gradcheck(gc, manifest);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
