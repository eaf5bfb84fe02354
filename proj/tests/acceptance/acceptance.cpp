// Acceptance report: one PASS/FAIL line per criterion. Tolerances are fixed
// here; nothing is read from the environment.
//
//   acceptance [--only NAME]... [--cli PATH] [--work DIR] [--manifest PATH]
//              [--ablation-steps N] [--strict]
//
// Exit status is 0 once every requested criterion has been evaluated; with
// --strict it is 1 if any criterion failed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dynsfm/autodiff/gradcheck.hpp"
#include "dynsfm/eval.hpp"
#include "dynsfm/geometry.hpp"
#include "dynsfm/inference.hpp"
#include "dynsfm/losses.hpp"
#include "dynsfm/network.hpp"
#include "dynsfm/synthetic.hpp"
#include "dynsfm/training.hpp"
#include "support/ba_cases.hpp"
#include "support/gradient_cases.hpp"
#include "support/loss_cases.hpp"
#include "support/network_cases.hpp"
#include "support/scene_tensors.hpp"

namespace fs = std::filesystem;
using namespace dynsfm;
using ad::Graph;
using ad::Tensor;
using ad::Var;
using nlohmann::json;

namespace {

// ---- pinned tolerances -------------------------------------------------------------

constexpr double kGradTol = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr int kGradInstances = 100;
constexpr double kGradSeconds = 300.0;
// Full-graph instances are redrawn until every observed point, for the clouds
// and for B_1, sits at least this far in front of or behind the camera. Near
// the projection pole the loss runs to 1e3..1e4 and central differences at the
// pinned step stop resolving the gradient.
constexpr double kGradDepthMargin = 15.0 / 3.0;
constexpr int kGradMaxRedraws = 50;

constexpr double kEquivTol32 = 1e-5;
constexpr int kEquivPairs = 20;
constexpr double kLayerTol = 1e-12;

constexpr double kFormulaTol = 1e-6;

constexpr int kRotationSamples = 1000;
constexpr double kRotationTol = 1e-12;
constexpr double kProjectionTol = 1e-6;

constexpr double kBaMeanError = 1e-6;
constexpr double kBaSchurTol = 1e-8;
constexpr double kBaSeconds = 30.0;

constexpr double kLossRatio = 0.3;
constexpr double kAteFraction = 0.1;
constexpr double kE2eSeconds = 30.0 * 60.0;
constexpr std::size_t kE2eSteps = 2000;

constexpr double kMetricTol = 1e-9;

struct Options {
  std::set<std::string> only;
  fs::path cli;
  fs::path work = fs::temp_directory_path() / "dynsfm_acceptance";
  fs::path manifest;
  std::size_t ablation_steps = 50;
  bool strict = false;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// ---- gradient suite ----------------------------------------------------------------

NetworkConfig micro_network() {
  NetworkConfig cfg;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.head_dim = 8;
  cfg.ffn_dim = 32;
  cfg.layer_pairs = 1;
  cfg.bases = 3;
  cfg.frequencies = 2;
  cfg.temporal_kernel = 3;
  return cfg;
}

// Smallest |camera depth| over observed entries, for the clouds and for B_1.
double min_observed_depth(const NetworkGraph<double>& net, const PointTrackTensor& tracks) {
  const std::size_t n = tracks.frames, p = tracks.points;
  const auto X = net.clouds.value().data();
  const auto B = net.bases.value().data();
  const auto& R = net.rotations.value();
  const auto& C = net.centers.value();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      if (!tracks.is_observed(i, j)) continue;
      for (const double* pt : {X.data() + (i * p + j) * 3, B.data() + j * 3}) {
        // Depth is the third column of R applied to (X - t).
        double z = 0.0;
        for (std::size_t a = 0; a < 3; ++a) z += (pt[a] - C[i * 3 + a]) * R[i * 9 + a * 3 + 2];
        best = std::min(best, std::abs(z));
      }
    }
  }
  return best;
}

Outcome gradient_suite(const Options&) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  double worst_prim = 0.0;
  std::string worst_prim_name;
  const auto cases = testing::primitive_cases();
  for (const auto& c : cases) {
    for (int trial = 0; trial < kGradInstances; ++trial) {
      Graph<double> g;
      auto root = c.build(g, rng);
      const double e = ad::check_gradients(g, root, kGradEps).max_relative_error;
      if (e > worst_prim) {
        worst_prim = e;
        worst_prim_name = c.name;
      }
    }
  }
  double worst_full = 0.0;
  int redraws = 0;
  bool exhausted = false;
  const auto cfg = micro_network();
  for (int trial = 0; trial < kGradInstances; ++trial) {
    SynthConfig sc;
    sc.frames = 4;
    sc.points = 6;
    sc.occlusion_rate = trial % 2 == 0 ? 0.0 : 0.2;
    const auto scene = generate_synthetic_scene(sc, 1000 + static_cast<std::uint64_t>(trial));
    bool checked = false;
    for (int draw = 0; draw < kGradMaxRedraws && !checked; ++draw) {
      auto params = init_params<double>(cfg, 5000 + static_cast<std::uint64_t>(trial) +
                                                 100000 * static_cast<std::uint64_t>(draw));
      Graph<double> g;
      ParamLeaves<double> leaves(g, params);
      const auto net = build_forward(g, leaves, scene.tracks, cfg);
      if (min_observed_depth(net, scene.tracks) < kGradDepthMargin) {
        ++redraws;
        continue;
      }
      const auto obs = make_observations(g, scene.tracks);
      LossOptions opts;
      opts.detach = false;
      const auto terms = total_loss(net, obs, LossWeights{}, opts);
      worst_full = std::max(worst_full, ad::check_gradients(g, terms.total, kGradEps).max_relative_error);
      checked = true;
    }
    exhausted = exhausted || !checked;
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_prim < kGradTol && worst_full < kGradTol && !exhausted && secs < kGradSeconds;
  o.detail = std::to_string(cases.size()) + " primitives x " + std::to_string(kGradInstances) +
             " instances, worst " + fmt(worst_prim) + " (" + worst_prim_name + "); full loss graph x " +
             std::to_string(kGradInstances) + " (" + std::to_string(redraws) + " redrawn, depth margin " +
             fmt(kGradDepthMargin) + (exhausted ? ", redraws exhausted" : "") + "), worst " + fmt(worst_full) + "; tol " + fmt(kGradTol) + "; " +
             fmt(secs) + " s (limit " + fmt(kGradSeconds) + " s)";
  return o;
}

// ---- equivariance ------------------------------------------------------------------

Outcome equivariance_suite(const Options&) {
  std::mt19937_64 rng(77);
  NetworkConfig cfg = micro_network();
  cfg.temporal_kernel = 5;
  double worst_fwd = 0.0;
  for (int k = 0; k < kEquivPairs; ++k) {
    cfg.layer = k % 2 == 0 ? LayerKind::kAttention : LayerKind::kDss;
    const auto params = init_params<float>(cfg, 300 + static_cast<std::uint64_t>(k));
    const std::size_t n = 6 + static_cast<std::size_t>(k % 5);
    const std::size_t p = 9 + static_cast<std::size_t>(k % 7);
    const auto tracks = testing::random_tracks(n, p, rng);
    const auto sigma = testing::random_permutation(p, rng);
    worst_fwd = std::max(worst_fwd, testing::forward_symmetry_error(tracks, sigma, params, cfg));
  }

  cfg.layer = LayerKind::kAttention;
  const auto dparams = init_params<double>(cfg, 9);
  double worst_layer = 0.0;
  for (int k = 0; k < kEquivPairs; ++k) {
    const auto feat = testing::random_tensor({5, 7, cfg.d_model}, rng);
    const auto sigma = testing::random_permutation(7, rng);
    worst_layer = std::max(worst_layer, testing::layer_symmetry_error(feat, sigma, dparams,
                                                                      [&](Var<double> x, const ParamLeaves<double>& p) {
                                                                        return point_attention(x, p, "pair0.point", cfg);
                                                                      }));
    ParamStore<double> dss;
    dss.add("w1", testing::random_tensor({3 * 4, 4}, rng));
    dss.add("b1", testing::random_tensor({4}, rng));
    dss.add("w2", testing::random_tensor({3 * 4, 4}, rng));
    const auto f4 = testing::random_tensor({6, 8, 4}, rng);
    const auto s8 = testing::random_permutation(8, rng);
    worst_layer = std::max(worst_layer, testing::layer_symmetry_error(f4, s8, dss,
                                                                      [](Var<double> x, const ParamLeaves<double>& l) {
                                                                        return dss_layer(x, l["w1"], l["b1"], l["w2"], 3);
                                                                      }));
  }

  // Shared term of the DSS layer against an explicit loop over tracks.
  double worst_dss = 0.0;
  {
    const std::size_t n = 5, pts = 4, d = 3, kernel = 3;
    ParamStore<double> p;
    p.add("w1", testing::random_tensor({kernel * d, d}, rng));
    p.add("b1", testing::random_tensor({d}, rng));
    p.add("w2", testing::random_tensor({kernel * d, d}, rng));
    const auto feat = testing::random_tensor({n, pts, d}, rng);
    Graph<double> g;
    ParamLeaves<double> leaves(g, p);
    const auto y = dss_layer(g.constant(feat), leaves["w1"], leaves["b1"], leaves["w2"], kernel).value();
    auto conv = [&](const Tensor<double>& w, std::size_t i, std::size_t j, std::size_t out) {
      double s = 0.0;
      for (std::size_t t = 0; t < kernel; ++t) {
        const long src = std::clamp<long>(static_cast<long>(i + t) - 1, 0, static_cast<long>(n) - 1);
        for (std::size_t c = 0; c < d; ++c) s += feat.at({static_cast<std::size_t>(src), j, c}) * w[(t * d + c) * d + out];
      }
      return s;
    };
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < pts; ++j) {
        for (std::size_t o = 0; o < d; ++o) {
          double expected = conv(p.get("w1"), i, j, o) + p.get("b1")[o];
          for (std::size_t jj = 0; jj < pts; ++jj) expected += conv(p.get("w2"), i, jj, o);
          worst_dss = std::max(worst_dss, std::abs(y.at({i, j, o}) - expected));
        }
      }
    }
  }

  Outcome o;
  o.pass = worst_fwd < kEquivTol32 && worst_layer < kLayerTol && worst_dss < kLayerTol;
  o.detail = "forward float32 over " + std::to_string(kEquivPairs) + " pairs: " + fmt(worst_fwd) + " (tol " +
             fmt(kEquivTol32) + "); point_attention/dss_layer symmetry " + fmt(worst_layer) +
             ", dss loop oracle " + fmt(worst_dss) + " (tol " + fmt(kLayerTol) + ")";
  return o;
}

// ---- formulas ----------------------------------------------------------------------

Outcome formula_suite(const Options&) {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  check(std::abs(cauchy_nll(1.0, 1.0) - std::log(2.0)) < 1e-15, "cauchy_nll(1,1)");

  const auto out = testing::small_scene(3, 8, 12);
  const auto s = testing::scene_tensors(out.scene);
  {
    Graph<double> g;
    Tensor<double> R({5, 3, 3}), t({5, 3});
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t k = 0; k < 3; ++k) R.at({i, k, k}) = 1.0;
      t.at({i, 2}) = -15.0;
    }
    check(pretrain_loss(g.constant(R), g.constant(t)).value().item() == 0.0, "pretrain_loss at target");
  }
  {
    Graph<double> g;
    const auto obs = make_observations(g, out.tracks);
    const double v =
        negative_depth_loss(g.constant(s.clouds), g.constant(s.rotations), g.constant(s.centers), obs).value().item();
    check(v == 0.0, "negative depth with positive depths");
  }
  {
    Graph<double> g;
    auto bases = s.bases;
    const std::size_t pts = bases.dim(1);
    for (std::size_t i = pts * 3; i < bases.size(); ++i) bases[i] = 0.0;
    std::mt19937_64 rng(4);
    const double v = sparsity_loss(g.constant(bases), g.constant(testing::random_tensor({pts}, rng, 0.1, 1.0)))
                         .value()
                         .item();
    check(v == 0.0, "sparsity with vanishing deviation bases");
  }
  {
    Graph<double> g;
    const std::size_t k = s.bases.dim(0), pts = s.bases.dim(1), n = s.coeffs.dim(0);
    auto b = g.constant(s.bases);
    const auto x = assemble_clouds(ad::reshape(ad::slice(b, 0, 0, 1), {pts, 3}), ad::slice(b, 0, 1, k),
                                   g.constant(s.coeffs))
                       .value();
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < pts; ++j) {
        for (std::size_t c = 0; c < 3; ++c) {
          double e = s.bases.at({0, j, c});
          for (std::size_t kk = 1; kk < k; ++kk) e += s.coeffs.at({i, kk - 1}) * s.bases.at({kk, j, c});
          worst = std::max(worst, std::abs(x.at({i, j, c}) - e));
        }
      }
    }
    check(worst < kFormulaTol, "assemble_clouds vs loop (" + fmt(worst) + ")");
  }
  {
    std::mt19937_64 rng(5);
    Graph<double> g;
    auto o = testing::leaf_outputs(g, out.scene, rng, 0.05);
    const auto obs = make_observations(g, out.tracks);
    const auto terms = total_loss(o.net, obs, LossWeights{});
    auto gr = g.gradients(terms.reproject);
    const auto& gb = gr[o.bases];
    const std::size_t pts = out.scene.points();
    bool zero_b1 = true;
    for (std::size_t i = 0; i < pts * 3; ++i) zero_b1 = zero_b1 && gb[i] == 0.0;
    check(zero_b1, "dL_reproject/dB1 = 0");
    check(testing::all_zero(gr[o.rotations]) && testing::all_zero(gr[o.centers]), "dL_reproject/dposes = 0");
    auto gs = g.gradients(terms.sparse);
    check(testing::all_zero(gs[o.gamma]), "dL_sparse/dgamma = 0");
    check(!testing::all_zero(gs[o.bases]), "dL_sparse/dB nonzero");
  }
  Outcome o;
  o.pass = failed.empty();
  if (o.pass) {
    o.detail = "cauchy_nll(1,1)=log 2, pretrain target 0, negative depth 0, sparsity 0, assemble_clouds loop, "
               "detach contracts";
  } else {
    for (const auto& f : failed) o.detail += (o.detail.empty() ? "" : "; ") + f;
  }
  return o;
}

// ---- geometry ----------------------------------------------------------------------

Outcome geometry_suite(const Options&) {
  std::mt19937_64 rng(88);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> sc(0.01, 100.0);
  double worst_orth = 0.0, worst_scale = 0.0;
  int invalid = 0;
  for (int k = 0; k < kRotationSamples; ++k) {
    Vector6d v;
    for (int i = 0; i < 6; ++i) v[i] = nd(rng);
    const Eigen::Matrix3d R = rotation_from_6d<double>(v);
    worst_orth = std::max(worst_orth, (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff());
    if (!(std::abs(R.determinant() - 1.0) < 1e-12)) ++invalid;
    Vector6d w;
    w << sc(rng) * v.head<3>(), sc(rng) * v.tail<3>();
    worst_scale = std::max(worst_scale, (rotation_from_6d<double>(w) - R).cwiseAbs().maxCoeff());
  }
  double worst_proj = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthConfig cfg;
    const auto out = generate_synthetic_scene(cfg, seed);
    for (std::size_t i = 0; i < out.scene.frames(); ++i) {
      const auto X = out.scene.cloud(i);
      for (std::size_t j = 0; j < out.scene.points(); ++j) {
        const Eigen::Vector2d m(out.tracks.x(i, j), out.tracks.y(i, j));
        worst_proj = std::max(worst_proj,
                              reprojection_error(X.row(static_cast<Eigen::Index>(j)).transpose(), out.scene.poses[i], m));
      }
    }
  }
  Outcome o;
  o.pass = worst_orth < kRotationTol && invalid == 0 && worst_scale < kRotationTol && worst_proj < kProjectionTol;
  o.detail = std::to_string(kRotationSamples) + " samples: |RtR-I| " + fmt(worst_orth) + ", det!=1 " +
             std::to_string(invalid) + ", scale change " + fmt(worst_scale) + " (tol " + fmt(kRotationTol) +
             "); synthetic reprojection " + fmt(worst_proj) + " (tol " + fmt(kProjectionTol) + ")";
  return o;
}

// ---- bundle adjustment oracle --------------------------------------------------------

Outcome ba_oracle(const Options&) {
  const auto t0 = Clock::now();
  double worst_mean = 0.0, worst_schur = 0.0;
  bool monotone = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto oracle = testing::make_ba_oracle(seed);
    const auto res = bundle_adjust(oracle.problem);
    worst_mean = std::max(worst_mean, ba_mean_error(oracle.problem, res.poses, res.points));
    for (std::size_t k = 1; k < res.cost_trace.size(); ++k) monotone = monotone && res.cost_trace[k] <= res.cost_trace[k - 1];
    BAOptions dense;
    dense.use_schur = false;
    const auto d = bundle_adjust(oracle.problem, dense);
    for (std::size_t i = 0; i < res.poses.size(); ++i) {
      worst_schur = std::max(worst_schur, (res.poses[i].R - d.poses[i].R).cwiseAbs().maxCoeff());
      worst_schur = std::max(worst_schur, (res.poses[i].t - d.poses[i].t).cwiseAbs().maxCoeff());
    }
    for (std::size_t j = 0; j < res.points.size(); ++j) {
      worst_schur = std::max(worst_schur, (res.points[j] - d.points[j]).cwiseAbs().maxCoeff());
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_mean < kBaMeanError && monotone && worst_schur < kBaSchurTol && secs < kBaSeconds;
  o.detail = "5 problems (20 frames, 30 points, 1 deg / 1%): mean error " + fmt(worst_mean) + " (tol " +
             fmt(kBaMeanError) + "), cost trace " + (monotone ? "non-increasing" : "INCREASES") +
             ", Schur vs dense " + fmt(worst_schur) + " (tol " + fmt(kBaSchurTol) + "), " + fmt(secs) +
             " s (limit " + fmt(kBaSeconds) + " s)";
  return o;
}

// ---- end-to-end ----------------------------------------------------------------------

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SynthConfig e2e_scene_config() {
  SynthConfig sc;
  sc.frames = 40;
  sc.points = 120;
  sc.dynamic_fraction = 0.3;
  sc.noise_std = 0.0;
  sc.reseed_interval = 20;
  return sc;
}

struct E2eRun {
  json manifest;
  double loss_early = 0.0, loss_late = 0.0, ate_ratio = 0.0, gamma_dynamic = 0.0, gamma_static = 0.0;
  double seconds = 0.0;
};

E2eRun run_e2e(const TrainingConfig& cfg, std::size_t steps) {
  const auto t0 = Clock::now();
  const auto sc = e2e_scene_config();
  std::vector<SyntheticOutput> scenes;
  std::vector<PointTrackTensor> corpus;
  for (std::uint64_t s = 0; s < 5; ++s) {
    scenes.push_back(generate_synthetic_scene(sc, 100 + s));
    corpus.push_back(scenes.back().tracks);
  }
  TrainingConfig tc = cfg;
  tc.steps = steps;
  tc.validate();
  auto state = init_training(tc);
  const auto pre = pretrain(state, corpus, tc);
  const auto log = train(state, corpus, tc);

  E2eRun r;
  // Windowed means: single-window losses vary with the sampled frames and tracks.
  const std::size_t m = log.steps.size();
  const std::size_t lo = std::min<std::size_t>(25, m), hi = std::min<std::size_t>(75, m);
  for (std::size_t k = lo; k < hi; ++k) r.loss_early += log.steps[k].loss.total / static_cast<double>(hi - lo);
  const std::size_t tail = std::min<std::size_t>(50, m);
  for (std::size_t k = m - tail; k < m; ++k) r.loss_late += log.steps[k].loss.total / static_cast<double>(tail);

  const auto inf = infer(corpus[0], state.params, tc.network);
  const double a = ate(inf.outputs.poses, scenes[0].scene.poses);
  const double diam = trajectory_diameter(scenes[0].scene.poses);
  r.ate_ratio = a / diam;
  std::vector<double> gd, gs;
  for (std::size_t c = 0; c < inf.source_index.size(); ++c) {
    (scenes[0].scene.dynamic[inf.source_index[c]] ? gd : gs).push_back(inf.outputs.gamma[static_cast<Eigen::Index>(c)]);
  }
  r.gamma_dynamic = gd.empty() ? std::nan("") : median(gd);
  r.gamma_static = gs.empty() ? std::nan("") : median(gs);
  r.seconds = seconds_since(t0);

  json sj = json::object();
  for (const auto& [k, v] : sc.key_values()) sj[k] = v;
  r.manifest = {{"training_config", tc.to_json()},
                {"scene_config", sj},
                {"scene_seeds", {100, 101, 102, 103, 104}},
                {"pretrain_steps", pre.steps},
                {"pretrain_loss", pre.final_loss},
                {"train_steps", state.step},
                {"loss_mean_steps_25_74", r.loss_early},
                {"loss_mean_last_50", r.loss_late},
                {"loss_step_50", m > 50 ? log.steps[50].loss.total : std::nan("")},
                {"loss_final", m ? log.steps.back().loss.total : std::nan("")},
                {"eval_scene", 0},
                {"ate", a},
                {"trajectory_diameter", diam},
                {"ate_fraction", r.ate_ratio},
                {"median_gamma_dynamic", r.gamma_dynamic},
                {"median_gamma_static", r.gamma_static},
                {"thresholds", {{"loss_ratio", kLossRatio}, {"ate_fraction", kAteFraction}, {"seconds", kE2eSeconds}}},
                {"seconds", r.seconds}};
  return r;
}

TrainingConfig e2e_training_config() {
  TrainingConfig cfg;
  cfg.network = NetworkConfig::tiny();
  // A 2000-step budget needs a larger step than the long-schedule default.
  cfg.lr = 1e-3;
  cfg.seed = 0;
  return cfg;
}

Outcome end_to_end(const Options& opt) {
  const auto r = run_e2e(e2e_training_config(), kE2eSteps);
  if (!opt.manifest.empty()) {
    std::ofstream(opt.manifest) << r.manifest.dump(2) << "\n";
  }
  // The objective contains log(gamma) terms and is not bounded below by zero;
  // the ratio test is applied to the windowed means as stated.
  const bool a = r.loss_late < kLossRatio * r.loss_early;
  const bool b = r.ate_ratio < kAteFraction;
  const bool c = r.gamma_dynamic > r.gamma_static;
  const bool t = r.seconds < kE2eSeconds;
  Outcome o;
  o.pass = a && b && c && t;
  o.detail = std::string("(a) loss ") + fmt(r.loss_early) + " -> " + fmt(r.loss_late) + (a ? " ok" : " NO") +
             "; (b) ATE/diameter " + fmt(r.ate_ratio) + " < " + fmt(kAteFraction) + (b ? " ok" : " NO") +
             "; (c) median gamma dynamic " + fmt(r.gamma_dynamic) + " vs static " + fmt(r.gamma_static) +
             (c ? " ok" : " NO") + "; " + fmt(r.seconds) + " s" + (t ? "" : " OVER LIMIT");
  return o;
}

// ---- metrics -----------------------------------------------------------------------

CameraTrajectory transform(const CameraTrajectory& traj, const SimilarityTransform& s) {
  CameraTrajectory out;
  for (const auto& p : traj) out.push_back(s.apply(p));
  return out;
}

SimilarityTransform random_similarity(std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> us(0.2, 5.0);
  Vector6d v;
  for (int i = 0; i < 6; ++i) v[i] = nd(rng);
  SimilarityTransform s;
  s.s = us(rng);
  s.R = rotation_from_6d<double>(v);
  s.t = Eigen::Vector3d(nd(rng), nd(rng), nd(rng)) * 10.0;
  return s;
}

Outcome metric_suite(const Options&) {
  std::mt19937_64 rng(99);
  double worst_inv = 0.0, worst_recover = 0.0, worst_depth = 0.0;
  bool monotone = true;
  for (int trial = 0; trial < 20; ++trial) {
    SynthConfig sc;
    sc.frames = 20;
    sc.points = 30;
    const auto a = generate_synthetic_scene(sc, 500 + static_cast<std::uint64_t>(trial)).scene;
    const auto b = generate_synthetic_scene(sc, 900 + static_cast<std::uint64_t>(trial)).scene;
    const auto S = random_similarity(rng);
    const auto est = transform(b.poses, S);
    const double ate0 = ate(b.poses, a.poses), ate1 = ate(est, a.poses);
    const auto r0 = rpe(b.poses, a.poses), r1 = rpe(est, a.poses);
    worst_inv = std::max({worst_inv, std::abs(ate0 - ate1), std::abs(r0.trans - r1.trans), std::abs(r0.rot_deg - r1.rot_deg)});

    std::vector<Eigen::Vector3d> src, dst;
    for (int k = 0; k < 25; ++k) src.emplace_back(std::normal_distribution<double>()(rng), std::normal_distribution<double>()(rng),
                                                  std::normal_distribution<double>()(rng));
    for (const auto& x : src) dst.push_back(S.apply(x));
    const auto fit = align_similarity(src, dst);
    for (std::size_t k = 0; k < src.size(); ++k) worst_recover = std::max(worst_recover, (fit.apply(src[k]) - dst[k]).norm());

    const auto d = a.depths();
    std::vector<double> gt, e1, e2;
    std::vector<bool> dyn;
    std::uniform_real_distribution<double> noise(0.7, 1.4);
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      for (Eigen::Index j = 0; j < d.cols(); ++j) {
        gt.push_back(d(i, j));
        e1.push_back(d(i, j) * noise(rng));
        e2.push_back(e1.back() * 3.7);
        dyn.push_back(a.dynamic[static_cast<std::size_t>(j)]);
      }
    }
    const auto m1 = depth_metrics(e1, gt, dyn), m2 = depth_metrics(e2, gt, dyn);
    worst_depth = std::max(worst_depth, std::abs(m1.all.abs_rel - m2.all.abs_rel));
    for (int k = 0; k < 3; ++k) worst_depth = std::max(worst_depth, std::abs(m1.all.delta[k] - m2.all.delta[k]));
    monotone = monotone && m1.all.delta[0] <= m1.all.delta[1] && m1.all.delta[1] <= m1.all.delta[2];
  }
  Outcome o;
  o.pass = worst_inv < kMetricTol && worst_recover < kMetricTol && worst_depth < kMetricTol && monotone;
  o.detail = "20 trials: ATE/RPE similarity invariance " + fmt(worst_inv) + ", Umeyama recovery " +
             fmt(worst_recover) + ", depth scale invariance " + fmt(worst_depth) + " (tol " + fmt(kMetricTol) +
             "); delta thresholds " + (monotone ? "monotone" : "NOT monotone");
  return o;
}

// ---- determinism through the CLI ---------------------------------------------------------

int shell(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

bool same_bytes(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && read_file(a) == read_file(b);
}

Outcome determinism(const Options& opt) {
  Outcome o;
  if (opt.cli.empty() || !fs::exists(opt.cli)) {
    o.detail = "CLI executable not found (pass --cli)";
    return o;
  }
  const fs::path root = opt.work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto cfg = root / "short.cfg";
  std::ofstream(cfg) << "d_model = 16\nheads = 2\nhead_dim = 8\nffn_dim = 32\nlayer_pairs = 1\nK = 3\n"
                        "frequencies = 2\ntemporal_kernel = 5\np_per_sample = 40\nsteps = 5\n";
  std::vector<std::string> failures;
  for (const char* tag : {"a", "b"}) {
    const auto dir = root / tag;
    const std::string cli = quoted(opt.cli);
    if (shell(cli + " synth --out " + quoted(dir / "synth") + " --seed 21 --scenes 2 --set frames=30 --set points=50") != 0 ||
        shell(cli + " train --corpus " + quoted(dir / "synth") + " --out " + quoted(dir / "ck.bin") + " --config " +
              quoted(cfg) + " --seed 9") != 0 ||
        shell(cli + " infer --checkpoint " + quoted(dir / "ck.bin") + " --tracks " +
              quoted(dir / "synth" / "scene_0000.t4d") + " --out " + quoted(dir / "infer")) != 0) {
      o.detail = std::string("a CLI command failed in run ") + tag;
      return o;
    }
  }
  std::size_t compared = 0;
  auto cmp = [&](const fs::path& rel) {
    ++compared;
    if (!same_bytes(root / "a" / rel, root / "b" / rel)) failures.push_back(rel.string());
  };
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "a");
    if (rel.filename().string().find("manifest") != std::string::npos) continue;  // carries wall-clock timing
    cmp(rel);
  }
  o.pass = failures.empty() && compared >= 8;
  o.detail = "synth, train (5 steps) and infer twice with seed 21/9: " + std::to_string(compared) + " files compared";
  for (const auto& f : failures) o.detail += "; differs: " + f;
  return o;
}

// ---- ablations ---------------------------------------------------------------------

Outcome ablations(const Options& opt) {
  std::vector<std::string> rows;
  bool ok = true;
  for (const std::string name : {"dss", "no-gamma", "no-sparse", "no-static", "k2", "k30"}) {
    try {
      const auto cfg = apply_ablation(e2e_training_config(), name);
      const auto r = run_e2e(cfg, opt.ablation_steps);
      const bool finite = std::isfinite(r.loss_late) && std::isfinite(r.ate_ratio);
      ok = ok && finite;
      rows.push_back(name + (finite ? " ran" : " non-finite") + " (" + fmt(r.seconds) + " s)");
    } catch (const std::exception& e) {
      ok = false;
      rows.push_back(name + " threw: " + e.what());
    }
  }
  Outcome o;
  o.pass = ok;
  o.detail = "pretrain + " + std::to_string(opt.ablation_steps) + " steps + inference + ATE each: ";
  for (std::size_t i = 0; i < rows.size(); ++i) o.detail += (i ? ", " : "") + rows[i];
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::cerr << a << " needs a value\n";
        std::exit(1);
      }
      return argv[++i];
    };
    if (a == "--only") opt.only.insert(next());
    else if (a == "--cli") opt.cli = next();
    else if (a == "--work") opt.work = next();
    else if (a == "--manifest") opt.manifest = next();
    else if (a == "--ablation-steps") opt.ablation_steps = std::stoul(next());
    else if (a == "--strict") opt.strict = true;
    else {
      std::cerr << "unknown argument " << a << "\n";
      return 1;
    }
  }
  fs::create_directories(opt.work);
  tune_allocator();

  const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> criteria = {
      {"gradient-suite", gradient_suite}, {"equivariance-suite", equivariance_suite},
      {"formula-suite", formula_suite},   {"geometry-suite", geometry_suite},
      {"ba-oracle", ba_oracle},           {"end-to-end", end_to_end},
      {"metric-suite", metric_suite},     {"determinism", determinism},
      {"ablations", ablations},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!opt.only.empty() && !opt.only.count(name)) continue;
    Outcome o;
    try {
      o = fn(opt);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << "acceptance: " << failures << " criterion(s) failed" << std::endl;
  return opt.strict && failures > 0 ? 1 : 0;
}
