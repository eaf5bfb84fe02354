#include "dynsfm/training.hpp"

#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dynsfm/binary_io.hpp"
#include "keyvalue.hpp"

namespace dynsfm {

using ad::Graph;
using ad::Tensor;
using ad::Var;
using nlohmann::json;

namespace {

using kv::format_double;
using kv::parse_bool;
using kv::parse_double;
using kv::parse_size;
using kv::parse_u64;
using kv::trim;

FrameRange parse_range(const std::string& key, const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) fail(ErrorKind::kConfig, "'" + key + "' expects 'lo,hi', got '" + text + "'");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t[");
    const auto e = s.find_last_not_of(" \t]");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  return {parse_size(key, trim(text.substr(0, comma))), parse_size(key, trim(text.substr(comma + 1)))};
}

struct Field {
  const char* key;
  std::function<std::string(const TrainingConfig&)> get;
  std::function<void(TrainingConfig&, const std::string&)> set;
};

#define DYNSFM_SIZE_FIELD(name, member)                                                          \
  Field {                                                                                        \
    name, [](const TrainingConfig& c) { return std::to_string(c.member); },                      \
        [](TrainingConfig& c, const std::string& v) { c.member = parse_size(name, v); }          \
  }
#define DYNSFM_DOUBLE_FIELD(name, member)                                                        \
  Field {                                                                                        \
    name, [](const TrainingConfig& c) { return format_double(c.member); },                       \
        [](TrainingConfig& c, const std::string& v) { c.member = parse_double(name, v); }        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DYNSFM_SIZE_FIELD("d_model", network.d_model),
      DYNSFM_SIZE_FIELD("heads", network.heads),
      DYNSFM_SIZE_FIELD("head_dim", network.head_dim),
      DYNSFM_SIZE_FIELD("ffn_dim", network.ffn_dim),
      DYNSFM_SIZE_FIELD("layer_pairs", network.layer_pairs),
      DYNSFM_SIZE_FIELD("bases", network.bases),
      DYNSFM_SIZE_FIELD("frequencies", network.frequencies),
      DYNSFM_SIZE_FIELD("temporal_kernel", network.temporal_kernel),
      DYNSFM_SIZE_FIELD("dss_kernel", network.dss_kernel),
      DYNSFM_DOUBLE_FIELD("gamma_floor", network.gamma_floor),
      Field{"layer", [](const TrainingConfig& c) { return to_string(c.network.layer); },
            [](TrainingConfig& c, const std::string& v) { c.network.layer = parse_layer_kind(v); }},
      DYNSFM_DOUBLE_FIELD("w_reproject", weights.reproject),
      DYNSFM_DOUBLE_FIELD("w_static", weights.static_term),
      DYNSFM_DOUBLE_FIELD("w_negative", weights.negative),
      DYNSFM_DOUBLE_FIELD("w_sparse", weights.sparse),
      Field{"use_gamma", [](const TrainingConfig& c) { return std::string(c.use_gamma ? "true" : "false"); },
            [](TrainingConfig& c, const std::string& v) { c.use_gamma = parse_bool("use_gamma", v); }},
      DYNSFM_DOUBLE_FIELD("lr", lr),
      DYNSFM_DOUBLE_FIELD("beta1", beta1),
      DYNSFM_DOUBLE_FIELD("beta2", beta2),
      DYNSFM_DOUBLE_FIELD("adam_eps", adam_eps),
      DYNSFM_SIZE_FIELD("epochs", epochs),
      DYNSFM_SIZE_FIELD("steps", steps),
      DYNSFM_SIZE_FIELD("curriculum_switch_epoch", curriculum_switch_epoch),
      Field{"n_range_early",
            [](const TrainingConfig& c) {
              return std::to_string(c.n_range_early.lo) + "," + std::to_string(c.n_range_early.hi);
            },
            [](TrainingConfig& c, const std::string& v) { c.n_range_early = parse_range("n_range_early", v); }},
      Field{"n_range_late",
            [](const TrainingConfig& c) {
              return std::to_string(c.n_range_late.lo) + "," + std::to_string(c.n_range_late.hi);
            },
            [](TrainingConfig& c, const std::string& v) { c.n_range_late = parse_range("n_range_late", v); }},
      DYNSFM_SIZE_FIELD("p_per_sample", p_per_sample),
      Field{"seed", [](const TrainingConfig& c) { return std::to_string(c.seed); },
            [](TrainingConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
      DYNSFM_SIZE_FIELD("checkpoint_every", checkpoint_every),
      DYNSFM_DOUBLE_FIELD("pretrain_tolerance", pretrain_tolerance),
      DYNSFM_DOUBLE_FIELD("pretrain_lr", pretrain_lr),
      DYNSFM_SIZE_FIELD("pretrain_max_steps", pretrain_max_steps),
      DYNSFM_SIZE_FIELD("finetune_iters", finetune_iters),
  };
  return table;
}

#undef DYNSFM_SIZE_FIELD
#undef DYNSFM_DOUBLE_FIELD

}  // namespace

// ---- configuration ---------------------------------------------------------------

void TrainingConfig::validate() const {
  network.validate();
  weights.validate();
  auto need = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::kConfig, "training config: " + what);
  };
  need(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  need(pretrain_lr > 0.0 && std::isfinite(pretrain_lr), "pretrain_lr must be positive");
  need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "beta1 and beta2 must lie in [0, 1)");
  need(adam_eps > 0.0, "adam_eps must be positive");
  need(epochs > 0 || steps > 0, "epochs or steps must be positive");
  for (const auto* r : {&n_range_early, &n_range_late}) {
    need(r->lo >= 2 && r->lo <= r->hi, "frame ranges need 2 <= lo <= hi");
  }
  need(p_per_sample > 0, "p_per_sample must be positive");
  need(pretrain_tolerance > 0.0, "pretrain_tolerance must be positive");
}

void TrainingConfig::set(const std::string& key, const std::string& value) {
  if (key == "K") return set("bases", value);
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  fail(ErrorKind::kConfig, "unknown configuration key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> TrainingConfig::key_values() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

json TrainingConfig::to_json() const {
  json j = json::object();
  for (const auto& [k, v] : key_values()) {
    // Numbers and booleans keep their JSON type; everything else is a string.
    json parsed = json::parse(v, nullptr, false);
    j[k] = (parsed.is_number() || parsed.is_boolean()) ? parsed : json(v);
  }
  return j;
}

TrainingConfig TrainingConfig::from_json(const json& j) {
  if (!j.is_object()) fail(ErrorKind::kFormat, "training config must be a JSON object");
  TrainingConfig cfg;
  for (const auto& [k, v] : j.items()) cfg.set(k, v.is_string() ? v.get<std::string>() : v.dump());
  return cfg;
}

TrainingConfig parse_training_config(const std::string& text, TrainingConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kConfig, "config line " + std::to_string(lineno) + ": expected key = value");
    }
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

TrainingConfig load_training_config(const std::filesystem::path& path, TrainingConfig base) {
  const auto bytes = read_file(path);
  return parse_training_config(std::string(bytes.begin(), bytes.end()), std::move(base));
}

std::vector<std::string> ablation_names() { return {"full", "dss", "no-gamma", "no-sparse", "no-static", "k2", "k30"}; }

TrainingConfig apply_ablation(TrainingConfig cfg, const std::string& name) {
  if (name == "full") return cfg;
  if (name == "dss") {
    cfg.network.layer = LayerKind::kDss;
  } else if (name == "no-gamma") {
    cfg.use_gamma = false;
  } else if (name == "no-sparse") {
    cfg.weights.sparse = 0.0;
  } else if (name == "no-static") {
    cfg.weights.static_term = 0.0;
  } else if (name == "k2") {
    cfg.network.bases = 2;
  } else if (name == "k30") {
    cfg.network.bases = 30;
  } else {
    fail(ErrorKind::kConfig, "unknown ablation '" + name + "'");
  }
  return cfg;
}

// ---- optimizer ---------------------------------------------------------------------

AdamState AdamState::zeros_like(const ParamStore<float>& params) {
  AdamState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.add(params.names()[i], Tensor<float>::zeros(params.at(i).shape()));
    s.v.add(params.names()[i], Tensor<float>::zeros(params.at(i).shape()));
  }
  return s;
}

void adam_step(ParamStore<float>& params, AdamState& state, const std::vector<const Tensor<float>*>& grads, double lr,
               double beta1, double beta2, double eps) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    fail(ErrorKind::kShapeMismatch, "adam_step: parameter, gradient and moment counts differ");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params.at(k).mutable_data();
    auto m = state.m.at(k).mutable_data();
    auto v = state.v.at(k).mutable_data();
    const auto g = grads[k]->data();
    if (g.size() != p.size()) fail(ErrorKind::kShapeMismatch, "adam_step: gradient size for " + params.names()[k]);
    bool finite = true;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
      const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] = static_cast<float>(p[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
      finite = finite && std::isfinite(p[i]);
    }
    if (!finite) fail(ErrorKind::kNonFinite, "update produced a non-finite value in " + params.names()[k]);
  }
}

// ---- training loop -------------------------------------------------------------------

void tune_allocator() {
#if defined(__GLIBC__)
  // The tape allocates and frees many mid-sized buffers per step; keeping them
  // on the heap instead of mmap avoids page-fault churn.
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  });
#endif
}

TrainingState init_training(const TrainingConfig& cfg) {
  cfg.validate();
  TrainingState s;
  s.params = init_params<float>(cfg.network, cfg.seed);
  s.adam = AdamState::zeros_like(s.params);
  s.rng.seed(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  return s;
}

namespace {

struct Drawn {
  WindowSample window;
  std::size_t scene = 0;
};

Drawn draw_window(const std::vector<PointTrackTensor>& corpus, FrameRange range, std::size_t p,
                  std::mt19937_64& rng) {
  if (corpus.empty()) fail(ErrorKind::kData, "training corpus is empty");
  constexpr int kAttempts = 100;
  std::string last;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const std::size_t scene = std::uniform_int_distribution<std::size_t>(0, corpus.size() - 1)(rng);
    try {
      return {sample_training_window(corpus[scene], range.lo, range.hi, p, rng), scene};
    } catch (const Error& e) {
      // A window whose start excludes every track is redrawn.
      if (e.kind() != ErrorKind::kData) throw;
      last = e.what();
    }
  }
  fail(ErrorKind::kData, "no valid training window after " + std::to_string(kAttempts) + " draws (last: " + last + ")");
}

std::vector<const Tensor<float>*> gradient_list(const ad::GradientMap<float>& grads, const ParamLeaves<float>& leaves) {
  std::vector<const Tensor<float>*> out;
  out.reserve(leaves.all().size());
  for (const auto& [name, var] : leaves.all()) out.push_back(&grads[var]);
  return out;
}

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.total) && std::isfinite(b.reproject) && std::isfinite(b.static_term) &&
         std::isfinite(b.negative) && std::isfinite(b.sparse);
}

std::string describe(const LossBreakdown& b) {
  std::ostringstream os;
  os << "total=" << b.total << " reproject=" << b.reproject << " static=" << b.static_term
     << " negative=" << b.negative << " sparse=" << b.sparse;
  return os.str();
}

LossOptions loss_options(const TrainingConfig& cfg) {
  LossOptions o;
  o.use_gamma = cfg.use_gamma;
  return o;
}

/// Forward, loss and (optionally) one update. Returns the breakdown before
/// the update.
LossBreakdown objective_step(ParamStore<float>& params, AdamState* adam, const PointTrackTensor& tracks,
                             const TrainingConfig& cfg) {
  Graph<float> g;
  g.set_check_finite(false);
  ParamLeaves<float> leaves(g, params);
  const auto net = build_forward(g, leaves, tracks, cfg.network);
  const auto obs = make_observations(g, tracks);
  const auto terms = total_loss(net, obs, cfg.weights, loss_options(cfg));
  const LossBreakdown b = terms.values();
  if (!finite(b)) fail(ErrorKind::kNonFinite, "non-finite loss (" + describe(b) + ")");
  if (adam != nullptr) {
    const auto grads = g.gradients(terms.total);
    adam_step(params, *adam, gradient_list(grads, leaves), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  }
  return b;
}

}  // namespace

PretrainResult pretrain(TrainingState& state, const std::vector<PointTrackTensor>& corpus, const TrainingConfig& cfg) {
  cfg.validate();
  tune_allocator();
  AdamState adam = AdamState::zeros_like(state.params);
  PretrainResult result;
  double last = std::numeric_limits<double>::infinity();
  for (std::uint64_t step = 0;; ++step) {
    const auto drawn = draw_window(corpus, cfg.n_range_early, cfg.p_per_sample, state.rng);
    Graph<float> g;
    g.set_check_finite(false);
    ParamLeaves<float> leaves(g, state.params);
    const auto net = build_forward(g, leaves, drawn.window.tracks, cfg.network);
    const auto loss = pretrain_loss(net.rotations, net.centers);
    last = loss.value().item();
    if (!std::isfinite(last)) fail(ErrorKind::kNonFinite, "pretraining step " + std::to_string(step) + ": non-finite loss");
    if (last < cfg.pretrain_tolerance) {
      result.steps = step;
      break;
    }
    if (step >= cfg.pretrain_max_steps) {
      std::ostringstream os;
      os << "pretraining did not reach " << cfg.pretrain_tolerance << " within " << cfg.pretrain_max_steps
         << " steps (last loss " << last << ")";
      fail(ErrorKind::kNumerical, os.str());
    }
    const auto grads = g.gradients(loss);
    adam_step(state.params, adam, gradient_list(grads, leaves), cfg.pretrain_lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  }
  result.final_loss = last;
  state.pretrained = true;
  state.pretrain_steps += result.steps;
  return result;
}

std::uint64_t total_steps(const TrainingConfig& cfg, std::size_t corpus_size) {
  return cfg.steps > 0 ? cfg.steps : static_cast<std::uint64_t>(cfg.epochs) * corpus_size;
}

json to_json(const StepRecord& r) {
  return json{{"step", r.step},
              {"epoch", r.epoch},
              {"total", r.loss.total},
              {"reproject", r.loss.reproject},
              {"static", r.loss.static_term},
              {"negative", r.loss.negative},
              {"sparse", r.loss.sparse}};
}

TrainingLog train(TrainingState& state, const std::vector<PointTrackTensor>& corpus, const TrainingConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (corpus.empty()) fail(ErrorKind::kData, "training corpus is empty");
  tune_allocator();
  const std::uint64_t budget = total_steps(cfg, corpus.size());
  const std::uint64_t stop = hooks.stop_after > 0 ? std::min(hooks.stop_after, budget) : budget;
  TrainingLog log;
  double epoch_sum = 0.0;
  std::size_t epoch_count = 0;
  while (state.step < stop) {
    const std::size_t epoch = static_cast<std::size_t>(state.step / corpus.size());
    const FrameRange range = epoch < cfg.curriculum_switch_epoch ? cfg.n_range_early : cfg.n_range_late;
    StepRecord rec;
    rec.step = state.step;
    rec.epoch = epoch;
    try {
      const auto drawn = draw_window(corpus, range, cfg.p_per_sample, state.rng);
      rec.scene = drawn.scene;
      rec.frames = drawn.window.tracks.frames;
      rec.points = drawn.window.tracks.points;
      rec.loss = objective_step(state.params, &state.adam, drawn.window.tracks, cfg);
    } catch (const Error& e) {
      fail(e.kind(), "training step " + std::to_string(state.step) + " (epoch " + std::to_string(epoch) +
                         "): " + e.what());
    }
    ++state.step;
    log.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    epoch_sum += rec.loss.total;
    ++epoch_count;
    if (state.step % corpus.size() == 0) {
      log.epoch_mean_total.push_back(epoch_sum / static_cast<double>(epoch_count));
      epoch_sum = 0.0;
      epoch_count = 0;
      const std::uint64_t done = state.step / corpus.size();
      if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && hooks.on_checkpoint) hooks.on_checkpoint(state);
    }
  }
  return log;
}

LossBreakdown evaluate_loss(const ParamStore<float>& params, const PointTrackTensor& tracks, const TrainingConfig& cfg) {
  ParamStore<float> copy = params;
  return objective_step(copy, nullptr, tracks, cfg);
}

std::vector<LossBreakdown> finetune(ParamStore<float>& params, const PointTrackTensor& tracks,
                                    const TrainingConfig& cfg, std::size_t iters) {
  cfg.validate();
  std::vector<LossBreakdown> trace;
  if (iters == 0) return trace;
  tune_allocator();
  const auto kept = filter_by_observations(tracks, 10);
  if (kept.tracks.points == 0 || kept.tracks.frames < 2) {
    fail(ErrorKind::kData, "finetune: no track is observed in more than 10 frames");
  }
  AdamState adam = AdamState::zeros_like(params);
  trace.reserve(iters);
  for (std::size_t it = 0; it < iters; ++it) {
    try {
      trace.push_back(objective_step(params, &adam, kept.tracks, cfg));
    } catch (const Error& e) {
      fail(e.kind(), "finetune iteration " + std::to_string(it) + ": " + e.what());
    }
  }
  return trace;
}

// ---- checkpoints -----------------------------------------------------------------------
//
// Layout, all little-endian:
//   "DSCK" | u32 version | str config-json | u64 step | u64 pretrain_steps |
//   u32 pretrained | str rng-state | u64 adam_t | 3 x tensor group
// A tensor group is u32 count followed by, per tensor: str name | u32 rank |
// u64 dims[rank] | f32 data. Groups are params, adam m, adam v. str is a u32
// length followed by bytes.

namespace {

void write_group(io::ByteWriter& w, const ParamStore<float>& store) {
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    w.string(store.names()[i]);
    const auto& t = store.at(i);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    w.bytes(t.data().data(), t.size() * sizeof(float));
  }
}

ParamStore<float> read_group(io::ByteReader& r, const ParamStore<float>& reference, const std::string& group) {
  const std::uint32_t count = r.u32();
  if (count != reference.size()) {
    fail(ErrorKind::kShapeMismatch, "checkpoint " + group + ": " + std::to_string(count) + " tensors, expected " +
                                        std::to_string(reference.size()));
  }
  ParamStore<float> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string();
    const auto& expected_name = reference.names()[i];
    if (name != expected_name) {
      fail(ErrorKind::kShapeMismatch, "checkpoint " + group + ": tensor " + std::to_string(i) + " is '" + name +
                                          "', expected '" + expected_name + "'");
    }
    const std::uint32_t rank = r.u32();
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != reference.at(i).shape()) {
      fail(ErrorKind::kShapeMismatch, "checkpoint " + group + ": tensor '" + name + "' has a shape that does not " +
                                          "match its configuration");
    }
    Tensor<float> t(shape);
    r.bytes(t.mutable_data().data(), t.size() * sizeof(float));
    out.add(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.string(ckpt.config.to_json().dump());
  w.u64(ckpt.state.step);
  w.u64(ckpt.state.pretrain_steps);
  w.u32(ckpt.state.pretrained ? 1 : 0);
  std::ostringstream rng;
  rng << ckpt.state.rng;
  w.string(rng.str());
  w.u64(ckpt.state.adam.t);
  write_group(w, ckpt.state.params);
  write_group(w, ckpt.state.adam.m);
  write_group(w, ckpt.state.adam.v);
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) fail(ErrorKind::kFormat, "checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kFormat, "checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  const std::string config_text = r.string();
  const json config_json = json::parse(config_text, nullptr, false);
  if (config_json.is_discarded()) fail(ErrorKind::kFormat, "checkpoint: configuration is not valid JSON");
  ckpt.config = TrainingConfig::from_json(config_json);
  ckpt.config.network.validate();
  ckpt.state.step = r.u64();
  ckpt.state.pretrain_steps = r.u64();
  ckpt.state.pretrained = r.u32() != 0;
  std::istringstream rng(r.string());
  rng >> ckpt.state.rng;
  if (!rng) fail(ErrorKind::kFormat, "checkpoint: unreadable RNG state");
  ckpt.state.adam.t = r.u64();
  const auto reference = init_params<float>(ckpt.config.network, 0);
  ckpt.state.params = read_group(r, reference, "params");
  ckpt.state.adam.m = read_group(r, reference, "adam.m");
  ckpt.state.adam.v = read_group(r, reference, "adam.v");
  if (r.remaining() != 0) fail(ErrorKind::kFormat, "checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  TrainingConfig want;
  want.network = expected;
  const auto have_kv = ckpt.config.key_values();
  const auto want_kv = want.key_values();
  static const std::vector<std::string> network_keys = {"d_model", "heads", "head_dim", "ffn_dim",
                                                        "layer_pairs", "bases", "frequencies", "temporal_kernel",
                                                        "dss_kernel", "gamma_floor", "layer"};
  for (std::size_t i = 0; i < have_kv.size(); ++i) {
    const auto& key = have_kv[i].first;
    if (std::find(network_keys.begin(), network_keys.end(), key) == network_keys.end()) continue;
    if (have_kv[i].second != want_kv[i].second) {
      fail(ErrorKind::kShapeMismatch, "checkpoint field '" + key + "' is " + have_kv[i].second +
                                          " but the configuration expects " + want_kv[i].second);
    }
  }
  return ckpt;
}

}  // namespace dynsfm
