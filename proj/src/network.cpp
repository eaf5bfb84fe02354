#include "dynsfm/network.hpp"

#include <cmath>
#include <random>

#include "dynsfm/error.hpp"

namespace dynsfm {

using ad::Graph;
using ad::Shape;
using ad::Tensor;
using ad::Var;

std::string to_string(LayerKind kind) {
  return kind == LayerKind::kAttention ? "attention" : "dss";
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "attention") return LayerKind::kAttention;
  if (name == "dss") return LayerKind::kDss;
  fail(ErrorKind::kConfig, "unknown layer kind '" + name + "' (expected attention|dss)");
}

NetworkConfig NetworkConfig::tiny() {
  NetworkConfig cfg;
  cfg.d_model = 64;
  cfg.heads = 4;
  cfg.head_dim = 16;
  cfg.ffn_dim = 128;
  cfg.layer_pairs = 2;
  cfg.bases = 4;
  return cfg;
}

void NetworkConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) fail(ErrorKind::kConfig, std::string("network config: ") + what);
  };
  need(d_model > 0, "d_model must be positive");
  need(heads > 0 && head_dim > 0, "heads and head_dim must be positive");
  need(ffn_dim > 0, "ffn_dim must be positive");
  need(layer_pairs > 0, "layer_pairs must be positive");
  need(bases >= 2, "K must be at least 2");
  need(temporal_kernel % 2 == 1, "temporal_kernel must be odd");
  need(dss_kernel % 2 == 1, "dss_kernel must be odd");
  need(gamma_floor > 0.0, "gamma_floor must be positive");
}

// ---- ParamStore ----------------------------------------------------------------

template <typename T>
void ParamStore<T>::add(std::string name, Tensor<T> value) {
  if (index_.count(name)) fail(ErrorKind::kInvalidArgument, "duplicate parameter '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kInvalidArgument, "unknown parameter '" + name + "'");
  return tensors_[it->second];
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kInvalidArgument, "unknown parameter '" + name + "'");
  return tensors_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

template class ParamStore<float>;
template class ParamStore<double>;

namespace {

std::string layer_prefix(std::size_t pair, bool time) {
  return "pair" + std::to_string(pair) + (time ? ".time" : ".point");
}

template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(u(rng));
  return t;
}

}  // namespace

template <typename T>
ParamStore<T> init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamStore<T> p;
  const std::size_t d = cfg.d_model;
  const std::size_t aw = cfg.attention_width();
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out, bool bias = true) {
    p.add(name + ".w", fan_in_uniform<T>({in, out}, in, rng));
    if (bias) p.add(name + ".b", Tensor<T>({out}));
  };
  auto norm = [&](const std::string& name) {
    p.add(name + ".g", Tensor<T>({d}, T(1)));
    p.add(name + ".b", Tensor<T>({d}));
  };

  linear("embed", cfg.input_channels(), d);
  for (std::size_t pair = 0; pair < cfg.layer_pairs; ++pair) {
    for (bool time : {true, false}) {
      const std::string pre = layer_prefix(pair, time);
      if (cfg.layer == LayerKind::kAttention) {
        norm(pre + ".ln1");
        linear(pre + ".q", d, aw, false);
        linear(pre + ".k", d, aw, false);
        linear(pre + ".v", d, aw, false);
        linear(pre + ".o", aw, d);
        norm(pre + ".ln2");
        linear(pre + ".ffn1", d, cfg.ffn_dim);
        linear(pre + ".ffn2", cfg.ffn_dim, d);
      } else {
        norm(pre + ".ln1");
        linear(pre + ".dss1", cfg.dss_kernel * d, d);
        linear(pre + ".dss2", cfg.dss_kernel * d, d, false);
      }
    }
  }
  norm("final_ln");
  linear("point_head", d, cfg.point_outputs());
  linear("frame_head", cfg.temporal_kernel * d, cfg.frame_outputs());
  // Poses start at the pretraining target: identity rotation (which also keeps
  // Gram-Schmidt well conditioned) and a camera 15 units behind the origin.
  auto& fb = p.get("frame_head.b");
  fb[0] = T(1);
  fb[4] = T(1);
  fb[8] = T(-15);
  return p;
}

template <typename T>
Tensor<T> sinusoidal_embed(const PointTrackTensor& tracks, std::size_t frequencies) {
  const std::size_t n = tracks.frames;
  const std::size_t p = tracks.points;
  const std::size_t c = 3 + 4 * frequencies;
  Tensor<T> out({n, p, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const bool obs = tracks.is_observed(i, j);
      // Unobserved entries embed zero coordinates.
      const double v[2] = {obs ? static_cast<double>(tracks.x(i, j)) : 0.0,
                           obs ? static_cast<double>(tracks.y(i, j)) : 0.0};
      T* row = out.mutable_data().data() + (i * p + j) * c;
      row[0] = static_cast<T>(v[0]);
      row[1] = static_cast<T>(v[1]);
      row[2] = obs ? T(1) : T(0);
      std::size_t k = 3;
      for (double coord : v) {
        for (std::size_t l = 0; l < frequencies; ++l) {
          const double arg = std::ldexp(M_PI, static_cast<int>(l)) * coord;
          row[k++] = static_cast<T>(std::sin(arg));
          row[k++] = static_cast<T>(std::cos(arg));
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> temporal_encoding(std::size_t frames, std::size_t d_model) {
  Tensor<T> out({frames, 1, d_model});
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t k = 0; k < d_model; ++k) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(d_model));
      const double a = static_cast<double>(i) * rate;
      out[i * d_model + k] = static_cast<T>(k % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return out;
}

template <typename T>
ParamLeaves<T>::ParamLeaves(Graph<T>& graph, const ParamStore<T>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    index_.emplace(params.names()[i], vars_.size());
    vars_.emplace_back(params.names()[i], graph.leaf(params.at(i), params.names()[i]));
  }
}

template <typename T>
Var<T> ParamLeaves<T>::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorKind::kInvalidArgument, "network parameter '" + name + "' missing");
  return vars_[it->second].second;
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias) {
  const std::size_t last = x.shape().size() - 1;
  auto centered = x - ad::mean(x, last, true);
  auto var = ad::mean(ad::square(centered), last, true);
  return centered / ad::sqrt(ad::add_scalar(var, 1e-5)) * gain + bias;
}

template <typename T>
Var<T> gelu(Var<T> x) {
  const double c = std::sqrt(2.0 / M_PI);
  auto inner = ad::scale(x + ad::scale(x * x * x, 0.044715), c);
  return ad::scale(x * ad::add_scalar(ad::tanh(inner), 1.0), 0.5);
}

namespace {

template <typename T>
Var<T> linear(Var<T> x, const ParamLeaves<T>& p, const std::string& name, bool bias = true) {
  auto y = ad::matmul(x, p[name + ".w"]);
  return bias ? y + p[name + ".b"] : y;
}

template <typename T>
Var<T> feed_forward(Var<T> x, const ParamLeaves<T>& p, const std::string& pre) {
  auto h = layer_norm(x, p[pre + ".ln2.g"], p[pre + ".ln2.b"]);
  return x + linear(gelu(linear(h, p, pre + ".ffn1")), p, pre + ".ffn2");
}

/// Multi-head attention along one axis of [N, P, d]. along_time selects the
/// frame axis (per-track sequences); otherwise the point axis.
template <typename T>
Var<T> attention_block(Var<T> x, const ParamLeaves<T>& p, const std::string& pre, const NetworkConfig& cfg,
                       bool along_time, AttentionTrace<T>* trace) {
  const auto& s = x.shape();
  if (s.size() != 3) fail(ErrorKind::kShapeMismatch, "attention expects [N, P, d], got " + ad::shape_string(s));
  const std::size_t n = s[0];
  const std::size_t pts = s[1];
  const std::size_t h = cfg.heads;
  const std::size_t dh = cfg.head_dim;
  // [N, P, H, dh] -> [batch, H, len, dh]
  const std::vector<std::size_t> to_heads = along_time ? std::vector<std::size_t>{1, 2, 0, 3}
                                                       : std::vector<std::size_t>{0, 2, 1, 3};
  const std::vector<std::size_t> from_heads = along_time ? std::vector<std::size_t>{2, 0, 1, 3}
                                                         : std::vector<std::size_t>{0, 2, 1, 3};
  auto hn = layer_norm(x, p[pre + ".ln1.g"], p[pre + ".ln1.b"]);
  auto split = [&](const std::string& name) {
    return ad::permute(ad::reshape(linear(hn, p, pre + name, false), {n, pts, h, dh}), to_heads);
  };
  auto q = split(".q");
  auto k = split(".k");
  auto v = split(".v");
  auto scores = ad::scale(ad::matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  auto weights = ad::softmax(scores, 3);
  if (trace) trace->weights.push_back(weights);
  auto merged = ad::reshape(ad::permute(ad::matmul(weights, v), from_heads), {n, pts, h * dh});
  return x + linear(merged, p, pre + ".o");
}

}  // namespace

template <typename T>
Var<T> time_attention(Var<T> feat, const ParamLeaves<T>& p, const std::string& prefix, const NetworkConfig& cfg,
                      AttentionTrace<T>* trace) {
  return feed_forward(attention_block(feat, p, prefix, cfg, true, trace), p, prefix);
}

template <typename T>
Var<T> point_attention(Var<T> feat, const ParamLeaves<T>& p, const std::string& prefix, const NetworkConfig& cfg,
                       AttentionTrace<T>* trace) {
  return feed_forward(attention_block(feat, p, prefix, cfg, false, trace), p, prefix);
}

template <typename T>
Var<T> temporal_conv(Var<T> x, Var<T> weight, Var<T> bias, std::size_t kernel) {
  const std::size_t n = x.shape().at(0);
  const std::size_t last = x.shape().size() - 1;
  const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
  std::vector<Var<T>> taps;
  taps.reserve(kernel);
  for (std::ptrdiff_t o = -half; o <= half; ++o) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i) + o, 0,
                                                            static_cast<std::ptrdiff_t>(n) - 1);
      idx[i] = static_cast<std::size_t>(src);
    }
    taps.push_back(ad::gather(x, 0, std::move(idx)));
  }
  auto y = ad::matmul(ad::concat(taps, last), weight);
  return bias.valid() ? y + bias : y;
}

template <typename T>
Var<T> dss_layer(Var<T> feat, Var<T> w1, Var<T> b1, Var<T> w2, std::size_t kernel) {
  auto own = temporal_conv(feat, w1, b1, kernel);
  auto shared = ad::sum(temporal_conv(feat, w2, Var<T>(), kernel), 1, true);
  return own + shared;
}

template <typename T>
Var<T> assemble_clouds(Var<T> b1, Var<T> deviations, Var<T> coeffs) {
  const auto& ds = deviations.shape();
  const std::size_t km1 = ds.at(0);
  const std::size_t pts = ds.at(1);
  const std::size_t n = coeffs.shape().at(0);
  if (coeffs.shape().at(1) != km1) {
    fail(ErrorKind::kShapeMismatch, "assemble_clouds: coefficient count does not match deviation bases");
  }
  auto moved = ad::reshape(ad::matmul(coeffs, ad::reshape(deviations, {km1, pts * 3})), {n, pts, 3});
  return moved + b1;
}

template <typename T>
NetworkGraph<T> output_heads(Var<T> feat, const ParamLeaves<T>& p, const NetworkConfig& cfg) {
  const std::size_t pts = feat.shape()[1];
  const std::size_t k = cfg.bases;
  NetworkGraph<T> out;
  out.features = feat;

  auto per_point = linear(ad::mean(feat, 0), p, "point_head");  // [P, 3K+1]
  out.bases = ad::permute(ad::reshape(ad::slice(per_point, 1, 0, 3 * k), {pts, k, 3}), {1, 0, 2});
  out.gamma = ad::add_scalar(ad::softplus(ad::reshape(ad::slice(per_point, 1, 3 * k, 3 * k + 1), {pts})),
                             cfg.gamma_floor);

  auto per_frame = temporal_conv(ad::mean(feat, 1), p["frame_head.w"], p["frame_head.b"], cfg.temporal_kernel);
  out.rotation6d = ad::slice(per_frame, 1, 0, 6);
  out.rotations = graph_ops::rotation_from_6d(out.rotation6d);
  out.centers = ad::slice(per_frame, 1, 6, 9);
  out.coeffs = ad::slice(per_frame, 1, 9, 9 + k - 1);

  auto b1 = ad::reshape(ad::slice(out.bases, 0, 0, 1), {pts, 3});
  out.clouds = assemble_clouds(b1, ad::slice(out.bases, 0, 1, k), out.coeffs);
  return out;
}

template <typename T>
NetworkGraph<T> build_forward(Graph<T>& graph, const ParamLeaves<T>& p, const PointTrackTensor& tracks,
                              const NetworkConfig& cfg) {
  cfg.validate();
  if (tracks.frames < 2 || tracks.points < 1) {
    fail(ErrorKind::kData, "forward needs at least 2 frames and 1 track");
  }
  auto input = graph.constant(sinusoidal_embed<T>(tracks, cfg.frequencies));
  auto x = linear(input, p, "embed");
  if (cfg.layer == LayerKind::kAttention) {
    x = x + graph.constant(temporal_encoding<T>(tracks.frames, cfg.d_model));
    for (std::size_t pair = 0; pair < cfg.layer_pairs; ++pair) {
      x = time_attention(x, p, layer_prefix(pair, true), cfg);
      x = point_attention(x, p, layer_prefix(pair, false), cfg);
    }
  } else {
    for (std::size_t pair = 0; pair < cfg.layer_pairs; ++pair) {
      for (bool time : {true, false}) {
        const std::string pre = layer_prefix(pair, time);
        auto h = layer_norm(x, p[pre + ".ln1.g"], p[pre + ".ln1.b"]);
        x = x + gelu(dss_layer(h, p[pre + ".dss1.w"], p[pre + ".dss1.b"], p[pre + ".dss2.w"], cfg.dss_kernel));
      }
    }
  }
  x = layer_norm(x, p["final_ln.g"], p["final_ln.b"]);
  return output_heads(x, p, cfg);
}

template <typename T>
NetworkOutputs extract_outputs(const NetworkGraph<T>& g) {
  NetworkOutputs out;
  const auto& B = g.bases.value();
  const std::size_t k = B.dim(0);
  const std::size_t pts = B.dim(1);
  for (std::size_t b = 0; b < k; ++b) {
    Eigen::MatrixX3d M(static_cast<Eigen::Index>(pts), 3);
    for (std::size_t j = 0; j < pts; ++j) {
      for (std::size_t c = 0; c < 3; ++c) M(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = B[(b * pts + j) * 3 + c];
    }
    out.bases.push_back(M);
  }
  const auto& C = g.coeffs.value();
  const std::size_t n = C.dim(0);
  out.coeffs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(C.dim(1)));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < C.dim(1); ++c) out.coeffs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = C[i * C.dim(1) + c];
  }
  const auto& G = g.gamma.value();
  out.gamma.resize(static_cast<Eigen::Index>(G.size()));
  for (std::size_t j = 0; j < G.size(); ++j) out.gamma[static_cast<Eigen::Index>(j)] = G[j];
  const auto& R = g.rotations.value();
  const auto& t = g.centers.value();
  for (std::size_t i = 0; i < n; ++i) {
    CameraPose pose;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pose.R(r, c) = R[i * 9 + static_cast<std::size_t>(3 * r + c)];
      pose.t[r] = t[i * 3 + static_cast<std::size_t>(r)];
    }
    out.poses.push_back(pose);
  }
  const auto& X = g.clouds.value();
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::MatrixX3d M(static_cast<Eigen::Index>(pts), 3);
    for (std::size_t j = 0; j < pts; ++j) {
      for (std::size_t c = 0; c < 3; ++c) M(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) = X[(i * pts + j) * 3 + c];
    }
    out.clouds.push_back(M);
  }
  return out;
}

template <typename T>
NetworkOutputs forward(const PointTrackTensor& tracks, const ParamStore<T>& params, const NetworkConfig& cfg) {
  Graph<T> graph;
  ParamLeaves<T> leaves(graph, params);
  return extract_outputs(build_forward(graph, leaves, tracks, cfg));
}

#define DYNSFM_NET_INSTANTIATE(T)                                                                          \
  template ParamStore<T> init_params<T>(const NetworkConfig&, std::uint64_t);                              \
  template Tensor<T> sinusoidal_embed<T>(const PointTrackTensor&, std::size_t);                            \
  template Tensor<T> temporal_encoding<T>(std::size_t, std::size_t);                                       \
  template class ParamLeaves<T>;                                                                           \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>);                                                      \
  template Var<T> gelu(Var<T>);                                                                            \
  template Var<T> time_attention(Var<T>, const ParamLeaves<T>&, const std::string&, const NetworkConfig&,  \
                                 AttentionTrace<T>*);                                                      \
  template Var<T> point_attention(Var<T>, const ParamLeaves<T>&, const std::string&, const NetworkConfig&, \
                                  AttentionTrace<T>*);                                                     \
  template Var<T> temporal_conv(Var<T>, Var<T>, Var<T>, std::size_t);                                      \
  template Var<T> dss_layer(Var<T>, Var<T>, Var<T>, Var<T>, std::size_t);                                  \
  template Var<T> assemble_clouds(Var<T>, Var<T>, Var<T>);                                                 \
  template NetworkGraph<T> output_heads(Var<T>, const ParamLeaves<T>&, const NetworkConfig&);              \
  template NetworkGraph<T> build_forward(Graph<T>&, const ParamLeaves<T>&, const PointTrackTensor&,        \
                                         const NetworkConfig&);                                            \
  template NetworkOutputs extract_outputs(const NetworkGraph<T>&);                                         \
  template NetworkOutputs forward(const PointTrackTensor&, const ParamStore<T>&, const NetworkConfig&);

DYNSFM_NET_INSTANTIATE(float)
DYNSFM_NET_INSTANTIATE(double)

}  // namespace dynsfm
