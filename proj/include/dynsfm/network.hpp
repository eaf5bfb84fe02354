#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynsfm/autodiff/graph.hpp"
#include "dynsfm/geometry.hpp"
#include "dynsfm/tracks.hpp"

namespace dynsfm {

/// Which equivariant layer the trunk is built from.
enum class LayerKind { kAttention, kDss };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

struct NetworkConfig {
  std::size_t d_model = 256;
  std::size_t heads = 16;
  std::size_t head_dim = 64;
  std::size_t ffn_dim = 2048;
  std::size_t layer_pairs = 3;
  std::size_t bases = 12;  // K
  std::size_t frequencies = 12;  // L
  std::size_t temporal_kernel = 31;
  std::size_t dss_kernel = 3;
  double gamma_floor = 1e-4;
  LayerKind layer = LayerKind::kAttention;

  /// d_model 64, 2 layer pairs, K 4, 4 heads of width 16, FFN 128.
  static NetworkConfig tiny();

  void validate() const;
  std::size_t input_channels() const { return 3 + 4 * frequencies; }
  std::size_t attention_width() const { return heads * head_dim; }
  std::size_t frame_outputs() const { return 6 + 3 + (bases - 1); }
  std::size_t point_outputs() const { return 3 * bases + 1; }

  bool operator==(const NetworkConfig&) const = default;
};

/// Named tensors in insertion order.
template <typename T>
class ParamStore {
 public:
  void add(std::string name, ad::Tensor<T> value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const ad::Tensor<T>& get(const std::string& name) const;
  ad::Tensor<T>& get(const std::string& name);
  const std::vector<std::string>& names() const noexcept { return names_; }
  const ad::Tensor<T>& at(std::size_t i) const { return tensors_.at(i); }
  ad::Tensor<T>& at(std::size_t i) { return tensors_.at(i); }
  std::size_t size() const noexcept { return names_.size(); }
  std::size_t element_count() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  bool operator==(const ParamStore& other) const { return names_ == other.names_ && tensors_ == other.tensors_; }

 private:
  std::vector<std::string> names_;
  std::vector<ad::Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

template <typename T>
ParamStore<T> init_params(const NetworkConfig& cfg, std::uint64_t seed);

/// Raw (x, y, o) followed by sin/cos(2^l pi v) for l = 0..L-1, first for x
/// then for y: [N, P, 3 + 4L].
template <typename T>
ad::Tensor<T> sinusoidal_embed(const PointTrackTensor& tracks, std::size_t frequencies);

/// Standard transformer positional encoding over frame index, [N, 1, d].
template <typename T>
ad::Tensor<T> temporal_encoding(std::size_t frames, std::size_t d_model);

/// Graph leaves for every parameter, keyed by name.
template <typename T>
class ParamLeaves {
 public:
  ParamLeaves(ad::Graph<T>& graph, const ParamStore<T>& params);
  ad::Var<T> operator[](const std::string& name) const;
  const std::vector<std::pair<std::string, ad::Var<T>>>& all() const noexcept { return vars_; }

 private:
  std::vector<std::pair<std::string, ad::Var<T>>> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Softmax weights produced by an attention layer, [batch, heads, len, len].
template <typename T>
struct AttentionTrace {
  std::vector<ad::Var<T>> weights;
};

template <typename T>
ad::Var<T> layer_norm(ad::Var<T> x, ad::Var<T> gain, ad::Var<T> bias);

template <typename T>
ad::Var<T> gelu(ad::Var<T> x);

/// Per-track self-attention over frames on [N, P, d] followed by the FFN
/// block; both wrapped in pre-normalized residual connections. `prefix`
/// names the parameter group (e.g. "pair0.time").
template <typename T>
ad::Var<T> time_attention(ad::Var<T> feat, const ParamLeaves<T>& p, const std::string& prefix,
                          const NetworkConfig& cfg, AttentionTrace<T>* trace = nullptr);

/// Per-frame self-attention over tracks; same block structure.
template <typename T>
ad::Var<T> point_attention(ad::Var<T> feat, const ParamLeaves<T>& p, const std::string& prefix,
                           const NetworkConfig& cfg, AttentionTrace<T>* trace = nullptr);

/// Replicate-padded 1-d convolution along axis 0 of [N, ..., C] with weight
/// [kernel * C, C_out] and bias [C_out].
template <typename T>
ad::Var<T> temporal_conv(ad::Var<T> x, ad::Var<T> weight, ad::Var<T> bias, std::size_t kernel);

/// F(M)_{:,j} = L1(M_{:,j}) + sum_j' L2(M_{:,j'}), with L1, L2 temporal
/// convolutions shared across tracks. feat: [N, P, d].
template <typename T>
ad::Var<T> dss_layer(ad::Var<T> feat, ad::Var<T> w1, ad::Var<T> b1, ad::Var<T> w2, std::size_t kernel);

/// X_i = B_1 + sum_k c_ik B_k. b1: [P, 3]; deviations: [K-1, P, 3];
/// coeffs: [N, K-1] -> [N, P, 3].
template <typename T>
ad::Var<T> assemble_clouds(ad::Var<T> b1, ad::Var<T> deviations, ad::Var<T> coeffs);

/// Graph handles for all network outputs.
template <typename T>
struct NetworkGraph {
  ad::Var<T> features;   // trunk output [N, P, d]
  ad::Var<T> bases;      // [K, P, 3]
  ad::Var<T> coeffs;     // [N, K-1]
  ad::Var<T> gamma;      // [P]
  ad::Var<T> rotation6d; // [N, 6]
  ad::Var<T> rotations;  // [N, 3, 3]
  ad::Var<T> centers;    // [N, 3]
  ad::Var<T> clouds;     // [N, P, 3]
};

template <typename T>
NetworkGraph<T> output_heads(ad::Var<T> feat, const ParamLeaves<T>& p, const NetworkConfig& cfg);

/// embed -> trunk -> heads -> clouds, with parameters as leaves of `graph`.
template <typename T>
NetworkGraph<T> build_forward(ad::Graph<T>& graph, const ParamLeaves<T>& p, const PointTrackTensor& tracks,
                              const NetworkConfig& cfg);

/// Plain-value network outputs.
struct NetworkOutputs {
  std::vector<Eigen::MatrixX3d> bases;  // K of P x 3
  Eigen::MatrixXd coeffs;               // N x (K-1)
  Eigen::VectorXd gamma;                // P
  CameraTrajectory poses;
  std::vector<Eigen::MatrixX3d> clouds;  // N of P x 3
};

template <typename T>
NetworkOutputs extract_outputs(const NetworkGraph<T>& g);

/// Convenience: build a graph, run it, and return plain outputs.
template <typename T>
NetworkOutputs forward(const PointTrackTensor& tracks, const ParamStore<T>& params, const NetworkConfig& cfg);

}  // namespace dynsfm
