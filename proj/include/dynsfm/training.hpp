#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynsfm/losses.hpp"
#include "dynsfm/network.hpp"
#include "dynsfm/tracks.hpp"

namespace dynsfm {

struct FrameRange {
  std::size_t lo = 20;
  std::size_t hi = 22;
  bool operator==(const FrameRange&) const = default;
};

struct TrainingConfig {
  NetworkConfig network;
  LossWeights weights;
  bool use_gamma = true;

  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  std::size_t epochs = 1;
  std::size_t steps = 0;  // total step budget; 0 means epochs * corpus size
  std::size_t curriculum_switch_epoch = 50;
  FrameRange n_range_early{20, 22};
  FrameRange n_range_late{20, 50};
  std::size_t p_per_sample = 100;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints

  double pretrain_tolerance = 1e-4;
  double pretrain_lr = 1e-3;
  std::size_t pretrain_max_steps = 2000;

  std::size_t finetune_iters = 500;

  void validate() const;
  bool operator==(const TrainingConfig&) const = default;

  /// Sets one field from its textual form. Unknown keys and malformed values
  /// are kConfig errors.
  void set(const std::string& key, const std::string& value);
  /// Every field as key -> textual value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> key_values() const;

  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
};

/// Parses "key = value" lines; '#' starts a comment. Later keys override.
TrainingConfig parse_training_config(const std::string& text, TrainingConfig base = {});
TrainingConfig load_training_config(const std::filesystem::path& path, TrainingConfig base = {});

/// Named presets for the ablation table: "full", "dss", "no-gamma",
/// "no-sparse", "no-static", "k2", "k30".
TrainingConfig apply_ablation(TrainingConfig cfg, const std::string& name);
std::vector<std::string> ablation_names();

struct AdamState {
  ParamStore<float> m;
  ParamStore<float> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const ParamStore<float>& params);
  bool operator==(const AdamState&) const = default;
};

/// One Adam update from gradients listed in parameter order. Throws kNonFinite
/// if any updated parameter is not finite.
void adam_step(ParamStore<float>& params, AdamState& state, const std::vector<const ad::Tensor<float>*>& grads,
               double lr, double beta1, double beta2, double eps);

struct TrainingState {
  ParamStore<float> params;
  AdamState adam;
  std::uint64_t step = 0;  // completed training steps
  bool pretrained = false;
  std::uint64_t pretrain_steps = 0;
  std::mt19937_64 rng;

  bool operator==(const TrainingState&) const = default;
};

TrainingState init_training(const TrainingConfig& cfg);

struct StepRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::size_t scene = 0;
  std::size_t frames = 0;
  std::size_t points = 0;
  LossBreakdown loss;

  bool operator==(const StepRecord&) const = default;
};

nlohmann::json to_json(const StepRecord& record);

struct TrainingLog {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean_total;  // one entry per completed epoch
};

struct PretrainResult {
  std::uint64_t steps = 0;
  double final_loss = 0.0;
};

/// Fits the pose outputs to the canonical camera (identity rotation, centre
/// (0, 0, -15)) on windows drawn from the corpus with the early frame range.
/// Stops as soon as the loss on the current window is below the tolerance,
/// before updating. Exceeding pretrain_max_steps is a kNumerical error.
PretrainResult pretrain(TrainingState& state, const std::vector<PointTrackTensor>& corpus, const TrainingConfig& cfg);

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  /// Called after every `checkpoint_every` epochs.
  std::function<void(const TrainingState&)> on_checkpoint;
  /// Stop once this many steps are complete (0: run the full budget).
  std::uint64_t stop_after = 0;
};

std::uint64_t total_steps(const TrainingConfig& cfg, std::size_t corpus_size);

/// Continues from state.step up to the step budget.
TrainingLog train(TrainingState& state, const std::vector<PointTrackTensor>& corpus, const TrainingConfig& cfg,
                  const TrainHooks& hooks = {});

/// Loss of one window with the training objective, without updating.
LossBreakdown evaluate_loss(const ParamStore<float>& params, const PointTrackTensor& tracks,
                            const TrainingConfig& cfg);

/// Minimizes the training objective on one video (tracks observed in more
/// than 10 frames) for `iters` steps with fresh optimizer moments.
std::vector<LossBreakdown> finetune(ParamStore<float>& params, const PointTrackTensor& tracks,
                                    const TrainingConfig& cfg, std::size_t iters);

// ---- checkpoints -------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'D', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainingConfig config;
  TrainingState state;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As above, then requires the stored network configuration to equal
/// `expected`; a mismatch is a kShapeMismatch error naming the field.
Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected);

/// Larger mmap and trim thresholds for the allocation-heavy training loop.
void tune_allocator();

}  // namespace dynsfm
