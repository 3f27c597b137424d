#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vixen/bundle.hpp"
#include "vixen/optim.hpp"
#include "vixen/random.hpp"

namespace vixen {

/// One training record: an image pair and the summary of what changed.
struct PairExample {
  std::string id;
  Image source;
  Image edited;
  std::string summary;
};

/// A sampled item. Distractors point both images at the record's source.
struct TrainingPair {
  const PairExample* record = nullptr;
  const Image* first = nullptr;
  const Image* second = nullptr;
  std::string target;
  bool distractor = false;
};

/// Eight "nothing changed" targets.
std::vector<std::string> default_no_difference_pool();

// Each record independently becomes (I, I, pool sample) with probability
// p_d and stays (I, I', summary) otherwise. Draws one uniform per record,
// plus one pool index per distractor.
std::vector<TrainingPair> sample_batch(std::span<const PairExample> records, double p_d,
                                       const std::vector<std::string>& pool, Rng& rng);

/// Summed token NLL of `target` + <eos> for one pair; adds its projection
/// gradient into `grad`. A non-finite loss is returned without touching `grad`.
double pair_loss_and_grad(const ModelBundle& bundle, const FeatureMap& first, const FeatureMap& second,
                          std::string_view target, ProjectionGrad& grad);

struct Phase {
  std::size_t epochs = 0;
  double p_d = 0.0;
  friend bool operator==(const Phase&, const Phase&) = default;
};

struct TrainConfig {
  std::vector<Phase> phases = {{2, 0.0}, {2, 0.5}};
  AdamWConfig optimizer;
  std::size_t micro_batch = 8;
  std::size_t accumulation_steps = 4;
  std::uint64_t seed = 0;
  std::vector<std::string> no_difference_pool = default_no_difference_pool();
  /// Write a checkpoint every this many epochs (and always after the last).
  std::size_t checkpoint_every = 1;

  std::size_t effective_batch() const noexcept { return micro_batch * accumulation_steps; }
  std::size_t total_epochs() const noexcept;
  /// p_d for each epoch in order.
  std::vector<double> pd_sequence() const;
  /// Every problem found; empty when valid.
  std::vector<std::string> problems() const;
};

nlohmann::ordered_json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);

struct EpochRow {
  std::size_t epoch = 0;  // 1-based
  std::size_t phase = 0;  // 1-based
  double p_d = 0.0;
  double mean_loss = 0.0;
  std::size_t examples = 0;
  std::size_t distractors = 0;
  std::uint64_t optimizer_steps = 0;  // cumulative
  friend bool operator==(const EpochRow&, const EpochRow&) = default;
};

struct StepResult {
  double loss = 0.0;  // mean per-example loss over the micro-batch
  bool applied = false;
};

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  /// Resume even though the checkpoint was written under a different configuration.
  bool allow_config_mismatch = false;
  /// Stop after this many epochs of the schedule have completed (for partial runs).
  std::optional<std::size_t> stop_after_epoch;
  /// Merged into the run manifest under "run".
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct RunResult {
  std::vector<EpochRow> curve;
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path manifest;
  std::uint64_t projection_checksum = 0;
};

// Optimizes bundle.projection only. The encoder and LM are treated as frozen
// and their checksums are compared after every optimizer step. Per-example
// loss is the summed token NLL of summary + <eos>; gradients are averaged
// over all examples since the last optimizer step.
class Trainer {
 public:
  Trainer(ModelBundle& bundle, TrainConfig config, std::vector<PairExample> data);

  /// Forward/backward on one micro-batch; steps the optimizer when
  /// accumulation_steps micro-batches have been accumulated.
  StepResult train_step(std::span<const TrainingPair> batch);
  /// Applies any partially accumulated gradient. Returns whether a step was taken.
  bool flush();

  /// Runs the next epoch of the schedule.
  EpochRow run_epoch();
  /// Runs the remaining schedule, writing checkpoints, loss_curve.csv and run_manifest.json.
  RunResult run(const RunOptions& options);

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores projection, optimizer, RNG and schedule position.
  void load_checkpoint(const std::filesystem::path& path, bool allow_config_mismatch = false);

  /// Hash of everything that determines the trajectory, taken at construction:
  /// config, frozen parts, initial projection, data.
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }
  nlohmann::ordered_json manifest() const;

  const TrainConfig& config() const noexcept { return config_; }
  const std::vector<PairExample>& data() const noexcept { return data_; }
  const std::vector<EpochRow>& curve() const noexcept { return curve_; }
  std::size_t epochs_done() const noexcept { return curve_.size(); }
  const AdamW& optimizer() const noexcept { return optimizer_; }
  Rng& rng() noexcept { return rng_; }
  /// Per-example loss for a pair without touching any state.
  double evaluate_loss(const TrainingPair& pair);

 private:
  const FeatureMap& features(const Image* image);
  void apply_step();
  void check_frozen() const;
  std::size_t phase_of(std::size_t epoch_index) const;
  std::uint64_t compute_fingerprint() const;

  ModelBundle& bundle_;
  TrainConfig config_;
  std::vector<PairExample> data_;
  std::unordered_map<const Image*, FeatureMap> feature_cache_;
  std::uint64_t frozen_checksum_;
  std::uint64_t fingerprint_ = 0;

  AdamW optimizer_;
  Rng rng_;
  ProjectionGrad pending_;
  std::size_t pending_examples_ = 0;
  std::size_t pending_micro_batches_ = 0;
  std::vector<EpochRow> curve_;
};

void write_loss_curve_csv(const std::filesystem::path& path, std::span<const EpochRow> curve);

// Trainer checkpoint ("VXTR", version 1): u64 fingerprint | u64 epochs done |
// bytes projection file | AdamW state | bytes RNG state | u64 pending
// examples | u64 pending micro-batches | f64[] pending weight grad | f64[]
// pending bias grad | u64 rows, then per row u64 epoch, u64 phase, f64 p_d,
// f64 loss, u64 examples, u64 distractors, u64 optimizer steps | CRC-32.
inline constexpr std::string_view kCheckpointMagic = "VXTR";
inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace vixen
