#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sentimtl/awl.hpp"
#include "sentimtl/data.hpp"
#include "sentimtl/error.hpp"
#include "sentimtl/metrics.hpp"
#include "sentimtl/model.hpp"

namespace sentimtl {

struct TrainConfig {
  AlfVariant alf = AlfVariant::alf2();
  DawlStrategy strategy = DawlStrategy::output;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  std::size_t embedding_dim = 64;
  std::size_t max_target_len = 16;
  std::optional<double> clip_grad_norm = 5.0;

  /// Throws RangeError on non-positive sizes or rates.
  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  /// SHA-256 of the canonical JSON form.
  std::string hash() const;
};

/// Adam: first moment 0.9, second moment 0.999, epsilon 1e-8, bias-corrected,
/// one learning rate for every parameter it owns.
class AdamOptimizer {
public:
  AdamOptimizer(std::vector<ad::Tensor> params, double learning_rate, double beta1 = 0.9,
                double beta2 = 0.999, double epsilon = 1e-8);

  void zero_grad();
  /// L2 norm of all gradients together.
  double grad_norm() const;
  void scale_grads(double factor);
  void step();
  std::size_t steps() const { return steps_; }

private:
  std::vector<ad::Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t steps_ = 0;
};

struct StepResult {
  double combined = 0.0;
  TaskVector losses{};
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

/// Combined loss is not finite.
class DivergenceError : public Error {
public:
  DivergenceError(const std::string& what, std::filesystem::path checkpoint)
      : Error(what), checkpoint_(std::move(checkpoint)) {}
  const std::filesystem::path& checkpoint() const { return checkpoint_; }

private:
  std::filesystem::path checkpoint_;
};

/// One forward + backward + joint update of model and sigma parameters.
/// Gradients are zeroed first. Throws DivergenceError (without updating)
/// when the combined loss is not finite.
StepResult train_step(std::span<const EncodedInstance> batch, ToyModel& model, SigmaParams& sigma,
                      AdamOptimizer& optimizer, const TrainConfig& config);

/// Parameters the optimizer owns for a configuration: all model tensors,
/// plus the sigma vector when the loss learns it.
std::vector<ad::Tensor> trainable_parameters(const ToyModel& model, const SigmaParams& sigma,
                                             const TrainConfig& config);

struct EpochReport {
  std::size_t epoch = 0;
  TaskVector mean_losses{};
  double mean_combined = 0.0;
  TaskVector weights{};
  std::optional<SliceMetrics> dev;
  std::optional<SliceMetrics> dev_isa;
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  std::filesystem::path checkpoint;
  std::filesystem::path trajectory;
  std::size_t clipped_steps = 0;
  std::size_t steps = 0;
};

/// Empty paths skip the corresponding file.
struct TrainOutputs {
  std::filesystem::path checkpoint;
  std::filesystem::path trajectory;
  /// "EPOCH k: ..." progress lines; null for silence.
  std::ostream* progress = nullptr;
};

struct FitResult {
  Vocabulary vocab;
  ToyModel model;
  SigmaParams sigma;
  TrainReport report;
};

/// Builds the vocabulary from `train_set`, trains, and keeps the result in
/// memory as well as writing the requested files. On divergence a
/// last-good checkpoint is written next to `outputs.checkpoint` (when set)
/// and DivergenceError is thrown.
FitResult fit(const Dataset& train_set, const Dataset& dev_set, const TrainConfig& config,
              const TrainOutputs& outputs);

TrainReport train(const Dataset& train_set, const Dataset& dev_set, const TrainConfig& config,
                  const TrainOutputs& outputs);

// ---------------------------------------------------------------------------
// Checkpoints

enum class CheckpointMode { train, eval };

struct Checkpoint {
  TrainConfig config;
  Vocabulary vocab;
  ToyModel model;
  SigmaParams sigma;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const ToyModel& model, const SigmaParams& sigma, const Vocabulary& vocab,
                     const TrainConfig& config, const std::filesystem::path& path);
/// Eval mode allocates no gradient buffers. Throws CheckpointError on a
/// version mismatch or checksum failure.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           CheckpointMode mode = CheckpointMode::train);

/// Deterministic Fisher-Yates permutation of [0, n) from a seed.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace sentimtl
