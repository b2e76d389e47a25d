#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sentimtl/autodiff.hpp"
#include "sentimtl/model.hpp"

namespace sentimtl {

/// Task order used for every 3-vector in this module: polarity, aspect, opinion.
enum class Task : std::size_t { polarity = 0, aspect = 1, opinion = 2 };
inline constexpr std::size_t kNumTasks = 3;
using TaskVector = std::array<double, kNumTasks>;

/// Trainable task noise, stored as s_k = log sigma_k^2.
struct SigmaParams {
  ad::Tensor log_variance;  // [3]

  /// s = 0, i.e. sigma^2 = 1 for every task.
  static SigmaParams initial(bool trainable = true);
  static SigmaParams from_variances(const TaskVector& variances, bool trainable = true);
  TaskVector variances() const;
  TaskVector log_variances() const;
};

struct InstanceLoss {
  std::string id;
  ad::Tensor loss;  // [1]
  double confidence = 1.0;
};

struct TaskLosses {
  ad::Tensor polarity;  // L_p
  ad::Tensor aspect;    // L_a
  ad::Tensor opinion;   // L_o
  std::vector<InstanceLoss> aspect_instances;
  std::vector<InstanceLoss> opinion_instances;

  const ad::Tensor& operator[](Task t) const;
  TaskVector values() const;
};

enum class DawlStrategy { none, input, output, input_output };
std::string_view to_string(DawlStrategy s);
DawlStrategy parse_dawl_strategy(std::string_view text);

class AlfVariant {
public:
  enum class Kind { alf1, alf2, fixed };

  static AlfVariant alf1() { return AlfVariant(Kind::alf1, {}); }
  static AlfVariant alf2() { return AlfVariant(Kind::alf2, {}); }
  /// Weights in (polarity, aspect, opinion) order; non-negative, summing to 1 +- 1e-9.
  static AlfVariant fixed(const TaskVector& weights);
  /// The hand-set baseline (0.4, 0.3, 0.3).
  static AlfVariant base() { return fixed({0.4, 0.3, 0.3}); }

  Kind kind() const { return kind_; }
  const TaskVector& weights() const { return weights_; }
  bool learns_sigma() const { return kind_ != Kind::fixed; }
  bool operator==(const AlfVariant&) const = default;

private:
  AlfVariant(Kind k, TaskVector w) : kind_(k), weights_(w) {}
  Kind kind_;
  TaskVector weights_;
};

std::string to_string(const AlfVariant& alf);
/// "alf1", "alf2", or "fixed" (which then needs weights).
AlfVariant::Kind parse_alf_kind(std::string_view text);

/// (1/N) * sum_i c_i * loss_i. Throws on an empty list or c_i outside [0.5, 1].
ad::Tensor dawl_output_reduce(ad::Tape& tape, std::span<const InstanceLoss> per_instance);

/// Polarity cross entropy (never confidence-weighted) plus the two
/// auxiliary NLLs under the chosen data-level strategy:
///   none          plain mean of per-instance NLL
///   input         sentence embeddings scaled by c_i, plain mean
///   output        unscaled encoding, confidence-weighted mean
///   input_output  both
/// Under `none`, instances without generated elements are skipped for the
/// auxiliary tasks; the other strategies require them.
TaskLosses assemble_task_losses(ad::Tape& tape, const ToyModel& model,
                                std::span<const EncodedInstance> batch, DawlStrategy strategy);

/// sum_k exp(-s_k) L_k + sum_k s_k
ad::Tensor combine_alf1(ad::Tape& tape, const TaskLosses& losses, const SigmaParams& sigma);
/// sum_k exp(-s_k) L_k + sum_k ln(exp(s_k) + 1)
ad::Tensor combine_alf2(ad::Tape& tape, const TaskLosses& losses, const SigmaParams& sigma);
/// w_p L_p + w_a L_a + w_o L_o
ad::Tensor combine_fixed(ad::Tape& tape, const TaskLosses& losses, const TaskVector& weights);
ad::Tensor combine(ad::Tape& tape, const TaskLosses& losses, const SigmaParams& sigma,
                   const AlfVariant& alf);

/// w_k = exp(-s_k) / sum_j exp(-s_j).
TaskVector normalized_task_weights(const SigmaParams& sigma);
/// Learned weights for ALF variants, the configured weights for fixed mode.
TaskVector reported_task_weights(const AlfVariant& alf, const SigmaParams& sigma);
/// Two-decimal rounding used in printed weight tables.
TaskVector round_weights(const TaskVector& weights);

/// sigma*^2 minimizing L/sigma^2 + reg(sigma^2) for a frozen loss L > 0:
///   alf1: L
///   alf2: (L + sqrt(L^2 + 4L)) / 2
double stationary_sigma(const AlfVariant& alf, double loss);

struct SigmaDescentResult {
  TaskVector variances{};
  std::size_t steps = 0;
  bool converged = false;
};

/// Plain gradient descent on s alone with the task losses frozen. Stops
/// once every |d/ds_k| < grad_tol or after max_steps.
SigmaDescentResult descend_sigma(const TaskVector& frozen_losses, const AlfVariant& alf,
                                 double learning_rate, std::size_t max_steps,
                                 double grad_tol = 1e-12);

/// Weight trajectory CSV: one row per optimizer step.
class TrajectoryWriter {
public:
  static constexpr std::string_view kHeader =
      "step,w_polarity,w_aspect,w_opinion,sigma2_polarity,sigma2_aspect,sigma2_opinion,L_p,L_a,L_o";

  explicit TrajectoryWriter(const std::filesystem::path& path);
  void write(std::size_t step, const TaskVector& weights, const TaskVector& variances,
             const TaskVector& losses);
  void flush();

private:
  std::filesystem::path path_;
  std::ofstream out_;
};

struct TrajectoryRow {
  std::size_t step = 0;
  TaskVector weights{};
  TaskVector variances{};
  TaskVector losses{};
};

std::vector<TrajectoryRow> read_trajectory(const std::filesystem::path& path);

}  // namespace sentimtl
