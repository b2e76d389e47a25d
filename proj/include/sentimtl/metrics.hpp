#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sentimtl/data.hpp"
#include "sentimtl/model.hpp"

namespace sentimtl {

/// confusion[gold][pred] counts, indexed by polarity.
using ConfusionMatrix = std::array<std::array<std::size_t, kNumPolarities>, kNumPolarities>;

ConfusionMatrix confusion_matrix(std::span<const Polarity> gold, std::span<const Polarity> pred);

/// Fraction of exact matches. Throws on empty input or length mismatch.
double accuracy(std::span<const Polarity> gold, std::span<const Polarity> pred);

/// Unweighted mean of per-class F1 over classes present in gold or pred.
/// A class with zero precision + recall has F1 = 0.
double macro_f1(std::span<const Polarity> gold, std::span<const Polarity> pred);

struct SliceMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

struct EvalResult {
  SliceMetrics all;
  /// Absent when the dataset has no implicit instances.
  std::optional<SliceMetrics> isa;
  ConfusionMatrix confusion{};
  std::size_t n_all = 0;
  std::size_t n_implicit = 0;
};

EvalResult evaluate_predictions(std::span<const Polarity> gold, std::span<const Polarity> pred,
                                const std::vector<bool>& implicit);

/// Argmax-polarity predictions of `model` on every instance of `dataset`.
EvalResult evaluate(const ToyModel& model, const Vocabulary& vocab, const Dataset& dataset);

}  // namespace sentimtl
