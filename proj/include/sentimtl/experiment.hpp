#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sentimtl/data.hpp"
#include "sentimtl/metrics.hpp"
#include "sentimtl/trainer.hpp"

namespace sentimtl {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

MeanStd mean_std(const std::vector<double>& values);

/// Test metrics of one configuration over several seeds.
struct SeedSweep {
  std::string label;
  TrainConfig config;  // seed field is overridden per run
  std::vector<EvalResult> runs;

  MeanStd all_accuracy() const;
  MeanStd all_macro_f1() const;
  /// Zero when the test set has no implicit instances.
  MeanStd isa_accuracy() const;
  MeanStd isa_macro_f1() const;
};

/// Trains `config` once per seed on `train_set` and evaluates on `test_set`.
SeedSweep run_seeds(const std::string& label, const Dataset& train_set, const Dataset& test_set,
                    TrainConfig config, const std::vector<std::uint64_t>& seeds);

struct AblationRow {
  DawlStrategy strategy;  // the data-level strategy of the block
  std::string variant;    // "full", "w/o D-AWL", "w/o T-AWL", "w/o both"
  SeedSweep sweep;
};

/// For each strategy in {input, output}: full = (strategy, alf2),
/// w/o D-AWL = (none, alf2), w/o T-AWL = (strategy, fixed 0.4/0.3/0.3),
/// w/o both = (none, fixed 0.4/0.3/0.3). `base` supplies every other
/// hyperparameter. Runs without a data-level strategy are shared between
/// the two blocks.
std::vector<AblationRow> run_ablation(const Dataset& train_set, const Dataset& test_set,
                                      const TrainConfig& base,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::ostream* progress = nullptr);

/// Percent table with mean +- std per column, two decimals.
std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace sentimtl
