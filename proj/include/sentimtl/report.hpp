#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "sentimtl/awl.hpp"
#include "sentimtl/metrics.hpp"

namespace sentimtl {

/// Weight-evolution table: every `every`-th step plus the last one, weights
/// rounded to two decimals, variances and losses with four.
std::string format_weight_table(const std::vector<TrajectoryRow>& rows, std::size_t every);

/// Line chart of the three normalized weights against step.
std::string weight_plot_svg(const std::vector<TrajectoryRow>& rows);
void write_weight_plot(const std::vector<TrajectoryRow>& rows, const std::filesystem::path& path);

/// Metrics as percentages with two decimals plus the confusion matrix.
std::string format_eval(const EvalResult& result);

}  // namespace sentimtl
