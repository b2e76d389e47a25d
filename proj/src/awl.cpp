#include "sentimtl/awl.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "sentimtl/error.hpp"

namespace sentimtl {

SigmaParams SigmaParams::initial(bool trainable) {
  return {ad::Tensor::zeros({kNumTasks}, trainable)};
}

SigmaParams SigmaParams::from_variances(const TaskVector& variances, bool trainable) {
  std::vector<double> s(kNumTasks);
  for (std::size_t k = 0; k < kNumTasks; ++k) {
    if (!(variances[k] > 0.0)) throw RangeError("sigma^2 must be positive");
    s[k] = std::log(variances[k]);
  }
  return {ad::Tensor::from({kNumTasks}, std::move(s), trainable)};
}

TaskVector SigmaParams::variances() const {
  TaskVector v{};
  for (std::size_t k = 0; k < kNumTasks; ++k) v[k] = std::exp(log_variance.at(k));
  return v;
}

TaskVector SigmaParams::log_variances() const {
  TaskVector v{};
  for (std::size_t k = 0; k < kNumTasks; ++k) v[k] = log_variance.at(k);
  return v;
}

const ad::Tensor& TaskLosses::operator[](Task t) const {
  switch (t) {
    case Task::polarity: return polarity;
    case Task::aspect: return aspect;
    case Task::opinion: return opinion;
  }
  return polarity;
}

TaskVector TaskLosses::values() const {
  return {polarity.item(), aspect.item(), opinion.item()};
}

std::string_view to_string(DawlStrategy s) {
  switch (s) {
    case DawlStrategy::none: return "none";
    case DawlStrategy::input: return "input";
    case DawlStrategy::output: return "output";
    case DawlStrategy::input_output: return "input-output";
  }
  return "none";
}

DawlStrategy parse_dawl_strategy(std::string_view text) {
  if (text == "none") return DawlStrategy::none;
  if (text == "input") return DawlStrategy::input;
  if (text == "output") return DawlStrategy::output;
  if (text == "input-output" || text == "input_output") return DawlStrategy::input_output;
  throw DataError(fmt::format("unknown D-AWL strategy '{}'", text));
}

AlfVariant AlfVariant::fixed(const TaskVector& weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw RangeError(fmt::format("fixed task weight {} must be non-negative", w));
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw RangeError(fmt::format("fixed task weights must sum to 1, got {}", total));
  return AlfVariant(Kind::fixed, weights);
}

std::string to_string(const AlfVariant& alf) {
  switch (alf.kind()) {
    case AlfVariant::Kind::alf1: return "alf1";
    case AlfVariant::Kind::alf2: return "alf2";
    case AlfVariant::Kind::fixed: {
      const auto& w = alf.weights();
      return fmt::format("fixed({},{},{})", w[0], w[1], w[2]);
    }
  }
  return "alf2";
}

AlfVariant::Kind parse_alf_kind(std::string_view text) {
  if (text == "alf1") return AlfVariant::Kind::alf1;
  if (text == "alf2") return AlfVariant::Kind::alf2;
  if (text == "fixed") return AlfVariant::Kind::fixed;
  throw DataError(fmt::format("unknown loss combination '{}'", text));
}

// ---------------------------------------------------------------------------
// Data-level reweighting

ad::Tensor dawl_output_reduce(ad::Tape& tape, std::span<const InstanceLoss> per_instance) {
  if (per_instance.empty()) throw DataError("dawl_output_reduce: empty instance list");
  std::vector<ad::Tensor> weighted;
  weighted.reserve(per_instance.size());
  for (const auto& item : per_instance) {
    if (!(item.confidence >= 0.5 && item.confidence <= 1.0))
      throw RangeError(fmt::format("instance {}: confidence {} outside [0.5, 1]", item.id,
                                   item.confidence));
    weighted.push_back(tape.scale(item.loss, item.confidence));
  }
  return tape.scale(tape.add_n(weighted), 1.0 / static_cast<double>(per_instance.size()));
}

namespace {

ad::Tensor plain_mean(ad::Tape& tape, std::span<const InstanceLoss> per_instance) {
  std::vector<ad::Tensor> losses;
  losses.reserve(per_instance.size());
  for (const auto& item : per_instance) losses.push_back(item.loss);
  return tape.scale(tape.add_n(losses), 1.0 / static_cast<double>(per_instance.size()));
}

bool scales_input(DawlStrategy s) {
  return s == DawlStrategy::input || s == DawlStrategy::input_output;
}

bool weights_output(DawlStrategy s) {
  return s == DawlStrategy::output || s == DawlStrategy::input_output;
}

}  // namespace

TaskLosses assemble_task_losses(ad::Tape& tape, const ToyModel& model,
                                std::span<const EncodedInstance> batch, DawlStrategy strategy) {
  if (batch.empty()) throw DataError("assemble_task_losses: empty batch");
  TaskLosses out;

  std::vector<ad::Tensor> polarity_terms;
  polarity_terms.reserve(batch.size());
  for (const auto& inst : batch) polarity_terms.push_back(polarity_loss(tape, model, inst).loss);
  out.polarity =
      tape.scale(tape.add_n(polarity_terms), 1.0 / static_cast<double>(batch.size()));

  for (const auto& inst : batch) {
    if (!inst.has_aux) {
      if (strategy != DawlStrategy::none)
        throw DataError(fmt::format("instance {} has no confidence scores for strategy '{}'",
                                    inst.id, to_string(strategy)));
      continue;
    }
    for (AuxTask task : {AuxTask::aspect, AuxTask::opinion}) {
      const double c = task == AuxTask::aspect ? inst.aspect_confidence : inst.opinion_confidence;
      const double input_scale = scales_input(strategy) ? c : 1.0;
      auto nll = generation_nll(tape, model, inst, task, input_scale);
      auto& sink = task == AuxTask::aspect ? out.aspect_instances : out.opinion_instances;
      sink.push_back({inst.id, std::move(nll.total), c});
    }
  }

  auto reduce = [&](const std::vector<InstanceLoss>& items) {
    if (items.empty()) return ad::Tensor::scalar(0.0);
    return weights_output(strategy) ? dawl_output_reduce(tape, items) : plain_mean(tape, items);
  };
  out.aspect = reduce(out.aspect_instances);
  out.opinion = reduce(out.opinion_instances);
  return out;
}

// ---------------------------------------------------------------------------
// Task-level combination

namespace {

enum class Regularizer { log_variance, softplus };

ad::Tensor combine_uncertainty(ad::Tape& tape, const TaskLosses& losses, const SigmaParams& sigma,
                               Regularizer reg) {
  std::vector<ad::Tensor> weighted;
  std::vector<ad::Tensor> penalties;
  for (std::size_t k = 0; k < kNumTasks; ++k) {
    ad::Tensor s = tape.select(sigma.log_variance, k);
    ad::Tensor precision = tape.exp(tape.scale(s, -1.0));
    weighted.push_back(tape.mul(precision, losses[static_cast<Task>(k)]));
    penalties.push_back(reg == Regularizer::log_variance
                            ? s
                            : tape.log(tape.add_scalar(tape.exp(s), 1.0)));
  }
  return tape.add(tape.add_n(weighted), tape.add_n(penalties));
}

}  // namespace

ad::Tensor combine_alf1(ad::Tape& tape, const TaskLosses& losses, const SigmaParams& sigma) {
  return combine_uncertainty(tape, losses, sigma, Regularizer::log_variance);
}

ad::Tensor combine_alf2(ad::Tape& tape, const TaskLosses& losses, const SigmaParams& sigma) {
  return combine_uncertainty(tape, losses, sigma, Regularizer::softplus);
}

ad::Tensor combine_fixed(ad::Tape& tape, const TaskLosses& losses, const TaskVector& weights) {
  // Validates sign and normalization.
  (void)AlfVariant::fixed(weights);
  std::vector<ad::Tensor> terms;
  for (std::size_t k = 0; k < kNumTasks; ++k)
    terms.push_back(tape.scale(losses[static_cast<Task>(k)], weights[k]));
  return tape.add_n(terms);
}

ad::Tensor combine(ad::Tape& tape, const TaskLosses& losses, const SigmaParams& sigma,
                   const AlfVariant& alf) {
  switch (alf.kind()) {
    case AlfVariant::Kind::alf1: return combine_alf1(tape, losses, sigma);
    case AlfVariant::Kind::alf2: return combine_alf2(tape, losses, sigma);
    case AlfVariant::Kind::fixed: return combine_fixed(tape, losses, alf.weights());
  }
  throw Error("unreachable loss combination");
}

TaskVector normalized_task_weights(const SigmaParams& sigma) {
  const TaskVector s = sigma.log_variances();
  // Shift by the smallest s for numerical range; the ratio is unchanged.
  const double shift = std::min({s[0], s[1], s[2]});
  TaskVector w{};
  double total = 0.0;
  for (std::size_t k = 0; k < kNumTasks; ++k) {
    w[k] = std::exp(-(s[k] - shift));
    total += w[k];
  }
  for (double& v : w) v /= total;
  return w;
}

TaskVector reported_task_weights(const AlfVariant& alf, const SigmaParams& sigma) {
  return alf.learns_sigma() ? normalized_task_weights(sigma) : alf.weights();
}

TaskVector round_weights(const TaskVector& weights) {
  TaskVector out{};
  for (std::size_t k = 0; k < kNumTasks; ++k) out[k] = std::round(weights[k] * 100.0) / 100.0;
  return out;
}

double stationary_sigma(const AlfVariant& alf, double loss) {
  if (!(loss > 0.0) || !std::isfinite(loss))
    throw RangeError(fmt::format("stationary_sigma needs a positive loss, got {}", loss));
  switch (alf.kind()) {
    case AlfVariant::Kind::alf1: return loss;
    case AlfVariant::Kind::alf2: return (loss + std::sqrt(loss * loss + 4.0 * loss)) / 2.0;
    case AlfVariant::Kind::fixed: break;
  }
  throw RangeError("stationary_sigma is defined for alf1 and alf2 only");
}

SigmaDescentResult descend_sigma(const TaskVector& frozen_losses, const AlfVariant& alf,
                                 double learning_rate, std::size_t max_steps, double grad_tol) {
  if (!alf.learns_sigma()) throw RangeError("descend_sigma needs alf1 or alf2");
  SigmaParams sigma = SigmaParams::initial(true);
  SigmaDescentResult result;
  for (std::size_t step = 0; step < max_steps; ++step) {
    ad::Tape tape;
    TaskLosses losses;
    losses.polarity = ad::Tensor::scalar(frozen_losses[0]);
    losses.aspect = ad::Tensor::scalar(frozen_losses[1]);
    losses.opinion = ad::Tensor::scalar(frozen_losses[2]);
    sigma.log_variance.zero_grad();
    tape.backward(combine(tape, losses, sigma, alf));

    auto s = sigma.log_variance.mutable_data();
    const auto g = sigma.log_variance.grad();
    double worst = 0.0;
    for (std::size_t k = 0; k < kNumTasks; ++k) {
      worst = std::max(worst, std::abs(g[k]));
      s[k] -= learning_rate * g[k];
    }
    result.steps = step + 1;
    if (worst < grad_tol) {
      result.converged = true;
      break;
    }
  }
  result.variances = sigma.variances();
  return result;
}

// ---------------------------------------------------------------------------
// Trajectory CSV

TrajectoryWriter::TrajectoryWriter(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError(fmt::format("cannot write trajectory '{}'", path.string()));
  out_ << kHeader << '\n';
}

void TrajectoryWriter::write(std::size_t step, const TaskVector& weights,
                             const TaskVector& variances, const TaskVector& losses) {
  out_ << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n",
                      step, weights[0], weights[1], weights[2], variances[0], variances[1],
                      variances[2], losses[0], losses[1], losses[2]);
}

void TrajectoryWriter::flush() {
  out_.flush();
  if (!out_) throw IoError(fmt::format("write to '{}' failed", path_.string()));
}

std::vector<TrajectoryRow> read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open trajectory '{}'", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != TrajectoryWriter::kHeader)
    throw DataError(fmt::format("{}: unexpected trajectory header", path.string()));
  std::vector<TrajectoryRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10)
      throw DataError(fmt::format("{}:{}: expected 10 columns", path.string(), line_no));
    TrajectoryRow row;
    try {
      row.step = std::stoull(cells[0]);
      for (std::size_t k = 0; k < kNumTasks; ++k) {
        row.weights[k] = std::stod(cells[1 + k]);
        row.variances[k] = std::stod(cells[4 + k]);
        row.losses[k] = std::stod(cells[7 + k]);
      }
    } catch (const std::exception&) {
      throw DataError(fmt::format("{}:{}: malformed number", path.string(), line_no));
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sentimtl
