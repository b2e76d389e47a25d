#include "sentimtl/metrics.hpp"

#include <fmt/format.h>

#include <vector>

#include "sentimtl/error.hpp"

namespace sentimtl {

namespace {

void require_paired(std::span<const Polarity> gold, std::span<const Polarity> pred) {
  if (gold.size() != pred.size())
    throw RangeError(
        fmt::format("gold/pred length mismatch: {} vs {}", gold.size(), pred.size()));
  if (gold.empty()) throw RangeError("metrics need at least one prediction");
}

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const Polarity> gold, std::span<const Polarity> pred) {
  require_paired(gold, pred);
  ConfusionMatrix m{};
  for (std::size_t i = 0; i < gold.size(); ++i) ++m[index_of(gold[i])][index_of(pred[i])];
  return m;
}

double accuracy(std::span<const Polarity> gold, std::span<const Polarity> pred) {
  require_paired(gold, pred);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += gold[i] == pred[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double macro_f1(std::span<const Polarity> gold, std::span<const Polarity> pred) {
  const ConfusionMatrix m = confusion_matrix(gold, pred);
  double total = 0.0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < kNumPolarities; ++c) {
    std::size_t gold_count = 0;
    std::size_t pred_count = 0;
    for (std::size_t j = 0; j < kNumPolarities; ++j) {
      gold_count += m[c][j];
      pred_count += m[j][c];
    }
    if (gold_count == 0 && pred_count == 0) continue;
    ++classes;
    const auto tp = static_cast<double>(m[c][c]);
    // F1 = 2TP / (2TP + FP + FN) = 2TP / (gold + pred)
    const double denom = static_cast<double>(gold_count + pred_count);
    total += tp == 0.0 ? 0.0 : 2.0 * tp / denom;
  }
  return total / static_cast<double>(classes);
}

EvalResult evaluate_predictions(std::span<const Polarity> gold, std::span<const Polarity> pred,
                                const std::vector<bool>& implicit) {
  require_paired(gold, pred);
  if (implicit.size() != gold.size()) throw RangeError("implicit flags length mismatch");
  EvalResult r;
  r.n_all = gold.size();
  r.confusion = confusion_matrix(gold, pred);
  r.all = {accuracy(gold, pred), macro_f1(gold, pred)};

  std::vector<Polarity> isa_gold;
  std::vector<Polarity> isa_pred;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!implicit[i]) continue;
    isa_gold.push_back(gold[i]);
    isa_pred.push_back(pred[i]);
  }
  r.n_implicit = isa_gold.size();
  if (!isa_gold.empty()) r.isa = SliceMetrics{accuracy(isa_gold, isa_pred), macro_f1(isa_gold, isa_pred)};
  return r;
}

EvalResult evaluate(const ToyModel& model, const Vocabulary& vocab, const Dataset& dataset) {
  if (dataset.empty()) throw DataError("evaluate: empty dataset");
  std::vector<Polarity> gold;
  std::vector<Polarity> pred;
  std::vector<bool> implicit;
  for (const auto& inst : dataset) {
    gold.push_back(inst.polarity);
    pred.push_back(predict(model, encode_instance(inst, vocab, 0)));
    implicit.push_back(inst.implicit);
  }
  return evaluate_predictions(gold, pred, implicit);
}

}  // namespace sentimtl
