#include "sentimtl/experiment.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <ostream>

namespace sentimtl {

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

namespace {

template <typename Get>
MeanStd collect(const std::vector<EvalResult>& runs, Get get) {
  std::vector<double> values;
  for (const auto& r : runs) values.push_back(get(r));
  return mean_std(values);
}

}  // namespace

MeanStd SeedSweep::all_accuracy() const {
  return collect(runs, [](const EvalResult& r) { return r.all.accuracy; });
}
MeanStd SeedSweep::all_macro_f1() const {
  return collect(runs, [](const EvalResult& r) { return r.all.macro_f1; });
}
MeanStd SeedSweep::isa_accuracy() const {
  return collect(runs, [](const EvalResult& r) { return r.isa ? r.isa->accuracy : 0.0; });
}
MeanStd SeedSweep::isa_macro_f1() const {
  return collect(runs, [](const EvalResult& r) { return r.isa ? r.isa->macro_f1 : 0.0; });
}

SeedSweep run_seeds(const std::string& label, const Dataset& train_set, const Dataset& test_set,
                    TrainConfig config, const std::vector<std::uint64_t>& seeds) {
  SeedSweep sweep{label, config, {}};
  for (std::uint64_t seed : seeds) {
    config.seed = seed;
    const FitResult fitted = fit(train_set, Dataset(), config, TrainOutputs{});
    sweep.runs.push_back(evaluate(fitted.model, fitted.vocab, test_set));
  }
  return sweep;
}

std::vector<AblationRow> run_ablation(const Dataset& train_set, const Dataset& test_set,
                                      const TrainConfig& base,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::ostream* progress) {
  struct Variant {
    std::string name;
    bool data_level;
    bool task_level;
  };
  const std::vector<Variant> variants = {
      {"full", true, true}, {"w/o D-AWL", false, true}, {"w/o T-AWL", true, false}, {"w/o both", false, false}};

  std::map<std::pair<DawlStrategy, bool>, SeedSweep> cache;
  std::vector<AblationRow> rows;
  for (DawlStrategy block : {DawlStrategy::input, DawlStrategy::output}) {
    for (const auto& v : variants) {
      const DawlStrategy strategy = v.data_level ? block : DawlStrategy::none;
      const auto key = std::make_pair(strategy, v.task_level);
      auto it = cache.find(key);
      if (it == cache.end()) {
        TrainConfig config = base;
        config.strategy = strategy;
        config.alf = v.task_level ? AlfVariant::alf2() : AlfVariant::base();
        const std::string label = fmt::format("{}/{}", to_string(strategy), to_string(config.alf));
        if (progress) *progress << fmt::format("ablation: {} x {} seeds\n", label, seeds.size());
        it = cache.emplace(key, run_seeds(label, train_set, test_set, config, seeds)).first;
      }
      rows.push_back({block, v.name, it->second});
    }
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  auto cell = [](MeanStd m) { return fmt::format("{:6.2f} ± {:5.2f}", 100.0 * m.mean, 100.0 * m.std); };
  std::string out = fmt::format("{:<8} {:<10} {:>15} {:>15} {:>15} {:>15}\n", "strategy", "variant",
                                "All_A", "All_F", "ISA_A", "ISA_F");
  for (const auto& r : rows) {
    out += fmt::format("{:<8} {:<10} {:>15} {:>15} {:>15} {:>15}\n", to_string(r.strategy), r.variant,
                       cell(r.sweep.all_accuracy()), cell(r.sweep.all_macro_f1()),
                       cell(r.sweep.isa_accuracy()), cell(r.sweep.isa_macro_f1()));
  }
  return out;
}

}  // namespace sentimtl
