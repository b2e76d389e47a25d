#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>

#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sentimtl/augment.hpp"
#include "sentimtl/backend.hpp"
#include "sentimtl/data.hpp"
#include "sentimtl/experiment.hpp"
#include "sentimtl/report.hpp"
#include "sentimtl/synth.hpp"
#include "sentimtl/trainer.hpp"

namespace fs = std::filesystem;
using namespace sentimtl;

namespace {

fs::path make_run_dir(const fs::path& root, std::uint64_t seed) {
  const std::time_t now = std::time(nullptr);
  const std::string stamp = fmt::format("{:%Y%m%d-%H%M%S}", fmt::localtime(now));
  fs::path dir = root / fmt::format("{}-seed{}", stamp, seed);
  for (int k = 1; fs::exists(dir); ++k) dir = root / fmt::format("{}-seed{}-{}", stamp, seed, k);
  fs::create_directories(dir);
  return dir;
}

TaskVector parse_weights(const std::string& text) {
  std::vector<double> values;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw DataError(fmt::format("--fixed-weights: '{}' is not a number", item));
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (values.size() != kNumTasks)
    throw DataError(fmt::format("--fixed-weights needs 3 values (polarity,aspect,opinion), got {}", values.size()));
  return {values[0], values[1], values[2]};
}

struct TrainFlags {
  std::string alf = "alf2";
  std::string fixed_weights;
  std::string strategy = "output";
  std::uint64_t seed = 42;
  std::size_t epochs = 30;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t dim = 64;
  std::size_t max_target_len = 16;
  double clip = 5.0;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--alf", f.alf, "alf1 | alf2 | fixed")->check(CLI::IsMember({"alf1", "alf2", "fixed"}));
  cmd->add_option("--fixed-weights", f.fixed_weights, "polarity,aspect,opinion weights for --alf fixed");
  cmd->add_option("--strategy", f.strategy, "none | input | output | input-output")
      ->check(CLI::IsMember({"none", "input", "output", "input-output"}));
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--lr", f.lr, "learning rate");
  cmd->add_option("--batch-size", f.batch_size, "mini-batch size");
  cmd->add_option("--dim", f.dim, "embedding dimension");
  cmd->add_option("--max-target-len", f.max_target_len, "max generated-element length incl. EOS");
  cmd->add_option("--clip", f.clip, "global gradient-norm clip (0 disables)");
}

TrainConfig to_config(const TrainFlags& f) {
  TrainConfig c;
  if (f.alf == "fixed") {
    if (f.fixed_weights.empty()) throw DataError("--alf fixed needs --fixed-weights");
    c.alf = AlfVariant::fixed(parse_weights(f.fixed_weights));
  } else {
    if (!f.fixed_weights.empty()) throw DataError("--fixed-weights is only valid with --alf fixed");
    c.alf = f.alf == "alf1" ? AlfVariant::alf1() : AlfVariant::alf2();
  }
  c.strategy = parse_dawl_strategy(f.strategy);
  c.seed = f.seed;
  c.epochs = f.epochs;
  c.learning_rate = f.lr;
  c.batch_size = f.batch_size;
  c.embedding_dim = f.dim;
  c.max_target_len = f.max_target_len;
  if (f.clip > 0.0)
    c.clip_grad_norm = f.clip;
  else
    c.clip_grad_norm.reset();
  c.validate();
  return c;
}

nlohmann::ordered_json metrics_json(const EvalResult& r) {
  nlohmann::ordered_json j;
  j["n_all"] = r.n_all;
  j["n_implicit"] = r.n_implicit;
  j["all_accuracy"] = r.all.accuracy;
  j["all_macro_f1"] = r.all.macro_f1;
  j["isa_accuracy"] = r.isa ? nlohmann::ordered_json(r.isa->accuracy) : nlohmann::ordered_json();
  j["isa_macro_f1"] = r.isa ? nlohmann::ordered_json(r.isa->macro_f1) : nlohmann::ordered_json();
  j["confusion"] = r.confusion;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << text;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::logic_error&) {
      throw DataError(fmt::format("--seeds: '{}' is not an integer", item));
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (seeds.empty()) throw DataError("--seeds is empty");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task implicit sentiment toolkit"};
  app.set_config("--config", "", "key=value config file; flags override it");
  app.require_subcommand(1);

  // convert
  auto* convert = app.add_subcommand("convert", "SemEval XML -> JSONL");
  std::string convert_in, convert_out, flags_path, lexicon_path;
  convert->add_option("input", convert_in, "SemEval XML file")->required();
  convert->add_option("output", convert_out, "output JSONL")->required();
  convert->add_option("--implicit-flags", flags_path, "JSON object {id: bool}");
  convert->add_option("--lexicon", lexicon_path, "opinion lexicon, one word per line");

  // augment
  auto* augment = app.add_subcommand("augment", "generate aspect/opinion elements with refinement");
  std::string aug_in, aug_out, backend_url, mock_script, method = "prompt", model_name = "gpt-4o-mini";
  std::size_t max_epochs = 3, parallelism = 1;
  augment->add_option("input", aug_in, "input JSONL")->required();
  augment->add_option("output", aug_out, "output JSONL")->required();
  auto* url_opt = augment->add_option("--backend-url", backend_url, "chat-completion endpoint");
  auto* mock_opt = augment->add_option("--mock-script", mock_script, "scripted mock responses (JSONL)");
  url_opt->excludes(mock_opt);
  augment->add_option("--method", method, "prompt | markov | choice")
      ->check(CLI::IsMember({"prompt", "markov", "choice"}));
  augment->add_option("--max-epochs", max_epochs, "refinement rounds")->check(CLI::PositiveNumber);
  augment->add_option("--parallelism", parallelism, "concurrent instances")->check(CLI::PositiveNumber);
  augment->add_option("--model", model_name, "model name sent to the backend");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the toy model");
  TrainFlags tf;
  std::string train_path, dev_path, out_dir, run_root = "runs";
  train_cmd->add_option("train", train_path, "training JSONL")->required();
  train_cmd->add_option("--dev", dev_path, "dev JSONL evaluated each epoch");
  train_cmd->add_option("--out-dir", out_dir, "exact output directory");
  train_cmd->add_option("--run-root", run_root, "parent of timestamped run directories");
  add_train_flags(train_cmd, tf);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path, eval_data, eval_flags, eval_json;
  eval->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("dataset", eval_data, "JSONL dataset")->required();
  eval->add_option("--implicit-flags", eval_flags, "JSON object {id: bool} overriding the dataset flags");
  eval->add_option("--json", eval_json, "also write metrics as JSON");

  // report
  auto* report = app.add_subcommand("report", "weight-evolution table from a trajectory CSV");
  std::string traj_path, plot_path;
  std::size_t every = 10;
  report->add_option("trajectory", traj_path, "trajectory CSV")->required();
  report->add_option("--every", every, "table stride in steps")->check(CLI::PositiveNumber);
  report->add_option("--plot", plot_path, "write an SVG line chart of the weights");

  // ablation
  auto* ablation = app.add_subcommand("ablation", "full / w/o D-AWL / w/o T-AWL / w/o both grid");
  std::string abl_train, abl_test, seeds_text = "1,2,3,4,5";
  bool synthetic = false;
  TrainFlags af;
  af.lr = 1e-2;
  af.dim = 16;
  ablation->add_option("train", abl_train, "training JSONL");
  ablation->add_option("test", abl_test, "test JSONL");
  ablation->add_flag("--synthetic", synthetic, "use the built-in synthetic corpus");
  ablation->add_option("--seeds", seeds_text, "comma-separated seeds");
  ablation->add_option("--run-root", run_root, "parent of timestamped run directories");
  add_train_flags(ablation, af);

  // synth
  auto* synth = app.add_subcommand("synth", "write the synthetic corpus");
  std::string synth_dir;
  SynthConfig sc;
  synth->add_option("out_dir", synth_dir, "output directory")->required();
  synth->add_option("--seed", sc.seed, "generator seed");
  synth->add_option("--n-train", sc.n_train, "training instances");
  synth->add_option("--n-test", sc.n_test, "test instances");
  synth->add_option("--noise", sc.noise, "probability of a wrong element");
  synth->add_option("--implicit-fraction", sc.implicit_fraction, "share of implicit instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*convert) {
      std::optional<ImplicitFlags> flags;
      if (!flags_path.empty()) flags = load_implicit_flags(flags_path);
      const OpinionLexicon lexicon = lexicon_path.empty() ? OpinionLexicon::builtin() : OpinionLexicon::load(lexicon_path);
      const SemevalConversion conv = convert_semeval_xml(convert_in, flags ? &*flags : nullptr, lexicon);
      save_jsonl(conv.dataset, convert_out);
      std::cout << fmt::format("converted {} instances ({} conflict dropped) -> {}\n", conv.dataset.size(),
                               conv.dropped_conflict, convert_out);
    } else if (*augment) {
      if (backend_url.empty() && mock_script.empty()) throw DataError("augment needs --backend-url or --mock-script");
      const Dataset input = load_jsonl(aug_in);
      std::unique_ptr<LlmBackend> backend;
      if (!mock_script.empty()) {
        backend = std::make_unique<MockBackend>(MockBackend::from_file(mock_script));
      } else {
        HttpBackendConfig hc;
        hc.url = backend_url;
        hc.model = model_name;
        hc.api_key = HttpBackendConfig::api_key_from_env();
        backend = std::make_unique<HttpBackend>(std::move(hc));
      }
      const auto m = parse_confidence_method(method);
      const fs::path errors_path = fs::path(aug_out).concat(".errors.jsonl");
      try {
        const AugmentOutcome outcome = augment_dataset(input, *backend, m, max_epochs, parallelism);
        save_jsonl(outcome.dataset, aug_out);
        if (!outcome.failures.empty()) write_failure_report(outcome.failures, errors_path);
        std::cout << fmt::format("augmented {} of {} instances -> {}\n", outcome.dataset.size(), input.size(),
                                 aug_out);
        if (!outcome.failures.empty())
          std::cout << fmt::format("{} failures -> {}\n", outcome.failures.size(), errors_path.string());
      } catch (const AugmentAbort& e) {
        save_jsonl(e.outcome().dataset, aug_out);
        write_failure_report(e.outcome().failures, errors_path);
        throw;
      }
    } else if (*train_cmd) {
      const TrainConfig config = to_config(tf);
      const Dataset train_set = load_jsonl(train_path);
      const Dataset dev_set = dev_path.empty() ? Dataset() : load_jsonl(dev_path);
      fs::path dir = out_dir.empty() ? make_run_dir(run_root, config.seed) : fs::path(out_dir);
      fs::create_directories(dir);
      TrainOutputs outputs{dir / "checkpoint.ckpt", dir / "trajectory.csv", &std::cout};
      const TrainReport r = train(train_set, dev_set, config, outputs);
      nlohmann::ordered_json j;
      j["config"] = nlohmann::ordered_json::parse(config.to_json());
      j["config_hash"] = config.hash();
      j["steps"] = r.steps;
      j["clipped_steps"] = r.clipped_steps;
      j["checkpoint"] = outputs.checkpoint.string();
      j["trajectory"] = outputs.trajectory.string();
      auto& epochs = j["epochs"] = nlohmann::ordered_json::array();
      for (const auto& e : r.epochs) {
        nlohmann::ordered_json ej;
        ej["epoch"] = e.epoch;
        ej["mean_losses"] = e.mean_losses;
        ej["mean_combined"] = e.mean_combined;
        ej["weights"] = e.weights;
        if (e.dev) {
          ej["dev_accuracy"] = e.dev->accuracy;
          ej["dev_macro_f1"] = e.dev->macro_f1;
        }
        epochs.push_back(std::move(ej));
      }
      write_text(dir / "report.json", j.dump(2) + "\n");
      std::cout << fmt::format("run directory: {}\n", dir.string());
    } else if (*eval) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path, CheckpointMode::eval);
      const Dataset data = load_jsonl(eval_data);
      Dataset scored = data;
      if (!eval_flags.empty()) {
        const ImplicitFlags flags = load_implicit_flags(eval_flags);
        std::vector<Instance> merged;
        for (const auto& inst : data) {
          auto it = flags.find(inst.id);
          if (it == flags.end()) throw DataError(fmt::format("--implicit-flags has no entry for {}", inst.id));
          Instance copy = inst;
          copy.implicit = it->second;
          merged.push_back(std::move(copy));
        }
        scored = Dataset(data.name(), std::move(merged));
      }
      const EvalResult r = evaluate(ckpt.model, ckpt.vocab, scored);
      std::cout << format_eval(r);
      if (!eval_json.empty()) write_text(eval_json, metrics_json(r).dump(2) + "\n");
    } else if (*report) {
      const auto rows = read_trajectory(traj_path);
      std::cout << format_weight_table(rows, every);
      if (!plot_path.empty()) {
        write_weight_plot(rows, plot_path);
        std::cout << fmt::format("plot -> {}\n", plot_path);
      }
    } else if (*ablation) {
      Dataset train_set, test_set;
      if (synthetic) {
        SynthData data = generate_synthetic();
        train_set = std::move(data.train);
        test_set = std::move(data.test);
      } else {
        if (abl_train.empty() || abl_test.empty()) throw DataError("ablation needs train and test JSONL, or --synthetic");
        train_set = load_jsonl(abl_train);
        test_set = load_jsonl(abl_test);
      }
      TrainConfig base = to_config(af);
      const auto seeds = parse_seeds(seeds_text);
      const fs::path dir = make_run_dir(run_root, seeds.front());
      const auto rows = run_ablation(train_set, test_set, base, seeds, &std::cerr);
      const std::string table = format_ablation(rows);
      std::cout << table;
      write_text(dir / "ablation.txt", table);
      std::cout << fmt::format("run directory: {}\n", dir.string());
    } else if (*synth) {
      const SynthData data = generate_synthetic(sc);
      fs::create_directories(synth_dir);
      save_jsonl(data.train, fs::path(synth_dir) / "train.jsonl");
      save_jsonl(data.test, fs::path(synth_dir) / "test.jsonl");
      std::cout << fmt::format("wrote {} train / {} test instances to {}\n", data.train.size(), data.test.size(),
                               synth_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
