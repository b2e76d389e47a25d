#include "sentimtl/trainer.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sentimtl/random.hpp"

namespace sentimtl {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  std::string hex;
  hex.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

ordered_json config_json(const TrainConfig& c) {
  ordered_json j;
  switch (c.alf.kind()) {
    case AlfVariant::Kind::alf1: j["alf"] = "alf1"; break;
    case AlfVariant::Kind::alf2: j["alf"] = "alf2"; break;
    case AlfVariant::Kind::fixed:
      j["alf"] = "fixed";
      j["fixed_weights"] = c.alf.weights();
      break;
  }
  j["strategy"] = std::string(to_string(c.strategy));
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["embedding_dim"] = c.embedding_dim;
  j["max_target_len"] = c.max_target_len;
  if (c.clip_grad_norm)
    j["clip_grad_norm"] = *c.clip_grad_norm;
  else
    j["clip_grad_norm"] = nullptr;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const auto kind = parse_alf_kind(j.at("alf").get<std::string>());
  if (kind == AlfVariant::Kind::fixed)
    c.alf = AlfVariant::fixed(j.at("fixed_weights").get<TaskVector>());
  else
    c.alf = kind == AlfVariant::Kind::alf1 ? AlfVariant::alf1() : AlfVariant::alf2();
  c.strategy = parse_dawl_strategy(j.at("strategy").get<std::string>());
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.max_target_len = j.at("max_target_len").get<std::size_t>();
  if (j.at("clip_grad_norm").is_null())
    c.clip_grad_norm.reset();
  else
    c.clip_grad_norm = j.at("clip_grad_norm").get<double>();
  return c;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw RangeError("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw RangeError("learning_rate must be a non-negative finite number");
  if (embedding_dim < 2) throw RangeError("embedding_dim must be at least 2");
  if (max_target_len < 2) throw RangeError("max_target_len must be at least 2");
  if (clip_grad_norm && !(*clip_grad_norm > 0.0)) throw RangeError("clip_grad_norm must be positive");
}

std::string TrainConfig::to_json() const { return config_json(*this).dump(); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  try {
    return config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("bad training config: {}", e.what()));
  }
}

std::string TrainConfig::hash() const { return sha256_hex(to_json()); }

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Engine engine(seed);
  shuffle(order, engine);
  return order;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamOptimizer::AdamOptimizer(std::vector<ad::Tensor> params, double learning_rate, double beta1,
                             double beta2, double epsilon)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw Error("optimizer parameter does not require grad");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double AdamOptimizer::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void AdamOptimizer::scale_grads(double factor) {
  for (auto& p : params_) {
    for (double& g : p.mutable_grad()) g *= factor;
  }
}

void AdamOptimizer::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(beta1_, t);
  const double correction2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto values = params_[k].mutable_data();
    const auto grads = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grads[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grads[i] * grads[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// Training

std::vector<ad::Tensor> trainable_parameters(const ToyModel& model, const SigmaParams& sigma,
                                             const TrainConfig& config) {
  auto params = model.parameters();
  if (config.alf.learns_sigma()) params.push_back(sigma.log_variance);
  return params;
}

StepResult train_step(std::span<const EncodedInstance> batch, ToyModel& model, SigmaParams& sigma,
                      AdamOptimizer& optimizer, const TrainConfig& config) {
  optimizer.zero_grad();
  if (sigma.log_variance.requires_grad()) sigma.log_variance.zero_grad();

  ad::Tape tape;
  TaskLosses losses = assemble_task_losses(tape, model, batch, config.strategy);
  ad::Tensor combined = combine(tape, losses, sigma, config.alf);

  StepResult result;
  result.combined = combined.item();
  result.losses = losses.values();
  if (!std::isfinite(result.combined))
    throw DivergenceError(fmt::format("combined loss is {}", result.combined), {});

  tape.backward(combined);
  result.grad_norm = optimizer.grad_norm();
  if (config.clip_grad_norm && result.grad_norm > *config.clip_grad_norm) {
    optimizer.scale_grads(*config.clip_grad_norm / result.grad_norm);
    result.clipped = true;
  }
  optimizer.step();
  return result;
}

FitResult fit(const Dataset& train_set, const Dataset& dev_set, const TrainConfig& config,
              const TrainOutputs& outputs) {
  config.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (config.strategy != DawlStrategy::none) {
    for (const auto& inst : train_set) {
      if (!inst.augmented())
        throw DataError(fmt::format("train: instance {} is not augmented but strategy is '{}'",
                                    inst.id, to_string(config.strategy)));
    }
  }

  const Vocabulary vocab = Vocabulary::build(train_set);
  std::vector<EncodedInstance> encoded;
  encoded.reserve(train_set.size());
  for (const auto& inst : train_set) encoded.push_back(encode_instance(inst, vocab, config.max_target_len));
  std::vector<EncodedInstance> dev;
  for (const auto& inst : dev_set) dev.push_back(encode_instance(inst, vocab, config.max_target_len));

  ToyModel model(vocab.size(), config.embedding_dim, config.seed);
  SigmaParams sigma = SigmaParams::initial(config.alf.learns_sigma());
  AdamOptimizer optimizer(trainable_parameters(model, sigma, config), config.learning_rate);

  TrainReport report;
  report.checkpoint = outputs.checkpoint;
  report.trajectory = outputs.trajectory;
  std::optional<TrajectoryWriter> trajectory;
  if (!outputs.trajectory.empty()) trajectory.emplace(outputs.trajectory);

  Engine engine(config.seed);
  std::vector<std::size_t> order(encoded.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(order, engine);
    EpochReport er;
    er.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<EncodedInstance> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) batch.push_back(encoded[order[i]]);

      const TaskVector weights = reported_task_weights(config.alf, sigma);
      const TaskVector variances = sigma.variances();
      StepResult step;
      try {
        step = train_step(batch, model, sigma, optimizer, config);
      } catch (const DivergenceError& e) {
        if (trajectory) trajectory->flush();
        std::filesystem::path last_good;
        if (!outputs.checkpoint.empty()) {
          last_good = outputs.checkpoint;
          last_good += ".last_good";
          save_checkpoint(model, sigma, vocab, config, last_good);
        }
        throw DivergenceError(fmt::format("training diverged at epoch {} step {}: {}", epoch,
                                          report.steps + 1, e.what()),
                              last_good);
      }
      ++report.steps;
      if (step.clipped) ++report.clipped_steps;
      if (trajectory) trajectory->write(report.steps, weights, variances, step.losses);

      for (std::size_t k = 0; k < kNumTasks; ++k) er.mean_losses[k] += step.losses[k];
      er.mean_combined += step.combined;
      ++batches;
    }
    for (double& v : er.mean_losses) v /= static_cast<double>(batches);
    er.mean_combined /= static_cast<double>(batches);
    er.weights = reported_task_weights(config.alf, sigma);

    if (!dev.empty()) {
      std::vector<Polarity> gold;
      std::vector<Polarity> pred;
      std::vector<bool> implicit;
      for (const auto& inst : dev) {
        gold.push_back(inst.polarity);
        pred.push_back(predict(model, inst));
        implicit.push_back(inst.implicit);
      }
      const EvalResult r = evaluate_predictions(gold, pred, implicit);
      er.dev = r.all;
      er.dev_isa = r.isa;
    }
    if (outputs.progress) {
      *outputs.progress << fmt::format(
          "EPOCH {}: combined={:.6f} L_p={:.6f} L_a={:.6f} L_o={:.6f} w=({:.4f},{:.4f},{:.4f})",
          epoch, er.mean_combined, er.mean_losses[0], er.mean_losses[1], er.mean_losses[2],
          er.weights[0], er.weights[1], er.weights[2]);
      if (er.dev)
        *outputs.progress << fmt::format(" dev_acc={:.4f} dev_f1={:.4f}", er.dev->accuracy,
                                         er.dev->macro_f1);
      *outputs.progress << '\n';
    }
    report.epochs.push_back(er);
  }
  if (trajectory) trajectory->flush();
  if (!outputs.checkpoint.empty()) save_checkpoint(model, sigma, vocab, config, outputs.checkpoint);
  return FitResult{vocab, std::move(model), std::move(sigma), std::move(report)};
}

TrainReport train(const Dataset& train_set, const Dataset& dev_set, const TrainConfig& config,
                  const TrainOutputs& outputs) {
  return fit(train_set, dev_set, config, outputs).report;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kMagic = "SENTIMTL-CHECKPOINT";

}  // namespace

void save_checkpoint(const ToyModel& model, const SigmaParams& sigma, const Vocabulary& vocab,
                     const TrainConfig& config, const std::filesystem::path& path) {
  ordered_json payload;
  payload["version"] = kCheckpointVersion;
  payload["config"] = config_json(config);
  payload["config_hash"] = config.hash();
  payload["seed"] = model.seed();
  payload["vocab"] = vocab.tokens();
  payload["embedding_dim"] = model.embedding_dim();
  ordered_json params = ordered_json::object();
  const auto tensors = model.parameters();
  const auto& names = ToyModel::parameter_names();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    ordered_json entry;
    entry["shape"] = tensors[i].shape();
    entry["values"] = std::vector<double>(tensors[i].data().begin(), tensors[i].data().end());
    params[names[i]] = std::move(entry);
  }
  payload["parameters"] = std::move(params);
  const auto s = sigma.log_variances();
  payload["log_variance"] = std::vector<double>(s.begin(), s.end());

  const std::string body = payload.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write checkpoint '{}'", path.string()));
  out << kMagic << ' ' << kCheckpointVersion << " sha256:" << sha256_hex(body) << '\n' << body << '\n';
  out.flush();
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, CheckpointMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::string header;
  std::string body;
  std::getline(in, header);
  std::getline(in, body);

  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  std::string digest;
  hs >> magic >> version >> digest;
  if (magic != kMagic) throw CheckpointError(fmt::format("{}: not a checkpoint file", path.string()));
  if (version != kCheckpointVersion)
    throw CheckpointError(fmt::format("{}: checkpoint version {} but this build reads version {}",
                                      path.string(), version, kCheckpointVersion));
  if (digest != "sha256:" + sha256_hex(body))
    throw CheckpointError(fmt::format("{}: checksum mismatch (file corrupt)", path.string()));

  try {
    const auto j = nlohmann::json::parse(body);
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw CheckpointError(fmt::format("{}: payload version {} but this build reads version {}",
                                        path.string(), j.at("version").get<int>(),
                                        kCheckpointVersion));
    TrainConfig config = config_from_json(j.at("config"));
    Vocabulary vocab(j.at("vocab").get<std::vector<std::string>>());
    const bool trainable = mode == CheckpointMode::train;
    ToyModel model(vocab.size(), j.at("embedding_dim").get<std::size_t>(),
                   j.at("seed").get<std::uint64_t>(), trainable);
    const auto tensors = model.parameters();
    const auto& names = ToyModel::parameter_names();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const auto& entry = j.at("parameters").at(names[i]);
      if (entry.at("shape").get<ad::Shape>() != tensors[i].shape())
        throw CheckpointError(fmt::format("{}: shape mismatch for {}", path.string(), names[i]));
      const auto values = entry.at("values").get<std::vector<double>>();
      if (values.size() != tensors[i].size())
        throw CheckpointError(fmt::format("{}: size mismatch for {}", path.string(), names[i]));
      auto dst = ad::Tensor(tensors[i]).mutable_data();
      std::copy(values.begin(), values.end(), dst.begin());
    }
    const auto s = j.at("log_variance").get<std::vector<double>>();
    if (s.size() != kNumTasks) throw CheckpointError(fmt::format("{}: bad sigma vector", path.string()));
    SigmaParams sigma{ad::Tensor::from({kNumTasks}, s, trainable && config.alf.learns_sigma())};
    return Checkpoint{std::move(config), std::move(vocab), std::move(model), std::move(sigma)};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(fmt::format("{}: malformed checkpoint: {}", path.string(), e.what()));
  }
}

}  // namespace sentimtl
