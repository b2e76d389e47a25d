#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sentimtl/autodiff.hpp"
#include "sentimtl/data.hpp"

namespace sentimtl {

class Vocabulary {
public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kBos = 2;
  static constexpr std::size_t kEos = 3;

  /// Reserved tokens only.
  Vocabulary();
  /// Rebuild from a token list whose first four entries are the reserved tokens.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Words of sentences, targets and generated elements, in first-seen order.
  static Vocabulary build(const Dataset& corpus);

  std::size_t add(std::string_view token);
  /// Index of `token`, or kUnk.
  std::size_t lookup(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Token ids ending with EOS (s_1..s_T).
struct TokenSequence {
  std::vector<std::size_t> ids;
  /// Set when the source text had no words; ids is then just {EOS}.
  bool from_empty_text = false;

  std::size_t length() const { return ids.size(); }
};

/// Lowercase, split on whitespace/punctuation, OOV -> UNK, append EOS.
/// `max_length` (including EOS) truncates when non-zero.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_length = 0);

enum class AuxTask : std::uint8_t { aspect = 0, opinion = 1 };
std::string_view to_string(AuxTask task);

/// Uniform(-0.1, 0.1) weights from a seeded 64-bit Mersenne twister.
/// The bit-to-real mapping is done here rather than through
/// std::uniform_real_distribution, whose output is library-specific.
class ParameterInit {
public:
  explicit ParameterInit(std::uint64_t seed) : engine_(seed) {}
  double next();

private:
  std::mt19937_64 engine_;
};

/// Shared embedding table, mean-pool encoder, a polarity head and one
/// generation head shared by the aspect and opinion tasks (distinguished by
/// a learned task tag added to the projected context).
class ToyModel {
public:
  ToyModel(std::size_t vocab_size, std::size_t embedding_dim, std::uint64_t seed,
           bool trainable = true);

  std::size_t vocab_size() const { return embedding.dim(0); }
  std::size_t embedding_dim() const { return embedding.dim(1); }
  std::uint64_t seed() const { return seed_; }

  /// All parameters in a fixed order, with stable names.
  std::vector<ad::Tensor> parameters() const;
  static const std::vector<std::string>& parameter_names();
  std::size_t parameter_count() const;
  void zero_grad();

  ad::Tensor embedding;     // [V, d]
  ad::Tensor polarity_W;    // [3, 2d]
  ad::Tensor polarity_b;    // [3]
  ad::Tensor context_W;     // [d, 2d]
  ad::Tensor context_b;     // [d]
  ad::Tensor task_tags;     // [2, d]
  ad::Tensor generation_W;  // [V, 2d]
  ad::Tensor generation_b;  // [V]

private:
  std::uint64_t seed_;
};

/// An instance resolved to token ids once, ahead of training.
struct EncodedInstance {
  std::string id;
  std::vector<std::size_t> sentence;
  std::vector<std::size_t> target;
  Polarity polarity = Polarity::neutral;
  bool implicit = false;
  bool has_aux = false;
  TokenSequence aspect;
  TokenSequence opinion;
  double aspect_confidence = 1.0;
  double opinion_confidence = 1.0;
};

EncodedInstance encode_instance(const Instance& instance, const Vocabulary& vocab,
                                std::size_t max_target_len);

/// concat(mean_pool(input_scale * Emb[sentence]), mean_pool(Emb[target])) -> [2d].
ad::Tensor encode(ad::Tape& tape, const ToyModel& model, std::span<const std::size_t> sentence_ids,
                  std::span<const std::size_t> target_ids, double input_scale = 1.0);

struct PolarityOutput {
  ad::Tensor loss;  // [1]
  std::array<double, kNumPolarities> logits{};
  Polarity predicted = Polarity::neutral;
};

/// Cross entropy of the polarity head against the gold label.
PolarityOutput polarity_loss(ad::Tape& tape, const ToyModel& model, const EncodedInstance& inst);
PolarityOutput polarity_loss(ad::Tape& tape, const ToyModel& model, const Instance& inst,
                             const Vocabulary& vocab);

/// Argmax of the polarity head, without recording gradients.
Polarity predict(const ToyModel& model, const EncodedInstance& inst);

struct GenerationLoss {
  ad::Tensor total;              // [1], sum over tokens
  std::vector<double> per_token; // -log p(s_t | context, s_{t-1})
};

/// Teacher-forced NLL of `target` given the encoded context.
GenerationLoss generation_nll(ad::Tape& tape, const ToyModel& model, const ad::Tensor& context,
                              AuxTask task, const TokenSequence& target);
/// Encodes the instance with `input_scale` on the sentence and scores the
/// instance's own aspect or opinion sequence.
GenerationLoss generation_nll(ad::Tape& tape, const ToyModel& model, const EncodedInstance& inst,
                              AuxTask task, double input_scale);
/// Text convenience; throws DataError when `target_text` has no words.
GenerationLoss generation_nll(ad::Tape& tape, const ToyModel& model, const Instance& inst,
                              AuxTask task, std::string_view target_text, const Vocabulary& vocab,
                              double input_scale, std::size_t max_target_len = 16);

}  // namespace sentimtl
