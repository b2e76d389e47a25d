#include "sentimtl/model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "sentimtl/error.hpp"
#include "sentimtl/random.hpp"
#include "sentimtl/text.hpp"

namespace sentimtl {

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<unk>", "<bos>", "<eos>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  if (tokens.size() < 4 || tokens[kPad] != "<pad>" || tokens[kUnk] != "<unk>" ||
      tokens[kBos] != "<bos>" || tokens[kEos] != "<eos>")
    throw DataError("vocabulary must start with <pad>, <unk>, <bos>, <eos>");
  for (auto& t : tokens) {
    if (!index_.emplace(t, tokens_.size()).second)
      throw DataError(fmt::format("duplicate vocabulary token '{}'", t));
    tokens_.push_back(std::move(t));
  }
}

Vocabulary Vocabulary::build(const Dataset& corpus) {
  Vocabulary vocab;
  auto add_text = [&](std::string_view text) {
    for (const auto& w : split_words(text)) vocab.add(w);
  };
  for (const auto& inst : corpus) {
    add_text(inst.sentence);
    add_text(inst.target);
    if (inst.aux) {
      add_text(inst.aux->aspect);
      add_text(inst.aux->opinion);
    }
  }
  return vocab;
}

std::size_t Vocabulary::add(std::string_view token) {
  auto [it, inserted] = index_.emplace(std::string(token), tokens_.size());
  if (inserted) tokens_.emplace_back(token);
  return it->second;
}

std::size_t Vocabulary::lookup(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_length) {
  TokenSequence seq;
  const auto words = split_words(text);
  seq.from_empty_text = words.empty();
  for (const auto& w : words) {
    if (max_length != 0 && seq.ids.size() + 1 >= max_length) break;
    seq.ids.push_back(vocab.lookup(w));
  }
  seq.ids.push_back(Vocabulary::kEos);
  return seq;
}

std::string_view to_string(AuxTask task) {
  return task == AuxTask::aspect ? "aspect" : "opinion";
}

// ---------------------------------------------------------------------------
// Model

double ParameterInit::next() {
  return uniform(engine_, -0.1, 0.1);
}

namespace {

ad::Tensor uniform_tensor(ad::Shape shape, ParameterInit& init, bool trainable) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> values(n);
  for (double& v : values) v = init.next();
  return ad::Tensor::from(std::move(shape), std::move(values), trainable);
}

}  // namespace

ToyModel::ToyModel(std::size_t vocab_size, std::size_t embedding_dim, std::uint64_t seed,
                   bool trainable)
    : seed_(seed) {
  if (embedding_dim < 2) throw RangeError("embedding_dim must be at least 2");
  if (vocab_size < 4) throw RangeError("vocabulary must include the reserved tokens");
  const std::size_t d = embedding_dim;
  ParameterInit init(seed);
  embedding = uniform_tensor({vocab_size, d}, init, trainable);
  polarity_W = uniform_tensor({kNumPolarities, 2 * d}, init, trainable);
  polarity_b = ad::Tensor::zeros({kNumPolarities}, trainable);
  context_W = uniform_tensor({d, 2 * d}, init, trainable);
  context_b = ad::Tensor::zeros({d}, trainable);
  task_tags = uniform_tensor({2, d}, init, trainable);
  generation_W = uniform_tensor({vocab_size, 2 * d}, init, trainable);
  generation_b = ad::Tensor::zeros({vocab_size}, trainable);
}

std::vector<ad::Tensor> ToyModel::parameters() const {
  return {embedding, polarity_W, polarity_b, context_W,
          context_b, task_tags,  generation_W, generation_b};
}

const std::vector<std::string>& ToyModel::parameter_names() {
  static const std::vector<std::string> names = {
      "embedding", "polarity_W", "polarity_b", "context_W",
      "context_b", "task_tags",  "generation_W", "generation_b"};
  return names;
}

std::size_t ToyModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

void ToyModel::zero_grad() {
  for (auto p : parameters()) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Forward passes

EncodedInstance encode_instance(const Instance& instance, const Vocabulary& vocab,
                                std::size_t max_target_len) {
  EncodedInstance enc;
  enc.id = instance.id;
  enc.sentence = tokenize(instance.sentence, vocab).ids;
  enc.target = tokenize(instance.target, vocab).ids;
  enc.polarity = instance.polarity;
  enc.implicit = instance.implicit;
  if (instance.aux) {
    enc.has_aux = true;
    enc.aspect = tokenize(instance.aux->aspect, vocab, max_target_len);
    enc.opinion = tokenize(instance.aux->opinion, vocab, max_target_len);
    enc.aspect_confidence = instance.aux->aspect_confidence;
    enc.opinion_confidence = instance.aux->opinion_confidence;
  }
  return enc;
}

ad::Tensor encode(ad::Tape& tape, const ToyModel& model, std::span<const std::size_t> sentence_ids,
                  std::span<const std::size_t> target_ids, double input_scale) {
  if (!(input_scale > 0.0) || !std::isfinite(input_scale))
    throw RangeError(fmt::format("input_scale must be positive, got {}", input_scale));
  if (sentence_ids.empty() || target_ids.empty())
    throw DataError("encode: sentence and target must be non-empty");
  ad::Tensor sentence = tape.embed(model.embedding, sentence_ids);
  sentence = tape.scale(sentence, input_scale);
  ad::Tensor target = tape.embed(model.embedding, target_ids);
  return tape.concat({tape.mean_pool(sentence, 0), tape.mean_pool(target, 0)});
}

namespace {

Polarity argmax_polarity(const ad::Tensor& logits) {
  const auto v = logits.data();
  const auto best = std::max_element(v.begin(), v.end()) - v.begin();
  return kPolarities[static_cast<std::size_t>(best)];
}

}  // namespace

PolarityOutput polarity_loss(ad::Tape& tape, const ToyModel& model, const EncodedInstance& inst) {
  ad::Tensor context = encode(tape, model, inst.sentence, inst.target, 1.0);
  ad::Tensor logits = tape.affine(model.polarity_W, model.polarity_b, context);
  PolarityOutput out;
  std::copy(logits.data().begin(), logits.data().end(), out.logits.begin());
  out.predicted = argmax_polarity(logits);
  out.loss = tape.softmax_xent(logits, index_of(inst.polarity));
  return out;
}

PolarityOutput polarity_loss(ad::Tape& tape, const ToyModel& model, const Instance& inst,
                             const Vocabulary& vocab) {
  return polarity_loss(tape, model, encode_instance(inst, vocab, 0));
}

Polarity predict(const ToyModel& model, const EncodedInstance& inst) {
  ad::Tape tape;
  ad::Tensor context = encode(tape, model, inst.sentence, inst.target, 1.0);
  return argmax_polarity(tape.affine(model.polarity_W, model.polarity_b, context));
}

GenerationLoss generation_nll(ad::Tape& tape, const ToyModel& model, const ad::Tensor& context,
                              AuxTask task, const TokenSequence& target) {
  if (target.ids.empty()) throw DataError("generation_nll: empty target sequence");
  ad::Tensor projected = tape.affine(model.context_W, model.context_b, context);
  projected = tape.add(projected, tape.embed_row(model.task_tags, static_cast<std::size_t>(task)));

  GenerationLoss out;
  std::vector<ad::Tensor> terms;
  terms.reserve(target.ids.size());
  std::size_t previous = Vocabulary::kBos;
  for (std::size_t token : target.ids) {
    ad::Tensor step = tape.concat({projected, tape.embed_row(model.embedding, previous)});
    ad::Tensor logits = tape.affine(model.generation_W, model.generation_b, step);
    ad::Tensor nll = tape.softmax_xent(logits, token);
    out.per_token.push_back(nll.item());
    terms.push_back(std::move(nll));
    previous = token;
  }
  out.total = tape.add_n(terms);
  return out;
}

GenerationLoss generation_nll(ad::Tape& tape, const ToyModel& model, const EncodedInstance& inst,
                              AuxTask task, double input_scale) {
  if (!inst.has_aux)
    throw DataError(fmt::format("instance {} has no generated {}", inst.id, to_string(task)));
  const TokenSequence& target = task == AuxTask::aspect ? inst.aspect : inst.opinion;
  if (target.from_empty_text)
    throw DataError(fmt::format("instance {}: empty {} target", inst.id, to_string(task)));
  ad::Tensor context = encode(tape, model, inst.sentence, inst.target, input_scale);
  return generation_nll(tape, model, context, task, target);
}

GenerationLoss generation_nll(ad::Tape& tape, const ToyModel& model, const Instance& inst,
                              AuxTask task, std::string_view target_text, const Vocabulary& vocab,
                              double input_scale, std::size_t max_target_len) {
  TokenSequence target = tokenize(target_text, vocab, max_target_len);
  if (target.from_empty_text)
    throw DataError(fmt::format("instance {}: empty {} target", inst.id, to_string(task)));
  EncodedInstance enc = encode_instance(inst, vocab, max_target_len);
  ad::Tensor context = encode(tape, model, enc.sentence, enc.target, input_scale);
  return generation_nll(tape, model, context, task, target);
}

}  // namespace sentimtl
