#include "sentimtl/synth.hpp"

#include <fmt/format.h>

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "sentimtl/error.hpp"
#include "sentimtl/random.hpp"

namespace sentimtl {

namespace {

struct Cue {
  std::string_view word;
  std::string_view opinion;
};

constexpr std::array<std::string_view, 16> kTargets = {
    "pasta", "service", "staff", "pizza", "wine",  "dessert", "waiter", "menu",
    "price", "table",   "soup",  "steak", "sushi", "coffee",  "bread",  "salad"};

constexpr std::array<std::string_view, 24> kFiller = {
    "the",  "a",    "we",     "our",   "was",   "were",  "at",   "for",
    "this", "that", "today",  "after", "there", "when",  "with", "then",
    "it",   "and",  "dinner", "lunch", "night", "place", "here", "again"};

/// Opinion words per polarity (positive, negative, neutral).
constexpr std::array<std::array<std::string_view, 4>, kNumPolarities> kOpinions = {{
    {"great", "delicious", "friendly", "excellent"},
    {"terrible", "rude", "bland", "awful"},
    {"average", "ordinary", "standard", "typical"},
}};

/// Cue words with no sentiment of their own, each tied to one opinion word.
constexpr std::array<std::array<Cue, 8>, kNumPolarities> kCues = {{
    {{{"returned", "great"},
      {"recommended", "excellent"},
      {"finished", "delicious"},
      {"smiled", "friendly"},
      {"reordered", "delicious"},
      {"booked", "great"},
      {"praised", "excellent"},
      {"welcomed", "friendly"}}},
    {{{"waited", "terrible"},
      {"ignored", "rude"},
      {"refunded", "awful"},
      {"salted", "bland"},
      {"complained", "terrible"},
      {"left", "awful"},
      {"shouted", "rude"},
      {"watered", "bland"}}},
    {{{"ordered", "average"},
      {"arrived", "ordinary"},
      {"sat", "typical"},
      {"paid", "standard"},
      {"served", "average"},
      {"listed", "ordinary"},
      {"came", "typical"},
      {"priced", "standard"}}},
}};

template <typename Array>
std::string_view pick(const Array& items, Engine& engine) {
  return items[uniform_index(engine, items.size())];
}

Instance make_instance(std::string id, const SynthConfig& c, Engine& engine) {
  Instance inst;
  inst.id = std::move(id);
  const Polarity polarity = kPolarities[uniform_index(engine, kNumPolarities)];
  const std::size_t p = index_of(polarity);
  inst.polarity = polarity;
  inst.implicit = uniform01(engine) < c.implicit_fraction;

  const std::string_view target = pick(kTargets, engine);
  std::string_view carrier;
  std::string_view opinion;
  if (inst.implicit) {
    const Cue& cue = kCues[p][uniform_index(engine, kCues[p].size())];
    carrier = cue.word;
    opinion = cue.opinion;
  } else {
    carrier = pick(kOpinions[p], engine);
    opinion = carrier;
  }

  std::vector<std::string_view> words;
  const std::size_t fillers = c.min_filler + uniform_index(engine, c.max_filler - c.min_filler + 1);
  for (std::size_t i = 0; i < fillers; ++i) words.push_back(pick(kFiller, engine));
  words.push_back(target);
  words.push_back(carrier);
  shuffle(words, engine);
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) inst.sentence += ' ';
    inst.sentence += words[i];
  }
  inst.target = std::string(target);

  AuxiliaryElements aux;
  aux.refine_epochs_used = 1;
  aux.consensus_reached = true;
  if (uniform01(engine) < c.noise) {
    std::string_view wrong = target;
    while (wrong == target) wrong = pick(kTargets, engine);
    aux.aspect = std::string(wrong);
    aux.aspect_confidence = uniform(engine, c.noisy_lo, c.noisy_hi);
  } else {
    aux.aspect = std::string(target);
    aux.aspect_confidence = uniform(engine, c.clean_lo, c.clean_hi);
  }
  if (uniform01(engine) < c.noise) {
    const std::size_t other = (p + 1 + uniform_index(engine, kNumPolarities - 1)) % kNumPolarities;
    aux.opinion = std::string(pick(kOpinions[other], engine));
    aux.opinion_confidence = uniform(engine, c.noisy_lo, c.noisy_hi);
  } else {
    aux.opinion = std::string(opinion);
    aux.opinion_confidence = uniform(engine, c.clean_lo, c.clean_hi);
  }
  inst.aux = std::move(aux);
  return inst;
}

}  // namespace

SynthData generate_synthetic(const SynthConfig& config) {
  if (config.max_filler < config.min_filler) throw RangeError("max_filler below min_filler");
  if (config.n_train == 0 || config.n_test == 0) throw RangeError("split sizes must be positive");
  if (!(config.clean_lo >= 0.5 && config.clean_hi <= 1.0 && config.noisy_lo >= 0.5 &&
        config.noisy_hi <= 1.0 && config.clean_lo <= config.clean_hi &&
        config.noisy_lo <= config.noisy_hi))
    throw RangeError("confidence ranges must lie in [0.5, 1]");
  Engine engine(config.seed);
  std::vector<Instance> train;
  std::vector<Instance> test;
  for (std::size_t i = 0; i < config.n_train; ++i)
    train.push_back(make_instance(fmt::format("train-{:03}", i), config, engine));
  for (std::size_t i = 0; i < config.n_test; ++i)
    test.push_back(make_instance(fmt::format("test-{:03}", i), config, engine));
  return {Dataset("synthetic-train", std::move(train)), Dataset("synthetic-test", std::move(test))};
}

}  // namespace sentimtl
