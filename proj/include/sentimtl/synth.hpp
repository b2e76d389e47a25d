#pragma once

#include <cstddef>
#include <cstdint>

#include "sentimtl/data.hpp"

namespace sentimtl {

/// Generator settings for the toy sentiment corpus.
///
/// Every sentence holds a target word, some filler words and one polarity
/// carrier: an opinion word (explicit slice) or a cue word with no lexical
/// sentiment (implicit slice). Each cue word is tied to an opinion word of
/// its polarity. The generated opinion element is that opinion word and
/// the aspect element is the target; with probability `noise` an element
/// is replaced by a wrong one and gets a low confidence.
struct SynthConfig {
  std::size_t n_train = 200;
  std::size_t n_test = 100;
  std::uint64_t seed = 2024;
  double implicit_fraction = 0.4;
  double noise = 0.3;
  std::size_t min_filler = 3;
  std::size_t max_filler = 6;
  /// Confidence ranges [lo, hi) for clean and noisy elements.
  double clean_lo = 0.8, clean_hi = 1.0;
  double noisy_lo = 0.5, noisy_hi = 0.75;
};

struct SynthData {
  Dataset train;
  Dataset test;
};

/// Deterministic in `config`. Test instances carry generated elements too,
/// so they can be fed to any strategy, but only polarity is scored.
SynthData generate_synthetic(const SynthConfig& config = {});

}  // namespace sentimtl
