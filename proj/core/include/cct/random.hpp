#pragma once

// Seeded generators for attention parameters and sentences, used by the
// invariant checks, tests and benchmarks.

#include <cstdint>
#include <random>

#include "cct/attention.hpp"
#include "cct/continuous_sequence.hpp"

namespace cct {

struct AttentionShape {
  int d_model = 16;
  int head_count = 2;
  int head_dim = 8;
};

MatrixF random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev);

/// N(0, stddev^2) entries; stddev defaults to 1/sqrt(d_model), giving O(1)
/// logits for unit-scale inputs.
AttentionParams random_attention_params(std::mt19937_64& rng, const AttentionShape& shape,
                                        double stddev = 0.0);

/// T spans of N(0, 1) embeddings with durations uniform in [min_duration,
/// max_duration]. Equal bounds give constant durations.
StepwiseSentence random_sentence(std::mt19937_64& rng, std::size_t spans, int d_model,
                                 double min_duration, double max_duration, double origin = 0.0);

}  // namespace cct
