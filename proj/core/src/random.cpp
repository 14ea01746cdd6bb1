#include "cct/random.hpp"

#include <cmath>

namespace cct {

MatrixF random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> normal(0.0, stddev);
  MatrixF m(rows, cols);
  for (auto& v : m.data()) v = static_cast<float>(normal(rng));
  return m;
}

AttentionParams random_attention_params(std::mt19937_64& rng, const AttentionShape& shape,
                                        double stddev) {
  if (stddev <= 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(shape.d_model));
  AttentionParams p;
  p.d_model = shape.d_model;
  p.head_count = shape.head_count;
  p.head_dim = shape.head_dim;
  const auto hd = static_cast<std::size_t>(shape.head_dim);
  const auto dm = static_cast<std::size_t>(shape.d_model);
  for (int h = 0; h < shape.head_count; ++h) {
    p.w_q.push_back(random_matrix(rng, hd, dm, stddev));
    p.w_k.push_back(random_matrix(rng, hd, dm, stddev));
    p.w_v.push_back(random_matrix(rng, hd, dm, stddev));
  }
  const double o_std = 1.0 / std::sqrt(static_cast<double>(hd * shape.head_count));
  p.w_o = random_matrix(rng, dm, hd * static_cast<std::size_t>(shape.head_count), o_std);
  return p;
}

StepwiseSentence random_sentence(std::mt19937_64& rng, std::size_t spans, int d_model,
                                 double min_duration, double max_duration, double origin) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(min_duration, max_duration);
  std::vector<TokenSpan> out(spans);
  for (auto& s : out) {
    s.embedding.resize(static_cast<std::size_t>(d_model));
    for (auto& v : s.embedding) v = static_cast<float>(normal(rng));
    s.duration = min_duration == max_duration ? min_duration : uniform(rng);
  }
  return StepwiseSentence{std::move(out), origin};
}

}  // namespace cct
