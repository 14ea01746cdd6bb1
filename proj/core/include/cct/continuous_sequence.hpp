#pragma once

// Sentences as stepwise-constant functions of time.
//
// A sentence is an ordered list of spans. Span s holds embedding x_s on the
// half-open interval [origin + P_s, origin + P_{s+1}) where P is the prefix
// sum of durations. Interval bounds are always recomputed from the prefix
// sums, so consecutive spans share their boundary exactly.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace cct {

struct TokenSpan {
  std::vector<float> embedding;
  double duration = 1.0;
};

struct SpanSelector {
  std::size_t start_index = 0;
  std::size_t end_index = 0;  // inclusive
};

struct InterpolationSpec {
  double alpha = 0.0;
  int step_count = 40;
};

class StepwiseSentence {
 public:
  /// Throws std::invalid_argument on empty spans, ragged or non-finite
  /// embeddings, non-positive durations, or a negative origin.
  explicit StepwiseSentence(std::vector<TokenSpan> spans, double origin = 0.0);

  [[nodiscard]] std::size_t size() const noexcept { return spans_.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return spans_.front().embedding.size(); }
  [[nodiscard]] double origin() const noexcept { return origin_; }
  [[nodiscard]] const std::vector<TokenSpan>& spans() const noexcept { return spans_; }
  [[nodiscard]] const TokenSpan& span(std::size_t i) const { return spans_.at(i); }

  [[nodiscard]] std::vector<double> durations() const;
  [[nodiscard]] double total_length() const noexcept { return prefix_.back(); }

  /// Elapsed time from the origin to the start of span i (i may equal size()).
  [[nodiscard]] double elapsed_before(std::size_t i) const { return prefix_.at(i); }
  [[nodiscard]] double interval_start(std::size_t i) const { return origin_ + prefix_.at(i); }
  [[nodiscard]] double interval_end(std::size_t i) const { return origin_ + prefix_.at(i + 1); }

  /// Index of the span whose interval (a, b] contains elapsed time t, with
  /// t measured from the origin. Throws std::out_of_range outside (0, L].
  [[nodiscard]] std::size_t span_at_elapsed(double t) const;

  /// Checks contiguity and positivity; returns an empty string when valid.
  [[nodiscard]] std::string audit() const;

  friend bool operator==(const StepwiseSentence&, const StepwiseSentence&);

 private:
  std::vector<TokenSpan> spans_;
  double origin_ = 0.0;
  std::vector<double> prefix_;  // size() + 1 entries, prefix_[0] == 0
};

bool operator==(const TokenSpan& a, const TokenSpan& b);

/// Unit durations, origin 0.
StepwiseSentence from_embeddings(const std::vector<std::vector<float>>& embeddings);

/// Multiplies the durations of the selected spans by factor in (0, 1].
StepwiseSentence shrink(const StepwiseSentence& sentence, SpanSelector selector, double factor);

/// Moves the origin forward by delta >= 0.
StepwiseSentence shift(const StepwiseSentence& sentence, double delta);

/// Multiplies every duration and the origin by c > 0.
StepwiseSentence scale(const StepwiseSentence& sentence, double c);

/// Span-wise (1 - alpha) a + alpha b. Requires identical span counts,
/// durations and origin.
StepwiseSentence interpolate(const StepwiseSentence& a, const StepwiseSentence& b, double alpha);

/// Interval start of every span: origin + sum of preceding durations.
std::vector<double> positions(const StepwiseSentence& sentence);

// ---------------------------------------------------------------------------
// Exchange format
//
//   {"origin": 0.0,
//    "spans": [{"token_id": 3, "duration": 1.0, "embedding": null}, ...]}
//
// Exactly one of token_id / embedding is non-null per span. Token ids are
// resolved against a model's embedding table (see cct::Model::resolve).

struct PromptSpan {
  std::optional<int> token_id;
  std::optional<std::vector<float>> embedding;
  double duration = 1.0;
};

struct PromptDocument {
  double origin = 0.0;
  std::vector<PromptSpan> spans;

  [[nodiscard]] static PromptDocument from_json(const nlohmann::json& doc);
  [[nodiscard]] static PromptDocument from_token_ids(std::span<const int> ids);
  [[nodiscard]] nlohmann::json to_json() const;
};

PromptDocument load_prompt(const std::string& path);

nlohmann::json sentence_to_json(const StepwiseSentence& sentence);

}  // namespace cct
