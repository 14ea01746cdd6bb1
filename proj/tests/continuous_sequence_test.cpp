#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "cct/continuous_sequence.hpp"
#include "cct/random.hpp"

namespace {

using cct::StepwiseSentence;
using cct::TokenSpan;

StepwiseSentence unit_sentence(std::size_t n, std::size_t dim = 2) {
  std::vector<std::vector<float>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.emplace_back(dim, static_cast<float>(i));
  return cct::from_embeddings(rows);
}

StepwiseSentence with_durations(const std::vector<double>& durations, double origin = 0.0) {
  std::vector<TokenSpan> spans;
  for (double d : durations) spans.push_back({{1.0f, -1.0f}, d});
  return StepwiseSentence(spans, origin);
}

void expect_contiguous(const StepwiseSentence& s) {
  EXPECT_EQ(s.audit(), "");
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    EXPECT_EQ(s.interval_end(i), s.interval_start(i + 1));
  }
}

TEST(FromEmbeddings, UnitIntervals) {
  const auto s = cct::from_embeddings({{1, 2}, {3, 4}, {5, 6}});
  ASSERT_EQ(s.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(s.interval_start(i), static_cast<double>(i));
    EXPECT_EQ(s.interval_end(i), static_cast<double>(i + 1));
  }
  EXPECT_EQ(s.origin(), 0.0);
  expect_contiguous(s);
}

TEST(FromEmbeddings, RejectsEmptyAndRagged) {
  EXPECT_THROW(cct::from_embeddings({}), std::invalid_argument);
  EXPECT_THROW(cct::from_embeddings({{1, 2}, {3}}), std::invalid_argument);
  EXPECT_THROW(cct::from_embeddings({{}}), std::invalid_argument);
}

TEST(Sentence, RejectsBadSpans) {
  EXPECT_THROW(with_durations({1.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(with_durations({1.0, -2.0}), std::invalid_argument);
  EXPECT_THROW(with_durations({1.0, NAN}), std::invalid_argument);
  EXPECT_THROW(with_durations({1.0}, -1.0), std::invalid_argument);
  EXPECT_THROW(StepwiseSentence({{{1.0f, INFINITY}, 1.0}}), std::invalid_argument);
}

TEST(Sentence, SpanAtElapsedIsRightClosed) {
  const auto s = with_durations({0.5, 1.0, 2.0});
  EXPECT_EQ(s.span_at_elapsed(0.25), 0u);
  EXPECT_EQ(s.span_at_elapsed(0.5), 0u);
  EXPECT_EQ(s.span_at_elapsed(0.5000001), 1u);
  EXPECT_EQ(s.span_at_elapsed(1.5), 1u);
  EXPECT_EQ(s.span_at_elapsed(3.5), 2u);
  EXPECT_THROW((void)s.span_at_elapsed(0.0), std::out_of_range);
  EXPECT_THROW((void)s.span_at_elapsed(3.6), std::out_of_range);
}

TEST(Shrink, SelectAllHalves) {
  const auto s = cct::shrink(unit_sentence(4), {0, 3}, 0.5);
  for (double d : s.durations()) EXPECT_EQ(d, 0.5);
  EXPECT_EQ(s.total_length(), 2.0);
}

TEST(Shrink, FactorOneIsIdentity) {
  const auto s = with_durations({0.3, 1.7, 0.9}, 2.0);
  EXPECT_EQ(cct::shrink(s, {0, 2}, 1.0), s);
}

TEST(Shrink, MiddleSelectionMatchesLoop) {
  const auto s = unit_sentence(4);
  const auto shrunk = cct::shrink(s, {1, 2}, 0.25);
  std::vector<double> expected;
  for (std::size_t i = 0; i < s.size(); ++i) expected.push_back(i >= 1 && i <= 2 ? 0.25 : 1.0);
  EXPECT_EQ(shrunk.durations(), expected);
  expect_contiguous(shrunk);
}

TEST(Shrink, RejectsBadArguments) {
  const auto s = unit_sentence(3);
  EXPECT_THROW(cct::shrink(s, {0, 2}, 0.0), std::invalid_argument);
  EXPECT_THROW(cct::shrink(s, {0, 2}, 1.5), std::invalid_argument);
  EXPECT_THROW(cct::shrink(s, {0, 3}, 0.5), std::out_of_range);
  EXPECT_THROW(cct::shrink(s, {2, 1}, 0.5), std::out_of_range);
}

TEST(Shift, OffsetsIntervals) {
  const auto s = cct::shift(unit_sentence(2), 3.0);
  EXPECT_EQ(s.interval_start(0), 3.0);
  EXPECT_EQ(s.interval_end(0), 4.0);
  EXPECT_EQ(s.interval_start(1), 4.0);
  EXPECT_EQ(s.interval_end(1), 5.0);
  EXPECT_EQ(cct::shift(unit_sentence(2), 0.0), unit_sentence(2));
  EXPECT_THROW(cct::shift(unit_sentence(2), -1.0), std::invalid_argument);
}

TEST(Scale, MultipliesDurationsAndOrigin) {
  const auto s = cct::scale(unit_sentence(3), 2.0);
  EXPECT_EQ(s.durations(), (std::vector<double>{2, 2, 2}));
  EXPECT_EQ(s.total_length(), 6.0);
  const auto shifted = cct::scale(cct::shift(unit_sentence(2), 3.0), 0.5);
  EXPECT_EQ(shifted.origin(), 1.5);
  EXPECT_EQ(cct::scale(unit_sentence(3), 1.0), unit_sentence(3));
  EXPECT_THROW(cct::scale(unit_sentence(3), 0.0), std::invalid_argument);
}

TEST(Interpolate, EndpointsAndMidpoint) {
  const auto a = cct::from_embeddings({{2, 0}});
  const auto b = cct::from_embeddings({{0, 2}});
  EXPECT_EQ(cct::interpolate(a, b, 0.0), a);
  EXPECT_EQ(cct::interpolate(a, b, 1.0), b);
  const auto mid = cct::interpolate(a, b, 0.5);
  EXPECT_EQ(mid.span(0).embedding, (std::vector<float>{1, 1}));
}

TEST(Interpolate, RejectsMismatch) {
  const auto a = unit_sentence(3);
  EXPECT_THROW(cct::interpolate(a, unit_sentence(2), 0.5), std::invalid_argument);
  EXPECT_THROW(cct::interpolate(a, cct::shrink(a, {0, 0}, 0.5), 0.5), std::invalid_argument);
  EXPECT_THROW(cct::interpolate(a, cct::shift(a, 1.0), 0.5), std::invalid_argument);
  EXPECT_THROW(cct::interpolate(a, a, 1.5), std::invalid_argument);
}

TEST(Positions, PrefixSums) {
  EXPECT_EQ(cct::positions(unit_sentence(4)), (std::vector<double>{0, 1, 2, 3}));
  EXPECT_EQ(cct::positions(with_durations({0.5, 0.5, 1.0})), (std::vector<double>{0, 0.5, 1.0}));
  EXPECT_EQ(cct::positions(cct::shift(unit_sentence(3), 3.0)), (std::vector<double>{3, 4, 5}));
}

// Properties over random sentences.

TEST(SequenceProperties, EditsStayContiguousAndPositionsIncrease) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.05, 1.0);
  for (int c = 0; c < 200; ++c) {
    const auto s = cct::random_sentence(rng, 1 + c % 12, 4, 0.01, 3.0, c % 3);
    const std::size_t lo = static_cast<std::size_t>(c) % s.size();
    const auto edited = cct::shift(cct::scale(cct::shrink(s, {lo, s.size() - 1}, unit(rng)),
                                              unit(rng) * 3.0),
                                   unit(rng) * 10.0);
    expect_contiguous(edited);
    const auto p = cct::positions(edited);
    for (std::size_t i = 0; i + 1 < p.size(); ++i) EXPECT_LT(p[i], p[i + 1]);
    // Interval starts come from one prefix sum, not incremental edits.
    double acc = 0.0;
    for (std::size_t i = 0; i < edited.size(); ++i) {
      EXPECT_EQ(p[i], edited.origin() + acc);
      acc += edited.span(i).duration;
    }
  }
}

TEST(SequenceProperties, ShrinkComposes) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> factor(0.1, 1.0);
  for (int c = 0; c < 200; ++c) {
    const auto s = cct::random_sentence(rng, 2 + c % 8, 3, 0.1, 2.0);
    const cct::SpanSelector sel{0, static_cast<std::size_t>(c) % s.size()};
    const double f1 = factor(rng), f2 = factor(rng);
    const auto once = cct::shrink(s, sel, f1 * f2);
    const auto twice = cct::shrink(cct::shrink(s, sel, f1), sel, f2);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double a = once.span(i).duration, b = twice.span(i).duration;
      EXPECT_LE(std::abs(a - b), 1e-12 * std::abs(a));
    }
  }
}

TEST(SequenceProperties, InterpolationIsAffineInDouble) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> alpha(0.0, 1.0);
  for (int c = 0; c < 100; ++c) {
    const auto a = cct::random_sentence(rng, 5, 6, 1.0, 1.0);
    const auto b = cct::random_sentence(rng, 5, 6, 1.0, 1.0);
    const double t = alpha(rng);
    const auto mixed = cct::interpolate(a, b, t);
    for (std::size_t s = 0; s < a.size(); ++s) {
      for (std::size_t i = 0; i < a.dim(); ++i) {
        const double lo = a.span(s).embedding[i], hi = b.span(s).embedding[i];
        EXPECT_EQ(mixed.span(s).embedding[i], static_cast<float>(lo + t * (hi - lo)));
      }
      EXPECT_EQ(mixed.span(s).duration, a.span(s).duration);
    }
  }
}

TEST(PromptJson, RoundTripAndExclusivity) {
  const auto doc = nlohmann::json::parse(R"({"origin": 1.5, "spans": [
      {"token_id": 3, "duration": 0.5, "embedding": null},
      {"token_id": null, "duration": 2.0, "embedding": [0.25, -1.0]}]})");
  const auto prompt = cct::PromptDocument::from_json(doc);
  ASSERT_EQ(prompt.spans.size(), 2u);
  EXPECT_EQ(prompt.origin, 1.5);
  EXPECT_EQ(prompt.spans[0].token_id, 3);
  EXPECT_EQ(prompt.spans[1].embedding, (std::vector<float>{0.25f, -1.0f}));
  EXPECT_EQ(cct::PromptDocument::from_json(prompt.to_json()).to_json(), prompt.to_json());

  EXPECT_ANY_THROW(cct::PromptDocument::from_json(nlohmann::json::parse(
      R"({"origin": 0, "spans": [{"token_id": 1, "duration": 1, "embedding": [1.0]}]})")));
  EXPECT_ANY_THROW(cct::PromptDocument::from_json(nlohmann::json::parse(
      R"({"origin": 0, "spans": [{"token_id": null, "duration": 1, "embedding": null}]})")));
  EXPECT_ANY_THROW(cct::PromptDocument::from_json(nlohmann::json::parse(
      R"({"origin": 0, "spans": [{"token_id": 1, "duration": 0}]})")));
}

}  // namespace
