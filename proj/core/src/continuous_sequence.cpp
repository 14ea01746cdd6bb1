#include "cct/continuous_sequence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace cct {

namespace {

std::vector<double> prefix_sums(const std::vector<TokenSpan>& spans) {
  std::vector<double> prefix(spans.size() + 1, 0.0);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    prefix[i + 1] = prefix[i] + spans[i].duration;
  }
  return prefix;
}

}  // namespace

StepwiseSentence::StepwiseSentence(std::vector<TokenSpan> spans, double origin)
    : spans_{std::move(spans)}, origin_{origin} {
  if (spans_.empty()) {
    throw std::invalid_argument("sentence must contain at least one span");
  }
  if (!std::isfinite(origin_) || origin_ < 0.0) {
    throw std::invalid_argument("sentence origin must be finite and >= 0");
  }
  const std::size_t d = spans_.front().embedding.size();
  if (d == 0) {
    throw std::invalid_argument("span embeddings must be non-empty");
  }
  for (std::size_t i = 0; i < spans_.size(); ++i) {
    const auto& s = spans_[i];
    if (s.embedding.size() != d) {
      throw std::invalid_argument("span " + std::to_string(i) + " has embedding dimension " +
                                  std::to_string(s.embedding.size()) + ", expected " +
                                  std::to_string(d));
    }
    if (!(s.duration > 0.0) || !std::isfinite(s.duration)) {
      throw std::invalid_argument("span " + std::to_string(i) +
                                  " has non-positive or non-finite duration");
    }
    if (!std::all_of(s.embedding.begin(), s.embedding.end(),
                     [](float v) { return std::isfinite(v); })) {
      throw std::invalid_argument("span " + std::to_string(i) + " has a non-finite embedding");
    }
  }
  prefix_ = prefix_sums(spans_);
  if (!std::isfinite(prefix_.back())) {
    throw std::invalid_argument("sentence total length overflows");
  }
}

std::vector<double> StepwiseSentence::durations() const {
  std::vector<double> out;
  out.reserve(spans_.size());
  for (const auto& s : spans_) out.push_back(s.duration);
  return out;
}

std::size_t StepwiseSentence::span_at_elapsed(double t) const {
  if (!(t > 0.0) || t > total_length()) {
    throw std::out_of_range("time " + std::to_string(t) + " outside (0, " +
                            std::to_string(total_length()) + "]");
  }
  // First boundary P_{s+1} >= t.
  const auto it = std::lower_bound(prefix_.begin() + 1, prefix_.end(), t);
  return static_cast<std::size_t>(it - prefix_.begin()) - 1;
}

std::string StepwiseSentence::audit() const {
  for (std::size_t i = 0; i < spans_.size(); ++i) {
    if (!(spans_[i].duration > 0.0)) return "non-positive duration at span " + std::to_string(i);
    if (i + 1 < spans_.size() && interval_end(i) != interval_start(i + 1)) {
      return "gap between spans " + std::to_string(i) + " and " + std::to_string(i + 1);
    }
    if (!(interval_end(i) > interval_start(i))) {
      return "empty interval at span " + std::to_string(i);
    }
  }
  return {};
}

bool operator==(const TokenSpan& a, const TokenSpan& b) {
  return a.duration == b.duration && a.embedding == b.embedding;
}

bool operator==(const StepwiseSentence& a, const StepwiseSentence& b) {
  return a.origin_ == b.origin_ && a.spans_ == b.spans_;
}

StepwiseSentence from_embeddings(const std::vector<std::vector<float>>& embeddings) {
  if (embeddings.empty()) {
    throw std::invalid_argument("from_embeddings: empty embedding list");
  }
  std::vector<TokenSpan> spans;
  spans.reserve(embeddings.size());
  for (const auto& e : embeddings) spans.push_back({e, 1.0});
  return StepwiseSentence{std::move(spans)};
}

StepwiseSentence shrink(const StepwiseSentence& sentence, SpanSelector selector, double factor) {
  if (!(factor > 0.0) || factor > 1.0) {
    throw std::invalid_argument("shrink factor must lie in (0, 1]");
  }
  if (selector.start_index > selector.end_index || selector.end_index >= sentence.size()) {
    throw std::out_of_range("shrink selector [" + std::to_string(selector.start_index) + ", " +
                            std::to_string(selector.end_index) + "] outside sentence of " +
                            std::to_string(sentence.size()) + " spans");
  }
  auto spans = sentence.spans();
  for (std::size_t i = selector.start_index; i <= selector.end_index; ++i) {
    spans[i].duration *= factor;
  }
  return StepwiseSentence{std::move(spans), sentence.origin()};
}

StepwiseSentence shift(const StepwiseSentence& sentence, double delta) {
  if (!(delta >= 0.0) || !std::isfinite(delta)) {
    throw std::invalid_argument("shift delta must be finite and >= 0");
  }
  return StepwiseSentence{sentence.spans(), sentence.origin() + delta};
}

StepwiseSentence scale(const StepwiseSentence& sentence, double c) {
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw std::invalid_argument("scale factor must be finite and > 0");
  }
  auto spans = sentence.spans();
  for (auto& s : spans) s.duration *= c;
  return StepwiseSentence{std::move(spans), sentence.origin() * c};
}

StepwiseSentence interpolate(const StepwiseSentence& a, const StepwiseSentence& b, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("interpolation alpha must lie in [0, 1]");
  }
  if (a.size() != b.size()) {
    throw std::invalid_argument("interpolate: span counts differ (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("interpolate: embedding dimensions differ");
  }
  if (a.origin() != b.origin()) {
    throw std::invalid_argument("interpolate: origins differ");
  }
  auto spans = a.spans();
  for (std::size_t s = 0; s < spans.size(); ++s) {
    if (a.span(s).duration != b.span(s).duration) {
      throw std::invalid_argument("interpolate: durations differ at span " + std::to_string(s));
    }
    const auto& eb = b.span(s).embedding;
    auto& e = spans[s].embedding;
    for (std::size_t j = 0; j < e.size(); ++j) {
      const double lo = e[j];
      const double hi = eb[j];
      // alpha == 1 reproduces b exactly even when hi - lo rounds.
      e[j] = alpha == 1.0 ? eb[j] : static_cast<float>(lo + alpha * (hi - lo));
    }
  }
  return StepwiseSentence{std::move(spans), a.origin()};
}

std::vector<double> positions(const StepwiseSentence& sentence) {
  std::vector<double> out(sentence.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sentence.interval_start(i);
  return out;
}

// ---------------------------------------------------------------------------

PromptDocument PromptDocument::from_json(const nlohmann::json& doc) {
  PromptDocument out;
  if (!doc.is_object() || !doc.contains("spans") || !doc["spans"].is_array()) {
    throw std::invalid_argument("prompt document must be an object with a \"spans\" array");
  }
  out.origin = doc.value("origin", 0.0);
  for (const auto& s : doc["spans"]) {
    PromptSpan span;
    const bool has_id = s.contains("token_id") && !s["token_id"].is_null();
    const bool has_embedding = s.contains("embedding") && !s["embedding"].is_null();
    if (has_id == has_embedding) {
      throw std::invalid_argument("each span needs exactly one of token_id or embedding");
    }
    if (has_id) span.token_id = s["token_id"].get<int>();
    if (has_embedding) span.embedding = s["embedding"].get<std::vector<float>>();
    span.duration = s.value("duration", 1.0);
    if (!(span.duration > 0.0) || !std::isfinite(span.duration)) {
      throw std::invalid_argument("span duration must be positive and finite");
    }
    out.spans.push_back(std::move(span));
  }
  if (out.spans.empty()) {
    throw std::invalid_argument("prompt document has no spans");
  }
  return out;
}

PromptDocument PromptDocument::from_token_ids(std::span<const int> ids) {
  PromptDocument out;
  for (int id : ids) out.spans.push_back({id, std::nullopt, 1.0});
  return out;
}

nlohmann::json PromptDocument::to_json() const {
  nlohmann::json spans_json = nlohmann::json::array();
  for (const auto& s : spans) {
    nlohmann::json j;
    j["token_id"] = s.token_id ? nlohmann::json(*s.token_id) : nlohmann::json(nullptr);
    j["embedding"] = s.embedding ? nlohmann::json(*s.embedding) : nlohmann::json(nullptr);
    j["duration"] = s.duration;
    spans_json.push_back(std::move(j));
  }
  return {{"origin", origin}, {"spans", std::move(spans_json)}};
}

PromptDocument load_prompt(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prompt file " + path);
  try {
    return PromptDocument::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("prompt file " + path + ": " + e.what());
  }
}

nlohmann::json sentence_to_json(const StepwiseSentence& sentence) {
  PromptDocument doc;
  doc.origin = sentence.origin();
  for (const auto& s : sentence.spans()) doc.spans.push_back({std::nullopt, s.embedding, s.duration});
  return doc.to_json();
}

}  // namespace cct
