#include "cct/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <nlohmann/json.hpp>

#include "cct/parallel.hpp"

namespace cct {

namespace {

constexpr std::pair<SweepKind, const char*> kSweepKinds[] = {
    {SweepKind::shrink, "shrink"},
    {SweepKind::interpolate, "interpolate"},
    {SweepKind::shift, "shift"},
    {SweepKind::scale, "scale"}};

void require_monotone(const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("sweep grid is empty");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw std::invalid_argument("sweep grid must be strictly increasing");
    }
  }
}

template <class MakeSentence>
SweepRecord run_points(SweepKind kind, const SweepContext& ctx, const std::vector<double>& grid,
                       MakeSentence&& make_sentence) {
  require_monotone(grid);
  ctx.labels.validate(ctx.model.config().vocab_size);
  SweepRecord record;
  record.kind = kind;
  record.prompt_id = ctx.prompt_id;
  record.grid = grid;
  record.labels = ctx.labels.names();
  record.rows.resize(grid.size());
  record.other.resize(grid.size());
  parallel_for(grid.size(), ctx.workers, [&](std::size_t i) {
    try {
      const auto out = ctx.model.forward_continuous(make_sentence(grid[i]));
      auto table = next_token_distribution(out, &ctx.labels);
      record.rows[i] = std::move(table.label_probs);
      record.other[i] = table.other;
    } catch (const std::exception& e) {
      throw std::runtime_error(to_string(kind) + " sweep at grid value " + format_number(grid[i]) +
                               ": " + e.what());
    }
  });
  record.validate();
  return record;
}

std::vector<double> column(const SweepRecord& r, std::size_t j) {
  std::vector<double> out;
  out.reserve(r.rows.size());
  for (const auto& row : r.rows) out.push_back(row[j]);
  return out;
}

std::optional<int> as_integer(const std::string& s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

int leading_digit(int v) {
  v = std::abs(v);
  while (v >= 10) v /= 10;
  return v;
}

nlohmann::json fraction_json(const Fraction& f) {
  return {{"numerator", f.numerator}, {"denominator", f.denominator}, {"value", f.value()}};
}

Fraction fraction_from_json(const nlohmann::json& j) {
  return {j.at("numerator").get<std::int64_t>(), j.at("denominator").get<std::int64_t>()};
}

}  // namespace

std::string to_string(SweepKind kind) {
  for (const auto& [k, name] : kSweepKinds) {
    if (k == kind) return name;
  }
  return "?";
}

SweepKind parse_sweep_kind(const std::string& text) {
  for (const auto& [k, name] : kSweepKinds) {
    if (text == name) return k;
  }
  throw std::invalid_argument("unknown sweep kind '" + text + "'");
}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_number failed");
  return {buf, ptr};
}

// ---------------------------------------------------------------------------

std::size_t SweepRecord::label_index(const std::string& name) const {
  const auto it = std::find(labels.begin(), labels.end(), name);
  if (it == labels.end()) throw std::invalid_argument("record has no label '" + name + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

void SweepRecord::validate() const {
  require_monotone(grid);
  if (!valid()) return;
  if (rows.size() != grid.size() || other.size() != grid.size()) {
    throw std::invalid_argument("sweep record needs one probability row per grid point");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != labels.size()) {
      throw std::invalid_argument("sweep row " + std::to_string(i) + " has the wrong width");
    }
    for (double p : rows[i]) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("sweep row " + std::to_string(i) + " has a mass outside [0, 1]");
      }
    }
    if (!(other[i] >= 0.0 && other[i] <= 1.0)) {
      throw std::invalid_argument("sweep residual mass outside [0, 1]");
    }
  }
}

nlohmann::json SweepRecord::to_json() const {
  return {{"format", kFormatVersion},
          {"sweep_kind", to_string(kind)},
          {"prompt_id", prompt_id},
          {"grid", grid},
          {"labels", labels},
          {"rows", rows},
          {"other", other},
          {"skip_reason", skip_reason ? nlohmann::json(*skip_reason) : nlohmann::json(nullptr)}};
}

SweepRecord SweepRecord::from_json(const nlohmann::json& doc) {
  if (doc.value("format", 0) != kFormatVersion) {
    throw std::invalid_argument("unsupported sweep record format");
  }
  SweepRecord r;
  r.kind = parse_sweep_kind(doc.at("sweep_kind").get<std::string>());
  r.prompt_id = doc.at("prompt_id").get<std::string>();
  r.grid = doc.at("grid").get<std::vector<double>>();
  r.labels = doc.at("labels").get<std::vector<std::string>>();
  r.rows = doc.at("rows").get<std::vector<std::vector<double>>>();
  r.other = doc.at("other").get<std::vector<double>>();
  if (!doc.at("skip_reason").is_null()) r.skip_reason = doc.at("skip_reason").get<std::string>();
  r.validate();
  return r;
}

std::string SweepRecord::to_csv() const {
  std::string out = "sweep_value";
  for (const auto& l : labels) out += "," + l;
  out += ",other\n";
  if (!valid()) return out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out += format_number(grid[i]);
    for (double p : rows[i]) out += "," + format_number(p);
    out += "," + format_number(other[i]) + "\n";
  }
  return out;
}

std::vector<double> default_shrink_grid() {
  std::vector<double> g;
  for (int i = 2; i <= 20; ++i) g.push_back(static_cast<double>(i) / 20.0);
  return g;
}

std::vector<double> default_shift_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(static_cast<double>(i));
  return g;
}

std::vector<double> default_scale_grid() {
  std::vector<double> g;
  for (int i = 2; i <= 8; ++i) g.push_back(static_cast<double>(i) / 4.0);
  return g;
}

std::vector<double> interpolation_grid(int steps) {
  if (steps < 1) throw std::invalid_argument("interpolation needs at least one step");
  std::vector<double> g;
  for (int i = 0; i <= steps; ++i) g.push_back(static_cast<double>(i) / steps);
  return g;
}

SweepRecord run_shrink_sweep(const SweepContext& ctx, const StepwiseSentence& prompt,
                             SpanSelector selector, const std::vector<double>& grid) {
  if (selector.start_index > selector.end_index || selector.end_index >= prompt.size()) {
    throw std::out_of_range("shrink selector outside prompt of " + std::to_string(prompt.size()) +
                            " spans");
  }
  return run_points(SweepKind::shrink, ctx, grid,
                    [&](double phi) { return shrink(prompt, selector, phi); });
}

SweepRecord run_interpolation_sweep(const SweepContext& ctx, const StepwiseSentence& prompt_a,
                                    const StepwiseSentence& prompt_b, int steps) {
  const auto grid = interpolation_grid(steps);
  std::optional<std::string> reason;
  if (prompt_a.size() != prompt_b.size()) {
    reason = "different tokenized lengths (" + std::to_string(prompt_a.size()) + " vs " +
             std::to_string(prompt_b.size()) + ")";
  } else if (prompt_a.durations() != prompt_b.durations()) {
    reason = "span durations differ";
  } else if (prompt_a.origin() != prompt_b.origin()) {
    reason = "origins differ";
  } else if (prompt_a.dim() != prompt_b.dim()) {
    reason = "embedding dimensions differ";
  }
  if (reason) {
    SweepRecord skipped;
    skipped.kind = SweepKind::interpolate;
    skipped.prompt_id = ctx.prompt_id;
    skipped.grid = grid;
    skipped.labels = ctx.labels.names();
    skipped.skip_reason = std::move(reason);
    return skipped;
  }
  return run_points(SweepKind::interpolate, ctx, grid,
                    [&](double alpha) { return interpolate(prompt_a, prompt_b, alpha); });
}

SweepRecord run_shift_sweep(const SweepContext& ctx, const StepwiseSentence& prompt,
                            const std::vector<double>& grid) {
  return run_points(SweepKind::shift, ctx, grid,
                    [&](double delta) { return shift(prompt, delta); });
}

SweepRecord run_scale_sweep(const SweepContext& ctx, const StepwiseSentence& prompt,
                            const std::vector<double>& grid) {
  return run_points(SweepKind::scale, ctx, grid, [&](double c) { return scale(prompt, c); });
}

// ---------------------------------------------------------------------------

Fraction::Fraction(std::int64_t num, std::int64_t den) {
  if (den <= 0) throw std::invalid_argument("fraction denominator must be positive");
  const auto g = std::gcd(num, den);
  numerator = g == 0 ? 0 : num / g;
  denominator = g == 0 ? 1 : den / g;
}

std::vector<std::string> top_labels(const SweepRecord& record,
                                    const std::vector<std::string>& numeric_labels) {
  if (numeric_labels.empty()) throw std::invalid_argument("numeric label set is empty");
  if (!record.valid() || record.rows.empty()) {
    throw std::invalid_argument("peak analysis needs a non-empty valid record");
  }
  std::vector<std::size_t> idx;
  for (const auto& l : numeric_labels) idx.push_back(record.label_index(l));
  std::vector<std::string> tops;
  for (const auto& row : record.rows) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < idx.size(); ++j) {
      if (row[idx[j]] > row[idx[best]]) best = j;
    }
    tops.push_back(numeric_labels[best]);
  }
  return tops;
}

std::vector<std::string> unique_relative_peaks(const SweepRecord& record,
                                               const std::vector<std::string>& numeric_labels) {
  std::vector<std::string> peaks;
  for (auto& top : top_labels(record, numeric_labels)) {
    if (std::find(peaks.begin(), peaks.end(), top) == peaks.end()) peaks.push_back(std::move(top));
  }
  return peaks;
}

Fraction normalized_peak_frequency(const std::vector<std::string>& peaks, int expected_count) {
  if (expected_count < 1) throw std::invalid_argument("expected peak count must be >= 1");
  return {static_cast<std::int64_t>(peaks.size()), expected_count};
}

Fraction expected_only_frequency(const std::vector<std::string>& peaks, int expected_count) {
  if (expected_count < 1) throw std::invalid_argument("expected peak count must be >= 1");
  std::int64_t k = 0;
  for (const auto& p : peaks) {
    const auto v = as_integer(p);
    if (v && *v >= 1 && *v <= expected_count) ++k;
  }
  return {k, expected_count};
}

Fraction counterfactual_frequency(int expected_count) {
  if (expected_count < 1) throw std::invalid_argument("expected peak count must be >= 1");
  return {1, expected_count};
}

PeakReport peak_report(const SweepRecord& record, const std::vector<std::string>& numeric_labels,
                       int expected_count) {
  PeakReport r;
  r.unique_relative_peaks = unique_relative_peaks(record, numeric_labels);
  r.expected_count = expected_count;
  r.normalized_frequency = normalized_peak_frequency(r.unique_relative_peaks, expected_count);
  r.expected_only_frequency = expected_only_frequency(r.unique_relative_peaks, expected_count);
  r.counterfactual_frequency = counterfactual_frequency(expected_count);
  return r;
}

// ---------------------------------------------------------------------------

SumLabels sum_labels(int lhs, int rhs, int shrunk_operand) {
  if (lhs < 0 || rhs < 0) throw std::invalid_argument("sum operands must be non-negative");
  if (shrunk_operand != 0 && shrunk_operand != 1) {
    throw std::invalid_argument("shrunk_operand must be 0 (lhs) or 1 (rhs)");
  }
  SumLabels out;
  out.original_label = leading_digit(lhs + rhs);
  const int shrunk = shrunk_operand == 0 ? lhs : rhs;
  const int kept = shrunk_operand == 0 ? rhs : lhs;
  std::vector<int> digits;
  for (char c : std::to_string(shrunk)) digits.push_back(c - '0');
  for (int d : digits) {
    const int label = leading_digit(kept + d);
    if (label == out.original_label) continue;
    if (std::find(out.shrunk_labels.begin(), out.shrunk_labels.end(), label) ==
        out.shrunk_labels.end()) {
      out.shrunk_labels.push_back(label);
    }
  }
  std::sort(out.shrunk_labels.begin(), out.shrunk_labels.end());
  return out;
}

SumsProperties sums_properties(const SumRecord& record) {
  const auto& sweep = record.sweep;
  if (!sweep.valid()) throw std::invalid_argument("sums record is skipped");
  std::vector<std::string> numeric;
  for (const auto& l : sweep.labels) {
    const auto v = as_integer(l);
    if (v && *v >= 0 && *v <= 9) numeric.push_back(l);
  }
  const auto original = std::to_string(record.original_label);
  std::set<std::string> shrunk;
  for (int d : record.shrunk_labels) {
    if (d != record.original_label) shrunk.insert(std::to_string(d));
  }
  if (shrunk.empty()) throw std::invalid_argument("sums record has no shrunk labels");
  const std::size_t orig_idx = sweep.label_index(original);
  for (const auto& s : shrunk) static_cast<void>(sweep.label_index(s));

  SumsProperties props;
  for (const auto& row : sweep.rows) {
    double shrunk_mass = 0.0;
    for (const auto& s : shrunk) shrunk_mass += row[sweep.label_index(s)];
    if (!(shrunk_mass > row[orig_idx])) continue;
    props.p1 = true;
    bool beats_all = true;
    for (const auto& l : numeric) {
      if (l == original || shrunk.count(l)) continue;
      if (!(shrunk_mass > row[sweep.label_index(l)])) beats_all = false;
    }
    if (beats_all) props.p2 = true;
  }
  if (props.p2) {
    bool third_never_top = true;
    for (const auto& top : top_labels(sweep, numeric)) {
      if (top != original && !shrunk.count(top)) third_never_top = false;
    }
    props.p3 = third_never_top;
  }
  return props;
}

// ---------------------------------------------------------------------------

InterpolationReport interpolation_metrics(const SweepRecord& record,
                                          const std::vector<std::string>& labels) {
  if (!record.valid()) throw std::invalid_argument("interpolation record is skipped");
  if (record.grid.size() < 3) throw std::invalid_argument("interpolation metrics need >= 3 points");
  InterpolationReport rep;
  rep.labels = labels.empty() ? record.labels : labels;
  const auto& x = record.grid;
  const std::size_t n = x.size();
  for (const auto& name : rep.labels) {
    const auto f = column(record, record.label_index(name));
    const double lo = std::min(f.front(), f.back());
    const double hi = std::max(f.front(), f.back());
    double m_diff = 0.0;
    for (double v : f) {
      if (v < lo) m_diff = std::max(m_diff, lo - v);
      if (v > hi) m_diff = std::max(m_diff, v - hi);
    }
    rep.m_diff.push_back(m_diff);

    double max_abs_derivative = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = i == 0 ? 0 : i - 1;
      const std::size_t b = i + 1 == n ? n - 1 : i + 1;
      max_abs_derivative = std::max(max_abs_derivative, std::abs((f[b] - f[a]) / (x[b] - x[a])));
    }
    const auto [fmin, fmax] = std::minmax_element(f.begin(), f.end());
    const double amplitude = *fmax - *fmin;
    rep.normalized_max_abs_derivative_per_label.push_back(
        amplitude < kAmplitudeFloor ? 0.0 : max_abs_derivative / amplitude);
  }
  rep.m_max = *std::max_element(rep.m_diff.begin(), rep.m_diff.end());
  rep.exceeds_threshold = rep.m_max >= kMMaxThreshold;
  rep.normalized_max_abs_derivative =
      *std::max_element(rep.normalized_max_abs_derivative_per_label.begin(),
                        rep.normalized_max_abs_derivative_per_label.end());
  return rep;
}

double max_deviation_from_baseline(const SweepRecord& record, double baseline_value) {
  if (!record.valid()) throw std::invalid_argument("record is skipped");
  const auto it = std::find(record.grid.begin(), record.grid.end(), baseline_value);
  if (it == record.grid.end()) {
    throw std::invalid_argument("grid does not contain the baseline value " +
                                format_number(baseline_value));
  }
  const auto b = static_cast<std::size_t>(it - record.grid.begin());
  double dev = 0.0;
  for (std::size_t i = 0; i < record.rows.size(); ++i) {
    for (std::size_t j = 0; j < record.labels.size(); ++j) {
      dev = std::max(dev, std::abs(record.rows[i][j] - record.rows[b][j]));
    }
    dev = std::max(dev, std::abs(record.other[i] - record.other[b]));
  }
  return dev;
}

// ---------------------------------------------------------------------------

nlohmann::json RecordMetrics::to_json() const {
  nlohmann::json j{{"format", kFormatVersion},
                   {"record_id", record_id},
                   {"model", model},
                   {"sweep_kind", to_string(kind)},
                   {"valid", valid()},
                   {"skip_reason", skip_reason ? nlohmann::json(*skip_reason) : nlohmann::json()}};
  if (counting) {
    j["counting"] = {{"expected_count", counting->expected_count},
                     {"unique_relative_peaks", counting->unique_relative_peaks},
                     {"normalized_frequency", fraction_json(counting->normalized_frequency)},
                     {"expected_only_frequency", fraction_json(counting->expected_only_frequency)},
                     {"counterfactual_frequency", fraction_json(counting->counterfactual_frequency)}};
  }
  if (sums) {
    j["sums"] = {{"original_label", sums->first.original_label},
                 {"shrunk_labels", sums->first.shrunk_labels},
                 {"P1", sums->second.p1},
                 {"P2", sums->second.p2},
                 {"P3", sums->second.p3}};
  }
  if (interpolation) {
    nlohmann::json m_diff = nlohmann::json::object();
    nlohmann::json deriv = nlohmann::json::object();
    for (std::size_t i = 0; i < interpolation->labels.size(); ++i) {
      m_diff[interpolation->labels[i]] = interpolation->m_diff[i];
      deriv[interpolation->labels[i]] = interpolation->normalized_max_abs_derivative_per_label[i];
    }
    j["interpolation"] = {{"labels", interpolation->labels},
                          {"m_diff", m_diff},
                          {"m_max", interpolation->m_max},
                          {"exceeds_threshold", interpolation->exceeds_threshold},
                          {"normalized_max_abs_derivative_per_label", deriv},
                          {"normalized_max_abs_derivative",
                           interpolation->normalized_max_abs_derivative}};
  }
  if (baseline_deviation) j["baseline_deviation"] = *baseline_deviation;
  return j;
}

RecordMetrics RecordMetrics::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("format")) {
    throw std::invalid_argument("metrics document has no \"format\" field");
  }
  const int format = doc.at("format").get<int>();
  if (format != kFormatVersion) {
    throw std::invalid_argument("metrics document format " + std::to_string(format) +
                                " is not supported (expected " + std::to_string(kFormatVersion) +
                                ")");
  }
  try {
    RecordMetrics m;
    m.record_id = doc.at("record_id").get<std::string>();
    m.model = doc.at("model").get<std::string>();
    m.kind = parse_sweep_kind(doc.at("sweep_kind").get<std::string>());
    if (!doc.at("skip_reason").is_null()) m.skip_reason = doc.at("skip_reason").get<std::string>();
    if (doc.contains("counting")) {
      const auto& c = doc.at("counting");
      PeakReport p;
      p.expected_count = c.at("expected_count").get<int>();
      p.unique_relative_peaks = c.at("unique_relative_peaks").get<std::vector<std::string>>();
      p.normalized_frequency = fraction_from_json(c.at("normalized_frequency"));
      p.expected_only_frequency = fraction_from_json(c.at("expected_only_frequency"));
      p.counterfactual_frequency = fraction_from_json(c.at("counterfactual_frequency"));
      m.counting = std::move(p);
    }
    if (doc.contains("sums")) {
      const auto& s = doc.at("sums");
      m.sums = std::pair{SumLabels{s.at("original_label").get<int>(),
                                   s.at("shrunk_labels").get<std::vector<int>>()},
                         SumsProperties{s.at("P1").get<bool>(), s.at("P2").get<bool>(),
                                        s.at("P3").get<bool>()}};
    }
    if (doc.contains("interpolation")) {
      const auto& i = doc.at("interpolation");
      InterpolationReport r;
      r.labels = i.at("labels").get<std::vector<std::string>>();
      for (const auto& l : r.labels) {
        r.m_diff.push_back(i.at("m_diff").at(l).get<double>());
        r.normalized_max_abs_derivative_per_label.push_back(
            i.at("normalized_max_abs_derivative_per_label").at(l).get<double>());
      }
      r.m_max = i.at("m_max").get<double>();
      r.exceeds_threshold = i.at("exceeds_threshold").get<bool>();
      r.normalized_max_abs_derivative = i.at("normalized_max_abs_derivative").get<double>();
      m.interpolation = std::move(r);
    }
    if (doc.contains("baseline_deviation")) {
      m.baseline_deviation = doc.at("baseline_deviation").get<double>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed metrics document: ") + e.what());
  }
}

namespace {

struct Accumulator {
  SummaryRow row;
  double observed = 0, expected_only = 0, counterfactual = 0, ratio = 0;
  int p1 = 0, p2 = 0, p3 = 0;
  double m_max = 0, derivative = 0;
  int exceeding = 0;
  double deviation = 0;

  void add(const RecordMetrics& m) {
    ++row.records;
    if (!m.valid()) return;
    ++row.valid_records;
    if (m.counting) {
      ++row.counting_records;
      const double obs = m.counting->normalized_frequency.value();
      const double cf = m.counting->counterfactual_frequency.value();
      observed += obs;
      expected_only += m.counting->expected_only_frequency.value();
      counterfactual += cf;
      ratio += obs / cf;
    }
    if (m.sums) {
      ++row.sums_records;
      p1 += m.sums->second.p1;
      p2 += m.sums->second.p2;
      p3 += m.sums->second.p3;
    }
    if (m.interpolation) {
      ++row.interpolation_records;
      m_max += m.interpolation->m_max;
      derivative += m.interpolation->normalized_max_abs_derivative;
      exceeding += m.interpolation->exceeds_threshold;
    }
    if (m.baseline_deviation) {
      ++row.invariance_records;
      deviation += *m.baseline_deviation;
    }
  }

  SummaryRow finish() const {
    SummaryRow r = row;
    const auto mean = [](double total, int n) { return n == 0 ? 0.0 : total / n; };
    r.observed_frequency = mean(observed, r.counting_records);
    r.expected_only_frequency = mean(expected_only, r.counting_records);
    r.counterfactual_frequency = mean(counterfactual, r.counting_records);
    r.average_ratio = mean(ratio, r.counting_records);
    r.p1_frequency = mean(p1, r.sums_records);
    r.p2_frequency = mean(p2, r.sums_records);
    r.p3_frequency = mean(p3, r.sums_records);
    r.mean_m_max = mean(m_max, r.interpolation_records);
    r.fraction_m_max_exceeding = mean(exceeding, r.interpolation_records);
    r.mean_normalized_max_abs_derivative = mean(derivative, r.interpolation_records);
    r.mean_baseline_deviation = mean(deviation, r.invariance_records);
    return r;
  }
};

nlohmann::json row_json(const SummaryRow& r) {
  return {{"model", r.model},
          {"records", r.records},
          {"valid_records", r.valid_records},
          {"valid_rate", r.valid_rate()},
          {"counting_records", r.counting_records},
          {"observed_frequency", r.observed_frequency},
          {"expected_only_frequency", r.expected_only_frequency},
          {"counterfactual_frequency", r.counterfactual_frequency},
          {"average_ratio", r.average_ratio},
          {"sums_records", r.sums_records},
          {"p1_frequency", r.p1_frequency},
          {"p2_frequency", r.p2_frequency},
          {"p3_frequency", r.p3_frequency},
          {"interpolation_records", r.interpolation_records},
          {"mean_m_max", r.mean_m_max},
          {"fraction_m_max_exceeding", r.fraction_m_max_exceeding},
          {"mean_normalized_max_abs_derivative", r.mean_normalized_max_abs_derivative},
          {"invariance_records", r.invariance_records},
          {"mean_baseline_deviation", r.mean_baseline_deviation}};
}

}  // namespace

nlohmann::json Summary::to_json() const {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& r : per_model) models.push_back(row_json(r));
  return {{"format", kFormatVersion}, {"per_model", models}, {"global", row_json(global)}};
}

std::string Summary::to_csv() const {
  std::string out =
      "model,records,valid_records,valid_rate,counting_records,observed_frequency,"
      "expected_only_frequency,counterfactual_frequency,average_ratio,sums_records,"
      "p1_frequency,p2_frequency,p3_frequency,interpolation_records,mean_m_max,"
      "fraction_m_max_exceeding,mean_normalized_max_abs_derivative,invariance_records,"
      "mean_baseline_deviation\n";
  auto emit = [&](const SummaryRow& r) {
    std::ostringstream line;
    line << r.model << ',' << r.records << ',' << r.valid_records << ','
         << format_number(r.valid_rate()) << ',' << r.counting_records << ','
         << format_number(r.observed_frequency) << ',' << format_number(r.expected_only_frequency)
         << ',' << format_number(r.counterfactual_frequency) << ','
         << format_number(r.average_ratio) << ',' << r.sums_records << ','
         << format_number(r.p1_frequency) << ',' << format_number(r.p2_frequency) << ','
         << format_number(r.p3_frequency) << ',' << r.interpolation_records << ','
         << format_number(r.mean_m_max) << ',' << format_number(r.fraction_m_max_exceeding)
         << ',' << format_number(r.mean_normalized_max_abs_derivative) << ','
         << r.invariance_records << ',' << format_number(r.mean_baseline_deviation) << '\n';
    out += line.str();
  };
  for (const auto& r : per_model) emit(r);
  emit(global);
  return out;
}

Summary aggregate(std::vector<RecordMetrics> records) {
  if (records.empty()) throw std::invalid_argument("aggregate needs at least one record");
  std::vector<std::pair<std::tuple<std::string, std::string, std::string>, std::size_t>> order;
  order.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    order.push_back({{records[i].model, records[i].record_id, records[i].to_json().dump()}, i});
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::map<std::string, Accumulator> per_model;
  Accumulator global;
  global.row.model = "global";
  for (const auto& [key, i] : order) {
    auto& acc = per_model[records[i].model];
    acc.row.model = records[i].model;
    acc.add(records[i]);
    global.add(records[i]);
  }
  Summary s;
  for (const auto& [name, acc] : per_model) s.per_model.push_back(acc.finish());
  s.global = global.finish();
  return s;
}

}  // namespace cct
