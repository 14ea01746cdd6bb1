#pragma once

// Sweep protocols (shrink, interpolate, shift, scale) and the metrics
// computed from their label-probability tables.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cct/continuous_sequence.hpp"
#include "cct/model.hpp"

namespace cct {

inline constexpr int kFormatVersion = 1;
inline constexpr double kMMaxThreshold = 0.05;
inline constexpr double kAmplitudeFloor = 1e-9;

enum class SweepKind { shrink, interpolate, shift, scale };

std::string to_string(SweepKind kind);
SweepKind parse_sweep_kind(const std::string& text);

/// Shortest round-trip decimal form, locale independent.
std::string format_number(double v);

struct SweepRecord {
  SweepKind kind = SweepKind::shrink;
  std::string prompt_id;
  std::vector<double> grid;
  std::vector<std::string> labels;
  std::vector<std::vector<double>> rows;  // rows[i][j]: probability of labels[j] at grid[i]
  std::vector<double> other;              // residual mass per grid point
  std::optional<std::string> skip_reason;

  [[nodiscard]] bool valid() const noexcept { return !skip_reason.has_value(); }
  [[nodiscard]] std::size_t label_index(const std::string& name) const;
  /// Throws std::invalid_argument when the grid is not strictly monotone, row
  /// counts disagree, or a mass lies outside [0, 1].
  void validate() const;

  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] static SweepRecord from_json(const nlohmann::json& doc);
  /// Header: sweep_value, one column per label, other.
  [[nodiscard]] std::string to_csv() const;
};

struct SweepContext {
  const Model& model;
  const LabelSet& labels;
  std::string prompt_id;
  int workers = 1;
};

/// 19 points 0.10, 0.15, ..., 1.00.
std::vector<double> default_shrink_grid();
/// 0, 1, ..., 10.
std::vector<double> default_shift_grid();
/// 0.5, 0.75, ..., 2.0.
std::vector<double> default_scale_grid();
/// steps + 1 points i / steps.
std::vector<double> interpolation_grid(int steps);

SweepRecord run_shrink_sweep(const SweepContext& ctx, const StepwiseSentence& prompt,
                             SpanSelector selector,
                             const std::vector<double>& grid = default_shrink_grid());
/// Mismatched span counts, durations or origins yield a skipped record.
SweepRecord run_interpolation_sweep(const SweepContext& ctx, const StepwiseSentence& prompt_a,
                                    const StepwiseSentence& prompt_b, int steps = 40);
SweepRecord run_shift_sweep(const SweepContext& ctx, const StepwiseSentence& prompt,
                            const std::vector<double>& grid = default_shift_grid());
SweepRecord run_scale_sweep(const SweepContext& ctx, const StepwiseSentence& prompt,
                            const std::vector<double>& grid = default_scale_grid());

// ---------------------------------------------------------------------------
// Peak counting

/// Exact k / n. Arithmetic reduces by the gcd.
struct Fraction {
  std::int64_t numerator = 0;
  std::int64_t denominator = 1;

  Fraction() = default;
  Fraction(std::int64_t num, std::int64_t den);
  [[nodiscard]] double value() const noexcept {
    return static_cast<double>(numerator) / static_cast<double>(denominator);
  }
  friend Fraction operator*(Fraction f, std::int64_t k) { return {f.numerator * k, f.denominator}; }
  friend bool operator==(const Fraction&, const Fraction&) = default;
};

/// Argmax among `numeric_labels` at each grid point. Ties go to the label
/// listed first in `numeric_labels`.
std::vector<std::string> top_labels(const SweepRecord& record,
                                    const std::vector<std::string>& numeric_labels);

/// Labels that are the argmax at one or more grid points, in first-appearance order.
std::vector<std::string> unique_relative_peaks(const SweepRecord& record,
                                               const std::vector<std::string>& numeric_labels);

Fraction normalized_peak_frequency(const std::vector<std::string>& peaks, int expected_count);
/// Counts only peaks named "1".."n".
Fraction expected_only_frequency(const std::vector<std::string>& peaks, int expected_count);
/// A duration-insensitive model has exactly one peak.
Fraction counterfactual_frequency(int expected_count);

struct PeakReport {
  std::vector<std::string> unique_relative_peaks;
  int expected_count = 1;
  Fraction normalized_frequency;
  Fraction expected_only_frequency;
  Fraction counterfactual_frequency;
};

PeakReport peak_report(const SweepRecord& record, const std::vector<std::string>& numeric_labels,
                       int expected_count);

// ---------------------------------------------------------------------------
// Sums

struct SumLabels {
  int original_label = 0;
  std::vector<int> shrunk_labels;
};

/// Leading digit of lhs + rhs, and the leading digits obtained when the
/// shrunk operand is read as each of its single digits. shrunk_operand is 0
/// for lhs and 1 for rhs. Shrunk labels equal to the original are dropped.
SumLabels sum_labels(int lhs, int rhs, int shrunk_operand);

struct SumRecord {
  int original_label = 0;
  std::vector<int> shrunk_labels;
  SweepRecord sweep;
};

struct SumsProperties {
  bool p1 = false;
  bool p2 = false;
  bool p3 = false;
};

/// Digit labels "0".."9" present in the record are the numeric labels.
SumsProperties sums_properties(const SumRecord& record);

// ---------------------------------------------------------------------------
// Interpolation

struct InterpolationReport {
  std::vector<std::string> labels;
  std::vector<double> m_diff;
  double m_max = 0.0;
  bool exceeds_threshold = false;
  std::vector<double> normalized_max_abs_derivative_per_label;
  double normalized_max_abs_derivative = 0.0;  // max over labels
};

/// Metrics over `labels` (all record labels when empty). Needs >= 3 grid points.
InterpolationReport interpolation_metrics(const SweepRecord& record,
                                          const std::vector<std::string>& labels = {});

/// Largest absolute deviation of any label or residual mass from the row at
/// `baseline_value` (Δ = 0 for shifts, c = 1 for scales).
double max_deviation_from_baseline(const SweepRecord& record, double baseline_value);

// ---------------------------------------------------------------------------
// Per-record metrics documents and aggregation

struct RecordMetrics {
  std::string record_id;
  std::string model = "default";
  SweepKind kind = SweepKind::shrink;
  std::optional<std::string> skip_reason;
  std::optional<PeakReport> counting;
  std::optional<std::pair<SumLabels, SumsProperties>> sums;
  std::optional<InterpolationReport> interpolation;
  std::optional<double> baseline_deviation;

  [[nodiscard]] bool valid() const noexcept { return !skip_reason.has_value(); }
  [[nodiscard]] nlohmann::json to_json() const;
  /// Throws std::invalid_argument on a missing or different "format" version.
  [[nodiscard]] static RecordMetrics from_json(const nlohmann::json& doc);
};

struct SummaryRow {
  std::string model;
  int records = 0;
  int valid_records = 0;

  int counting_records = 0;
  double observed_frequency = 0.0;
  double expected_only_frequency = 0.0;
  double counterfactual_frequency = 0.0;
  double average_ratio = 0.0;

  int sums_records = 0;
  double p1_frequency = 0.0;
  double p2_frequency = 0.0;
  double p3_frequency = 0.0;

  int interpolation_records = 0;
  double mean_m_max = 0.0;
  double fraction_m_max_exceeding = 0.0;
  double mean_normalized_max_abs_derivative = 0.0;

  int invariance_records = 0;
  double mean_baseline_deviation = 0.0;

  [[nodiscard]] double valid_rate() const noexcept {
    return records == 0 ? 0.0 : static_cast<double>(valid_records) / records;
  }
};

struct Summary {
  std::vector<SummaryRow> per_model;  // sorted by model name
  SummaryRow global;                  // pooled over all valid records

  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] std::string to_csv() const;
};

/// Deterministic fold after sorting records by (model, record_id, content);
/// the result does not depend on input order.
Summary aggregate(std::vector<RecordMetrics> records);

}  // namespace cct
