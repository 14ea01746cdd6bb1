#pragma once

// Command implementations behind the `cct` executable. Kept in a library so
// tests can drive them in-process.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cct/continuous_sequence.hpp"
#include "cct/metrics.hpp"
#include "cct/model.hpp"

namespace cct::harness {

// --------------------------------------------------------------------- check

struct CheckOptions {
  std::uint64_t seed = 1;
  int cases = 20;
  /// Negative control: the masked path runs without its duration bias.
  bool corrupt_duration_bias = false;
};

struct CheckResult {
  std::string name;
  double observed = 0.0;  // max error, or a fraction for rate checks
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct ConvergenceRow {
  double step = 0.0;
  double aligned_error = 0.0;
  double offset_error = 0.0;
  double uniform_error = 0.0;
};

struct CheckReport {
  std::vector<CheckResult> results;
  std::vector<ConvergenceRow> convergence;
  /// Cases whose uniform-grid error grew under some halving (reported, not checked).
  int uniform_nonmonotone_cases = 0;

  [[nodiscard]] bool all_passed() const;
};

CheckReport cmd_check(const CheckOptions& options);
void print_check_report(const CheckReport& report, std::ostream& out);

/// max_i |a_i - b_i| / max(|b_i|, floor)
double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                          double floor = 1e-8);

// --------------------------------------------------------------------- sweep

struct RunConfig {
  std::optional<std::string> model_path;   // tensor archive; random init when absent
  std::optional<std::string> config_path;  // ModelConfig JSON; defaults when absent
  std::vector<std::string> prompt_paths;   // two for interpolation
  SweepKind sweep = SweepKind::shrink;
  std::optional<std::vector<double>> grid;
  std::optional<SpanSelector> selector;  // shrink; whole prompt when absent
  std::optional<std::string> labels;     // inline spec or .json path; digits when absent
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  int workers = 1;
  int steps = 40;
  std::optional<std::string> record_id;
  std::string model_name = "default";
  std::optional<int> expected_count;          // peak counting on shrink sweeps
  std::optional<std::pair<int, int>> sum;     // sums protocol operands
  int shrunk_operand = 1;
};

struct SweepOutcome {
  std::string record_id;
  std::vector<std::filesystem::path> files;
  bool skipped = false;
};

SweepOutcome cmd_sweep(const RunConfig& config);

// ----------------------------------------------------------------- aggregate

/// Reads metrics documents, writes summary.json and summary.csv to out_dir.
Summary cmd_aggregate(const std::vector<std::string>& paths, const std::string& out_dir);

// ----------------------------------------------------------------------- CLI

std::vector<double> parse_grid(const std::string& text);
SpanSelector parse_selector(const std::string& text);

/// Entry point used by main(); returns the process exit status.
int run_cli(int argc, char** argv);

}  // namespace cct::harness
