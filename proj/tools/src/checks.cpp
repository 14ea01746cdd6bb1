#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "cct/attention.hpp"
#include "cct/harness.hpp"
#include "cct/random.hpp"

namespace cct::harness {

namespace {

constexpr double kDiscreteTol = 1e-6;
constexpr double kQuadratureTol = 1e-4;
constexpr double kPathTol = 1e-5;
constexpr double kRotaryShiftTol = 1e-4;
constexpr double kScaleChange = 1e-3;
constexpr double kScaleRate = 0.95;
constexpr double kRowSumTol = 1e-6;
constexpr double kLogitTol = 1e-5;
constexpr int kHalvingLevels = 6;

template <class A, class B>
double max_abs_diff(const Matrix<A>& a, const Matrix<B>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return m;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

AttentionShape random_shape(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> heads(1, 4);
  std::uniform_int_distribution<int> half_dim(1, 8);
  AttentionShape s;
  s.head_count = heads(rng);
  s.head_dim = 2 * half_dim(rng);
  s.d_model = std::min(64, s.head_count * s.head_dim);
  return s;
}

CheckResult make(std::string name, double observed, double tol, bool passed,
                 std::string detail = {}) {
  return {std::move(name), observed, tol, passed, std::move(detail)};
}

std::vector<double> last_row(const MatrixD& m) {
  const auto row = m.row(m.rows() - 1);
  return {row.begin(), row.end()};
}

/// max|error| / max|expected| of the final-query quadrature at refinement levels
/// 0..levels-1, starting from a quarter of the shortest duration.
std::vector<double> halving_errors(const StepwiseSentence& s, const AttentionParams& p,
                                   const std::vector<double>& expected, QuadratureGrid grid,
                                   int levels) {
  const auto d = s.durations();
  const double step = *std::min_element(d.begin(), d.end()) / 4.0;
  std::vector<double> errors;
  for (int k = 0; k < levels; ++k) {
    const auto q = continuous_attention_quadrature(s, p, s.total_length(), step, grid, k);
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      err = std::max(err, std::abs(q[i] - expected[i]));
      scale = std::max(scale, std::abs(expected[i]));
    }
    errors.push_back(err / scale);
  }
  return errors;
}

bool strictly_decreasing(const std::vector<double>& e) {
  for (std::size_t i = 1; i < e.size(); ++i) {
    if (!(e[i] < e[i - 1])) return false;
  }
  return true;
}

MatrixD closed_form_double(const StepwiseSentence& s, const AttentionParams& p) {
  const auto d = s.durations();
  const auto pos = positions(s);
  return stepwise_cct_attention<double>(sentence_matrix(s).cast<double>(), d, pos, p);
}

}  // namespace

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b,
                          double floor) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
  }
  return m;
}

bool CheckReport::all_passed() const {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

CheckReport cmd_check(const CheckOptions& options) {
  CheckReport report;
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> length(1, 16);

  double discrete_err = 0.0, quad_err = 0.0, add_err = 0.0, mul_err = 0.0, row_err = 0.0;
  double shift_plain = 0.0, shift_rotary = 0.0;
  int scale_changed = 0;
  int halving_failures = 0;
  double mono_worst = 1.0;  // smallest finite-difference slope observed
  for (int c = 0; c < options.cases; ++c) {
    const auto shape = random_shape(rng);
    const auto params = random_attention_params(rng, shape);
    const std::size_t t = length(rng);
    RotaryConfig rotary{true, 10000.0, 0};

    const auto unit = random_sentence(rng, t, shape.d_model, 1.0, 1.0);
    const auto x = sentence_matrix(unit);
    for (const auto& rot : {RotaryConfig{}, rotary}) {
      const auto expected = discrete_causal_attention<float>(x, params, rot);
      discrete_err = std::max(discrete_err, max_abs_diff(stepwise_cct_attention(unit, params, rot),
                                                         expected));
    }

    const std::size_t spans = std::clamp<std::size_t>(t, 2, 8);
    const auto varied = random_sentence(rng, spans, shape.d_model, 0.1, 2.0);
    const auto closed = closed_form_double(varied, params);
    const auto durations = varied.durations();
    const double min_d = *std::min_element(durations.begin(), durations.end());
    for (std::size_t q = 0; q < varied.size(); ++q) {
      const auto quad = continuous_attention_quadrature(varied, params, varied.elapsed_before(q + 1),
                                                        min_d / 64.0);
      const auto row = closed.row(q);
      quad_err = std::max(quad_err, max_relative_error(quad, {row.begin(), row.end()}));
    }
    const auto final_row = last_row(closed);
    if (!strictly_decreasing(
            halving_errors(varied, params, final_row, QuadratureGrid::offset, kHalvingLevels))) {
      ++halving_failures;
    }
    if (!strictly_decreasing(
            halving_errors(varied, params, final_row, QuadratureGrid::uniform, kHalvingLevels))) {
      ++report.uniform_nonmonotone_cases;
    }

    const auto pos = positions(varied);
    const auto vx = sentence_matrix(varied);
    const auto stepwise = stepwise_cct_attention(varied, params, rotary);
    for (auto mode : {DurationBiasMode::additive_log, DurationBiasMode::multiplicative}) {
      auto mask = make_duration_mask(durations, mode);
      if (options.corrupt_duration_bias) {
        const auto unit_d = std::vector<double>(durations.size(), 1.0);
        mask = make_duration_mask(unit_d, mode);
      }
      const auto masked = apply_masked_attention<float>(vx, pos, params, rotary, mask, mode);
      auto& err = mode == DurationBiasMode::additive_log ? add_err : mul_err;
      err = std::max(err, max_abs_diff(masked, stepwise));
    }

    for (const auto& w : cct_attention_weights<float>(vx, durations, pos, params, rotary)) {
      for (std::size_t r = 0; r < w.rows(); ++r) {
        double sum = 0.0;
        for (double v : w.row(r)) sum += v;
        row_err = std::max(row_err, std::abs(sum - 1.0));
      }
    }

    const auto shifted = shift(varied, 1.0 + static_cast<double>(c % 10));
    shift_plain = std::max(shift_plain, max_abs_diff(stepwise_cct_attention(shifted, params),
                                                     stepwise_cct_attention(varied, params)));
    shift_rotary = std::max(shift_rotary,
                            max_abs_diff(stepwise_cct_attention(shifted, params, rotary), stepwise));

    const auto scaled = scale(varied, 0.5);
    if (max_abs_diff(stepwise_cct_attention(scaled, params, rotary), stepwise) > kScaleChange) {
      ++scale_changed;
    }

    // Weight on the first key as its duration grows, last query, head 0.
    if (varied.size() >= 2) {
      const double h = 1e-4;
      auto bumped = durations;
      bumped[0] += h;
      const auto w0 = cct_attention_weights<double>(vx.cast<double>(), durations, pos, params)[0];
      const auto w1 = cct_attention_weights<double>(vx.cast<double>(), bumped, pos, params)[0];
      const std::size_t last = varied.size() - 1;
      const double base = w0(last, 0);
      if (base > 1e-12 && base < 1.0 - 1e-12) {
        mono_worst = std::min(mono_worst, (w1(last, 0) - base) / h);
      }
    }
  }

  const double scale_rate = static_cast<double>(scale_changed) / options.cases;
  report.results.push_back(make("discrete_limit_equivalence", discrete_err, kDiscreteTol,
                                discrete_err <= kDiscreteTol));
  report.results.push_back(make("quadrature_oracle_relative", quad_err, kQuadratureTol,
                                quad_err <= kQuadratureTol));
  report.results.push_back(make("quadrature_halving_monotone", halving_failures, 0.0,
                                halving_failures == 0,
                                "cases with non-decreasing error on the offset grid"));
  report.results.push_back(make("path_equivalence_additive_log", add_err, kPathTol,
                                add_err <= kPathTol));
  report.results.push_back(make("path_equivalence_multiplicative", mul_err, kPathTol,
                                mul_err <= kPathTol));
  report.results.push_back(make("softmax_rows_sum_to_one", row_err, kRowSumTol,
                                row_err <= kRowSumTol));
  report.results.push_back(make("shift_invariance_exact", shift_plain, 0.0, shift_plain == 0.0));
  report.results.push_back(make("shift_invariance_rotary", shift_rotary, kRotaryShiftTol,
                                shift_rotary <= kRotaryShiftTol));
  report.results.push_back(make("scale_sensitivity_rate", scale_rate, kScaleRate,
                                scale_rate >= kScaleRate, "fraction of cases changed by > 1e-3"));
  report.results.push_back(make("duration_monotonicity_min_slope", mono_worst, 0.0,
                                mono_worst > 0.0));

  // End-to-end on seeded tiny models.
  double logit_err = 0.0, logit_shift = 0.0;
  for (int c = 0; c < std::max(1, options.cases / 4); ++c) {
    ModelConfig cfg;
    cfg.layer_count = 2;
    cfg.block_style = c % 2 == 0 ? BlockStyle::paper_addnorm : BlockStyle::prenorm_mlp;
    cfg.mlp_hidden = cfg.block_style == BlockStyle::prenorm_mlp ? 32 : 0;
    const auto model = init_random(options.seed * 1000 + static_cast<std::uint64_t>(c), cfg);
    std::vector<int> ids;
    std::uniform_int_distribution<int> tok(0, cfg.vocab_size - 1);
    for (std::size_t i = 0; i < 1 + length(rng) % 10; ++i) ids.push_back(tok(rng));
    const auto sentence = model.embed(ids);
    const auto logits = model.forward_continuous(sentence).logits;
    logit_err = std::max(logit_err,
                         max_abs_diff(model.forward_discrete(sentence_matrix(sentence)).logits,
                                      logits));
    for (int delta = 1; delta <= 10; ++delta) {
      logit_shift = std::max(logit_shift,
                             max_abs_diff(model.forward_continuous(shift(sentence, delta)).logits,
                                          logits));
    }
  }
  report.results.push_back(make("end_to_end_discrete_limit", logit_err, kLogitTol,
                                logit_err <= kLogitTol));
  report.results.push_back(make("end_to_end_shift_invariance", logit_shift, kRotaryShiftTol,
                                logit_shift <= kRotaryShiftTol));

  // Step-halving table for one case.
  std::mt19937_64 case_rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto params = random_attention_params(case_rng, {16, 2, 8});
  const auto sentence = random_sentence(case_rng, 5, 16, 0.1, 2.0);
  const auto closed = closed_form_double(sentence, params);
  const auto d = sentence.durations();
  const double min_d = *std::min_element(d.begin(), d.end());
  const auto expected = last_row(closed);
  const auto aligned = halving_errors(sentence, params, expected, QuadratureGrid::span_aligned, 7);
  const auto offset = halving_errors(sentence, params, expected, QuadratureGrid::offset, 7);
  const auto uniform = halving_errors(sentence, params, expected, QuadratureGrid::uniform, 7);
  for (std::size_t k = 0; k < aligned.size(); ++k) {
    report.convergence.push_back(
        {min_d / 4.0 / static_cast<double>(1u << k), aligned[k], offset[k], uniform[k]});
  }
  return report;
}

void print_check_report(const CheckReport& report, std::ostream& out) {
  char line[256];
  for (const auto& r : report.results) {
    std::snprintf(line, sizeof(line), "%-4s %-36s observed=%-12.4e tolerance=%-10.3e %s\n",
                  r.passed ? "PASS" : "FAIL", r.name.c_str(), r.observed, r.tolerance,
                  r.detail.c_str());
    out << line;
  }
  out << "\nquadrature step-halving (error / max |closed form|, final query)\n";
  out << "  step          span_aligned  offset        uniform\n";
  for (const auto& c : report.convergence) {
    std::snprintf(line, sizeof(line), "  %-12.6e  %-12.4e  %-12.4e  %-12.4e\n", c.step,
                  c.aligned_error, c.offset_error, c.uniform_error);
    out << line;
  }
  out << "uniform grid: " << report.uniform_nonmonotone_cases
      << " case(s) with a non-monotone halving step\n";
}

}  // namespace cct::harness
