#pragma once

// Causal attention over stepwise-constant inputs.
//
// Four routes compute the same quantity and are cross-checked in tests:
//   discrete_causal_attention    classical softmax attention, integer positions
//   stepwise_cct_attention       closed form: weights exp(q.k / sqrt(d)) * d_k / Z
//   masked_attention_path        regular attention plus a duration mask
//                                (additive log d_k, or multiplicative d_k)
//   continuous_attention_quadrature
//                                midpoint-rule integral of the continuous
//                                attention, double precision
//
// Kernels are templated on the compute type (float for the forward pass,
// double for oracle comparisons). Weights are stored in single precision.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cct/continuous_sequence.hpp"
#include "cct/matrix.hpp"

namespace cct {

struct AttentionParams {
  int d_model = 0;
  int head_count = 0;
  int head_dim = 0;
  std::vector<MatrixF> w_q;  // per head, head_dim x d_model
  std::vector<MatrixF> w_k;
  std::vector<MatrixF> w_v;
  MatrixF w_o;  // d_model x (head_count * head_dim)

  /// Throws std::invalid_argument on inconsistent shapes or non-finite entries.
  void validate() const;
};

struct BlockParams {
  AttentionParams attention;
  MatrixF w_z;  // d_model x d_model
  std::vector<float> norm1_gain, norm1_bias;
  std::vector<float> norm2_gain, norm2_bias;

  void validate() const;
};

struct RotaryConfig {
  bool enabled = false;
  double base = 10000.0;
  int rotary_dim = 0;  // even, <= head_dim; 0 means head_dim
};

enum class DurationBiasMode { additive_log, multiplicative };

inline constexpr float kLayerNormEpsilon = 1e-5f;

/// Duration mask for masked_attention_path. Entry (t, k) is log d_k
/// (additive) or d_k (multiplicative) for k <= t; -inf or 0 above the
/// diagonal.
MatrixD make_duration_mask(std::span<const double> durations, DurationBiasMode mode);

/// Rotates consecutive pairs (2i, 2i+1) of each row by
/// position / base^(2i / rotary_dim). Positions may be fractional.
template <class Real>
void rope_rotate(Matrix<Real>& vectors, std::span<const double> positions,
                 const RotaryConfig& config);

/// Rows of x are tokens at integer positions 0..T-1.
template <class Real>
Matrix<Real> discrete_causal_attention(const Matrix<Real>& x, const AttentionParams& params,
                                       const RotaryConfig& rotary = {});

/// Normalized attention weights per head, each T x T (zero above the diagonal).
template <class Real>
std::vector<MatrixD> cct_attention_weights(const Matrix<Real>& x,
                                           std::span<const double> durations,
                                           std::span<const double> positions,
                                           const AttentionParams& params,
                                           const RotaryConfig& rotary = {});

template <class Real>
Matrix<Real> stepwise_cct_attention(const Matrix<Real>& x, std::span<const double> durations,
                                    std::span<const double> positions,
                                    const AttentionParams& params,
                                    const RotaryConfig& rotary = {});

template <class Real>
Matrix<Real> masked_attention_path(const Matrix<Real>& x, std::span<const double> durations,
                                   std::span<const double> positions,
                                   const AttentionParams& params, const RotaryConfig& rotary,
                                   DurationBiasMode mode);

/// Regular attention with a caller-supplied mask (see make_duration_mask).
template <class Real>
Matrix<Real> apply_masked_attention(const Matrix<Real>& x, std::span<const double> positions,
                                    const AttentionParams& params, const RotaryConfig& rotary,
                                    const MatrixD& mask, DurationBiasMode mode);

// Sentence-level conveniences: embeddings as rows, positions = interval starts.
MatrixF sentence_matrix(const StepwiseSentence& sentence);
MatrixF stepwise_cct_attention(const StepwiseSentence& sentence, const AttentionParams& params,
                               const RotaryConfig& rotary = {});
MatrixF masked_attention_path(const StepwiseSentence& sentence, const AttentionParams& params,
                              const RotaryConfig& rotary = {},
                              DurationBiasMode mode = DurationBiasMode::additive_log);

enum class QuadratureGrid {
  span_aligned,  // each span subdivided on its own; nodes never straddle a boundary
  offset,        // per-span cells shifted by a third of a cell; every interior
                 // boundary falls strictly inside a straddling cell
  uniform,       // uniform cells over [0, t]; cells may straddle span boundaries
};

/// Midpoint-rule evaluation of the continuous causal attention at elapsed
/// time t in (0, L]: integral over [0, t] of exp(q(t).k(s)/sqrt(d)) v(s) ds
/// normalized by the same integral without v. Double precision throughout;
/// the query uses the span whose interval (a, b] contains t. Positional
/// rotation is not applied. Returns a d_model vector.
///
/// Cell counts are ceil(length / step) * 2^refinement (per span for the
/// aligned and offset grids, over [0, t] for the uniform grid), so raising
/// the refinement by one halves every cell exactly.
std::vector<double> continuous_attention_quadrature(const StepwiseSentence& sentence,
                                                    const AttentionParams& params, double t,
                                                    double step,
                                                    QuadratureGrid grid = QuadratureGrid::span_aligned,
                                                    int refinement = 0);

/// W_o applied to the concatenation of per-head outputs.
template <class Real>
std::vector<Real> multi_head_combine(const std::vector<std::vector<Real>>& per_head,
                                     const MatrixF& w_o);

template <class Real>
std::vector<Real> layer_norm(std::span<const Real> x, std::span<const float> gain,
                             std::span<const float> bias, float epsilon = kLayerNormEpsilon);

/// z = LayerNorm1(y + x); returns LayerNorm2(W_z z + x).
template <class Real>
std::vector<Real> add_norm_block(std::span<const Real> x, std::span<const Real> y,
                                 const BlockParams& block);

}  // namespace cct
