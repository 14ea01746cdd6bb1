#include "cct/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cct {

namespace {

void require_shape(const MatrixF& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw std::invalid_argument(std::string(what) + " has shape [" + std::to_string(m.rows()) +
                                ", " + std::to_string(m.cols()) + "], expected [" +
                                std::to_string(rows) + ", " + std::to_string(cols) + "]");
  }
}

void require_finite(const MatrixF& m, const char* what) {
  if (!std::all_of(m.data().begin(), m.data().end(), [](float v) { return std::isfinite(v); })) {
    throw std::invalid_argument(std::string(what) + " has non-finite entries");
  }
}

template <class Real>
void require_finite_input(const Matrix<Real>& x, const AttentionParams& params) {
  if (x.rows() == 0) throw std::invalid_argument("attention input has no rows");
  if (x.cols() != static_cast<std::size_t>(params.d_model)) {
    throw std::invalid_argument("attention input has " + std::to_string(x.cols()) +
                                " columns, expected d_model = " + std::to_string(params.d_model));
  }
  for (Real v : x.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("attention input is not finite");
  }
}

template <class Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return static_cast<Real>(acc);
}

// Projects every row of x through w (out x in) into a T x out matrix.
template <class Real>
Matrix<Real> project_rows(const Matrix<Real>& x, const MatrixF& w) {
  Matrix<Real> out(x.rows(), w.rows());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto y = matvec<Real, float, Real>(w, x.row(t));
    std::copy(y.begin(), y.end(), out.row(t).begin());
  }
  return out;
}

template <class Real>
struct HeadProjection {
  Matrix<Real> q, k, v;
};

template <class Real>
std::vector<HeadProjection<Real>> project_heads(const Matrix<Real>& x,
                                                std::span<const double> positions,
                                                const AttentionParams& params,
                                                const RotaryConfig& rotary) {
  std::vector<HeadProjection<Real>> heads;
  heads.reserve(static_cast<std::size_t>(params.head_count));
  for (int h = 0; h < params.head_count; ++h) {
    HeadProjection<Real> p{project_rows(x, params.w_q[h]), project_rows(x, params.w_k[h]),
                           project_rows(x, params.w_v[h])};
    if (rotary.enabled) {
      rope_rotate(p.q, positions, rotary);
      rope_rotate(p.k, positions, rotary);
    }
    heads.push_back(std::move(p));
  }
  return heads;
}

// Weighted sum of value rows; weights are already normalized.
template <class Real>
std::vector<Real> mix_values(const Matrix<Real>& v, std::span<const double> weights) {
  std::vector<double> acc(v.cols(), 0.0);
  for (std::size_t s = 0; s < weights.size(); ++s) {
    if (weights[s] == 0.0) continue;
    const auto vs = v.row(s);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += weights[s] * static_cast<double>(vs[j]);
  }
  return {acc.begin(), acc.end()};
}

template <class Real>
Matrix<Real> combine_rows(const std::vector<std::vector<std::vector<Real>>>& per_token_heads,
                          const AttentionParams& params) {
  Matrix<Real> out(per_token_heads.size(), static_cast<std::size_t>(params.d_model));
  for (std::size_t t = 0; t < per_token_heads.size(); ++t) {
    const auto y = multi_head_combine(per_token_heads[t], params.w_o);
    std::copy(y.begin(), y.end(), out.row(t).begin());
  }
  return out;
}

void require_durations(std::span<const double> durations, std::span<const double> positions,
                       std::size_t rows) {
  if (durations.size() != rows || positions.size() != rows) {
    throw std::invalid_argument("durations/positions do not match the number of spans");
  }
  for (double d : durations) {
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw std::invalid_argument("durations must be finite and > 0");
    }
  }
}

// Normalized weights exp(q_t.k_k / sqrt(d)) d_k / Z_t for k <= t, one T x T
// matrix per head. The causal key set of span t is the spans whose interval
// starts at or before its own.
template <class Real>
std::vector<MatrixD> duration_weights(const std::vector<HeadProjection<Real>>& heads,
                                      std::span<const double> durations, int head_dim) {
  const std::size_t n = durations.size();
  const Real inv_sqrt_d = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  std::vector<MatrixD> out;
  out.reserve(heads.size());
  std::vector<Real> logits(n);
  for (const auto& head : heads) {
    MatrixD w(n, n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      Real max_logit = -std::numeric_limits<Real>::infinity();
      for (std::size_t k = 0; k <= t; ++k) {
        logits[k] = dot<Real>(head.q.row(t), head.k.row(k)) * inv_sqrt_d;
        max_logit = std::max(max_logit, logits[k]);
      }
      double z = 0.0;
      for (std::size_t k = 0; k <= t; ++k) {
        w(t, k) = static_cast<double>(std::exp(logits[k] - max_logit)) * durations[k];
        z += w(t, k);
      }
      for (std::size_t k = 0; k <= t; ++k) w(t, k) /= z;
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

void AttentionParams::validate() const {
  if (d_model <= 0 || head_count <= 0 || head_dim <= 0) {
    throw std::invalid_argument("attention dimensions must be positive");
  }
  const auto hc = static_cast<std::size_t>(head_count);
  if (w_q.size() != hc || w_k.size() != hc || w_v.size() != hc) {
    throw std::invalid_argument("attention projections do not match head_count");
  }
  const auto hd = static_cast<std::size_t>(head_dim);
  const auto dm = static_cast<std::size_t>(d_model);
  for (std::size_t h = 0; h < hc; ++h) {
    require_shape(w_q[h], hd, dm, "W_q");
    require_shape(w_k[h], hd, dm, "W_k");
    require_shape(w_v[h], hd, dm, "W_v");
    require_finite(w_q[h], "W_q");
    require_finite(w_k[h], "W_k");
    require_finite(w_v[h], "W_v");
  }
  require_shape(w_o, dm, hc * hd, "W_o");
  require_finite(w_o, "W_o");
}

void BlockParams::validate() const {
  attention.validate();
  const auto dm = static_cast<std::size_t>(attention.d_model);
  require_shape(w_z, dm, dm, "W_z");
  require_finite(w_z, "W_z");
  for (const auto* v : {&norm1_gain, &norm1_bias, &norm2_gain, &norm2_bias}) {
    if (v->size() != dm) throw std::invalid_argument("layer norm vectors must have d_model entries");
  }
}

MatrixD make_duration_mask(std::span<const double> durations, DurationBiasMode mode) {
  const std::size_t n = durations.size();
  const bool additive = mode == DurationBiasMode::additive_log;
  MatrixD mask(n, n, additive ? -std::numeric_limits<double>::infinity() : 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    if (!(durations[k] > 0.0)) {
      throw std::invalid_argument("duration mask requires durations > 0");
    }
    const double entry = additive ? std::log(durations[k]) : durations[k];
    for (std::size_t t = k; t < n; ++t) mask(t, k) = entry;
  }
  return mask;
}

template <class Real>
void rope_rotate(Matrix<Real>& vectors, std::span<const double> positions,
                 const RotaryConfig& config) {
  const std::size_t dim = config.rotary_dim == 0 ? vectors.cols()
                                                 : static_cast<std::size_t>(config.rotary_dim);
  if (dim % 2 != 0 || dim > vectors.cols()) {
    throw std::invalid_argument("rotary_dim must be even and <= head_dim");
  }
  if (positions.size() != vectors.rows()) {
    throw std::invalid_argument("rope_rotate: one position per row required");
  }
  for (std::size_t r = 0; r < vectors.rows(); ++r) {
    const double p = positions[r];
    auto row = vectors.row(r);
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double inv_freq =
          std::pow(config.base, -static_cast<double>(2 * i) / static_cast<double>(dim));
      const double angle = p * inv_freq;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double x0 = row[2 * i];
      const double x1 = row[2 * i + 1];
      row[2 * i] = static_cast<Real>(x0 * c - x1 * s);
      row[2 * i + 1] = static_cast<Real>(x0 * s + x1 * c);
    }
  }
}

template <class Real>
Matrix<Real> discrete_causal_attention(const Matrix<Real>& x, const AttentionParams& params,
                                       const RotaryConfig& rotary) {
  params.validate();
  require_finite_input(x, params);
  const std::size_t n = x.rows();
  std::vector<double> index_positions(n);
  for (std::size_t t = 0; t < n; ++t) index_positions[t] = static_cast<double>(t);

  const auto heads = project_heads(x, index_positions, params, rotary);
  const Real inv_sqrt_d = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(params.head_dim)));

  std::vector<std::vector<std::vector<Real>>> outputs(n);
  std::vector<Real> logits(n);
  std::vector<double> weights(n);
  for (std::size_t t = 0; t < n; ++t) {
    for (const auto& head : heads) {
      Real max_logit = -std::numeric_limits<Real>::infinity();
      for (std::size_t s = 0; s <= t; ++s) {
        logits[s] = dot<Real>(head.q.row(t), head.k.row(s)) * inv_sqrt_d;
        max_logit = std::max(max_logit, logits[s]);
      }
      double z = 0.0;
      for (std::size_t s = 0; s <= t; ++s) {
        weights[s] = static_cast<double>(std::exp(logits[s] - max_logit));
        z += weights[s];
      }
      for (std::size_t s = 0; s <= t; ++s) weights[s] /= z;
      outputs[t].push_back(mix_values(head.v, std::span<const double>(weights.data(), t + 1)));
    }
  }
  return combine_rows(outputs, params);
}

template <class Real>
std::vector<MatrixD> cct_attention_weights(const Matrix<Real>& x,
                                           std::span<const double> durations,
                                           std::span<const double> positions,
                                           const AttentionParams& params,
                                           const RotaryConfig& rotary) {
  params.validate();
  require_finite_input(x, params);
  require_durations(durations, positions, x.rows());
  return duration_weights(project_heads(x, positions, params, rotary), durations,
                          params.head_dim);
}

template <class Real>
Matrix<Real> stepwise_cct_attention(const Matrix<Real>& x, std::span<const double> durations,
                                    std::span<const double> positions,
                                    const AttentionParams& params, const RotaryConfig& rotary) {
  params.validate();
  require_finite_input(x, params);
  require_durations(durations, positions, x.rows());
  const auto heads = project_heads(x, positions, params, rotary);
  const auto weights = duration_weights(heads, durations, params.head_dim);
  const std::size_t n = x.rows();
  std::vector<std::vector<std::vector<Real>>> outputs(n);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t h = 0; h < heads.size(); ++h) {
      outputs[t].push_back(mix_values(heads[h].v, weights[h].row(t).first(t + 1)));
    }
  }
  return combine_rows(outputs, params);
}

template <class Real>
Matrix<Real> apply_masked_attention(const Matrix<Real>& x, std::span<const double> positions,
                                    const AttentionParams& params, const RotaryConfig& rotary,
                                    const MatrixD& mask, DurationBiasMode mode) {
  params.validate();
  require_finite_input(x, params);
  const std::size_t n = x.rows();
  if (mask.rows() != n || mask.cols() != n || positions.size() != n) {
    throw std::invalid_argument("attention mask must be T x T");
  }
  const auto heads = project_heads(x, positions, params, rotary);
  const Real inv_sqrt_d = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(params.head_dim)));
  const bool additive = mode == DurationBiasMode::additive_log;

  std::vector<std::vector<std::vector<Real>>> outputs(n);
  std::vector<double> row(n);
  for (const auto& head : heads) {
    // Full score matrix, as a regular attention kernel would form it.
    Matrix<Real> scores(n, n);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t s = 0; s < n; ++s) {
        scores(t, s) = dot<Real>(head.q.row(t), head.k.row(s)) * inv_sqrt_d;
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      double max_score = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < n; ++s) {
        if (additive) {
          row[s] = static_cast<double>(scores(t, s)) + mask(t, s);
          max_score = std::max(max_score, row[s]);
        } else if (mask(t, s) > 0.0) {
          max_score = std::max(max_score, static_cast<double>(scores(t, s)));
        }
      }
      double z = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        if (additive) {
          row[s] = std::isinf(row[s]) ? 0.0 : std::exp(row[s] - max_score);
        } else {
          row[s] = mask(t, s) > 0.0
                       ? std::exp(static_cast<double>(scores(t, s)) - max_score) * mask(t, s)
                       : 0.0;
        }
        z += row[s];
      }
      for (auto& w : row) w /= z;
      outputs[t].push_back(mix_values(head.v, std::span<const double>(row)));
    }
  }
  return combine_rows(outputs, params);
}

template <class Real>
Matrix<Real> masked_attention_path(const Matrix<Real>& x, std::span<const double> durations,
                                   std::span<const double> positions,
                                   const AttentionParams& params, const RotaryConfig& rotary,
                                   DurationBiasMode mode) {
  require_durations(durations, positions, x.rows());
  return apply_masked_attention(x, positions, params, rotary, make_duration_mask(durations, mode),
                                mode);
}

MatrixF sentence_matrix(const StepwiseSentence& sentence) {
  MatrixF x(sentence.size(), sentence.dim());
  for (std::size_t s = 0; s < sentence.size(); ++s) {
    const auto& e = sentence.span(s).embedding;
    std::copy(e.begin(), e.end(), x.row(s).begin());
  }
  return x;
}

MatrixF stepwise_cct_attention(const StepwiseSentence& sentence, const AttentionParams& params,
                               const RotaryConfig& rotary) {
  const auto d = sentence.durations();
  const auto p = positions(sentence);
  return stepwise_cct_attention(sentence_matrix(sentence), std::span<const double>(d),
                                std::span<const double>(p), params, rotary);
}

MatrixF masked_attention_path(const StepwiseSentence& sentence, const AttentionParams& params,
                              const RotaryConfig& rotary, DurationBiasMode mode) {
  const auto d = sentence.durations();
  const auto p = positions(sentence);
  return masked_attention_path(sentence_matrix(sentence), std::span<const double>(d),
                               std::span<const double>(p), params, rotary, mode);
}

std::vector<double> continuous_attention_quadrature(const StepwiseSentence& sentence,
                                                    const AttentionParams& params, double t,
                                                    double step, QuadratureGrid grid,
                                                    int refinement) {
  params.validate();
  if (!(step > 0.0)) throw std::invalid_argument("quadrature step must be > 0");
  if (refinement < 0 || refinement > 30) {
    throw std::invalid_argument("quadrature refinement must lie in [0, 30]");
  }
  if (!(t > 0.0) || t > sentence.total_length()) {
    throw std::out_of_range("quadrature time outside (0, total length]");
  }
  if (sentence.dim() != static_cast<std::size_t>(params.d_model)) {
    throw std::invalid_argument("sentence dimension does not match d_model");
  }
  const auto cells_for = [&](double length) {
    return static_cast<std::size_t>(std::ceil(length / step)) << refinement;
  };

  // Cell edges over [0, t]; nodes are cell midpoints.
  std::vector<double> edges{0.0};
  if (grid == QuadratureGrid::uniform) {
    const auto cells = cells_for(t);
    for (std::size_t j = 1; j < cells; ++j) {
      edges.push_back(t * static_cast<double>(j) / static_cast<double>(cells));
    }
  } else {
    const double shift = grid == QuadratureGrid::offset ? 1.0 / 3.0 : 0.0;
    for (std::size_t k = 0; k < sentence.size(); ++k) {
      const double a = sentence.elapsed_before(k);
      if (a >= t) break;
      const double b = sentence.elapsed_before(k + 1);
      const auto cells = cells_for(b - a);
      const double h = (b - a) / static_cast<double>(cells);
      for (std::size_t j = 0; j < cells; ++j) {
        const double e = a + (static_cast<double>(j) + shift) * h;
        if (e > edges.back() && e < t) edges.push_back(e);
      }
    }
  }
  edges.push_back(t);
  std::vector<double> nodes;
  std::vector<double> widths;
  for (std::size_t j = 0; j + 1 < edges.size(); ++j) {
    nodes.push_back(0.5 * (edges[j] + edges[j + 1]));
    widths.push_back(edges[j + 1] - edges[j]);
  }

  const MatrixD w_o = params.w_o.cast<double>();
  const auto x_at = [&](double s) -> std::span<const float> {
    return sentence.span(sentence.span_at_elapsed(s)).embedding;
  };
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.head_dim));

  std::vector<double> concat;
  for (int h = 0; h < params.head_count; ++h) {
    const MatrixD wq = params.w_q[h].cast<double>();
    const MatrixD wk = params.w_k[h].cast<double>();
    const MatrixD wv = params.w_v[h].cast<double>();
    const auto q = matvec<double, double, float>(wq, x_at(t));

    std::vector<double> logits(nodes.size());
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const auto k = matvec<double, double, float>(wk, x_at(nodes[j]));
      double acc = 0.0;
      for (std::size_t i = 0; i < k.size(); ++i) acc += q[i] * k[i];
      logits[j] = acc * inv_sqrt_d;
      max_logit = std::max(max_logit, logits[j]);
    }
    std::vector<double> numerator(static_cast<std::size_t>(params.head_dim), 0.0);
    double z = 0.0;
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const double e = std::exp(logits[j] - max_logit) * widths[j];
      const auto v = matvec<double, double, float>(wv, x_at(nodes[j]));
      for (std::size_t i = 0; i < v.size(); ++i) numerator[i] += e * v[i];
      z += e;
    }
    for (double v : numerator) concat.push_back(v / z);
  }
  return matvec<double, double, double>(w_o, std::span<const double>(concat));
}

template <class Real>
std::vector<Real> multi_head_combine(const std::vector<std::vector<Real>>& per_head,
                                     const MatrixF& w_o) {
  std::vector<Real> concat;
  for (const auto& h : per_head) concat.insert(concat.end(), h.begin(), h.end());
  if (concat.size() != w_o.cols() || per_head.empty()) {
    throw std::invalid_argument("multi_head_combine: concatenated heads have " +
                                std::to_string(concat.size()) + " entries, W_o expects " +
                                std::to_string(w_o.cols()));
  }
  const std::size_t head_dim = per_head.front().size();
  for (const auto& h : per_head) {
    if (h.size() != head_dim) throw std::invalid_argument("multi_head_combine: ragged heads");
  }
  return matvec<Real, float, Real>(w_o, std::span<const Real>(concat));
}

template <class Real>
std::vector<Real> layer_norm(std::span<const Real> x, std::span<const float> gain,
                             std::span<const float> bias, float epsilon) {
  if (gain.size() != x.size() || bias.size() != x.size() || x.empty()) {
    throw std::invalid_argument("layer_norm: dimension mismatch");
  }
  double mean = 0.0;
  for (Real v : x) mean += static_cast<double>(v);
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (Real v : x) var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  var /= static_cast<double>(x.size());
  const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(epsilon));
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<Real>((static_cast<double>(x[i]) - mean) * inv_std * gain[i] + bias[i]);
  }
  return out;
}

template <class Real>
std::vector<Real> add_norm_block(std::span<const Real> x, std::span<const Real> y,
                                 const BlockParams& block) {
  if (x.size() != y.size() || x.size() != block.w_z.cols()) {
    throw std::invalid_argument("add_norm_block: dimension mismatch");
  }
  std::vector<Real> sum(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sum[i] = y[i] + x[i];
  const auto z = layer_norm<Real>(sum, block.norm1_gain, block.norm1_bias);
  auto u = matvec<Real, float, Real>(block.w_z, std::span<const Real>(z));
  for (std::size_t i = 0; i < x.size(); ++i) u[i] += x[i];
  return layer_norm<Real>(u, block.norm2_gain, block.norm2_bias);
}

#define CCT_INSTANTIATE(Real)                                                                     \
  template void rope_rotate<Real>(Matrix<Real>&, std::span<const double>, const RotaryConfig&);  \
  template Matrix<Real> discrete_causal_attention<Real>(const Matrix<Real>&,                     \
                                                        const AttentionParams&,                  \
                                                        const RotaryConfig&);                    \
  template std::vector<MatrixD> cct_attention_weights<Real>(                                     \
      const Matrix<Real>&, std::span<const double>, std::span<const double>,                     \
      const AttentionParams&, const RotaryConfig&);                                              \
  template Matrix<Real> stepwise_cct_attention<Real>(const Matrix<Real>&,                        \
                                                     std::span<const double>,                    \
                                                     std::span<const double>,                    \
                                                     const AttentionParams&,                     \
                                                     const RotaryConfig&);                       \
  template Matrix<Real> masked_attention_path<Real>(                                             \
      const Matrix<Real>&, std::span<const double>, std::span<const double>,                     \
      const AttentionParams&, const RotaryConfig&, DurationBiasMode);                            \
  template Matrix<Real> apply_masked_attention<Real>(const Matrix<Real>&,                        \
                                                     std::span<const double>,                    \
                                                     const AttentionParams&,                     \
                                                     const RotaryConfig&, const MatrixD&,        \
                                                     DurationBiasMode);                          \
  template std::vector<Real> multi_head_combine<Real>(const std::vector<std::vector<Real>>&,     \
                                                      const MatrixF&);                           \
  template std::vector<Real> layer_norm<Real>(std::span<const Real>, std::span<const float>,     \
                                              std::span<const float>, float);                    \
  template std::vector<Real> add_norm_block<Real>(std::span<const Real>, std::span<const Real>,  \
                                                  const BlockParams&);

CCT_INSTANTIATE(float)
CCT_INSTANTIATE(double)

#undef CCT_INSTANTIATE

}  // namespace cct
