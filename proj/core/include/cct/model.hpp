#pragma once

// A small decoder-only transformer whose attention layers run on
// stepwise-constant sentences.
//
// Archive tensor names:
//   embed.weight                       [vocab, d_model]
//   layers.{i}.attn.{q,k,v}.weight     [heads * d_head, d_model]
//   layers.{i}.attn.o.weight           [d_model, heads * d_head]
//   layers.{i}.attn.z.weight           [d_model, d_model]   (paper_addnorm)
//   layers.{i}.norm{1,2}.{gain,bias}   [d_model]
//   layers.{i}.mlp.up.weight           [mlp_hidden, d_model] (prenorm_mlp)
//   layers.{i}.mlp.down.weight         [d_model, mlp_hidden] (prenorm_mlp)
//   unembed.weight                     [vocab, d_model]     (absent when tied)

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cct/attention.hpp"
#include "cct/continuous_sequence.hpp"
#include "cct/tensor_archive.hpp"

namespace cct {

enum class BlockStyle { paper_addnorm, prenorm_mlp };
enum class PositionalEncoding { rotary, none };

struct ModelConfig {
  int layer_count = 1;
  int head_count = 2;
  int d_model = 16;
  int d_head = 8;
  int vocab_size = 16;
  int mlp_hidden = 0;  // 0 for the minimal Add&Norm block
  BlockStyle block_style = BlockStyle::paper_addnorm;
  PositionalEncoding positional = PositionalEncoding::rotary;
  double rotary_base = 10000.0;
  int rotary_dim = 0;  // 0 means d_head
  bool tied_embeddings = false;
  DurationBiasMode bias_mode = DurationBiasMode::additive_log;

  void validate() const;
  [[nodiscard]] RotaryConfig rotary() const;

  [[nodiscard]] static ModelConfig from_json(const nlohmann::json& doc);
  [[nodiscard]] nlohmann::json to_json() const;
};

ModelConfig load_model_config(const std::string& path);

/// Raised when activations become non-finite; carries the failing layer.
class ForwardError : public std::runtime_error {
 public:
  ForwardError(int layer, const std::string& what)
      : std::runtime_error("layer " + std::to_string(layer) + ": " + what), layer_{layer} {}
  [[nodiscard]] int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

struct ForwardOutput {
  std::vector<float> logits;           // vocab_size entries at the final span
  std::vector<MatrixF> hidden_states;  // per layer output, when requested
};

struct Label {
  std::string name;
  std::vector<int> token_ids;
};

class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<Label> labels);

  /// Labels "0".."count-1" mapped to token ids 0..count-1.
  [[nodiscard]] static LabelSet digits(int count = 10);
  [[nodiscard]] static LabelSet from_json(const nlohmann::json& doc);
  /// Inline form "name=id[+id...],name=id".
  [[nodiscard]] static LabelSet parse_inline(const std::string& text);

  void validate(int vocab_size) const;
  [[nodiscard]] const std::vector<Label>& labels() const noexcept { return labels_; }
  [[nodiscard]] std::vector<std::string> names() const;
  [[nodiscard]] std::size_t size() const noexcept { return labels_.size(); }
  [[nodiscard]] nlohmann::json to_json() const;

 private:
  std::vector<Label> labels_;
};

struct ProbabilityTable {
  std::vector<double> full;         // softmax over the vocabulary
  std::vector<double> label_probs;  // one per label, in label-set order
  double other = 0.0;               // mass on tokens outside every label
};

ProbabilityTable next_token_distribution(std::span<const float> logits,
                                         const LabelSet* labels = nullptr);
inline ProbabilityTable next_token_distribution(const ForwardOutput& out,
                                                const LabelSet* labels = nullptr) {
  return next_token_distribution(std::span<const float>(out.logits), labels);
}

struct LayerWeights {
  BlockParams block;
  MatrixF mlp_up;
  MatrixF mlp_down;
};

class Model {
 public:
  /// Validates every tensor against the config naming scheme.
  Model(ModelConfig config, TensorArchive archive);

  [[nodiscard]] static Model load(const std::string& archive_path, ModelConfig config);

  [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
  [[nodiscard]] const TensorArchive& archive() const noexcept { return archive_; }
  [[nodiscard]] const MatrixF& embedding_table() const noexcept { return embed_; }
  [[nodiscard]] const std::vector<LayerWeights>& layers() const noexcept { return layers_; }

  /// Unit-duration sentence of embedding rows. Throws std::out_of_range.
  [[nodiscard]] StepwiseSentence embed(std::span<const int> token_ids) const;
  /// Resolves token ids through the embedding table.
  [[nodiscard]] StepwiseSentence resolve(const PromptDocument& prompt) const;

  [[nodiscard]] ForwardOutput forward_continuous(const StepwiseSentence& sentence,
                                                 bool keep_hidden = false) const;

  /// Reference path without any duration machinery: classical causal
  /// attention over rows at integer positions 0..T-1.
  [[nodiscard]] ForwardOutput forward_discrete(const MatrixF& embeddings) const;

 private:
  template <class Attend>
  ForwardOutput run_layers(MatrixF x, Attend&& attend, bool keep_hidden) const;

  ModelConfig config_;
  TensorArchive archive_;
  MatrixF embed_;
  MatrixF unembed_;
  std::vector<LayerWeights> layers_;
};

/// Weights drawn from N(0, 0.02^2) with std::mt19937_64 seeded by `seed`,
/// tensors filled in archive (sorted name) order; norm gains 1, biases 0.
Model init_random(std::uint64_t seed, const ModelConfig& config);

inline constexpr float kInitStddev = 0.02f;

}  // namespace cct
